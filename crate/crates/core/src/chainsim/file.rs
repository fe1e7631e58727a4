//! Binary trace files.
//!
//! ```text
//! "POPS" 0x01  N (u64)  m (u32)  key_len (u16)
//! per epoch:
//!   m public keys
//!   handover signatures      count (u32), then (index u32, signature) pairs
//!   state commitment         32 bytes
//!   commitment signatures    same pair list
//! ```
//!
//! All integers are big-endian. A loaded trace carries no ledger.

use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use super::state::StateCommitment;
use super::trace::{EpochRecord, ExecutionTrace, HandoverProof, SignatureList, SyncCommittee, TraceOrigin};
use crate::codec::{DecodeError, Reader};
use crate::crypto::{PUBLIC_KEY_LEN, SIGNATURE_LEN};

const MAGIC: &[u8; 4] = b"POPS";
const VERSION: u8 = 0x01;

#[derive(Debug, Error)]
pub enum TraceFileError {
    #[error("not a trace file")]
    BadMagic,
    #[error("unsupported trace version {0}")]
    Version(u8),
    #[error("unsupported key size {0}")]
    KeySize(u16),
    #[error("empty trace")]
    Empty,
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub(crate) fn put_signature_list(out: &mut Vec<u8>, sigs: &SignatureList) {
    out.extend_from_slice(&(sigs.len() as u32).to_be_bytes());
    for (i, s) in sigs {
        out.extend_from_slice(&i.to_be_bytes());
        out.extend_from_slice(&s.0);
    }
}

pub(crate) fn read_signature_list(r: &mut Reader<'_>) -> Result<SignatureList, DecodeError> {
    let n = r.count(4 + SIGNATURE_LEN)?;
    (0..n).map(|_| Ok((r.u32()?, r.signature()?))).collect()
}

pub fn write_trace(trace: &ExecutionTrace) -> Vec<u8> {
    let m = trace.committee_size();
    let per_epoch = m * PUBLIC_KEY_LEN + 2 * (4 + m * (4 + SIGNATURE_LEN)) + 32;
    let mut out = Vec::with_capacity(19 + per_epoch * trace.horizon() as usize);
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&trace.horizon().to_be_bytes());
    out.extend_from_slice(&(m as u32).to_be_bytes());
    out.extend_from_slice(&(PUBLIC_KEY_LEN as u16).to_be_bytes());
    for rec in trace.records() {
        for k in &rec.committee.members {
            out.extend_from_slice(&k.0);
        }
        put_signature_list(&mut out, &rec.handover.signatures);
        out.extend_from_slice(rec.commitment.0.as_bytes());
        put_signature_list(&mut out, &rec.commitment_signatures);
    }
    out
}

pub fn read_trace(bytes: &[u8]) -> Result<ExecutionTrace, TraceFileError> {
    let mut r = Reader::new(bytes);
    if r.take(4).map_err(|_| TraceFileError::BadMagic)? != MAGIC {
        return Err(TraceFileError::BadMagic);
    }
    let version = r.u8()?;
    if version != VERSION {
        return Err(TraceFileError::Version(version));
    }
    let n = r.u64()?;
    let m = r.u32()? as usize;
    let key_len = r.u16()?;
    if key_len as usize != PUBLIC_KEY_LEN {
        return Err(TraceFileError::KeySize(key_len));
    }
    if n == 0 {
        return Err(TraceFileError::Empty);
    }
    // Each epoch needs at least its keys, two counts and a digest.
    let min_epoch = m * PUBLIC_KEY_LEN + 40;
    if (n as usize).saturating_mul(min_epoch) > r.remaining() {
        return Err(DecodeError::Truncated { at: 19, wanted: (n as usize).saturating_mul(min_epoch) }.into());
    }
    let mut epochs = Vec::with_capacity(n as usize);
    for epoch in 0..n {
        let members = (0..m).map(|_| r.public_key()).collect::<Result<Vec<_>, _>>()?;
        let signatures = read_signature_list(&mut r)?;
        let commitment = StateCommitment(r.digest()?);
        let commitment_signatures = read_signature_list(&mut r)?;
        epochs.push(EpochRecord {
            committee: SyncCommittee { epoch, members },
            handover: HandoverProof { epoch, signatures },
            commitment,
            commitment_signatures,
        });
    }
    r.finish()?;
    Ok(ExecutionTrace::from_records(m, epochs, TraceOrigin::Loaded))
}

pub fn write_trace_file(trace: &ExecutionTrace, path: impl AsRef<Path>) -> Result<(), TraceFileError> {
    fs::write(path, write_trace(trace))?;
    Ok(())
}

pub fn read_trace_file(path: impl AsRef<Path>) -> Result<ExecutionTrace, TraceFileError> {
    read_trace(&fs::read(path)?)
}
