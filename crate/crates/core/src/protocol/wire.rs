//! Typed protocol messages and their framing.
//!
//! Frame: `payload length (u32 BE) || tag (u8) || payload`. The length
//! excludes the five header bytes. Tags `0x01..=0x09` carry the bisection
//! game; `0x0A..=0x0F` carry the linear clients' batch downloads, balance
//! queries and refusals.

use std::io::{self, Read, Write};

use crate::chainsim::file::{put_signature_list, read_signature_list};
use crate::chainsim::{AccountProof, BalanceProof, HandoverProof, StateCommitment, SyncCommittee};
use crate::codec::{DecodeError, Reader};
use crate::crypto::{Digest, DIGEST_LEN, PUBLIC_KEY_LEN};
use crate::merkle::MerkleProof;

pub const FRAME_HEADER_LEN: usize = 5;
/// Upper bound on accepted payloads; a full m=512 batch of 500 committees is ~17 MB.
pub const MAX_PAYLOAD: usize = 1 << 28;

pub mod tag {
    pub const CLAIM_REQUEST: u8 = 0x01;
    pub const CLAIM_RESPONSE: u8 = 0x02;
    pub const OPEN: u8 = 0x03;
    pub const CHILDREN: u8 = 0x04;
    pub const LEAF_REQUEST: u8 = 0x05;
    pub const LEAF_REVEAL: u8 = 0x06;
    pub const PREV_LEAF_REVEAL: u8 = 0x07;
    pub const HANDOVER_REVEAL: u8 = 0x08;
    pub const VERDICT: u8 = 0x09;
    pub const BATCH_REQUEST: u8 = 0x0A;
    pub const COMMITTEE_BATCH: u8 = 0x0B;
    pub const HASH_BATCH: u8 = 0x0C;
    pub const BALANCE_REQUEST: u8 = 0x0D;
    pub const BALANCE_RESPONSE: u8 = 0x0E;
    pub const REFUSED: u8 = 0x0F;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ClaimMode {
    /// Commitment, latest committee and its signatures.
    Linear,
    /// Additionally the mountain range peaks and a proof of the latest committee.
    Succinct,
}

/// State commitment claim. `peaks` and `latest_proof` are present in succinct mode only.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Claim {
    pub commitment: StateCommitment,
    pub latest: SyncCommittee,
    pub signatures: Vec<(u32, crate::crypto::Signature)>,
    pub peaks: Option<Vec<Digest>>,
    pub latest_proof: Option<MerkleProof>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LeafKind {
    /// `S^j` alone.
    Leaf,
    /// `S^j` with a Merkle proof in the tree that holds leaf `j`.
    WithProof,
    /// `Σ^j`.
    Handover,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BatchKind {
    /// `(S^j, Σ^j)` pairs.
    Committees,
    /// Leaf digests `H(0x00 || S^j)`.
    Hashes,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GameVerdict {
    WinA,
    WinB,
    BothLose,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Message {
    ClaimRequest { mode: ClaimMode, degree: u32 },
    ClaimResponse(Claim),
    Open { tree: u32, path: Vec<u32> },
    Children(Vec<Digest>),
    LeafRequest { kind: LeafKind, index: u64 },
    LeafReveal(SyncCommittee),
    PrevLeafReveal(SyncCommittee, MerkleProof),
    HandoverReveal(HandoverProof),
    Verdict { verdict: GameVerdict, disagreement: Option<u64> },
    BatchRequest { kind: BatchKind, start: u64, count: u32 },
    CommitteeBatch(Vec<(SyncCommittee, HandoverProof)>),
    HashBatch { start: u64, digests: Vec<Digest> },
    BalanceRequest { account: u64 },
    BalanceResponse(BalanceProof),
    Refused,
}

impl Message {
    pub fn tag(&self) -> u8 {
        match self {
            Message::ClaimRequest { .. } => tag::CLAIM_REQUEST,
            Message::ClaimResponse(_) => tag::CLAIM_RESPONSE,
            Message::Open { .. } => tag::OPEN,
            Message::Children(_) => tag::CHILDREN,
            Message::LeafRequest { .. } => tag::LEAF_REQUEST,
            Message::LeafReveal(_) => tag::LEAF_REVEAL,
            Message::PrevLeafReveal(..) => tag::PREV_LEAF_REVEAL,
            Message::HandoverReveal(_) => tag::HANDOVER_REVEAL,
            Message::Verdict { .. } => tag::VERDICT,
            Message::BatchRequest { .. } => tag::BATCH_REQUEST,
            Message::CommitteeBatch(_) => tag::COMMITTEE_BATCH,
            Message::HashBatch { .. } => tag::HASH_BATCH,
            Message::BalanceRequest { .. } => tag::BALANCE_REQUEST,
            Message::BalanceResponse(_) => tag::BALANCE_RESPONSE,
            Message::Refused => tag::REFUSED,
        }
    }

    pub fn encode_payload(&self) -> Vec<u8> {
        let mut out = Vec::new();
        match self {
            Message::ClaimRequest { mode, degree } => {
                out.push(match mode {
                    ClaimMode::Linear => 0,
                    ClaimMode::Succinct => 1,
                });
                out.extend_from_slice(&degree.to_be_bytes());
            }
            Message::ClaimResponse(c) => {
                out.extend_from_slice(c.commitment.0.as_bytes());
                put_committee(&mut out, &c.latest);
                put_signature_list(&mut out, &c.signatures);
                match (&c.peaks, &c.latest_proof) {
                    (Some(peaks), Some(proof)) => {
                        out.push(1);
                        put_digests(&mut out, peaks);
                        put_proof(&mut out, proof);
                    }
                    _ => out.push(0),
                }
            }
            Message::Open { tree, path } => {
                out.extend_from_slice(&tree.to_be_bytes());
                out.extend_from_slice(&(path.len() as u32).to_be_bytes());
                for p in path {
                    out.extend_from_slice(&p.to_be_bytes());
                }
            }
            Message::Children(ds) => put_digests(&mut out, ds),
            Message::LeafRequest { kind, index } => {
                out.push(match kind {
                    LeafKind::Leaf => 0,
                    LeafKind::WithProof => 1,
                    LeafKind::Handover => 2,
                });
                out.extend_from_slice(&index.to_be_bytes());
            }
            Message::LeafReveal(s) => put_committee(&mut out, s),
            Message::PrevLeafReveal(s, p) => {
                put_committee(&mut out, s);
                put_proof(&mut out, p);
            }
            Message::HandoverReveal(h) => put_handover(&mut out, h),
            Message::Verdict { verdict, disagreement } => {
                out.push(match verdict {
                    GameVerdict::WinA => 0,
                    GameVerdict::WinB => 1,
                    GameVerdict::BothLose => 2,
                });
                match disagreement {
                    Some(j) => {
                        out.push(1);
                        out.extend_from_slice(&j.to_be_bytes());
                    }
                    None => out.push(0),
                }
            }
            Message::BatchRequest { kind, start, count } => {
                out.push(match kind {
                    BatchKind::Committees => 0,
                    BatchKind::Hashes => 1,
                });
                out.extend_from_slice(&start.to_be_bytes());
                out.extend_from_slice(&count.to_be_bytes());
            }
            Message::CommitteeBatch(entries) => {
                out.extend_from_slice(&(entries.len() as u32).to_be_bytes());
                for (s, h) in entries {
                    put_committee(&mut out, s);
                    put_handover(&mut out, h);
                }
            }
            Message::HashBatch { start, digests } => {
                out.extend_from_slice(&start.to_be_bytes());
                put_digests(&mut out, digests);
            }
            Message::BalanceRequest { account } => out.extend_from_slice(&account.to_be_bytes()),
            Message::BalanceResponse(b) => match b {
                BalanceProof::Present(p) => {
                    out.push(0);
                    put_account_proof(&mut out, p);
                }
                BalanceProof::Absent { size, left, right } => {
                    out.push(1);
                    out.extend_from_slice(&size.to_be_bytes());
                    for side in [left, right] {
                        match side {
                            Some(p) => {
                                out.push(1);
                                put_account_proof(&mut out, p);
                            }
                            None => out.push(0),
                        }
                    }
                }
            },
            Message::Refused => {}
        }
        out
    }

    /// Full frame: header followed by payload.
    pub fn to_frame(&self) -> Vec<u8> {
        let payload = self.encode_payload();
        let mut frame = Vec::with_capacity(FRAME_HEADER_LEN + payload.len());
        frame.extend_from_slice(&(payload.len() as u32).to_be_bytes());
        frame.push(self.tag());
        frame.extend_from_slice(&payload);
        frame
    }

    pub fn frame_len(&self) -> usize {
        FRAME_HEADER_LEN + self.encode_payload().len()
    }

    pub fn decode(tag: u8, payload: &[u8]) -> Result<Message, DecodeError> {
        let mut r = Reader::new(payload);
        let msg = match tag {
            tag::CLAIM_REQUEST => {
                let mode = match r.u8()? {
                    0 => ClaimMode::Linear,
                    1 => ClaimMode::Succinct,
                    _ => return Err(DecodeError::Invalid("claim mode")),
                };
                Message::ClaimRequest { mode, degree: r.u32()? }
            }
            tag::CLAIM_RESPONSE => {
                let commitment = StateCommitment(r.digest()?);
                let latest = read_committee(&mut r)?;
                let signatures = read_signature_list(&mut r)?;
                let (peaks, latest_proof) = match r.u8()? {
                    0 => (None, None),
                    1 => (Some(read_digests(&mut r)?), Some(read_proof(&mut r)?)),
                    _ => return Err(DecodeError::Invalid("claim flag")),
                };
                Message::ClaimResponse(Claim { commitment, latest, signatures, peaks, latest_proof })
            }
            tag::OPEN => {
                let tree = r.u32()?;
                let n = r.count(4)?;
                let path = (0..n).map(|_| r.u32()).collect::<Result<_, _>>()?;
                Message::Open { tree, path }
            }
            tag::CHILDREN => Message::Children(read_digests(&mut r)?),
            tag::LEAF_REQUEST => {
                let kind = match r.u8()? {
                    0 => LeafKind::Leaf,
                    1 => LeafKind::WithProof,
                    2 => LeafKind::Handover,
                    _ => return Err(DecodeError::Invalid("leaf kind")),
                };
                Message::LeafRequest { kind, index: r.u64()? }
            }
            tag::LEAF_REVEAL => Message::LeafReveal(read_committee(&mut r)?),
            tag::PREV_LEAF_REVEAL => Message::PrevLeafReveal(read_committee(&mut r)?, read_proof(&mut r)?),
            tag::HANDOVER_REVEAL => Message::HandoverReveal(read_handover(&mut r)?),
            tag::VERDICT => {
                let verdict = match r.u8()? {
                    0 => GameVerdict::WinA,
                    1 => GameVerdict::WinB,
                    2 => GameVerdict::BothLose,
                    _ => return Err(DecodeError::Invalid("verdict")),
                };
                let disagreement = match r.u8()? {
                    0 => None,
                    1 => Some(r.u64()?),
                    _ => return Err(DecodeError::Invalid("verdict flag")),
                };
                Message::Verdict { verdict, disagreement }
            }
            tag::BATCH_REQUEST => {
                let kind = match r.u8()? {
                    0 => BatchKind::Committees,
                    1 => BatchKind::Hashes,
                    _ => return Err(DecodeError::Invalid("batch kind")),
                };
                Message::BatchRequest { kind, start: r.u64()?, count: r.u32()? }
            }
            tag::COMMITTEE_BATCH => {
                let n = r.count(12 + 12)?;
                let entries =
                    (0..n)
                        .map(|_| Ok((read_committee(&mut r)?, read_handover(&mut r)?)))
                        .collect::<Result<_, DecodeError>>()?;
                Message::CommitteeBatch(entries)
            }
            tag::HASH_BATCH => {
                let start = r.u64()?;
                Message::HashBatch { start, digests: read_digests(&mut r)? }
            }
            tag::BALANCE_REQUEST => Message::BalanceRequest { account: r.u64()? },
            tag::BALANCE_RESPONSE => {
                let proof = match r.u8()? {
                    0 => BalanceProof::Present(read_account_proof(&mut r)?),
                    1 => {
                        let size = r.u64()?;
                        let mut side = || -> Result<Option<AccountProof>, DecodeError> {
                            match r.u8()? {
                                0 => Ok(None),
                                1 => Ok(Some(read_account_proof(&mut r)?)),
                                _ => Err(DecodeError::Invalid("neighbour flag")),
                            }
                        };
                        let left = side()?;
                        let right = side()?;
                        BalanceProof::Absent { size, left, right }
                    }
                    _ => return Err(DecodeError::Invalid("balance proof")),
                };
                Message::BalanceResponse(proof)
            }
            tag::REFUSED => Message::Refused,
            _ => return Err(DecodeError::Invalid("message tag")),
        };
        r.finish()?;
        Ok(msg)
    }

    pub fn from_frame(frame: &[u8]) -> Result<Message, DecodeError> {
        let mut r = Reader::new(frame);
        let len = r.u32()? as usize;
        let tag = r.u8()?;
        let payload = r.take(len)?;
        r.finish()?;
        Message::decode(tag, payload)
    }
}

pub fn write_frame(w: &mut impl Write, frame: &[u8]) -> io::Result<()> {
    w.write_all(frame)?;
    w.flush()
}

/// Reads one raw frame. `Ok(None)` on a clean end of stream before any header byte.
pub fn read_frame(r: &mut impl Read) -> io::Result<Option<Vec<u8>>> {
    let mut header = [0u8; FRAME_HEADER_LEN];
    let mut got = 0;
    while got < FRAME_HEADER_LEN {
        match r.read(&mut header[got..])? {
            0 if got == 0 => return Ok(None),
            0 => return Err(io::ErrorKind::UnexpectedEof.into()),
            n => got += n,
        }
    }
    let len = u32::from_be_bytes(header[..4].try_into().expect("4 bytes")) as usize;
    if len > MAX_PAYLOAD {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "frame too large"));
    }
    let mut frame = vec![0u8; FRAME_HEADER_LEN + len];
    frame[..FRAME_HEADER_LEN].copy_from_slice(&header);
    r.read_exact(&mut frame[FRAME_HEADER_LEN..])?;
    Ok(Some(frame))
}

fn put_committee(out: &mut Vec<u8>, s: &SyncCommittee) {
    out.extend_from_slice(&s.epoch.to_be_bytes());
    out.extend_from_slice(&(s.members.len() as u32).to_be_bytes());
    for k in &s.members {
        out.extend_from_slice(&k.0);
    }
}

fn read_committee(r: &mut Reader<'_>) -> Result<SyncCommittee, DecodeError> {
    let epoch = r.u64()?;
    let n = r.count(PUBLIC_KEY_LEN)?;
    let members = (0..n).map(|_| r.public_key()).collect::<Result<_, _>>()?;
    Ok(SyncCommittee { epoch, members })
}

fn put_handover(out: &mut Vec<u8>, h: &HandoverProof) {
    out.extend_from_slice(&h.epoch.to_be_bytes());
    put_signature_list(out, &h.signatures);
}

fn read_handover(r: &mut Reader<'_>) -> Result<HandoverProof, DecodeError> {
    let epoch = r.u64()?;
    Ok(HandoverProof { epoch, signatures: read_signature_list(r)? })
}

fn put_digests(out: &mut Vec<u8>, ds: &[Digest]) {
    out.extend_from_slice(&(ds.len() as u32).to_be_bytes());
    for d in ds {
        out.extend_from_slice(d.as_bytes());
    }
}

fn read_digests(r: &mut Reader<'_>) -> Result<Vec<Digest>, DecodeError> {
    let n = r.count(DIGEST_LEN)?;
    (0..n).map(|_| r.digest()).collect()
}

fn put_proof(out: &mut Vec<u8>, p: &MerkleProof) {
    out.extend_from_slice(&p.index.to_be_bytes());
    out.extend_from_slice(&p.size.to_be_bytes());
    out.extend_from_slice(&(p.siblings.len() as u32).to_be_bytes());
    for g in &p.siblings {
        put_digests(out, g);
    }
}

fn read_proof(r: &mut Reader<'_>) -> Result<MerkleProof, DecodeError> {
    let index = r.u64()?;
    let size = r.u64()?;
    let levels = r.count(4)?;
    let siblings = (0..levels).map(|_| read_digests(r)).collect::<Result<_, _>>()?;
    Ok(MerkleProof { index, size, siblings })
}

fn put_account_proof(out: &mut Vec<u8>, p: &AccountProof) {
    out.extend_from_slice(&p.account.to_be_bytes());
    out.extend_from_slice(&p.balance.to_be_bytes());
    put_proof(out, &p.proof);
}

fn read_account_proof(r: &mut Reader<'_>) -> Result<AccountProof, DecodeError> {
    Ok(AccountProof { account: r.u64()?, balance: r.u64()?, proof: read_proof(r)? })
}
