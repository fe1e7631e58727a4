//! Big-endian byte cursor shared by the trace file and wire encodings.

use thiserror::Error;

use crate::crypto::{Digest, PublicKey, Signature, DIGEST_LEN, PUBLIC_KEY_LEN, SIGNATURE_LEN};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DecodeError {
    #[error("truncated input: wanted {wanted} bytes at offset {at}")]
    Truncated { at: usize, wanted: usize },
    #[error("{0} trailing bytes")]
    Trailing(usize),
    #[error("invalid {0}")]
    Invalid(&'static str),
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let Some(end) = end else {
            return Err(DecodeError::Truncated { at: self.pos, wanted: n });
        };
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub fn array<const N: usize>(&mut self) -> Result<[u8; N], DecodeError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    pub fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.array::<1>()?[0])
    }

    pub fn u16(&mut self) -> Result<u16, DecodeError> {
        Ok(u16::from_be_bytes(self.array()?))
    }

    pub fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_be_bytes(self.array()?))
    }

    pub fn u64(&mut self) -> Result<u64, DecodeError> {
        Ok(u64::from_be_bytes(self.array()?))
    }

    pub fn digest(&mut self) -> Result<Digest, DecodeError> {
        Ok(Digest(self.array::<DIGEST_LEN>()?))
    }

    pub fn public_key(&mut self) -> Result<PublicKey, DecodeError> {
        Ok(PublicKey(self.array::<PUBLIC_KEY_LEN>()?))
    }

    pub fn signature(&mut self) -> Result<Signature, DecodeError> {
        Ok(Signature(self.array::<SIGNATURE_LEN>()?))
    }

    /// Count prefix for a list of `item_len`-byte items, rejected early if
    /// the remaining input cannot hold that many.
    pub fn count(&mut self, item_len: usize) -> Result<usize, DecodeError> {
        let n = self.u32()? as usize;
        if n.saturating_mul(item_len) > self.remaining() {
            return Err(DecodeError::Truncated { at: self.pos, wanted: n.saturating_mul(item_len) });
        }
        Ok(n)
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn finish(self) -> Result<(), DecodeError> {
        match self.remaining() {
            0 => Ok(()),
            n => Err(DecodeError::Trailing(n)),
        }
    }
}
