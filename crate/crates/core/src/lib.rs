//! Proof of Proof-of-Stake bootstrapping.
//!
//! A light client that knows only the genesis sync committee learns the
//! latest state commitment from a set of provers, at least one of which is
//! honest. Three clients are provided: a linear one that checks every
//! handover (TLC), an optimistic one that scans committee hashes and checks a
//! single handover per conflict (OLC), and a superlight one that bisects
//! handover Merkle mountain ranges (SLC).

pub mod chainsim;
pub mod clients;
mod codec;
pub mod crypto;
pub mod merkle;
pub mod protocol;
pub mod transport;

pub use codec::DecodeError;
pub use crypto::Digest;
