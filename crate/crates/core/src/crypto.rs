//! Hashing, signatures and the epoch key registry.
//!
//! Digests are SHA-256. Signatures are Ed25519ph (RFC 8032, prehashed with
//! SHA-512): deterministic, 32-byte public keys, 64-byte signatures. The
//! prehashed variant lets a whole committee sign one large handover message
//! while hashing it only once.

use std::collections::BTreeMap;
use std::fmt;

use ed25519_dalek::{Signature as DalekSignature, SigningKey, VerifyingKey};
use sha2::{Digest as _, Sha256, Sha512};
use thiserror::Error;

pub const DIGEST_LEN: usize = 32;
pub const PUBLIC_KEY_LEN: usize = 32;
pub const SIGNATURE_LEN: usize = 64;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CryptoError {
    #[error("registry cannot rewind from epoch {current} to {requested}")]
    Rewind { current: u64, requested: u64 },
}

/// A 32-byte SHA-256 digest.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Digest(pub [u8; DIGEST_LEN]);

impl Digest {
    pub const ZERO: Digest = Digest([0u8; DIGEST_LEN]);

    pub fn as_bytes(&self) -> &[u8; DIGEST_LEN] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_slice(bytes: &[u8]) -> Option<Digest> {
        <[u8; DIGEST_LEN]>::try_from(bytes).ok().map(Digest)
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", &self.to_hex()[..16])
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl AsRef<[u8]> for Digest {
    fn as_ref(&self) -> &[u8] {
        &self.0
    }
}

pub fn hash(data: &[u8]) -> Digest {
    Digest(Sha256::digest(data).into())
}

/// Hash of the concatenation of `parts`, without materializing it.
pub fn hash_parts<'a>(parts: impl IntoIterator<Item = &'a [u8]>) -> Digest {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update(part);
    }
    Digest(hasher.finalize().into())
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PublicKey(pub [u8; PUBLIC_KEY_LEN]);

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({})", hex::encode(&self.0[..8]))
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
pub struct Signature(pub [u8; SIGNATURE_LEN]);

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signature({})", hex::encode(&self.0[..8]))
    }
}

/// Secret signing key. Not `Copy`; dropping it is how the registry "deletes" keys.
#[derive(Clone)]
pub struct SecretKey(SigningKey);

impl fmt::Debug for SecretKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SecretKey(..)")
    }
}

impl SecretKey {
    pub fn public_key(&self) -> PublicKey {
        PublicKey(self.0.verifying_key().to_bytes())
    }
}

#[derive(Clone, Debug)]
pub struct KeyPair {
    pub public: PublicKey,
    pub secret: SecretKey,
}

/// Deterministic key generation from a 32-byte seed.
pub fn keygen(seed: [u8; 32]) -> KeyPair {
    let signing = SigningKey::from_bytes(&seed);
    KeyPair { public: PublicKey(signing.verifying_key().to_bytes()), secret: SecretKey(signing) }
}

/// A message prehashed with SHA-512, ready to be signed or verified many times.
#[derive(Clone)]
pub struct PreparedMessage(Sha512);

impl PreparedMessage {
    pub fn new(message: &[u8]) -> Self {
        let mut h = Sha512::new();
        h.update(message);
        PreparedMessage(h)
    }
}

pub fn sign(sk: &SecretKey, message: &[u8]) -> Signature {
    sign_prepared(sk, &PreparedMessage::new(message))
}

pub fn sign_prepared(sk: &SecretKey, message: &PreparedMessage) -> Signature {
    let sig = sk.0.sign_prehashed(message.0.clone(), None).expect("signing without a context cannot fail");
    Signature(sig.to_bytes())
}

/// Returns `false` on any mismatch, including malformed key or signature bytes.
pub fn verify(pk: &PublicKey, message: &[u8], sig: &Signature) -> bool {
    verify_prepared(pk, &PreparedMessage::new(message), sig)
}

pub fn verify_prepared(pk: &PublicKey, message: &PreparedMessage, sig: &Signature) -> bool {
    let Ok(vk) = VerifyingKey::from_bytes(&pk.0) else {
        return false;
    };
    let sig = DalekSignature::from_bytes(&sig.0);
    vk.verify_prehashed(message.0.clone(), None, &sig).is_ok()
}

/// Secret keys indexed by `(epoch, committee member)`.
///
/// Advancing the registry destroys every key belonging to an earlier epoch,
/// which is how the simulator models key-evolving signatures.
#[derive(Debug, Default)]
pub struct EpochKeyRegistry {
    keys: BTreeMap<(u64, u32), SecretKey>,
    current: u64,
}

impl EpochKeyRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn current_epoch(&self) -> u64 {
        self.current
    }

    /// Keys for epochs that already passed are silently discarded.
    pub fn insert(&mut self, epoch: u64, member: u32, key: SecretKey) {
        if epoch >= self.current {
            self.keys.insert((epoch, member), key);
        }
    }

    pub fn get(&self, epoch: u64, member: u32) -> Option<&SecretKey> {
        if epoch < self.current {
            return None;
        }
        self.keys.get(&(epoch, member))
    }

    pub fn advance(&mut self, to_epoch: u64) -> Result<(), CryptoError> {
        if to_epoch < self.current {
            return Err(CryptoError::Rewind { current: self.current, requested: to_epoch });
        }
        self.current = to_epoch;
        self.keys = self.keys.split_off(&(to_epoch, 0));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }
}
