//! SHA-256 digests, the only hash used anywhere in the system.

use sha2::{Digest as _, Sha256};
use std::fmt;
use thiserror::Error;

pub const DIGEST_LEN: usize = 32;

/// A SHA-256 digest. Rendered everywhere as 64 lowercase hex characters.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Digest(pub [u8; DIGEST_LEN]);

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DigestParseError {
    #[error("digest hex must be 64 characters, got {0}")]
    BadLength(usize),
    #[error("digest hex contains non-hex characters")]
    BadHex,
}

impl Digest {
    pub const ZERO: Digest = Digest([0u8; DIGEST_LEN]);

    pub fn of(data: &[u8]) -> Digest {
        let mut h = Sha256::new();
        h.update(data);
        Digest(h.finalize().into())
    }

    /// Digest of the plain concatenation of `parts` (no separators).
    pub fn of_parts(parts: &[&[u8]]) -> Digest {
        let mut h = Sha256::new();
        for p in parts {
            h.update(p);
        }
        Digest(h.finalize().into())
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Digest, DigestParseError> {
        if s.len() != DIGEST_LEN * 2 {
            return Err(DigestParseError::BadLength(s.len()));
        }
        let bytes = hex::decode(s).map_err(|_| DigestParseError::BadHex)?;
        let mut out = [0u8; DIGEST_LEN];
        out.copy_from_slice(&bytes);
        Ok(Digest(out))
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}
