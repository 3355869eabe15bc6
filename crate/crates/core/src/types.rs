//! Small shared types used across the ledger, escrow, and simulation layers.

use crate::digest::Digest;
use std::fmt;
use thiserror::Error;

/// Token amounts are plain unsigned integers; all arithmetic is exact.
pub type TokenAmount = u128;

pub const ADDRESS_LEN: usize = 20;

/// A 20-byte account or contract address, rendered as 40 lowercase hex chars.
///
/// Participant addresses are the trailing 20 bytes of the SHA-256 of the
/// participant's signing public key. Contract addresses are derived from the
/// deploying owner, the item identity, and a deployment sequence number, so
/// re-listing the same item yields a fresh address.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Address(pub [u8; ADDRESS_LEN]);

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AddressParseError {
    #[error("address hex must be 40 characters, got {0}")]
    BadLength(usize),
    #[error("address hex contains non-hex characters")]
    BadHex,
}

impl Address {
    pub const ZERO: Address = Address([0u8; ADDRESS_LEN]);

    /// Address of a signing identity: last 20 bytes of SHA-256(public key).
    pub fn from_public_key(public_key_bytes: &[u8]) -> Address {
        let d = Digest::of(public_key_bytes);
        let mut out = [0u8; ADDRESS_LEN];
        out.copy_from_slice(&d.0[DIGEST_TAIL..]);
        Address(out)
    }

    /// Deterministic contract address: last 20 bytes of
    /// SHA-256("contract:" || owner || item_id || seq_be8).
    pub fn contract(owner: &Address, item_id: &Digest, seq: u64) -> Address {
        let d = Digest::of_parts(&[b"contract:", &owner.0, &item_id.0, &seq.to_be_bytes()]);
        let mut out = [0u8; ADDRESS_LEN];
        out.copy_from_slice(&d.0[DIGEST_TAIL..]);
        Address(out)
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Address, AddressParseError> {
        if s.len() != ADDRESS_LEN * 2 {
            return Err(AddressParseError::BadLength(s.len()));
        }
        let bytes = hex::decode(s).map_err(|_| AddressParseError::BadHex)?;
        let mut out = [0u8; ADDRESS_LEN];
        out.copy_from_slice(&bytes);
        Ok(Address(out))
    }
}

const DIGEST_TAIL: usize = crate::digest::DIGEST_LEN - ADDRESS_LEN;

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}
