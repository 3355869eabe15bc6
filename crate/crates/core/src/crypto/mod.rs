//! Hybrid encryption for off-chain content.
//!
//! Content is identified by `content_hash` (plain SHA-256 of the full
//! plaintext), split into fixed-size chunks, and encrypted chunk-by-chunk
//! under a per-item 32-byte symmetric key. Each chunk gets a unique nonce —
//! an 8-byte per-item seed followed by the chunk index as 4 big-endian bytes
//! (12 bytes total) — and commits to itself via
//! `SHA-256(index_be4 || nonce || ciphertext)`.
//!
//! The symmetric key travels to a buyer wrapped under the buyer's public key
//! ([`WrappedKey`]). Both halves go through a [`CryptoProvider`], of which
//! there are two:
//!
//! - [`providers::StandardProvider`]: AES-256-GCM for chunks, RSA-OAEP
//!   (SHA-256) for key wrap. Key generation is deterministic from a caller
//!   seed so whole simulation runs stay reproducible.
//! - [`providers::DeterministicProvider`]: a SHA-256 keystream-plus-MAC
//!   construction with hash-derived keypairs. Every byte it produces is a
//!   pure function of its inputs, which makes golden-vector tests and
//!   bit-identical logs possible. It is a test vehicle, not a cipher: its
//!   "public" keys must be treated as capabilities, so use the standard
//!   provider wherever actual confidentiality matters.

pub mod providers;

use std::collections::BTreeSet;

use thiserror::Error;

use crate::codec::{ByteReader, ByteWriter, CodecError};
use crate::digest::Digest;
use crate::types::{Address, ADDRESS_LEN};

#[derive(Debug, Error)]
pub enum CryptoError {
    #[error("chunk size must be at least 1 byte")]
    BadChunkSize,
    #[error("nonce reused within one publication")]
    NonceReuse,
    #[error("authentication failure: wrong key or tampered ciphertext")]
    AuthenticationFailure,
    #[error("key unwrap failed: envelope does not match this private key")]
    UnwrapFailure,
    #[error("recipient public key is malformed")]
    BadRecipientKey,
    #[error("asymmetric operation failed: {0}")]
    Asymmetric(String),
    #[error(transparent)]
    Codec(#[from] CodecError),
}

/// An asymmetric keypair as opaque provider-defined byte strings.
#[derive(Clone)]
pub struct AsymmetricKeypair {
    pub public_key: Vec<u8>,
    pub private_key: Vec<u8>,
}

/// A 32-byte symmetric content key bound to the item it encrypts.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct SymmetricKey {
    pub bytes: [u8; 32],
    pub item_id: Digest,
}

/// One encrypted chunk, committed to by its digest.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CipherChunk {
    pub index: u32,
    pub nonce: Vec<u8>,
    pub ciphertext: Vec<u8>,
    pub digest: Digest,
}

impl CipherChunk {
    /// The chunk commitment: SHA-256(index_be4 || nonce || ciphertext).
    pub fn digest_of(index: u32, nonce: &[u8], ciphertext: &[u8]) -> Digest {
        Digest::of_parts(&[&index.to_be_bytes(), nonce, ciphertext])
    }

    pub fn new(index: u32, nonce: Vec<u8>, ciphertext: Vec<u8>) -> CipherChunk {
        let digest = CipherChunk::digest_of(index, &nonce, &ciphertext);
        CipherChunk {
            index,
            nonce,
            ciphertext,
            digest,
        }
    }

    /// True when the stored digest matches the chunk's actual content.
    pub fn digest_consistent(&self) -> bool {
        self.digest == CipherChunk::digest_of(self.index, &self.nonce, &self.ciphertext)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.put_u32(self.index)
            .put_bytes(&self.nonce)
            .put_bytes(&self.ciphertext)
            .put_bytes(&self.digest.0);
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<CipherChunk, CryptoError> {
        let mut r = ByteReader::new(bytes);
        let index = r.take_u32()?;
        let nonce = r.take_bytes()?.to_vec();
        let ciphertext = r.take_bytes()?.to_vec();
        let digest = Digest(r.take_array::<32>()?);
        r.expect_end()?;
        Ok(CipherChunk {
            index,
            nonce,
            ciphertext,
            digest,
        })
    }
}

/// A symmetric key wrapped for one recipient.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WrappedKey {
    pub recipient: Address,
    pub envelope: Vec<u8>,
    pub item_id: Digest,
}

impl WrappedKey {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.put_bytes(&self.recipient.0)
            .put_bytes(&self.envelope)
            .put_bytes(&self.item_id.0);
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<WrappedKey, CryptoError> {
        let mut r = ByteReader::new(bytes);
        let recipient = Address(r.take_array::<ADDRESS_LEN>()?);
        let envelope = r.take_bytes()?.to_vec();
        let item_id = Digest(r.take_array::<32>()?);
        r.expect_end()?;
        Ok(WrappedKey {
            recipient,
            envelope,
            item_id,
        })
    }
}

/// The pluggable cipher suite. All operations are deterministic functions of
/// their arguments (including the explicit seeds), so two runs with the same
/// inputs produce the same bytes regardless of provider.
pub trait CryptoProvider {
    fn name(&self) -> &'static str;

    /// Derives a keypair from a 32-byte seed. Equal seeds give equal pairs;
    /// distinct seeds give distinct pairs.
    fn generate_keypair(&self, seed: &[u8; 32]) -> Result<AsymmetricKeypair, CryptoError>;

    /// Encrypts one chunk under `key` with the given nonce. The ciphertext
    /// authenticates the chunk index as well as the payload.
    fn encrypt_chunk(
        &self,
        key: &SymmetricKey,
        index: u32,
        nonce: &[u8],
        plaintext: &[u8],
    ) -> Result<CipherChunk, CryptoError>;

    /// Decrypts and authenticates one chunk. Any bit flip in the ciphertext
    /// or a wrong key yields [`CryptoError::AuthenticationFailure`].
    fn decrypt_chunk(&self, key: &SymmetricKey, chunk: &CipherChunk) -> Result<Vec<u8>, CryptoError>;

    /// Wraps `key` for the holder of `recipient_public`. `entropy` feeds any
    /// randomized padding so results stay reproducible.
    fn wrap_key(
        &self,
        key: &SymmetricKey,
        recipient_public: &[u8],
        entropy: &[u8; 32],
    ) -> Result<Vec<u8>, CryptoError>;

    /// Recovers the symmetric key from an envelope. Fails with
    /// [`CryptoError::UnwrapFailure`] for any private key other than the
    /// wrap recipient's.
    fn unwrap_key(
        &self,
        envelope: &[u8],
        private_key: &[u8],
        item_id: Digest,
    ) -> Result<SymmetricKey, CryptoError>;
}

/// Content identity: plain SHA-256 of the full plaintext.
pub fn content_hash(data: &[u8]) -> Digest {
    Digest::of(data)
}

/// Splits `data` into ceil(len / chunk_size) segments; every segment except
/// possibly the last has exactly `chunk_size` bytes. Empty input yields one
/// empty segment so even an empty item has a chunk to commit to.
pub fn chunk_data(data: &[u8], chunk_size: usize) -> Result<Vec<Vec<u8>>, CryptoError> {
    if chunk_size == 0 {
        return Err(CryptoError::BadChunkSize);
    }
    if data.is_empty() {
        return Ok(vec![Vec::new()]);
    }
    Ok(data.chunks(chunk_size).map(<[u8]>::to_vec).collect())
}

/// Joins decrypted segments back into the full plaintext.
pub fn reassemble(segments: &[Vec<u8>]) -> Vec<u8> {
    segments.concat()
}

/// Guards nonce uniqueness within one publication.
#[derive(Default)]
pub struct NonceTracker {
    seen: BTreeSet<Vec<u8>>,
}

impl NonceTracker {
    pub fn new() -> NonceTracker {
        NonceTracker::default()
    }

    pub fn check(&mut self, nonce: &[u8]) -> Result<(), CryptoError> {
        if !self.seen.insert(nonce.to_vec()) {
            return Err(CryptoError::NonceReuse);
        }
        Ok(())
    }
}

/// The chunk nonce convention: per-item 8-byte seed, then the index.
pub fn chunk_nonce(nonce_seed: &[u8; 8], index: u32) -> Vec<u8> {
    let mut nonce = Vec::with_capacity(12);
    nonce.extend_from_slice(nonce_seed);
    nonce.extend_from_slice(&index.to_be_bytes());
    nonce
}

/// A fully encrypted item ready for storage and commitment.
pub struct EncryptedItem {
    pub item_id: Digest,
    pub chunks: Vec<CipherChunk>,
}

/// Chunks and encrypts `data` under `key`, assigning the standard per-chunk
/// nonces from `nonce_seed` and refusing any nonce collision.
pub fn encrypt_item(
    provider: &dyn CryptoProvider,
    key: &SymmetricKey,
    data: &[u8],
    chunk_size: usize,
    nonce_seed: &[u8; 8],
) -> Result<EncryptedItem, CryptoError> {
    let segments = chunk_data(data, chunk_size)?;
    let mut tracker = NonceTracker::new();
    let mut chunks = Vec::with_capacity(segments.len());
    for (i, segment) in segments.iter().enumerate() {
        let index = i as u32;
        let nonce = chunk_nonce(nonce_seed, index);
        tracker.check(&nonce)?;
        chunks.push(provider.encrypt_chunk(key, index, &nonce, segment)?);
    }
    Ok(EncryptedItem {
        item_id: content_hash(data),
        chunks,
    })
}

/// Decrypts chunks (already in index order) and reassembles the plaintext.
/// The caller is responsible for checking the result against the item's
/// content hash.
pub fn decrypt_item(
    provider: &dyn CryptoProvider,
    key: &SymmetricKey,
    chunks: &[CipherChunk],
) -> Result<Vec<u8>, CryptoError> {
    let mut segments = Vec::with_capacity(chunks.len());
    for chunk in chunks {
        segments.push(provider.decrypt_chunk(key, chunk)?);
    }
    Ok(reassemble(&segments))
}
