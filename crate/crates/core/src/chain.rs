//! Append-only hash-chained ledger with Merkle-rooted blocks and named
//! publish/subscribe streams.
//!
//! ## Canonical layouts
//!
//! All hashing and the export format use the field rules from [`crate::codec`]
//! (each field = 4-byte big-endian length + raw bytes, in declared order).
//!
//! Transaction signing bytes (the portion covered by the signature):
//!
//! ```text
//! publisher(20) | stream | key | payload | metadata
//! ```
//!
//! - `signature` = Ed25519 over the signing bytes (64 bytes).
//! - `tx_id` = SHA-256(signing bytes | signature-as-field).
//!
//! Transaction wire encoding (export): signing fields, then `signature`,
//! then `tx_id`, every one length-prefixed.
//!
//! Block header bytes:
//!
//! ```text
//! height(u64) | prev_hash(32) | merkle_root(32) | timestamp(u64) | tx_count(u32)
//! ```
//!
//! A block's identity is SHA-256 of its header bytes; `prev_hash` of block
//! `h+1` commits to block `h`'s header and, through the Merkle root, to every
//! transaction below it. Block wire encoding: header fields followed by each
//! transaction's wire encoding.
//!
//! ## Merkle root
//!
//! Leaves are the transaction digests in block order. An empty leaf list
//! yields the all-zero digest; a single leaf is its own root; odd levels
//! duplicate their last node; parents are SHA-256(left || right) on the raw
//! 32-byte digests.
//!
//! ## Export file
//!
//! Line 1: `chainshare-chain/v1`.
//! Line 2: `tip <64 hex digits>` — the chain's committed tip header digest.
//! Carrying the commitment separately from the blocks means a mutation of
//! the final block's header cannot hide by being internally consistent.
//! Line 3: hex of the publisher registry — `u32` count, then per publisher
//! `address(20) | verifying_key(32)`, each length-prefixed, in address order.
//! Lines 4..: one block per line, hex of the block wire encoding, in height
//! order. Import reverses this and rebuilds the stream indexes, after which
//! [`Chain::verify`] re-checks every link, root, digest, signature, and the
//! declared tip.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use ed25519_dalek::{Signature, Signer as _, SigningKey, Verifier as _, VerifyingKey};
use thiserror::Error;

use crate::codec::{ByteReader, ByteWriter, CodecError};
use crate::digest::Digest;
use crate::types::{Address, ADDRESS_LEN};

/// Streams every chain starts with.
pub const STREAM_PUBKEYS: &str = "Pubkeys";
pub const STREAM_ITEMS: &str = "Items";
pub const STREAM_ACCESS: &str = "Access";
pub const STREAM_PROVENANCE: &str = "Provenance";
pub const STREAM_SYSTEM: &str = "system";

/// Largest payload a single transaction may carry inline.
pub const DEFAULT_INLINE_LIMIT: usize = 4096;
/// Timestamp of the genesis block when none is configured (fixed so that
/// freshly built chains are bit-identical).
pub const DEFAULT_GENESIS_TIME: u64 = 1_600_000_000;

const EXPORT_MAGIC: &str = "chainshare-chain/v1";
const SIGNATURE_LEN: usize = 64;

#[derive(Debug, Error)]
pub enum ChainError {
    #[error("block must contain at least one transaction")]
    EmptyBlock,
    #[error("signature invalid for publisher {0}")]
    BadSignature(Address),
    #[error("publisher {0} is not registered")]
    UnknownPublisher(Address),
    #[error("payload of {got} bytes exceeds the inline limit of {limit} bytes")]
    OversizePayload { got: usize, limit: usize },
    #[error("unknown stream `{0}`")]
    UnknownStream(String),
    #[error("invalid stream name `{0}`")]
    BadStreamName(String),
    #[error("chain import failed: {0}")]
    Import(String),
    #[error(transparent)]
    Codec(#[from] CodecError),
}

/// A signing identity: an Ed25519 key plus the address derived from it.
#[derive(Clone)]
pub struct Identity {
    signing: SigningKey,
    addr: Address,
}

impl Identity {
    pub fn from_seed(seed: &[u8; 32]) -> Identity {
        let signing = SigningKey::from_bytes(seed);
        let addr = Address::from_public_key(signing.verifying_key().as_bytes());
        Identity { signing, addr }
    }

    pub fn addr(&self) -> Address {
        self.addr
    }

    pub fn verifying_key(&self) -> VerifyingKey {
        self.signing.verifying_key()
    }

    pub fn sign(&self, msg: &[u8]) -> Vec<u8> {
        self.signing.sign(msg).to_bytes().to_vec()
    }
}

/// One stream publication, signed by its publisher.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Transaction {
    pub tx_id: Digest,
    pub publisher: Address,
    pub stream: String,
    pub key: String,
    pub payload: Vec<u8>,
    pub metadata: BTreeMap<String, String>,
    pub signature: Vec<u8>,
}

impl Transaction {
    pub fn signing_bytes(
        publisher: &Address,
        stream: &str,
        key: &str,
        payload: &[u8],
        metadata: &BTreeMap<String, String>,
    ) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.put_bytes(&publisher.0)
            .put_str(stream)
            .put_str(key)
            .put_bytes(payload)
            .put_map(metadata);
        w.finish()
    }

    /// Digest committing to the signed fields and the signature itself.
    pub fn digest_of(signing_bytes: &[u8], signature: &[u8]) -> Digest {
        let mut w = ByteWriter::new();
        w.put_bytes(signature);
        Digest::of_parts(&[signing_bytes, &w.finish()])
    }

    pub fn own_signing_bytes(&self) -> Vec<u8> {
        Transaction::signing_bytes(
            &self.publisher,
            &self.stream,
            &self.key,
            &self.payload,
            &self.metadata,
        )
    }

    /// Recomputes the identity digest from the current field values.
    pub fn compute_tx_id(&self) -> Digest {
        Transaction::digest_of(&self.own_signing_bytes(), &self.signature)
    }

    fn encode(&self, w: &mut ByteWriter) {
        w.put_bytes(&self.publisher.0)
            .put_str(&self.stream)
            .put_str(&self.key)
            .put_bytes(&self.payload)
            .put_map(&self.metadata)
            .put_bytes(&self.signature)
            .put_bytes(&self.tx_id.0);
    }

    fn decode(r: &mut ByteReader<'_>) -> Result<Transaction, ChainError> {
        let publisher = Address(r.take_array::<ADDRESS_LEN>()?);
        let stream = r.take_str()?;
        let key = r.take_str()?;
        let payload = r.take_bytes()?.to_vec();
        let metadata = r.take_map()?;
        let signature = r.take_bytes()?.to_vec();
        let tx_id = Digest(r.take_array::<32>()?);
        Ok(Transaction {
            tx_id,
            publisher,
            stream,
            key,
            payload,
            metadata,
            signature,
        })
    }
}

/// A sealed block.
#[derive(Clone, Debug)]
pub struct Block {
    pub height: u64,
    pub prev_hash: Digest,
    pub merkle_root: Digest,
    pub timestamp: u64,
    pub txs: Vec<Transaction>,
}

impl Block {
    pub fn header_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.put_u64(self.height)
            .put_bytes(&self.prev_hash.0)
            .put_bytes(&self.merkle_root.0)
            .put_u64(self.timestamp)
            .put_u32(self.txs.len() as u32);
        w.finish()
    }

    /// The block's identity: SHA-256 of its header bytes.
    pub fn header_digest(&self) -> Digest {
        Digest::of(&self.header_bytes())
    }

    fn encode(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.put_u64(self.height)
            .put_bytes(&self.prev_hash.0)
            .put_bytes(&self.merkle_root.0)
            .put_u64(self.timestamp)
            .put_u32(self.txs.len() as u32);
        for tx in &self.txs {
            tx.encode(&mut w);
        }
        w.finish()
    }

    fn decode(bytes: &[u8]) -> Result<Block, ChainError> {
        let mut r = ByteReader::new(bytes);
        let height = r.take_u64()?;
        let prev_hash = Digest(r.take_array::<32>()?);
        let merkle_root = Digest(r.take_array::<32>()?);
        let timestamp = r.take_u64()?;
        let tx_count = r.take_u32()?;
        let mut txs = Vec::with_capacity(tx_count as usize);
        for _ in 0..tx_count {
            txs.push(Transaction::decode(&mut r)?);
        }
        r.expect_end()?;
        Ok(Block {
            height,
            prev_hash,
            merkle_root,
            timestamp,
            txs,
        })
    }
}

/// One entry of a stream index: where and what a publication was.
#[derive(Clone, Debug)]
pub struct StreamItem {
    pub stream: String,
    pub key: String,
    pub publisher: Address,
    pub payload: Vec<u8>,
    pub metadata: BTreeMap<String, String>,
    pub tx_id: Digest,
    pub block_height: u64,
}

/// Filter for [`Chain::list_items`].
#[derive(Clone, Copy, Debug)]
pub enum ItemFilter<'a> {
    All,
    KeyPrefix(&'a str),
    Publisher(Address),
}

impl ItemFilter<'_> {
    fn matches(&self, item: &StreamItem) -> bool {
        match self {
            ItemFilter::All => true,
            ItemFilter::KeyPrefix(p) => item.key.starts_with(p),
            ItemFilter::Publisher(a) => item.publisher == *a,
        }
    }
}

/// Merkle root over transaction digests; see the module docs for the exact
/// convention (zero digest when empty, identity for one leaf, odd levels
/// duplicate their last node, parent = SHA-256(left || right)).
pub fn merkle_root(leaves: &[Digest]) -> Digest {
    if leaves.is_empty() {
        return Digest::ZERO;
    }
    let mut level = leaves.to_vec();
    while level.len() > 1 {
        let mut next = Vec::with_capacity(level.len().div_ceil(2));
        for pair in level.chunks(2) {
            let left = pair[0];
            let right = *pair.get(1).unwrap_or(&pair[0]);
            next.push(Digest::of_parts(&[&left.0, &right.0]));
        }
        level = next;
    }
    level[0]
}

/// Per-block verification outcome.
#[derive(Clone, Debug)]
pub struct BlockReport {
    pub height: u64,
    pub ok: bool,
    pub issues: Vec<String>,
}

/// Full-chain verification outcome; `ok` only when every check passed.
#[derive(Clone, Debug)]
pub struct VerificationReport {
    pub ok: bool,
    pub blocks: Vec<BlockReport>,
    pub chain_issues: Vec<String>,
}

/// The ledger: sealed blocks, the pending transaction pool, stream indexes,
/// and the registry of publishers allowed to write.
#[derive(Clone)]
pub struct Chain {
    blocks: Vec<Block>,
    tip_hash: Digest,
    publishers: BTreeMap<Address, VerifyingKey>,
    streams: BTreeMap<String, Vec<StreamItem>>,
    pending: Vec<Transaction>,
    /// Timestamp the next sealed block will carry; owned by the caller's clock.
    pub clock: u64,
    inline_limit: usize,
}

const SYSTEM_SEED: [u8; 32] = [0x73; 32];

impl Chain {
    /// Builds a chain with its genesis block (height 0, zero previous hash,
    /// one system transaction) already sealed.
    pub fn new(genesis_time: u64, inline_limit: usize) -> Chain {
        let system = Identity::from_seed(&SYSTEM_SEED);
        let mut chain = Chain {
            blocks: Vec::new(),
            tip_hash: Digest::ZERO,
            publishers: BTreeMap::new(),
            streams: BTreeMap::new(),
            pending: Vec::new(),
            clock: genesis_time,
            inline_limit,
        };
        for s in [
            STREAM_PUBKEYS,
            STREAM_ITEMS,
            STREAM_ACCESS,
            STREAM_PROVENANCE,
            STREAM_SYSTEM,
        ] {
            chain.streams.insert(s.to_string(), Vec::new());
        }
        chain.register_publisher(system.addr(), system.verifying_key());
        let genesis_tx = chain
            .build_signed(&system, STREAM_SYSTEM, "genesis", b"genesis".to_vec(), BTreeMap::new())
            .expect("genesis transaction is always valid");
        chain
            .append_block(vec![genesis_tx])
            .expect("genesis block is always valid");
        chain
    }

    pub fn system_identity() -> Identity {
        Identity::from_seed(&SYSTEM_SEED)
    }

    pub fn inline_limit(&self) -> usize {
        self.inline_limit
    }

    pub fn register_publisher(&mut self, addr: Address, key: VerifyingKey) {
        self.publishers.insert(addr, key);
    }

    pub fn is_registered(&self, addr: &Address) -> bool {
        self.publishers.contains_key(addr)
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn tip_height(&self) -> u64 {
        self.blocks.last().map(|b| b.height).unwrap_or(0)
    }

    pub fn tip_hash(&self) -> Digest {
        self.tip_hash
    }

    pub fn has_pending(&self) -> bool {
        !self.pending.is_empty()
    }

    pub fn pending_count(&self) -> usize {
        self.pending.len()
    }

    fn valid_stream_name(name: &str) -> bool {
        !name.is_empty()
            && name.len() <= 64
            && name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.')
    }

    fn build_signed(
        &self,
        publisher: &Identity,
        stream: &str,
        key: &str,
        payload: Vec<u8>,
        metadata: BTreeMap<String, String>,
    ) -> Result<Transaction, ChainError> {
        if !Chain::valid_stream_name(stream) {
            return Err(ChainError::BadStreamName(stream.to_string()));
        }
        let registered = self
            .publishers
            .get(&publisher.addr())
            .ok_or(ChainError::UnknownPublisher(publisher.addr()))?;
        if registered.as_bytes() != publisher.verifying_key().as_bytes() {
            return Err(ChainError::BadSignature(publisher.addr()));
        }
        if payload.len() > self.inline_limit {
            return Err(ChainError::OversizePayload {
                got: payload.len(),
                limit: self.inline_limit,
            });
        }
        let signing_bytes =
            Transaction::signing_bytes(&publisher.addr(), stream, key, &payload, &metadata);
        let signature = publisher.sign(&signing_bytes);
        let tx_id = Transaction::digest_of(&signing_bytes, &signature);
        Ok(Transaction {
            tx_id,
            publisher: publisher.addr(),
            stream: stream.to_string(),
            key: key.to_string(),
            payload,
            metadata,
            signature,
        })
    }

    /// Signs a publication and queues it for the next sealed block.
    pub fn publish_item(
        &mut self,
        publisher: &Identity,
        stream: &str,
        key: &str,
        payload: Vec<u8>,
        metadata: BTreeMap<String, String>,
    ) -> Result<Transaction, ChainError> {
        let tx = self.build_signed(publisher, stream, key, payload, metadata)?;
        self.pending.push(tx.clone());
        Ok(tx)
    }

    /// Seals all pending transactions into one block. Returns `None` when the
    /// pool is empty: blocks are never empty.
    pub fn seal_pending(&mut self) -> Result<Option<u64>, ChainError> {
        if self.pending.is_empty() {
            return Ok(None);
        }
        let txs = std::mem::take(&mut self.pending);
        let block = self.append_block(txs)?;
        Ok(Some(block))
    }

    fn validate_tx(&self, tx: &Transaction) -> Result<(), ChainError> {
        if !Chain::valid_stream_name(&tx.stream) {
            return Err(ChainError::BadStreamName(tx.stream.clone()));
        }
        if tx.payload.len() > self.inline_limit {
            return Err(ChainError::OversizePayload {
                got: tx.payload.len(),
                limit: self.inline_limit,
            });
        }
        let key = self
            .publishers
            .get(&tx.publisher)
            .ok_or(ChainError::UnknownPublisher(tx.publisher))?;
        let signature = Signature::from_slice(&tx.signature)
            .map_err(|_| ChainError::BadSignature(tx.publisher))?;
        let signing_bytes = tx.own_signing_bytes();
        key.verify(&signing_bytes, &signature)
            .map_err(|_| ChainError::BadSignature(tx.publisher))?;
        if Transaction::digest_of(&signing_bytes, &tx.signature) != tx.tx_id {
            return Err(ChainError::BadSignature(tx.publisher));
        }
        debug_assert_eq!(tx.signature.len(), SIGNATURE_LEN);
        Ok(())
    }

    /// Validates and seals `txs` as the next block. All-or-nothing: on any
    /// error the chain is left exactly as it was.
    pub fn append_block(&mut self, txs: Vec<Transaction>) -> Result<u64, ChainError> {
        if txs.is_empty() {
            return Err(ChainError::EmptyBlock);
        }
        for tx in &txs {
            self.validate_tx(tx)?;
        }
        let height = match self.blocks.last() {
            None => 0,
            Some(_) => self.tip_height() + 1,
        };
        let prev_hash = if self.blocks.is_empty() {
            Digest::ZERO
        } else {
            self.tip_hash
        };
        let timestamp = self
            .blocks
            .last()
            .map(|b| b.timestamp.max(self.clock))
            .unwrap_or(self.clock);
        let leaves: Vec<Digest> = txs.iter().map(|t| t.tx_id).collect();
        let block = Block {
            height,
            prev_hash,
            merkle_root: merkle_root(&leaves),
            timestamp,
            txs,
        };
        self.tip_hash = block.header_digest();
        for tx in &block.txs {
            self.streams.entry(tx.stream.clone()).or_default().push(StreamItem {
                stream: tx.stream.clone(),
                key: tx.key.clone(),
                publisher: tx.publisher,
                payload: tx.payload.clone(),
                metadata: tx.metadata.clone(),
                tx_id: tx.tx_id,
                block_height: height,
            });
        }
        self.blocks.push(block);
        Ok(height)
    }

    pub fn stream_names(&self) -> Vec<&str> {
        self.streams.keys().map(String::as_str).collect()
    }

    /// Lists a stream's publications in chain order, optionally filtered.
    pub fn list_items(
        &self,
        stream: &str,
        filter: ItemFilter<'_>,
    ) -> Result<Vec<&StreamItem>, ChainError> {
        let items = self
            .streams
            .get(stream)
            .ok_or_else(|| ChainError::UnknownStream(stream.to_string()))?;
        Ok(items.iter().filter(|i| filter.matches(i)).collect())
    }

    /// Re-checks every hash link, Merkle root, transaction digest, and
    /// signature. `ok` is true only if everything validates.
    pub fn verify(&self) -> VerificationReport {
        let mut reports = Vec::with_capacity(self.blocks.len());
        let mut chain_issues = Vec::new();
        let mut prev_digest = Digest::ZERO;
        let mut prev_timestamp = 0u64;

        for (i, block) in self.blocks.iter().enumerate() {
            let mut issues = Vec::new();
            if block.height != i as u64 {
                issues.push(format!(
                    "height {} out of sequence, expected {}",
                    block.height, i
                ));
            }
            if i == 0 {
                if block.prev_hash != Digest::ZERO {
                    issues.push("genesis previous hash is not zero".to_string());
                }
            } else if block.prev_hash != prev_digest {
                issues.push("previous-hash link does not match prior header".to_string());
            }
            if block.txs.is_empty() {
                issues.push("block is empty".to_string());
            }
            if i > 0 && block.timestamp < prev_timestamp {
                issues.push("timestamp decreased".to_string());
            }
            let mut leaves = Vec::with_capacity(block.txs.len());
            for (j, tx) in block.txs.iter().enumerate() {
                let signing_bytes = tx.own_signing_bytes();
                let recomputed = Transaction::digest_of(&signing_bytes, &tx.signature);
                if recomputed != tx.tx_id {
                    issues.push(format!("transaction {j} digest mismatch"));
                }
                leaves.push(recomputed);
                match self.publishers.get(&tx.publisher) {
                    None => issues.push(format!("transaction {j} has unknown publisher")),
                    Some(key) => {
                        let sig_ok = Signature::from_slice(&tx.signature)
                            .ok()
                            .map(|sig| key.verify(&signing_bytes, &sig).is_ok())
                            .unwrap_or(false);
                        if !sig_ok {
                            issues.push(format!("transaction {j} signature invalid"));
                        }
                    }
                }
            }
            if merkle_root(&leaves) != block.merkle_root {
                issues.push("merkle root mismatch".to_string());
            }
            prev_digest = block.header_digest();
            prev_timestamp = block.timestamp;
            reports.push(BlockReport {
                height: block.height,
                ok: issues.is_empty(),
                issues,
            });
        }

        if self.blocks.is_empty() {
            chain_issues.push("chain has no genesis block".to_string());
        } else if prev_digest != self.tip_hash {
            chain_issues.push("tip commitment does not match last header".to_string());
        }

        let ok = chain_issues.is_empty() && reports.iter().all(|r| r.ok);
        VerificationReport {
            ok,
            blocks: reports,
            chain_issues,
        }
    }

    /// Renders the whole chain as text; see the module docs for the layout.
    pub fn export_lines(&self) -> String {
        let mut out = String::new();
        out.push_str(EXPORT_MAGIC);
        out.push('\n');
        let _ = writeln!(out, "tip {}", self.tip_hash.to_hex());
        let mut w = ByteWriter::new();
        w.put_u32(self.publishers.len() as u32);
        for (addr, key) in &self.publishers {
            w.put_bytes(&addr.0).put_bytes(key.as_bytes());
        }
        let _ = writeln!(out, "{}", hex::encode(w.finish()));
        for block in &self.blocks {
            let _ = writeln!(out, "{}", hex::encode(block.encode()));
        }
        out
    }

    /// Parses an export back into a chain (structure only; run
    /// [`Chain::verify`] on the result for integrity).
    pub fn import_lines(text: &str) -> Result<Chain, ChainError> {
        let mut lines = text.lines();
        match lines.next() {
            Some(EXPORT_MAGIC) => {}
            other => {
                return Err(ChainError::Import(format!(
                    "bad magic line: {:?}",
                    other.unwrap_or("")
                )))
            }
        }
        let tip_line = lines
            .next()
            .ok_or_else(|| ChainError::Import("missing tip line".to_string()))?;
        let tip_hex = tip_line
            .strip_prefix("tip ")
            .ok_or_else(|| ChainError::Import(format!("bad tip line: {tip_line:?}")))?;
        let tip_hash = Digest::from_hex(tip_hex.trim())
            .map_err(|e| ChainError::Import(format!("bad tip digest: {e}")))?;
        let publisher_hex = lines
            .next()
            .ok_or_else(|| ChainError::Import("missing publisher line".to_string()))?;
        let publisher_bytes = hex::decode(publisher_hex.trim())
            .map_err(|e| ChainError::Import(format!("publisher line is not hex: {e}")))?;
        let mut r = ByteReader::new(&publisher_bytes);
        let count = r.take_u32()?;
        let mut publishers = BTreeMap::new();
        for _ in 0..count {
            let addr = Address(r.take_array::<ADDRESS_LEN>()?);
            let key_bytes = r.take_array::<32>()?;
            let key = VerifyingKey::from_bytes(&key_bytes)
                .map_err(|e| ChainError::Import(format!("bad verifying key: {e}")))?;
            publishers.insert(addr, key);
        }
        r.expect_end()?;

        let mut chain = Chain {
            blocks: Vec::new(),
            tip_hash,
            publishers,
            streams: BTreeMap::new(),
            pending: Vec::new(),
            clock: 0,
            inline_limit: DEFAULT_INLINE_LIMIT,
        };
        for s in [
            STREAM_PUBKEYS,
            STREAM_ITEMS,
            STREAM_ACCESS,
            STREAM_PROVENANCE,
            STREAM_SYSTEM,
        ] {
            chain.streams.insert(s.to_string(), Vec::new());
        }
        for (n, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let bytes = hex::decode(line.trim())
                .map_err(|e| ChainError::Import(format!("block line {n} is not hex: {e}")))?;
            let block = Block::decode(&bytes)?;
            chain.clock = block.timestamp;
            for tx in &block.txs {
                chain
                    .streams
                    .entry(tx.stream.clone())
                    .or_default()
                    .push(StreamItem {
                        stream: tx.stream.clone(),
                        key: tx.key.clone(),
                        publisher: tx.publisher,
                        payload: tx.payload.clone(),
                        metadata: tx.metadata.clone(),
                        tx_id: tx.tx_id,
                        block_height: block.height,
                    });
            }
            chain.blocks.push(block);
        }
        if chain.blocks.is_empty() {
            return Err(ChainError::Import("export has no blocks".to_string()));
        }
        Ok(chain)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ident(tag: u8) -> Identity {
        Identity::from_seed(&[tag; 32])
    }

    fn test_chain() -> (Chain, Identity) {
        let mut chain = Chain::new(DEFAULT_GENESIS_TIME, DEFAULT_INLINE_LIMIT);
        let alice = ident(1);
        chain.register_publisher(alice.addr(), alice.verifying_key());
        (chain, alice)
    }

    fn meta(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect()
    }

    #[test]
    fn genesis_shape() {
        let chain = Chain::new(DEFAULT_GENESIS_TIME, DEFAULT_INLINE_LIMIT);
        let genesis = &chain.blocks()[0];
        assert_eq!(genesis.height, 0);
        assert_eq!(genesis.prev_hash, Digest::ZERO);
        assert_eq!(genesis.txs.len(), 1);
        assert_eq!(genesis.txs[0].stream, STREAM_SYSTEM);
        assert_eq!(chain.tip_hash(), genesis.header_digest());
        assert!(chain.verify().ok);
    }

    fn put_field(buf: &mut Vec<u8>, field: &[u8]) {
        buf.extend_from_slice(&(field.len() as u32).to_be_bytes());
        buf.extend_from_slice(field);
    }

    /// The transaction encoding, assembled by hand from the layout rules,
    /// must match what `signing_bytes`/`digest_of` produce — and the result
    /// is pinned as a frozen hex vector (Ed25519 is deterministic, so the
    /// whole construction is reproducible bit-for-bit).
    #[test]
    fn transaction_digest_matches_hand_encoding_and_frozen_vector() {
        let alice = ident(1);
        let metadata = meta(&[("a", "1")]);
        let signing_bytes =
            Transaction::signing_bytes(&alice.addr(), "Items", "item-1", b"payload", &metadata);

        let mut expect = Vec::new();
        put_field(&mut expect, &alice.addr().0);
        put_field(&mut expect, b"Items");
        put_field(&mut expect, b"item-1");
        put_field(&mut expect, b"payload");
        put_field(&mut expect, &1u32.to_be_bytes()); // metadata pair count
        put_field(&mut expect, b"a");
        put_field(&mut expect, b"1");
        assert_eq!(signing_bytes, expect);

        let signature = alice.sign(&signing_bytes);
        let tx_id = Transaction::digest_of(&signing_bytes, &signature);
        let mut preimage = signing_bytes.clone();
        put_field(&mut preimage, &signature);
        assert_eq!(tx_id, Digest::of(&preimage));

        assert_eq!(alice.addr().to_hex(), ADDR1_HEX, "identity derivation changed");
        assert_eq!(tx_id.to_hex(), TX1_ID_HEX, "canonical encoding changed");
    }

    const ADDR1_HEX: &str = "aabe933be154a4b5094e1c4abf42866505f3c97e";
    const TX1_ID_HEX: &str = "bdc5b9bb6c5e1f673bd364a27943356bce5cd6e9dc6dfe06b2b46fd2d96ff3c4";

    #[test]
    fn merkle_conventions() {
        assert_eq!(merkle_root(&[]), Digest::ZERO);
        let a = Digest::of(b"a");
        let b = Digest::of(b"b");
        let c = Digest::of(b"c");
        assert_eq!(merkle_root(&[a]), a, "single leaf is its own root");
        assert_eq!(
            merkle_root(&[a, b]),
            Digest::of_parts(&[&a.0, &b.0]),
            "two leaves hash directly"
        );
        // Odd count duplicates the last leaf.
        let ab = Digest::of_parts(&[&a.0, &b.0]);
        let cc = Digest::of_parts(&[&c.0, &c.0]);
        assert_eq!(merkle_root(&[a, b, c]), Digest::of_parts(&[&ab.0, &cc.0]));
    }

    #[test]
    fn publish_seal_and_list() {
        let (mut chain, alice) = test_chain();
        chain
            .publish_item(&alice, "Items", "k1", b"v1".to_vec(), meta(&[("t", "x")]))
            .unwrap();
        chain
            .publish_item(&alice, "Items", "k2", b"v2".to_vec(), BTreeMap::new())
            .unwrap();
        assert!(chain.has_pending());
        let height = chain.seal_pending().unwrap().unwrap();
        assert_eq!(height, 1);
        assert!(chain.seal_pending().unwrap().is_none(), "no empty blocks");

        let all = chain.list_items("Items", ItemFilter::All).unwrap();
        assert_eq!(all.len(), 2);
        assert_eq!(all[0].key, "k1");
        let filtered = chain
            .list_items("Items", ItemFilter::KeyPrefix("k2"))
            .unwrap();
        assert_eq!(filtered.len(), 1);
        let by_pub = chain
            .list_items("Items", ItemFilter::Publisher(alice.addr()))
            .unwrap();
        assert_eq!(by_pub.len(), 2);
        assert!(matches!(
            chain.list_items("Nope", ItemFilter::All),
            Err(ChainError::UnknownStream(_))
        ));
        assert!(chain.verify().ok);
    }

    #[test]
    fn rejects_unregistered_oversize_and_foreign_signature() {
        let (mut chain, alice) = test_chain();
        let mallory = ident(9);
        assert!(matches!(
            chain.publish_item(&mallory, "Items", "k", vec![], BTreeMap::new()),
            Err(ChainError::UnknownPublisher(_))
        ));
        let big = vec![0u8; DEFAULT_INLINE_LIMIT + 1];
        assert!(matches!(
            chain.publish_item(&alice, "Items", "k", big, BTreeMap::new()),
            Err(ChainError::OversizePayload { .. })
        ));
        assert!(matches!(
            chain.publish_item(&alice, "bad name!", "k", vec![], BTreeMap::new()),
            Err(ChainError::BadStreamName(_))
        ));

        // A transaction whose signature was made by someone else is rejected
        // at sealing, and the chain is unchanged.
        let mut tx = chain
            .build_signed(&alice, "Items", "k", b"v".to_vec(), BTreeMap::new())
            .unwrap();
        let forged_signing = tx.own_signing_bytes();
        tx.signature = mallory.sign(&forged_signing);
        tx.tx_id = Transaction::digest_of(&forged_signing, &tx.signature);
        let before = chain.blocks().len();
        assert!(matches!(
            chain.append_block(vec![tx]),
            Err(ChainError::BadSignature(_))
        ));
        assert_eq!(chain.blocks().len(), before, "append is all-or-nothing");
        assert!(matches!(
            chain.append_block(vec![]),
            Err(ChainError::EmptyBlock)
        ));
    }

    #[test]
    fn tamper_payload_breaks_merkle_and_digest() {
        let (mut chain, alice) = test_chain();
        chain
            .publish_item(&alice, "Items", "k", b"honest".to_vec(), BTreeMap::new())
            .unwrap();
        chain.seal_pending().unwrap();
        assert!(chain.verify().ok);

        let mut tampered = chain.clone();
        tampered.blocks[1].txs[0].payload[0] ^= 0x01;
        let report = tampered.verify();
        assert!(!report.ok);
        let issues = &report.blocks[1].issues;
        assert!(
            issues.iter().any(|i| i.contains("digest mismatch"))
                && issues.iter().any(|i| i.contains("merkle root mismatch")),
            "payload tamper must break both the tx digest and the merkle root: {issues:?}"
        );
    }

    #[test]
    fn tamper_prev_hash_breaks_link() {
        let (mut chain, alice) = test_chain();
        for i in 0..3 {
            chain
                .publish_item(&alice, "Items", &format!("k{i}"), vec![i], BTreeMap::new())
                .unwrap();
            chain.seal_pending().unwrap();
        }
        let mut tampered = chain.clone();
        tampered.blocks[2].prev_hash.0[0] ^= 0xff;
        let report = tampered.verify();
        assert!(!report.ok);
        assert!(report.blocks[2]
            .issues
            .iter()
            .any(|i| i.contains("previous-hash link")));

        // Replaying a stale prev_hash (pointing two blocks back) also fails.
        let stale = chain.blocks()[1].prev_hash;
        let mut replayed = chain.clone();
        replayed.blocks[3].prev_hash = stale;
        assert!(!replayed.verify().ok);
    }

    #[test]
    fn tamper_tip_block_is_detected() {
        let (mut chain, alice) = test_chain();
        chain
            .publish_item(&alice, "Items", "k", b"v".to_vec(), BTreeMap::new())
            .unwrap();
        chain.seal_pending().unwrap();
        let mut tampered = chain.clone();
        let last = tampered.blocks.len() - 1;
        tampered.blocks[last].timestamp ^= 1;
        let report = tampered.verify();
        assert!(
            !report.ok,
            "tip header tamper must fail via the tip commitment"
        );
        assert!(report
            .chain_issues
            .iter()
            .any(|i| i.contains("tip commitment")));
    }

    #[test]
    fn export_import_round_trip() {
        let (mut chain, alice) = test_chain();
        for i in 0..4u8 {
            chain
                .publish_item(
                    &alice,
                    "Items",
                    &format!("k{i}"),
                    vec![i; 10],
                    meta(&[("n", "1")]),
                )
                .unwrap();
            chain.clock += 15;
            chain.seal_pending().unwrap();
        }
        let text = chain.export_lines();
        let imported = Chain::import_lines(&text).unwrap();
        assert_eq!(imported.blocks().len(), chain.blocks().len());
        assert_eq!(imported.tip_hash(), chain.tip_hash());
        assert!(imported.verify().ok);
        assert_eq!(imported.export_lines(), text, "export is canonical");
        assert_eq!(
            imported.list_items("Items", ItemFilter::All).unwrap().len(),
            4
        );

        assert!(matches!(
            Chain::import_lines("not-a-chain\n"),
            Err(ChainError::Import(_))
        ));

        // A tampered export line fails verification after import.
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        let last = lines.len() - 1;
        let mut bytes = hex::decode(&lines[last]).unwrap();
        let n = bytes.len();
        bytes[n - 1] ^= 0x01;
        lines[last] = hex::encode(bytes);
        let reimported = Chain::import_lines(&(lines.join("\n") + "\n"));
        match reimported {
            Ok(c) => assert!(!c.verify().ok),
            Err(_) => {} // structural decode failure is also a detection
        }
    }

    #[test]
    fn timestamps_never_decrease() {
        let (mut chain, alice) = test_chain();
        chain.clock = DEFAULT_GENESIS_TIME - 500; // caller clock went backwards
        chain
            .publish_item(&alice, "Items", "k", vec![1], BTreeMap::new())
            .unwrap();
        chain.seal_pending().unwrap();
        let b = chain.blocks().last().unwrap();
        assert_eq!(b.timestamp, DEFAULT_GENESIS_TIME);
        assert!(chain.verify().ok);
    }

    proptest! {
        /// Changing any single leaf changes the root (1..=64 leaves).
        #[test]
        fn merkle_is_leaf_sensitive(count in 1usize..=64, idx in 0usize..64, flip in 1u8..=255) {
            let idx = idx % count;
            let leaves: Vec<Digest> = (0..count).map(|i| Digest::of(&[i as u8])).collect();
            let root = merkle_root(&leaves);
            let mut mutated = leaves.clone();
            mutated[idx].0[0] ^= flip;
            prop_assert_ne!(root, merkle_root(&mutated));
        }

        /// Appending keeps verification green and indexes every publication.
        #[test]
        fn random_publishes_verify_and_index(specs in proptest::collection::vec((0u8..4, proptest::collection::vec(any::<u8>(), 0..200)), 1..24)) {
            let (mut chain, alice) = test_chain();
            let streams = ["Items", "Access", "Pubkeys", "Provenance"];
            let mut per_stream = [0usize; 4];
            for (chunk_i, (s, payload)) in specs.iter().enumerate() {
                let stream = streams[*s as usize];
                per_stream[*s as usize] += 1;
                chain.publish_item(&alice, stream, &format!("k{chunk_i}"), payload.clone(), BTreeMap::new()).unwrap();
                if chunk_i % 3 == 2 {
                    chain.clock += 15;
                    chain.seal_pending().unwrap();
                }
            }
            chain.seal_pending().unwrap();
            prop_assert!(chain.verify().ok);
            for (i, stream) in streams.iter().enumerate() {
                let listed = chain.list_items(stream, ItemFilter::Publisher(alice.addr())).unwrap();
                prop_assert_eq!(listed.len(), per_stream[i]);
                // Every indexed item really is in its recorded block.
                for item in listed {
                    let block = &chain.blocks()[item.block_height as usize];
                    prop_assert!(block.txs.iter().any(|t| t.tx_id == item.tx_id && t.payload == item.payload));
                }
            }
        }
    }
}
