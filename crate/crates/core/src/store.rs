//! Per-node off-chain chunk storage, keyed by chunk digest, with per-item
//! deletion tombstones.
//!
//! Deleting an item removes its chunk bytes and leaves a `deleted` tombstone,
//! so a node can prove it once held the item while no longer being able to
//! serve it. The chain is never touched: commitments stay, content goes.
//!
//! ## On-disk layout
//!
//! ```text
//! <root>/<64-hex-chunk-digest>.chunk   one file per live chunk, canonical
//!                                      chunk encoding (see CipherChunk)
//! <root>/index                         text, one line per item:
//!                                      <item-id-hex> <live|deleted> <digest-hex>...
//! ```
//!
//! Index lines are written in item-id order; digests in chunk order. Loading
//! re-verifies every chunk file against its digest.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use crate::crypto::CipherChunk;
use crate::digest::Digest;
use crate::types::Address;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("item {0} is already stored here")]
    DuplicateItem(Digest),
    #[error("chunk {0} does not match its digest")]
    CorruptChunk(Digest),
    #[error("item {0} is not stored here")]
    UnknownItem(Digest),
    #[error("store file is malformed: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum ItemStatus {
    Unknown,
    Live,
    Deleted,
}

#[derive(Clone, Debug)]
struct ItemRecord {
    status: ItemStatus,
    chunk_digests: Vec<Digest>,
}

/// Proof that a node erased an item's content.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DeletionReceipt {
    pub item_id: Digest,
    pub holder: Address,
    pub deleted_chunks: u64,
    pub timestamp: u64,
}

/// One node's chunk store.
#[derive(Clone)]
pub struct LocalStore {
    holder: Address,
    chunks: BTreeMap<Digest, CipherChunk>,
    items: BTreeMap<Digest, ItemRecord>,
}

impl LocalStore {
    pub fn new(holder: Address) -> LocalStore {
        LocalStore {
            holder,
            chunks: BTreeMap::new(),
            items: BTreeMap::new(),
        }
    }

    pub fn holder(&self) -> Address {
        self.holder
    }

    /// Stores all chunks of an item at once. Rejected wholesale if the item
    /// was ever stored here (tombstones count) or any chunk fails its digest.
    pub fn store_chunks(&mut self, item_id: Digest, chunks: &[CipherChunk]) -> Result<(), StoreError> {
        if self.items.contains_key(&item_id) {
            return Err(StoreError::DuplicateItem(item_id));
        }
        for chunk in chunks {
            if !chunk.digest_consistent() {
                return Err(StoreError::CorruptChunk(chunk.digest));
            }
        }
        let digests: Vec<Digest> = chunks.iter().map(|c| c.digest).collect();
        for chunk in chunks {
            self.chunks.insert(chunk.digest, chunk.clone());
        }
        self.items.insert(
            item_id,
            ItemRecord {
                status: ItemStatus::Live,
                chunk_digests: digests,
            },
        );
        Ok(())
    }

    /// `None` means the chunk is not here — never served from tombstoned items.
    pub fn fetch_chunk(&self, digest: &Digest) -> Option<&CipherChunk> {
        self.chunks.get(digest)
    }

    pub fn item_status(&self, item_id: &Digest) -> ItemStatus {
        self.items
            .get(item_id)
            .map(|r| r.status)
            .unwrap_or(ItemStatus::Unknown)
    }

    pub fn item_chunk_digests(&self, item_id: &Digest) -> Option<&[Digest]> {
        self.items.get(item_id).map(|r| r.chunk_digests.as_slice())
    }

    /// Erases an item's chunk bytes and tombstones the item.
    pub fn delete_item(&mut self, item_id: Digest, timestamp: u64) -> Result<DeletionReceipt, StoreError> {
        let record = self
            .items
            .get_mut(&item_id)
            .filter(|r| r.status == ItemStatus::Live)
            .ok_or(StoreError::UnknownItem(item_id))?;
        record.status = ItemStatus::Deleted;
        let digests = record.chunk_digests.clone();
        let mut deleted = 0u64;
        for d in &digests {
            if self.chunks.remove(d).is_some() {
                deleted += 1;
            }
        }
        Ok(DeletionReceipt {
            item_id,
            holder: self.holder,
            deleted_chunks: deleted,
            timestamp,
        })
    }

    pub fn live_items(&self) -> Vec<Digest> {
        self.items
            .iter()
            .filter(|(_, r)| r.status == ItemStatus::Live)
            .map(|(d, _)| *d)
            .collect()
    }

    pub fn chunk_count(&self) -> usize {
        self.chunks.len()
    }

    /// No chunk belongs to a tombstoned item and every live item's chunks
    /// are present; used by tests as the store's structural invariant.
    pub fn consistent(&self) -> bool {
        let mut expected = 0usize;
        for record in self.items.values() {
            match record.status {
                ItemStatus::Live => {
                    if !record
                        .chunk_digests
                        .iter()
                        .all(|d| self.chunks.contains_key(d))
                    {
                        return false;
                    }
                    expected += record.chunk_digests.len();
                }
                ItemStatus::Deleted => {
                    if record.chunk_digests.iter().any(|d| self.chunks.contains_key(d)) {
                        return false;
                    }
                }
                ItemStatus::Unknown => return false,
            }
        }
        expected == self.chunks.len()
    }

    /// Writes the store to `root` in the documented layout.
    pub fn save_to_dir(&self, root: &Path) -> Result<(), StoreError> {
        fs::create_dir_all(root)?;
        for (digest, chunk) in &self.chunks {
            fs::write(root.join(format!("{}.chunk", digest.to_hex())), chunk.encode())?;
        }
        let mut index = String::new();
        for (item_id, record) in &self.items {
            let status = match record.status {
                ItemStatus::Live => "live",
                ItemStatus::Deleted => "deleted",
                ItemStatus::Unknown => unreachable!("stores never hold unknown items"),
            };
            index.push_str(&item_id.to_hex());
            index.push(' ');
            index.push_str(status);
            for d in &record.chunk_digests {
                index.push(' ');
                index.push_str(&d.to_hex());
            }
            index.push('\n');
        }
        fs::write(root.join("index"), index)?;
        Ok(())
    }

    /// Loads a store saved by [`LocalStore::save_to_dir`], re-verifying every
    /// chunk file against its digest.
    pub fn load_from_dir(holder: Address, root: &Path) -> Result<LocalStore, StoreError> {
        let mut store = LocalStore::new(holder);
        let index_text = fs::read_to_string(root.join("index"))?;
        for (ln, line) in index_text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let item_id = parts
                .next()
                .and_then(|s| Digest::from_hex(s).ok())
                .ok_or_else(|| StoreError::Malformed(format!("index line {ln}: bad item id")))?;
            let status = match parts.next() {
                Some("live") => ItemStatus::Live,
                Some("deleted") => ItemStatus::Deleted,
                other => {
                    return Err(StoreError::Malformed(format!(
                        "index line {ln}: bad status {other:?}"
                    )))
                }
            };
            let mut digests = Vec::new();
            for part in parts {
                digests.push(Digest::from_hex(part).map_err(|_| {
                    StoreError::Malformed(format!("index line {ln}: bad chunk digest"))
                })?);
            }
            if status == ItemStatus::Live {
                for d in &digests {
                    let bytes = fs::read(root.join(format!("{}.chunk", d.to_hex())))?;
                    let chunk = CipherChunk::decode(&bytes)
                        .map_err(|e| StoreError::Malformed(format!("chunk {d}: {e}")))?;
                    if !chunk.digest_consistent() || chunk.digest != *d {
                        return Err(StoreError::CorruptChunk(*d));
                    }
                    store.chunks.insert(*d, chunk);
                }
            }
            store.items.insert(
                item_id,
                ItemRecord {
                    status,
                    chunk_digests: digests,
                },
            );
        }
        Ok(store)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{content_hash, encrypt_item, providers::DeterministicProvider, SymmetricKey};
    use proptest::prelude::*;

    fn sample_item(data: &[u8]) -> (Digest, Vec<CipherChunk>) {
        let p = DeterministicProvider;
        let key = SymmetricKey {
            bytes: [3; 32],
            item_id: content_hash(data),
        };
        let item = encrypt_item(&p, &key, data, 16, &[1; 8]).unwrap();
        (item.item_id, item.chunks)
    }

    fn holder() -> Address {
        Address([0xaa; 20])
    }

    #[test]
    fn store_fetch_delete_lifecycle() {
        let (item_id, chunks) = sample_item(b"the quick brown fox jumps over the lazy dog");
        let mut store = LocalStore::new(holder());
        assert_eq!(store.item_status(&item_id), ItemStatus::Unknown);

        store.store_chunks(item_id, &chunks).unwrap();
        assert_eq!(store.item_status(&item_id), ItemStatus::Live);
        assert!(store.consistent());
        for c in &chunks {
            assert_eq!(store.fetch_chunk(&c.digest), Some(c));
        }

        assert!(matches!(
            store.store_chunks(item_id, &chunks),
            Err(StoreError::DuplicateItem(_))
        ));

        let receipt = store.delete_item(item_id, 1234).unwrap();
        assert_eq!(receipt.deleted_chunks, chunks.len() as u64);
        assert_eq!(receipt.timestamp, 1234);
        assert_eq!(receipt.holder, holder());
        assert_eq!(store.item_status(&item_id), ItemStatus::Deleted);
        assert!(store.consistent());
        for c in &chunks {
            assert_eq!(store.fetch_chunk(&c.digest), None, "deleted chunks are gone");
        }

        assert!(matches!(
            store.delete_item(item_id, 0),
            Err(StoreError::UnknownItem(_))
        ));
        // A tombstone still blocks re-storing.
        assert!(matches!(
            store.store_chunks(item_id, &chunks),
            Err(StoreError::DuplicateItem(_))
        ));
    }

    #[test]
    fn corrupt_chunk_is_rejected_atomically() {
        let (item_id, mut chunks) = sample_item(b"some data across several chunks here");
        chunks[1].ciphertext[0] ^= 1; // digest now stale
        let mut store = LocalStore::new(holder());
        assert!(matches!(
            store.store_chunks(item_id, &chunks),
            Err(StoreError::CorruptChunk(_))
        ));
        assert_eq!(store.item_status(&item_id), ItemStatus::Unknown);
        assert_eq!(store.chunk_count(), 0, "nothing stored on failure");
    }

    #[test]
    fn unknown_item_delete_fails() {
        let mut store = LocalStore::new(holder());
        assert!(matches!(
            store.delete_item(Digest::of(b"nope"), 0),
            Err(StoreError::UnknownItem(_))
        ));
    }

    #[test]
    fn disk_round_trip_preserves_everything() {
        let dir = tempfile::tempdir().unwrap();
        let (live_id, live_chunks) = sample_item(b"live item content");
        let (dead_id, dead_chunks) = sample_item(b"deleted item content");
        let mut store = LocalStore::new(holder());
        store.store_chunks(live_id, &live_chunks).unwrap();
        store.store_chunks(dead_id, &dead_chunks).unwrap();
        store.delete_item(dead_id, 9).unwrap();

        store.save_to_dir(dir.path()).unwrap();
        let loaded = LocalStore::load_from_dir(holder(), dir.path()).unwrap();
        assert_eq!(loaded.item_status(&live_id), ItemStatus::Live);
        assert_eq!(loaded.item_status(&dead_id), ItemStatus::Deleted);
        assert!(loaded.consistent());
        for c in &live_chunks {
            assert_eq!(loaded.fetch_chunk(&c.digest), Some(c));
        }
        for c in &dead_chunks {
            assert_eq!(loaded.fetch_chunk(&c.digest), None);
        }

        // The layout on disk is exactly as documented.
        let index = std::fs::read_to_string(dir.path().join("index")).unwrap();
        for line in index.lines() {
            let status = line.split_whitespace().nth(1).unwrap();
            assert!(status == "live" || status == "deleted");
        }
        let first_live = live_chunks[0].digest.to_hex();
        assert!(dir.path().join(format!("{first_live}.chunk")).exists());

        // Tampering a chunk file on disk is caught at load.
        let path = dir.path().join(format!("{first_live}.chunk"));
        let mut bytes = std::fs::read(&path).unwrap();
        let n = bytes.len();
        bytes[n - 1] ^= 1;
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(
            LocalStore::load_from_dir(holder(), dir.path()),
            Err(StoreError::CorruptChunk(_) | StoreError::Malformed(_))
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        /// Random interleavings of store/delete keep the store consistent:
        /// no orphan chunks, tombstones serve nothing.
        #[test]
        fn random_lifecycles_stay_consistent(ops in proptest::collection::vec((any::<u8>(), any::<bool>()), 1..40)) {
            let mut store = LocalStore::new(holder());
            let items: Vec<(Digest, Vec<CipherChunk>)> =
                (0u8..8).map(|i| sample_item(&[i; 33])).collect();
            for (pick, do_delete) in ops {
                let (item_id, chunks) = &items[(pick % 8) as usize];
                if do_delete {
                    let _ = store.delete_item(*item_id, 0);
                } else {
                    let _ = store.store_chunks(*item_id, chunks);
                }
                prop_assert!(store.consistent());
            }
        }
    }
}
