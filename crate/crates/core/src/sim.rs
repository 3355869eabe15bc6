//! A deterministic multi-node world wiring the ledger, the crypto pipeline,
//! the chunk stores, and the escrow engine into one market.
//!
//! Determinism contract: given the same configuration (including the RNG
//! seed), two runs produce byte-identical logs, chains, and reports. All
//! randomness flows from one seeded ChaCha20 stream, all collections iterate
//! in fixed order, and messages travel through a FIFO queue.
//!
//! Time: one tick = one block slot of `block_interval_seconds`. Each tick
//! drains the message queue, then seals at most one block — and only if
//! transactions are pending, because blocks are never empty. Every contract
//! call is accounted as confirming in the next block slot, so its simulated
//! latency is exactly `blocks_waited × block_interval_seconds`.
//!
//! The flow for one sale:
//!
//! 1. `publish_data`: owner encrypts chunks into its store, deploys the sale
//!    contract, and publishes the item commitment (chunk digests + content
//!    hash + terms) on the `Items` stream.
//! 2. `purchase`: consumer pays double the price into escrow; the owner wraps
//!    the content key for the consumer and publishes it on the `Access`
//!    stream; an access notice message points the consumer at it.
//! 3. `retrieve_and_confirm`: the consumer broadcasts chunk queries, holders
//!    respond, every chunk is verified against the committed digests
//!    (corrupted responders get rejected), the key is unwrapped, the content
//!    decrypted and checked against its identity hash, delivery is recorded,
//!    and the contract settles.
//!
//! Off-chain deletion (`delete_item`) leaves the chain untouched: later
//! retrievals fail with `ContentGone`, the contract stays `Locked`, and both
//! the failure and the deletion are in the world log for dispute evidence.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};
use thiserror::Error;

use crate::chain::{
    Chain, ChainError, Identity, ItemFilter, VerificationReport, STREAM_ACCESS, STREAM_ITEMS,
    STREAM_PROVENANCE, STREAM_PUBKEYS,
};
use crate::codec::{ByteReader, ByteWriter};
use crate::crypto::{
    content_hash, decrypt_item, encrypt_item, providers::DeterministicProvider,
    providers::StandardProvider, CipherChunk, CryptoError, CryptoProvider, SymmetricKey,
    WrappedKey,
};
use crate::digest::Digest;
use crate::escrow::{
    gas::GasSchedule, ContractState, EscrowEnv, EscrowError, ProvenanceRecord, Role,
    DEFAULT_GAS_LIMIT, DEFAULT_GAS_PRICE_WEI,
};
use crate::store::{DeletionReceipt, ItemStatus, LocalStore, StoreError};
use crate::types::{Address, TokenAmount, ADDRESS_LEN};

pub use crate::chain::{DEFAULT_GENESIS_TIME, DEFAULT_INLINE_LIMIT};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("a node named `{0}` already exists")]
    DuplicateNode(String),
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("node `{node}` is not subscribed to stream `{stream}`")]
    NotSubscribed { node: String, stream: String },
    #[error("no published item {0}")]
    UnknownItem(Digest),
    #[error("content gone: no peer can serve item {0} any more")]
    ContentGone(Digest),
    #[error("chunk verification failed: every response for item {0} was rejected")]
    ChunkVerificationFailure(Digest),
    #[error("no access entry for item {item} and recipient {recipient}")]
    AccessMissing { item: Digest, recipient: Address },
    #[error("reassembled content does not match the committed identity of item {0}")]
    IntegrityMismatch(Digest),
    #[error("no published encryption key for recipient {0}")]
    UnknownRecipientKey(Address),
    #[error("world did not quiesce within {0} ticks")]
    NonQuiescence(u64),
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Escrow(#[from] EscrowError),
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum ProviderKind {
    Deterministic,
    Standard,
}

impl ProviderKind {
    fn build(self, rsa_bits: usize) -> Box<dyn CryptoProvider> {
        match self {
            ProviderKind::Deterministic => Box::new(DeterministicProvider),
            ProviderKind::Standard => Box::new(StandardProvider::new(rsa_bits)),
        }
    }
}

#[derive(Clone, Debug)]
pub struct WorldConfig {
    pub rng_seed: u64,
    pub block_interval_seconds: u64,
    pub chunk_size: usize,
    pub inline_limit: usize,
    pub schedule: GasSchedule,
    pub gas_price_wei: u64,
    pub gas_limit: u64,
    pub provider: ProviderKind,
    pub rsa_bits: usize,
    pub genesis_time: u64,
    pub max_ticks: u64,
    pub retrieval_retries: u32,
    pub timeout_refund_after: Option<u64>,
}

impl Default for WorldConfig {
    fn default() -> WorldConfig {
        WorldConfig {
            rng_seed: 0,
            block_interval_seconds: 15,
            chunk_size: 4096,
            inline_limit: DEFAULT_INLINE_LIMIT,
            schedule: GasSchedule::default_schedule(),
            gas_price_wei: DEFAULT_GAS_PRICE_WEI,
            gas_limit: DEFAULT_GAS_LIMIT,
            provider: ProviderKind::Deterministic,
            rsa_bits: crate::crypto::providers::DEFAULT_RSA_BITS,
            genesis_time: DEFAULT_GENESIS_TIME,
            max_ticks: 10_000,
            retrieval_retries: 2,
            timeout_refund_after: None,
        }
    }
}

/// The `Items`-stream payload: everything a buyer needs to find, verify, and
/// purchase one published item. Canonical layout (codec field rules):
/// `item_id(32) | owner(20) | contract(20) | chunk_size(u64) | data_len(u64)
/// | digest_count(u32) | digest(32)... | metadata`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ItemCommitment {
    pub item_id: Digest,
    pub owner: Address,
    pub contract: Address,
    pub chunk_size: u64,
    pub data_len: u64,
    pub chunk_digests: Vec<Digest>,
    pub metadata: BTreeMap<String, String>,
}

impl ItemCommitment {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.put_bytes(&self.item_id.0)
            .put_bytes(&self.owner.0)
            .put_bytes(&self.contract.0)
            .put_u64(self.chunk_size)
            .put_u64(self.data_len)
            .put_u32(self.chunk_digests.len() as u32);
        for d in &self.chunk_digests {
            w.put_bytes(&d.0);
        }
        w.put_map(&self.metadata);
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<ItemCommitment, ChainError> {
        let mut r = ByteReader::new(bytes);
        let item_id = Digest(r.take_array::<32>()?);
        let owner = Address(r.take_array::<ADDRESS_LEN>()?);
        let contract = Address(r.take_array::<ADDRESS_LEN>()?);
        let chunk_size = r.take_u64()?;
        let data_len = r.take_u64()?;
        let count = r.take_u32()?;
        let mut chunk_digests = Vec::with_capacity(count as usize);
        for _ in 0..count {
            chunk_digests.push(Digest(r.take_array::<32>()?));
        }
        let metadata = r.take_map()?;
        r.expect_end()?;
        Ok(ItemCommitment {
            item_id,
            owner,
            contract,
            chunk_size,
            data_len,
            chunk_digests,
            metadata,
        })
    }
}

/// A search result: the latest commitment for an item plus live contract terms.
#[derive(Clone, Debug)]
pub struct ItemListing {
    pub item_id: Digest,
    pub owner: Address,
    pub contract: Address,
    pub price: TokenAmount,
    pub deposit: TokenAmount,
    pub state: ContractState,
    pub metadata: BTreeMap<String, String>,
    pub chunk_size: u64,
    pub data_len: u64,
    pub chunk_digests: Vec<Digest>,
}

#[derive(Clone, Debug)]
enum MessageKind {
    ChunkQuery { item: Digest, digests: Vec<Digest> },
    ChunkResponse { item: Digest, chunk: CipherChunk },
    AccessNotice { item: Digest, tx_id: Digest },
}

#[derive(Clone, Debug)]
struct Message {
    from: String,
    to: String,
    kind: MessageKind,
}

/// One structured line of the world log.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LogEvent {
    pub tick: u64,
    pub height: u64,
    pub kind: String,
    pub actor: String,
    pub fields: Vec<(String, String)>,
}

impl LogEvent {
    pub fn render(&self) -> String {
        let mut line = format!(
            "tick={} height={} {} actor={}",
            self.tick, self.height, self.kind, self.actor
        );
        for (k, v) in &self.fields {
            line.push(' ');
            line.push_str(k);
            line.push('=');
            line.push_str(v);
        }
        line
    }
}

/// Owner-side bookkeeping for one published item.
struct ItemMeta {
    key: SymmetricKey,
    data_len: u64,
    metadata: BTreeMap<String, String>,
}

/// In-flight retrieval state on the consumer node.
struct Retrieval {
    expected: Vec<Digest>,
    received: BTreeMap<u32, CipherChunk>,
    missing: BTreeSet<Digest>,
    rejections: u64,
}

impl Retrieval {
    fn complete(&self) -> bool {
        self.missing.is_empty()
    }
}

struct Node {
    identity: Identity,
    enc_public: Vec<u8>,
    enc_private: Vec<u8>,
    store: LocalStore,
    subscriptions: BTreeSet<String>,
    adversary: bool,
    items: BTreeMap<Digest, ItemMeta>,
    retrievals: BTreeMap<Digest, Retrieval>,
    completed: BTreeMap<Digest, Vec<u8>>,
}

/// The simulation world.
pub struct World {
    cfg: WorldConfig,
    chain: Chain,
    env: EscrowEnv,
    provider: Box<dyn CryptoProvider>,
    rng: ChaCha20Rng,
    nodes: BTreeMap<String, Node>,
    node_order: Vec<String>,
    messages: VecDeque<Message>,
    tick_count: u64,
    log: Vec<LogEvent>,
}

impl World {
    pub fn new(cfg: WorldConfig) -> World {
        let mut env = EscrowEnv::new(cfg.schedule.clone(), cfg.gas_price_wei, cfg.gas_limit);
        env.timeout_refund_after = cfg.timeout_refund_after;
        let mut seed = [0u8; 32];
        seed[..8].copy_from_slice(&cfg.rng_seed.to_be_bytes());
        World {
            chain: Chain::new(cfg.genesis_time, cfg.inline_limit),
            env,
            provider: cfg.provider.build(cfg.rsa_bits),
            rng: ChaCha20Rng::from_seed(seed),
            nodes: BTreeMap::new(),
            node_order: Vec::new(),
            messages: VecDeque::new(),
            tick_count: 0,
            log: Vec::new(),
            cfg,
        }
    }

    pub fn config(&self) -> &WorldConfig {
        &self.cfg
    }

    pub fn chain(&self) -> &Chain {
        &self.chain
    }

    pub fn escrow(&self) -> &EscrowEnv {
        &self.env
    }

    pub fn escrow_mut(&mut self) -> &mut EscrowEnv {
        self.env.set_tick(self.tick_count);
        let height = self.chain.tip_height() + 1;
        self.env.set_block_height(height);
        &mut self.env
    }

    pub fn provider(&self) -> &dyn CryptoProvider {
        self.provider.as_ref()
    }

    pub fn current_tick(&self) -> u64 {
        self.tick_count
    }

    pub fn log(&self) -> &[LogEvent] {
        &self.log
    }

    /// The whole log as text, one event per line — the determinism witness.
    pub fn render_log(&self) -> String {
        let mut out = String::new();
        for e in &self.log {
            out.push_str(&e.render());
            out.push('\n');
        }
        out
    }

    pub fn verify_chain(&self) -> VerificationReport {
        self.chain.verify()
    }

    fn log_event(&mut self, kind: &str, actor: &str, fields: Vec<(String, String)>) {
        self.log.push(LogEvent {
            tick: self.tick_count,
            height: self.chain.tip_height(),
            kind: kind.to_string(),
            actor: actor.to_string(),
            fields,
        });
    }

    fn draw32(&mut self) -> [u8; 32] {
        let mut b = [0u8; 32];
        self.rng.fill_bytes(&mut b);
        b
    }

    fn draw8(&mut self) -> [u8; 8] {
        let mut b = [0u8; 8];
        self.rng.fill_bytes(&mut b);
        b
    }

    fn node(&self, id: &str) -> Result<&Node, SimError> {
        self.nodes.get(id).ok_or_else(|| SimError::UnknownNode(id.to_string()))
    }

    pub fn node_addr(&self, id: &str) -> Result<Address, SimError> {
        Ok(self.node(id)?.identity.addr())
    }

    pub fn node_store(&self, id: &str) -> Result<&LocalStore, SimError> {
        Ok(&self.node(id)?.store)
    }

    pub fn node_public_key(&self, id: &str) -> Result<&[u8], SimError> {
        Ok(&self.node(id)?.enc_public)
    }

    pub fn completed_plaintext(&self, id: &str, item: &Digest) -> Option<&[u8]> {
        self.nodes
            .get(id)?
            .completed
            .get(item)
            .map(Vec::as_slice)
    }

    pub fn set_adversary(&mut self, id: &str, corrupt_responses: bool) -> Result<(), SimError> {
        self.nodes
            .get_mut(id)
            .ok_or_else(|| SimError::UnknownNode(id.to_string()))?
            .adversary = corrupt_responses;
        Ok(())
    }

    /// Test hook: copies another node's stored chunks for an item into `id`'s
    /// store, making it a second (possibly adversarial) holder.
    pub fn mirror_chunks(&mut self, from: &str, to: &str, item: Digest) -> Result<(), SimError> {
        let src = self.node(from)?;
        let digests = src
            .store
            .item_chunk_digests(&item)
            .ok_or(SimError::UnknownItem(item))?
            .to_vec();
        let chunks: Vec<CipherChunk> = digests
            .iter()
            .filter_map(|d| src.store.fetch_chunk(d).cloned())
            .collect();
        let dst = self
            .nodes
            .get_mut(to)
            .ok_or_else(|| SimError::UnknownNode(to.to_string()))?;
        dst.store.store_chunks(item, &chunks)?;
        Ok(())
    }

    /// Adds a participant holding the given roles, funds it, registers its
    /// signing identity with the chain and its encryption key with the
    /// registry, and publishes the key on the `Pubkeys` stream.
    pub fn add_participant(
        &mut self,
        id: &str,
        roles: &[Role],
        balance: TokenAmount,
    ) -> Result<Address, SimError> {
        if self.nodes.contains_key(id) {
            return Err(SimError::DuplicateNode(id.to_string()));
        }
        let sign_seed = self.draw32();
        let enc_seed = self.draw32();
        let identity = Identity::from_seed(&sign_seed);
        let addr = identity.addr();
        let keys = self.provider.generate_keypair(&enc_seed)?;

        for role in roles {
            self.env.registry.register(addr, *role, &keys.public_key)?;
        }
        self.env.fund(addr, balance);
        self.chain.register_publisher(addr, identity.verifying_key());

        let mut payload = ByteWriter::new();
        payload.put_bytes(&keys.public_key);
        self.chain.publish_item(
            &identity,
            STREAM_PUBKEYS,
            &addr.to_hex(),
            payload.finish(),
            BTreeMap::new(),
        )?;

        let node = Node {
            identity,
            enc_public: keys.public_key,
            enc_private: keys.private_key,
            store: LocalStore::new(addr),
            subscriptions: [STREAM_PUBKEYS, STREAM_ITEMS, STREAM_ACCESS, STREAM_PROVENANCE]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            adversary: false,
            items: BTreeMap::new(),
            retrievals: BTreeMap::new(),
            completed: BTreeMap::new(),
        };
        self.nodes.insert(id.to_string(), node);
        self.node_order.push(id.to_string());
        self.log_event(
            "Register",
            id,
            vec![
                ("addr".to_string(), addr.to_hex()),
                ("roles".to_string(), format!("{roles:?}")),
                ("balance".to_string(), balance.to_string()),
            ],
        );
        Ok(addr)
    }

    /// Publishes `data` for sale: encrypts it into the owner's store, deploys
    /// the escrow contract (which fixes price = deposit/2), and commits the
    /// chunk digests on the `Items` stream.
    pub fn publish_data(
        &mut self,
        owner_id: &str,
        data: &[u8],
        metadata: BTreeMap<String, String>,
        deposit: TokenAmount,
    ) -> Result<(Digest, Address), SimError> {
        let item_id = content_hash(data);
        {
            let node = self.node(owner_id)?;
            if node.store.item_status(&item_id) != ItemStatus::Unknown {
                return Err(SimError::Store(StoreError::DuplicateItem(item_id)));
            }
        }
        let key = SymmetricKey {
            bytes: self.draw32(),
            item_id,
        };
        let nonce_seed = self.draw8();
        let encrypted = encrypt_item(
            self.provider.as_ref(),
            &key,
            data,
            self.cfg.chunk_size,
            &nonce_seed,
        )?;
        let owner_addr = self.node(owner_id)?.identity.addr();
        let commitment = ItemCommitment {
            item_id,
            owner: owner_addr,
            contract: Address::ZERO, // patched after deployment
            chunk_size: self.cfg.chunk_size as u64,
            data_len: data.len() as u64,
            chunk_digests: encrypted.chunks.iter().map(|c| c.digest).collect(),
            metadata: metadata.clone(),
        };
        // The commitment with the real contract address has identical size,
        // so the inline check holds for the final payload too.
        let payload_len = commitment.encode().len();
        if payload_len > self.cfg.inline_limit {
            return Err(SimError::Chain(ChainError::OversizePayload {
                got: payload_len,
                limit: self.cfg.inline_limit,
            }));
        }

        let contract = self.escrow_mut().deploy_contract(owner_addr, deposit, item_id)?;

        // Nothing after this point can fail: mutations commit together.
        let commitment = ItemCommitment {
            contract,
            ..commitment
        };
        let node = self.nodes.get_mut(owner_id).expect("checked above");
        node.store
            .store_chunks(item_id, &encrypted.chunks)
            .expect("duplicate was pre-checked and chunks are digest-consistent");
        node.items.insert(
            item_id,
            ItemMeta {
                key,
                data_len: data.len() as u64,
                metadata,
            },
        );
        let identity = node.identity.clone();
        self.chain
            .publish_item(
                &identity,
                STREAM_ITEMS,
                &item_id.to_hex(),
                commitment.encode(),
                commitment.metadata.clone(),
            )
            .expect("payload size pre-checked, publisher registered");
        self.log_event(
            "Publish",
            owner_id,
            vec![
                ("item".to_string(), item_id.to_hex()),
                ("contract".to_string(), contract.to_hex()),
                ("deposit".to_string(), deposit.to_string()),
                ("chunks".to_string(), commitment.chunk_digests.len().to_string()),
            ],
        );
        Ok((item_id, contract))
    }

    /// Lists an already-stored item again under a fresh contract (the old
    /// one, once settled, is closed — each sale runs its own contract).
    pub fn relist_item(
        &mut self,
        owner_id: &str,
        item_id: Digest,
        deposit: TokenAmount,
    ) -> Result<Address, SimError> {
        let owner_addr = self.node(owner_id)?.identity.addr();
        {
            let node = self.node(owner_id)?;
            if node.store.item_status(&item_id) != ItemStatus::Live || !node.items.contains_key(&item_id)
            {
                return Err(SimError::UnknownItem(item_id));
            }
        }
        let contract = self.escrow_mut().deploy_contract(owner_addr, deposit, item_id)?;
        let node = self.nodes.get_mut(owner_id).expect("checked above");
        let meta = &node.items[&item_id];
        let commitment = ItemCommitment {
            item_id,
            owner: owner_addr,
            contract,
            chunk_size: self.cfg.chunk_size as u64,
            data_len: meta.data_len,
            chunk_digests: node
                .store
                .item_chunk_digests(&item_id)
                .expect("live item")
                .to_vec(),
            metadata: meta.metadata.clone(),
        };
        let identity = node.identity.clone();
        let metadata = commitment.metadata.clone();
        self.chain.publish_item(
            &identity,
            STREAM_ITEMS,
            &item_id.to_hex(),
            commitment.encode(),
            metadata,
        )?;
        self.log_event(
            "Relist",
            owner_id,
            vec![
                ("item".to_string(), item_id.to_hex()),
                ("contract".to_string(), contract.to_hex()),
            ],
        );
        Ok(contract)
    }

    fn latest_commitments(&self) -> Result<BTreeMap<Digest, ItemCommitment>, SimError> {
        let mut map = BTreeMap::new();
        for item in self.chain.list_items(STREAM_ITEMS, ItemFilter::All)? {
            let commitment = ItemCommitment::decode(&item.payload)?;
            map.insert(commitment.item_id, commitment);
        }
        Ok(map)
    }

    fn listing_of(&self, commitment: &ItemCommitment) -> ItemListing {
        let (price, deposit, state) = self
            .env
            .contract(&commitment.contract)
            .map(|c| (c.price, c.deposit, c.state))
            .unwrap_or((0, 0, ContractState::Inactive));
        ItemListing {
            item_id: commitment.item_id,
            owner: commitment.owner,
            contract: commitment.contract,
            price,
            deposit,
            state,
            metadata: commitment.metadata.clone(),
            chunk_size: commitment.chunk_size,
            data_len: commitment.data_len,
            chunk_digests: commitment.chunk_digests.clone(),
        }
    }

    /// Searches published items by metadata (every filter pair must match).
    /// Requires an `Items` subscription. Results are sorted by item id, one
    /// listing per item, reflecting that item's newest commitment.
    pub fn search_items(
        &self,
        node_id: &str,
        filter: &BTreeMap<String, String>,
    ) -> Result<Vec<ItemListing>, SimError> {
        let node = self.node(node_id)?;
        if !node.subscriptions.contains(STREAM_ITEMS) {
            return Err(SimError::NotSubscribed {
                node: node_id.to_string(),
                stream: STREAM_ITEMS.to_string(),
            });
        }
        let mut out = Vec::new();
        for commitment in self.latest_commitments()?.values() {
            let matches = filter
                .iter()
                .all(|(k, v)| commitment.metadata.get(k) == Some(v));
            if matches {
                out.push(self.listing_of(commitment));
            }
        }
        Ok(out)
    }

    pub fn unsubscribe(&mut self, node_id: &str, stream: &str) -> Result<(), SimError> {
        self.nodes
            .get_mut(node_id)
            .ok_or_else(|| SimError::UnknownNode(node_id.to_string()))?
            .subscriptions
            .remove(stream);
        Ok(())
    }

    fn find_listing(&self, item_id: Digest) -> Result<ItemListing, SimError> {
        let commitments = self.latest_commitments()?;
        let commitment = commitments
            .get(&item_id)
            .ok_or(SimError::UnknownItem(item_id))?;
        Ok(self.listing_of(commitment))
    }

    /// Consumer buys an item: pays double the price into escrow, after which
    /// the owner wraps the content key for the consumer and publishes it on
    /// the `Access` stream. An access notice message carries its location.
    pub fn purchase(&mut self, consumer_id: &str, item_id: Digest) -> Result<(), SimError> {
        self.run_to_quiescence()?;
        let consumer_addr = self.node(consumer_id)?.identity.addr();
        let listing = self.find_listing(item_id)?;
        self.escrow_mut().consumer_pay(listing.contract, consumer_addr)?;

        // The owner now wraps the content key for the buyer.
        let owner_id = self
            .node_order
            .iter()
            .find(|id| self.nodes[*id].identity.addr() == listing.owner)
            .cloned()
            .ok_or(SimError::UnknownItem(item_id))?;
        let recipient_key = self
            .env
            .registry
            .public_key_of(&consumer_addr)
            .ok_or(SimError::UnknownRecipientKey(consumer_addr))?
            .to_vec();
        let entropy = self.draw32();
        let owner = self.nodes.get_mut(&owner_id).expect("found above");
        let meta = owner
            .items
            .get(&item_id)
            .ok_or(SimError::UnknownItem(item_id))?;
        let envelope = self
            .provider
            .wrap_key(&meta.key, &recipient_key, &entropy)?;
        let wrapped = WrappedKey {
            recipient: consumer_addr,
            envelope,
            item_id,
        };
        let identity = owner.identity.clone();
        let access_key = format!("{}/{}", item_id.to_hex(), consumer_addr.to_hex());
        let tx = self.chain.publish_item(
            &identity,
            STREAM_ACCESS,
            &access_key,
            wrapped.encode(),
            BTreeMap::new(),
        )?;
        self.messages.push_back(Message {
            from: owner_id.clone(),
            to: consumer_id.to_string(),
            kind: MessageKind::AccessNotice {
                item: item_id,
                tx_id: tx.tx_id,
            },
        });
        self.log_event(
            "Purchase",
            consumer_id,
            vec![
                ("item".to_string(), item_id.to_hex()),
                ("contract".to_string(), listing.contract.to_hex()),
                ("price".to_string(), listing.price.to_string()),
            ],
        );
        self.log_event(
            "AccessPublished",
            &owner_id,
            vec![
                ("item".to_string(), item_id.to_hex()),
                ("recipient".to_string(), consumer_addr.to_hex()),
            ],
        );
        Ok(())
    }

    fn read_access_entry(
        &self,
        item_id: Digest,
        recipient: Address,
    ) -> Result<WrappedKey, SimError> {
        let key = format!("{}/{}", item_id.to_hex(), recipient.to_hex());
        let entries = self
            .chain
            .list_items(STREAM_ACCESS, ItemFilter::KeyPrefix(&key))?;
        let entry = entries
            .into_iter()
            .filter(|e| e.key == key)
            .next_back()
            .ok_or(SimError::AccessMissing {
                item: item_id,
                recipient,
            })?;
        Ok(WrappedKey::decode(&entry.payload)?)
    }

    fn broadcast_chunk_query(&mut self, consumer_id: &str, item: Digest, digests: Vec<Digest>) {
        for id in self.node_order.clone() {
            if id == consumer_id {
                continue;
            }
            self.messages.push_back(Message {
                from: consumer_id.to_string(),
                to: id,
                kind: MessageKind::ChunkQuery {
                    item,
                    digests: digests.clone(),
                },
            });
        }
        self.log_event(
            "ChunkQuery",
            consumer_id,
            vec![
                ("item".to_string(), item.to_hex()),
                ("missing".to_string(), digests.len().to_string()),
            ],
        );
    }

    /// Consumer fetches a purchased item from the network, verifies every
    /// chunk against the commitment, decrypts, records delivery, and settles
    /// the contract. On failure the contract stays `Locked` and the failure
    /// is logged as dispute evidence.
    pub fn retrieve_and_confirm(
        &mut self,
        consumer_id: &str,
        item_id: Digest,
    ) -> Result<Vec<u8>, SimError> {
        self.run_to_quiescence()?;
        let consumer_addr = self.node(consumer_id)?.identity.addr();
        let listing = self.find_listing(item_id)?;
        {
            let contract = self
                .env
                .contract(&listing.contract)
                .ok_or(EscrowError::UnknownContract(listing.contract))?;
            if contract.state != ContractState::Locked {
                return Err(SimError::Escrow(EscrowError::WrongState(contract.state)));
            }
            if contract.consumer != Some(consumer_addr) {
                return Err(SimError::Escrow(EscrowError::Unauthorized(consumer_addr)));
            }
        }
        let wrapped = self.read_access_entry(item_id, consumer_addr)?;

        {
            let node = self.nodes.get_mut(consumer_id).expect("checked above");
            node.retrievals.insert(
                item_id,
                Retrieval {
                    expected: listing.chunk_digests.clone(),
                    received: BTreeMap::new(),
                    missing: listing.chunk_digests.iter().copied().collect(),
                    rejections: 0,
                },
            );
        }

        let mut attempts = 0u32;
        loop {
            let missing: Vec<Digest> = {
                let node = self.node(consumer_id)?;
                let r = node.retrievals.get(&item_id).expect("inserted above");
                r.missing.iter().copied().collect()
            };
            if missing.is_empty() {
                break;
            }
            if attempts > self.cfg.retrieval_retries {
                break;
            }
            attempts += 1;
            self.broadcast_chunk_query(consumer_id, item_id, missing);
            self.tick()?;
        }

        let retrieval = self
            .nodes
            .get_mut(consumer_id)
            .expect("checked above")
            .retrievals
            .remove(&item_id)
            .expect("inserted above");

        if !retrieval.complete() {
            let err = if retrieval.rejections > 0 {
                SimError::ChunkVerificationFailure(item_id)
            } else {
                SimError::ContentGone(item_id)
            };
            self.escrow_mut()
                .record_delivery_failure(listing.contract, consumer_addr)?;
            self.log_event(
                "DeliveryFailed",
                consumer_id,
                vec![
                    ("item".to_string(), item_id.to_hex()),
                    ("contract".to_string(), listing.contract.to_hex()),
                    ("reason".to_string(), format!("{err}")),
                    ("rejections".to_string(), retrieval.rejections.to_string()),
                ],
            );
            return Err(err);
        }

        let chunks: Vec<CipherChunk> = retrieval
            .received
            .into_iter()
            .map(|(_, chunk)| chunk)
            .collect();
        let (private_key, already_stored) = {
            let node = self.node(consumer_id)?;
            (
                node.enc_private.clone(),
                node.store.item_status(&item_id) != ItemStatus::Unknown,
            )
        };
        let key = self
            .provider
            .unwrap_key(&wrapped.envelope, &private_key, wrapped.item_id)?;
        let plaintext = decrypt_item(self.provider.as_ref(), &key, &chunks)?;
        if content_hash(&plaintext) != item_id {
            return Err(SimError::IntegrityMismatch(item_id));
        }

        {
            let node = self.nodes.get_mut(consumer_id).expect("checked above");
            if !already_stored {
                node.store
                    .store_chunks(item_id, &chunks)
                    .expect("chunks verified against commitment");
            }
            node.completed.insert(item_id, plaintext.clone());
        }
        self.escrow_mut()
            .record_delivery(listing.contract, consumer_addr)?;
        self.escrow_mut()
            .confirm_delivery(listing.contract, consumer_addr)?;
        self.log_event(
            "Delivered",
            consumer_id,
            vec![
                ("item".to_string(), item_id.to_hex()),
                ("bytes".to_string(), plaintext.len().to_string()),
            ],
        );
        self.log_event(
            "Settled",
            consumer_id,
            vec![("contract".to_string(), listing.contract.to_hex())],
        );
        Ok(plaintext)
    }

    /// Erases an item's content from the owner's store. The chain — contract,
    /// commitments, access entries — is deliberately untouched; only the
    /// bytes disappear. Returns the deletion receipt and logs it.
    pub fn delete_item(
        &mut self,
        owner_id: &str,
        item_id: Digest,
    ) -> Result<DeletionReceipt, SimError> {
        let now = self.chain.clock;
        let node = self
            .nodes
            .get_mut(owner_id)
            .ok_or_else(|| SimError::UnknownNode(owner_id.to_string()))?;
        let receipt = node.store.delete_item(item_id, now)?;
        self.log_event(
            "ItemDeleted",
            owner_id,
            vec![
                ("item".to_string(), item_id.to_hex()),
                ("chunks".to_string(), receipt.deleted_chunks.to_string()),
            ],
        );
        Ok(receipt)
    }

    /// Registers research provenance: metered by the engine, anchored as a
    /// `Provenance`-stream transaction, and returned with its tx id.
    pub fn commit_provenance(
        &mut self,
        researcher_id: &str,
        research_id: &str,
        metadata: BTreeMap<String, String>,
    ) -> Result<ProvenanceRecord, SimError> {
        let researcher = self.node(researcher_id)?.identity.addr();
        let mut record =
            self.escrow_mut()
                .commit_provenance(researcher, research_id, metadata.clone())?;
        let mut payload = ByteWriter::new();
        payload
            .put_str(&record.research_id)
            .put_bytes(&researcher.0)
            .put_map(&record.metadata);
        let identity = self.node(researcher_id)?.identity.clone();
        let tx = self.chain.publish_item(
            &identity,
            STREAM_PROVENANCE,
            research_id,
            payload.finish(),
            metadata,
        )?;
        record.tx_id = Some(tx.tx_id);
        self.log_event(
            "Provenance",
            researcher_id,
            vec![
                ("research".to_string(), research_id.to_string()),
                ("tx".to_string(), tx.tx_id.to_hex()),
            ],
        );
        Ok(record)
    }

    fn deliver(&mut self, msg: Message) -> Result<(), SimError> {
        match msg.kind {
            MessageKind::ChunkQuery { item, digests } => {
                let (responses, responder_is_adversary) = {
                    let holder = match self.nodes.get(&msg.to) {
                        Some(n) => n,
                        None => return Ok(()),
                    };
                    let found: Vec<CipherChunk> = digests
                        .iter()
                        .filter_map(|d| holder.store.fetch_chunk(d).cloned())
                        .collect();
                    (found, holder.adversary)
                };
                let count = responses.len();
                for mut chunk in responses {
                    if responder_is_adversary {
                        // A corrupted response with an internally consistent
                        // digest: the receiver must catch it against the
                        // *committed* digests, not the chunk's own claim.
                        let n = chunk.ciphertext.len();
                        chunk.ciphertext[n - 1] ^= 0x01;
                        chunk.digest =
                            CipherChunk::digest_of(chunk.index, &chunk.nonce, &chunk.ciphertext);
                    }
                    self.messages.push_back(Message {
                        from: msg.to.clone(),
                        to: msg.from.clone(),
                        kind: MessageKind::ChunkResponse { item, chunk },
                    });
                }
                if count > 0 {
                    self.log_event(
                        "ChunkResponse",
                        &msg.to,
                        vec![
                            ("item".to_string(), item.to_hex()),
                            ("chunks".to_string(), count.to_string()),
                            ("to".to_string(), msg.from.clone()),
                        ],
                    );
                }
            }
            MessageKind::ChunkResponse { item, chunk } => {
                let mut rejected = false;
                if let Some(node) = self.nodes.get_mut(&msg.to) {
                    if let Some(r) = node.retrievals.get_mut(&item) {
                        let recomputed =
                            CipherChunk::digest_of(chunk.index, &chunk.nonce, &chunk.ciphertext);
                        let expected_here = r
                            .expected
                            .get(chunk.index as usize)
                            .copied()
                            .filter(|d| *d == recomputed);
                        match expected_here {
                            Some(d) if r.missing.contains(&d) => {
                                r.missing.remove(&d);
                                r.received.insert(
                                    chunk.index,
                                    CipherChunk {
                                        digest: recomputed,
                                        ..chunk
                                    },
                                );
                            }
                            Some(_) => {} // duplicate of an accepted chunk
                            None => {
                                r.rejections += 1;
                                rejected = true;
                            }
                        }
                    }
                }
                if rejected {
                    self.log_event(
                        "ChunkRejected",
                        &msg.to,
                        vec![
                            ("item".to_string(), item.to_hex()),
                            ("from".to_string(), msg.from.clone()),
                        ],
                    );
                }
            }
            MessageKind::AccessNotice { item, tx_id } => {
                self.log_event(
                    "AccessNotice",
                    &msg.to,
                    vec![
                        ("item".to_string(), item.to_hex()),
                        ("tx".to_string(), tx_id.to_hex()),
                    ],
                );
            }
        }
        Ok(())
    }

    /// One block slot: drain the message queue, seal a block if transactions
    /// are pending, advance the clock.
    pub fn tick(&mut self) -> Result<(), SimError> {
        if self.tick_count >= self.cfg.max_ticks {
            return Err(SimError::NonQuiescence(self.cfg.max_ticks));
        }
        while let Some(msg) = self.messages.pop_front() {
            self.deliver(msg)?;
        }
        if self.chain.has_pending() {
            let txs = self.chain.pending_count();
            let height = self.chain.seal_pending()?.expect("pending was non-empty");
            self.log_event(
                "BlockSealed",
                "chain",
                vec![
                    ("sealed".to_string(), height.to_string()),
                    ("txs".to_string(), txs.to_string()),
                ],
            );
        }
        self.tick_count += 1;
        self.chain.clock += self.cfg.block_interval_seconds;
        Ok(())
    }

    /// Ticks until no messages and no pending transactions remain.
    pub fn run_to_quiescence(&mut self) -> Result<(), SimError> {
        while !self.messages.is_empty() || self.chain.has_pending() {
            self.tick()?;
        }
        Ok(())
    }
}
