//! Core engine for a permissioned data-sharing market.
//!
//! The pieces, bottom to top:
//!
//! - [`digest`], [`codec`]: SHA-256 digests and the canonical length-prefixed
//!   byte encoding every on-chain structure uses.
//! - [`chain`]: an append-only hash-chained ledger with Merkle-rooted blocks
//!   and named publish/subscribe streams.
//! - [`crypto`]: hybrid encryption for off-chain content — per-item symmetric
//!   keys over fixed-size chunks, wrapped per recipient with an asymmetric
//!   envelope. Two interchangeable providers: a standard one (AES-256-GCM +
//!   RSA-OAEP) and a fully deterministic one for golden-vector tests.
//! - [`store`]: a per-node content-addressed chunk store with deletion
//!   tombstones, so owners can erase content while the chain keeps only
//!   digests.
//! - [`escrow`]: token balances, participant registry, and an escrow contract
//!   engine with double-deposit collateral, per-call gas metering, and an
//!   auditable event log.
//! - [`sim`]: a deterministic multi-node world that wires all of the above
//!   into a publish / purchase / deliver / settle flow over a FIFO message
//!   queue and a per-tick block clock.
//! - [`scenario`]: TOML scenario configs, the scenario runner, and the
//!   plain-text report (balances, contract states, gas table, audit trails,
//!   chain verification).

pub mod chain;
pub mod codec;
pub mod crypto;
pub mod digest;
pub mod escrow;
pub mod scenario;
pub mod sim;
pub mod store;
pub mod types;

pub use digest::Digest;
pub use types::{Address, TokenAmount};
