//! Benchmark helpers: scenario text fixtures shared by the criterion benches.

use std::collections::BTreeMap;

use chainshare_core::escrow::Role;
use chainshare_core::sim::{World, WorldConfig};

/// A two-party world (funded owner + consumer) ready for a sale.
pub fn sale_world(seed: u64, chunk_size: usize) -> World {
    let mut w = World::new(WorldConfig {
        rng_seed: seed,
        chunk_size,
        ..WorldConfig::default()
    });
    w.add_participant("alice", &[Role::Owner], 1_000_000_000)
        .expect("fresh world");
    w.add_participant("bob", &[Role::Consumer], 1_000_000_000)
        .expect("fresh world");
    w.run_to_quiescence().expect("setup quiesces");
    w
}

/// Runs one complete publish → purchase → retrieve → settle sale.
pub fn run_sale(w: &mut World, data: &[u8], deposit: u128) -> Vec<u8> {
    let (item, _) = w
        .publish_data("alice", data, BTreeMap::new(), deposit)
        .expect("publish");
    w.purchase("bob", item).expect("purchase");
    let plaintext = w.retrieve_and_confirm("bob", item).expect("retrieve");
    w.run_to_quiescence().expect("quiesce");
    plaintext
}
