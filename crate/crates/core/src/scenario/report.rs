//! The scenario report: final balances, contract states, the gas table,
//! retrieval outcomes, chain verification, and the full world log — plus a
//! fixed-width plain-text rendering.

use std::collections::BTreeSet;

use crate::digest::Digest;
use crate::escrow::gas::render_eth_6dp;
use crate::sim::World;
use crate::types::TokenAmount;

use super::ScenarioConfig;

#[derive(Clone, Debug)]
pub struct ParticipantReport {
    pub id: String,
    pub addr: String,
    pub role: String,
    pub balance_start: TokenAmount,
    pub balance_end: TokenAmount,
}

#[derive(Clone, Debug)]
pub struct ContractReport {
    pub addr: String,
    pub item: String,
    pub item_id: String,
    pub state: String,
    pub deposit: TokenAmount,
    pub price: TokenAmount,
    pub balance: TokenAmount,
    pub trail: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct GasRow {
    pub function: String,
    pub state: String,
    pub gas: u64,
    pub fee_eth: String,
    pub latency_secs: u64,
    pub ok: bool,
}

#[derive(Clone, Debug)]
pub struct RetrievalReport {
    pub item: String,
    pub consumer: String,
    pub bytes: u64,
    pub hash_match: bool,
}

#[derive(Clone, Debug)]
pub struct ScenarioReport {
    pub seed: u64,
    pub provider: String,
    pub schedule: String,
    pub gas_price_gwei: u64,
    pub block_interval_seconds: u64,
    pub ticks: u64,
    pub participants: Vec<ParticipantReport>,
    pub contracts: Vec<ContractReport>,
    pub gas_rows: Vec<GasRow>,
    /// Gas and fee summed over successful non-deploy calls.
    pub total_gas_excl_deploy: u64,
    pub total_fee_eth_excl_deploy: String,
    pub footnotes: Vec<String>,
    pub retrievals: Vec<RetrievalReport>,
    pub chain_blocks: u64,
    pub chain_ok: bool,
    pub chain_issues: Vec<String>,
    pub log_lines: Vec<String>,
    pub failure: Option<String>,
}

pub(super) fn build_report(
    cfg: &ScenarioConfig,
    schedule_name: &str,
    world: &World,
    starting_balances: &[(String, TokenAmount)],
    items: &[(String, Digest)],
    retrievals: &[RetrievalReport],
    failure: Option<String>,
) -> ScenarioReport {
    let env = world.escrow();

    let participants = starting_balances
        .iter()
        .map(|(id, start)| {
            let addr = world.node_addr(id).expect("participant was added");
            let role = cfg
                .participants
                .iter()
                .find(|p| &p.id == id)
                .map(|p| p.role.clone())
                .unwrap_or_default();
            ParticipantReport {
                id: id.clone(),
                addr: addr.to_hex(),
                role,
                balance_start: *start,
                balance_end: env.balance_of(&addr),
            }
        })
        .collect();

    let label_of = |item_id: &Digest| -> String {
        items
            .iter()
            .find(|(_, d)| d == item_id)
            .map(|(label, _)| label.clone())
            .unwrap_or_else(|| item_id.to_hex()[..12].to_string())
    };

    let contracts = env
        .contracts_in_order()
        .map(|c| ContractReport {
            addr: c.addr.to_hex(),
            item: label_of(&c.item_id),
            item_id: c.item_id.to_hex(),
            state: c.state.to_string(),
            deposit: c.deposit,
            price: c.price,
            balance: c.balance,
            trail: c.events.iter().map(|e| e.name.clone()).collect(),
        })
        .collect();

    let interval = cfg.block_interval_seconds;
    let gas_rows: Vec<GasRow> = env
        .receipts()
        .iter()
        .map(|r| GasRow {
            function: r.function.clone(),
            state: match (r.ok, r.state_after) {
                (false, _) => "failed".to_string(),
                (true, Some(s)) => s.to_string(),
                (true, None) => "-".to_string(),
            },
            gas: r.gas_used,
            fee_eth: render_eth_6dp(r.fee_wei),
            latency_secs: r.blocks_waited * interval,
            ok: r.ok,
        })
        .collect();

    let (total_gas, total_fee_wei) = env
        .receipts()
        .iter()
        .filter(|r| r.ok && r.function != "contractDeploy")
        .fold((0u64, 0u128), |(g, f), r| (g + r.gas_used, f + r.fee_wei));
    let total_fee_eth = render_eth_6dp(total_fee_wei);

    // Footnotes compare metered fees against the schedule's quoted reference
    // figures wherever they disagree.
    let mut footnotes = Vec::new();
    if let Some(reference) = &env.schedule().reference {
        let mut noted: BTreeSet<&str> = BTreeSet::new();
        for r in env.receipts().iter().filter(|r| r.ok) {
            if let Some(quoted) = reference.fees_eth.get(&r.function) {
                let metered = render_eth_6dp(r.fee_wei);
                if *quoted != metered && noted.insert(r.function.as_str()) {
                    footnotes.push(format!(
                        "note: {} reference fee {} ETH differs from metered {} gas x {} gwei = {} ETH",
                        r.function, quoted, r.gas_used, cfg.gas_price_gwei, metered
                    ));
                }
            }
        }
        if let Some(quoted_total) = &reference.total_eth {
            if *quoted_total != total_fee_eth {
                footnotes.push(format!(
                    "note: reference total excluding deployment {} ETH; metered total {} ETH",
                    quoted_total, total_fee_eth
                ));
            }
        }
    }

    let verification = world.verify_chain();
    let mut chain_issues: Vec<String> = verification.chain_issues.clone();
    for b in &verification.blocks {
        for issue in &b.issues {
            chain_issues.push(format!("block {}: {issue}", b.height));
        }
    }

    ScenarioReport {
        seed: cfg.rng_seed,
        provider: cfg.crypto_provider.clone(),
        schedule: schedule_name.to_string(),
        gas_price_gwei: cfg.gas_price_gwei,
        block_interval_seconds: interval,
        ticks: world.current_tick(),
        participants,
        contracts,
        gas_rows,
        total_gas_excl_deploy: total_gas,
        total_fee_eth_excl_deploy: total_fee_eth,
        footnotes,
        retrievals: retrievals.to_vec(),
        chain_blocks: world.chain().tip_height() + 1,
        chain_ok: verification.ok,
        chain_issues,
        log_lines: world.log().iter().map(|e| e.render()).collect(),
        failure,
    }
}

impl ScenarioReport {
    /// The gas table alone, in the fixed five-column layout.
    pub fn render_gas_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<15} | {:<13} | {:>10} | {:>12} | {:>15}\n",
            "Function", "ContractState", "Cost (Gas)", "Tx fee (ETH)", "Sim latency (s)"
        ));
        for row in &self.gas_rows {
            out.push_str(&format!(
                "{:<15} | {:<13} | {:>10} | {:>12} | {:>15}\n",
                row.function, row.state, row.gas, row.fee_eth, row.latency_secs
            ));
        }
        out.push_str(&format!(
            "{:<31} | {:>10} | {:>12} | {:>15}\n",
            "total excluding deployment",
            self.total_gas_excl_deploy,
            self.total_fee_eth_excl_deploy,
            ""
        ));
        for note in &self.footnotes {
            out.push_str(note);
            out.push('\n');
        }
        out
    }

    /// The full report as plain text.
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str("scenario report\n");
        out.push_str(&format!(
            "seed={} provider={} schedule={} gas_price={}gwei interval={}s ticks={}\n",
            self.seed,
            self.provider,
            self.schedule,
            self.gas_price_gwei,
            self.block_interval_seconds,
            self.ticks
        ));
        if let Some(failure) = &self.failure {
            out.push_str(&format!("status: FAILED — {failure}\n"));
        }
        out.push('\n');

        out.push_str("participants\n");
        for p in &self.participants {
            out.push_str(&format!(
                "  {:<12} 0x{} role={:<8} balance {} -> {}\n",
                p.id, p.addr, p.role, p.balance_start, p.balance_end
            ));
        }
        out.push('\n');

        out.push_str("contracts\n");
        if self.contracts.is_empty() {
            out.push_str("  (none)\n");
        }
        for c in &self.contracts {
            out.push_str(&format!(
                "  0x{} item={} ({}) state={} deposit={} price={} balance={}\n",
                c.addr,
                c.item,
                &c.item_id[..12.min(c.item_id.len())],
                c.state,
                c.deposit,
                c.price,
                c.balance
            ));
            out.push_str(&format!("    trail: {}\n", c.trail.join(" -> ")));
        }
        out.push('\n');

        out.push_str("gas usage\n");
        for line in self.render_gas_table().lines() {
            out.push_str("  ");
            out.push_str(line);
            out.push('\n');
        }
        out.push('\n');

        if !self.retrievals.is_empty() {
            out.push_str("retrievals\n");
            for r in &self.retrievals {
                out.push_str(&format!(
                    "  item={} consumer={} bytes={} content_hash={}\n",
                    r.item,
                    r.consumer,
                    r.bytes,
                    if r.hash_match { "match" } else { "MISMATCH" }
                ));
            }
            out.push('\n');
        }

        out.push_str(&format!(
            "chain\n  blocks={} verified={}\n",
            self.chain_blocks,
            if self.chain_ok { "ok" } else { "FAILED" }
        ));
        for issue in &self.chain_issues {
            out.push_str(&format!("  issue: {issue}\n"));
        }
        out.push('\n');

        out.push_str("log\n");
        for line in &self.log_lines {
            out.push_str("  ");
            out.push_str(line);
            out.push('\n');
        }
        out
    }
}
