//! Scenario configs and the runner that executes them against a world.
//!
//! A scenario is a TOML file describing participants, items for sale, and an
//! ordered action list. The runner builds a deterministic world from it,
//! executes each action followed by a run to quiescence, and produces a
//! [`report::ScenarioReport`] with final balances, contract states, the gas
//! table, retrieval outcomes, chain verification, and the full world log.
//!
//! Config grammar (all sizes in bytes, all money in whole tokens):
//!
//! ```toml
//! rng_seed = 42                   # required
//! block_interval_seconds = 15     # optional, default 15
//! chunk_size = 4096               # optional, default 4096
//! gas_schedule = "default"        # "default" | "table1" | path to a TOML file
//! gas_price_gwei = 25             # optional, default 25
//! crypto_provider = "deterministic"  # or "standard"
//! max_ticks = 10000               # quiescence guard
//!
//! [[participants]]
//! id = "alice"                    # unique
//! role = "owner"                  # owner | consumer | both
//! balance = 10000
//! adversary = false               # optional: serve corrupted chunks
//!
//! [[items]]
//! id = "weather"                  # unique label used by actions
//! owner = "alice"                 # must hold the owner role
//! data_text = "..."               # exactly one of data_text/data_hex/data_file
//! e_d = 1000                      # owner deposit; positive and even
//! [items.metadata]                # optional, searchable
//! topic = "weather"
//!
//! [[actions]]
//! kind = "publish"                # publish | purchase | retrieve | delete
//! item = "weather"                #  | relist | provenance
//! # purchase/retrieve add: consumer = "bob"
//! # relist adds optional: e_d = 2000 (defaults to the item's e_d)
//! # provenance uses: researcher = "bob", research_id = "study-1", metadata
//! ```
//!
//! Unknown fields anywhere are rejected. Validation failures name the field
//! (`items[0].e_d: ...`); runtime failures name the action index.

pub mod report;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::crypto::content_hash;
use crate::digest::Digest;
use crate::escrow::gas::{GasSchedule, ScheduleError, GWEI};
use crate::escrow::Role;
use crate::sim::{ProviderKind, SimError, World, WorldConfig};
use crate::types::TokenAmount;

use report::ScenarioReport;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid scenario: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("invalid gas schedule: {0}")]
    Schedule(#[from] ScheduleError),
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("world setup failed: {0}")]
    Setup(SimError),
    #[error("action {index} ({kind}) failed: {error}")]
    Action {
        index: usize,
        kind: String,
        error: SimError,
        /// Everything that had happened up to the failure, for diagnosis.
        partial: Box<ScenarioReport>,
    },
}

fn default_interval() -> u64 {
    15
}
fn default_chunk_size() -> usize {
    4096
}
fn default_schedule() -> String {
    "default".to_string()
}
fn default_gas_price() -> u64 {
    25
}
fn default_provider() -> String {
    "deterministic".to_string()
}
fn default_max_ticks() -> u64 {
    10_000
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub rng_seed: u64,
    #[serde(default = "default_interval")]
    pub block_interval_seconds: u64,
    #[serde(default = "default_chunk_size")]
    pub chunk_size: usize,
    #[serde(default = "default_schedule")]
    pub gas_schedule: String,
    #[serde(default = "default_gas_price")]
    pub gas_price_gwei: u64,
    #[serde(default = "default_provider")]
    pub crypto_provider: String,
    #[serde(default = "default_max_ticks")]
    pub max_ticks: u64,
    #[serde(default)]
    pub participants: Vec<ParticipantConfig>,
    #[serde(default)]
    pub items: Vec<ItemConfig>,
    #[serde(default)]
    pub actions: Vec<ActionConfig>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParticipantConfig {
    pub id: String,
    pub role: String,
    /// Whole tokens. TOML integers cap the config at u64 range; the engine
    /// itself accounts in wider integers.
    pub balance: u64,
    #[serde(default)]
    pub adversary: bool,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ItemConfig {
    pub id: String,
    pub owner: String,
    pub data_text: Option<String>,
    pub data_hex: Option<String>,
    pub data_file: Option<String>,
    pub e_d: u64,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionConfig {
    pub kind: String,
    pub item: Option<String>,
    pub consumer: Option<String>,
    pub researcher: Option<String>,
    pub research_id: Option<String>,
    pub e_d: Option<u64>,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

const ACTION_KINDS: &[&str] = &[
    "publish",
    "purchase",
    "retrieve",
    "delete",
    "relist",
    "provenance",
];

fn roles_of(role: &str) -> Option<&'static [Role]> {
    match role {
        "owner" => Some(&[Role::Owner]),
        "consumer" => Some(&[Role::Consumer]),
        "both" => Some(&[Role::Owner, Role::Consumer]),
        _ => None,
    }
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<ScenarioConfig, ConfigError> {
        let cfg: ScenarioConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Static checks; everything here fails before any world is built.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |msg: String| Err(ConfigError::Invalid(msg));
        match self.crypto_provider.as_str() {
            "deterministic" | "standard" => {}
            other => {
                return bad(format!(
                    "crypto_provider: expected deterministic|standard, got `{other}`"
                ))
            }
        }
        if self.chunk_size == 0 {
            return bad("chunk_size: must be positive".to_string());
        }
        if self.max_ticks == 0 {
            return bad("max_ticks: must be positive".to_string());
        }

        let mut participant_roles: BTreeMap<&str, &str> = BTreeMap::new();
        for (i, p) in self.participants.iter().enumerate() {
            if p.id.is_empty() {
                return bad(format!("participants[{i}].id: must not be empty"));
            }
            if roles_of(&p.role).is_none() {
                return bad(format!(
                    "participants[{i}].role: expected owner|consumer|both, got `{}`",
                    p.role
                ));
            }
            if participant_roles.insert(&p.id, &p.role).is_some() {
                return bad(format!("participants[{i}].id: duplicate id `{}`", p.id));
            }
        }

        let mut item_owner: BTreeMap<&str, &str> = BTreeMap::new();
        for (i, item) in self.items.iter().enumerate() {
            if item.id.is_empty() {
                return bad(format!("items[{i}].id: must not be empty"));
            }
            match participant_roles.get(item.owner.as_str()) {
                None => {
                    return bad(format!(
                        "items[{i}].owner: unknown participant `{}`",
                        item.owner
                    ))
                }
                Some(&role) if role == "consumer" => {
                    return bad(format!(
                        "items[{i}].owner: participant `{}` does not hold the owner role",
                        item.owner
                    ))
                }
                Some(_) => {}
            }
            let sources = [&item.data_text, &item.data_hex, &item.data_file]
                .iter()
                .filter(|s| s.is_some())
                .count();
            if sources != 1 {
                return bad(format!(
                    "items[{i}]: exactly one of data_text, data_hex, data_file required, got {sources}"
                ));
            }
            if let Some(h) = &item.data_hex {
                if hex::decode(h).is_err() {
                    return bad(format!("items[{i}].data_hex: not valid hex"));
                }
            }
            if item.e_d == 0 || item.e_d % 2 != 0 {
                return bad(format!(
                    "items[{i}].e_d: deposit must be positive and even, got {}",
                    item.e_d
                ));
            }
            if item_owner.insert(&item.id, &item.owner).is_some() {
                return bad(format!("items[{i}].id: duplicate id `{}`", item.id));
            }
        }

        for (i, a) in self.actions.iter().enumerate() {
            if !ACTION_KINDS.contains(&a.kind.as_str()) {
                return bad(format!(
                    "actions[{i}].kind: expected one of {}, got `{}`",
                    ACTION_KINDS.join("|"),
                    a.kind
                ));
            }
            let needs_item = matches!(
                a.kind.as_str(),
                "publish" | "purchase" | "retrieve" | "delete" | "relist"
            );
            if needs_item {
                match &a.item {
                    None => return bad(format!("actions[{i}].item: required for {}", a.kind)),
                    Some(id) if !item_owner.contains_key(id.as_str()) => {
                        return bad(format!("actions[{i}].item: unknown item `{id}`"))
                    }
                    Some(_) => {}
                }
            }
            if matches!(a.kind.as_str(), "purchase" | "retrieve") {
                match &a.consumer {
                    None => {
                        return bad(format!("actions[{i}].consumer: required for {}", a.kind))
                    }
                    Some(id) => match participant_roles.get(id.as_str()) {
                        None => {
                            return bad(format!(
                                "actions[{i}].consumer: unknown participant `{id}`"
                            ))
                        }
                        Some(&role) if role == "owner" => {
                            return bad(format!(
                                "actions[{i}].consumer: participant `{id}` does not hold the consumer role"
                            ))
                        }
                        Some(_) => {}
                    },
                }
            }
            if a.kind == "provenance" {
                match &a.researcher {
                    None => return bad(format!("actions[{i}].researcher: required for provenance")),
                    Some(id) if !participant_roles.contains_key(id.as_str()) => {
                        return bad(format!(
                            "actions[{i}].researcher: unknown participant `{id}`"
                        ))
                    }
                    Some(_) => {}
                }
                if a.research_id.as_deref().unwrap_or("").is_empty() {
                    return bad(format!(
                        "actions[{i}].research_id: required for provenance"
                    ));
                }
            }
            if let Some(e_d) = a.e_d {
                if a.kind != "relist" {
                    return bad(format!("actions[{i}].e_d: only valid for relist"));
                }
                if e_d == 0 || e_d % 2 != 0 {
                    return bad(format!(
                        "actions[{i}].e_d: deposit must be positive and even, got {e_d}"
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Reads and validates a scenario file. The returned directory anchors
/// relative `data_file` and schedule paths.
pub fn load_scenario(path: &Path) -> Result<(ScenarioConfig, PathBuf), ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let cfg = ScenarioConfig::from_toml_str(&text)?;
    let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    Ok((cfg, base))
}

fn resolve_schedule(name: &str, base_dir: &Path) -> Result<(GasSchedule, String), ConfigError> {
    if let Ok(s) = GasSchedule::builtin(name) {
        return Ok((s, name.to_string()));
    }
    let path = base_dir.join(name);
    let text = fs::read_to_string(&path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok((GasSchedule::from_toml_str(&text)?, name.to_string()))
}

fn resolve_item_data(
    index: usize,
    item: &ItemConfig,
    base_dir: &Path,
) -> Result<Vec<u8>, ConfigError> {
    if let Some(t) = &item.data_text {
        return Ok(t.clone().into_bytes());
    }
    if let Some(h) = &item.data_hex {
        return hex::decode(h)
            .map_err(|_| ConfigError::Invalid(format!("items[{index}].data_hex: not valid hex")));
    }
    let rel = item.data_file.as_ref().expect("validated: one source set");
    let path = base_dir.join(rel);
    fs::read(&path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })
}

struct ItemState {
    label: String,
    owner: String,
    data: Vec<u8>,
    item_id: Digest,
    e_d: TokenAmount,
    metadata: BTreeMap<String, String>,
}

/// Executes a validated scenario. On an action failure the error carries the
/// partial report assembled at that point.
pub fn run_scenario(
    cfg: &ScenarioConfig,
    base_dir: &Path,
) -> Result<ScenarioReport, ScenarioError> {
    run_scenario_full(cfg, base_dir).map(|(report, _)| report)
}

/// Like [`run_scenario`] but also hands back the finished world, for tooling
/// that inspects state beyond the report (audit trails, chain export).
pub fn run_scenario_full(
    cfg: &ScenarioConfig,
    base_dir: &Path,
) -> Result<(ScenarioReport, World), ScenarioError> {
    let (schedule, schedule_name) = resolve_schedule(&cfg.gas_schedule, base_dir)?;
    let provider = match cfg.crypto_provider.as_str() {
        "standard" => ProviderKind::Standard,
        _ => ProviderKind::Deterministic,
    };
    let world_cfg = WorldConfig {
        rng_seed: cfg.rng_seed,
        block_interval_seconds: cfg.block_interval_seconds,
        chunk_size: cfg.chunk_size,
        schedule,
        gas_price_wei: cfg.gas_price_gwei * GWEI,
        provider,
        max_ticks: cfg.max_ticks,
        ..WorldConfig::default()
    };

    let mut items: Vec<ItemState> = Vec::with_capacity(cfg.items.len());
    for (i, item) in cfg.items.iter().enumerate() {
        let data = resolve_item_data(i, item, base_dir)?;
        items.push(ItemState {
            label: item.id.clone(),
            owner: item.owner.clone(),
            item_id: content_hash(&data),
            data,
            e_d: item.e_d as TokenAmount,
            metadata: item.metadata.clone(),
        });
    }

    let mut world = World::new(world_cfg);
    let mut starting_balances: Vec<(String, TokenAmount)> = Vec::new();
    for p in &cfg.participants {
        let roles = roles_of(&p.role).expect("validated");
        world
            .add_participant(&p.id, roles, p.balance as TokenAmount)
            .map_err(ScenarioError::Setup)?;
        if p.adversary {
            world.set_adversary(&p.id, true).map_err(ScenarioError::Setup)?;
        }
        starting_balances.push((p.id.clone(), p.balance as TokenAmount));
    }
    world.run_to_quiescence().map_err(ScenarioError::Setup)?;

    let mut retrievals: Vec<report::RetrievalReport> = Vec::new();
    let find_item = |label: &str, items: &[ItemState]| -> usize {
        items
            .iter()
            .position(|s| s.label == label)
            .expect("validated: actions reference declared items")
    };

    for (index, action) in cfg.actions.iter().enumerate() {
        let outcome: Result<(), SimError> = (|| {
            match action.kind.as_str() {
                "publish" => {
                    let s = &items[find_item(action.item.as_ref().unwrap(), &items)];
                    world.publish_data(&s.owner, &s.data, s.metadata.clone(), s.e_d)?;
                }
                "purchase" => {
                    let s = &items[find_item(action.item.as_ref().unwrap(), &items)];
                    world.purchase(action.consumer.as_ref().unwrap(), s.item_id)?;
                }
                "retrieve" => {
                    let s = &items[find_item(action.item.as_ref().unwrap(), &items)];
                    let consumer = action.consumer.as_ref().unwrap();
                    let plaintext = world.retrieve_and_confirm(consumer, s.item_id)?;
                    retrievals.push(report::RetrievalReport {
                        item: s.label.clone(),
                        consumer: consumer.clone(),
                        bytes: plaintext.len() as u64,
                        hash_match: plaintext == s.data,
                    });
                }
                "delete" => {
                    let s = &items[find_item(action.item.as_ref().unwrap(), &items)];
                    world.delete_item(&s.owner.clone(), s.item_id)?;
                }
                "relist" => {
                    let s = &items[find_item(action.item.as_ref().unwrap(), &items)];
                    let e_d = action.e_d.map(|v| v as TokenAmount).unwrap_or(s.e_d);
                    world.relist_item(&s.owner.clone(), s.item_id, e_d)?;
                }
                "provenance" => {
                    world.commit_provenance(
                        action.researcher.as_ref().unwrap(),
                        action.research_id.as_ref().unwrap(),
                        action.metadata.clone(),
                    )?;
                }
                _ => unreachable!("validated kinds"),
            }
            world.run_to_quiescence()
        })();
        if let Err(error) = outcome {
            let partial = report::build_report(
                cfg,
                &schedule_name,
                &world,
                &starting_balances,
                &items_summary(&items),
                &retrievals,
                Some(format!("action {index} ({}) failed: {error}", action.kind)),
            );
            return Err(ScenarioError::Action {
                index,
                kind: action.kind.clone(),
                error,
                partial: Box::new(partial),
            });
        }
    }
    world.run_to_quiescence().map_err(ScenarioError::Setup)?;

    let report = report::build_report(
        cfg,
        &schedule_name,
        &world,
        &starting_balances,
        &items_summary(&items),
        &retrievals,
        None,
    );
    Ok((report, world))
}

fn items_summary(items: &[ItemState]) -> Vec<(String, Digest)> {
    items.iter().map(|s| (s.label.clone(), s.item_id)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASIC: &str = r#"
rng_seed = 42

[[participants]]
id = "alice"
role = "owner"
balance = 10000

[[participants]]
id = "bob"
role = "consumer"
balance = 10000

[[items]]
id = "weather"
owner = "alice"
data_text = "hourly readings from station seven"
e_d = 1000
[items.metadata]
topic = "weather"

[[actions]]
kind = "publish"
item = "weather"

[[actions]]
kind = "purchase"
item = "weather"
consumer = "bob"

[[actions]]
kind = "retrieve"
item = "weather"
consumer = "bob"
"#;

    #[test]
    fn basic_scenario_runs_to_settlement() {
        let cfg = ScenarioConfig::from_toml_str(BASIC).unwrap();
        let report = run_scenario(&cfg, Path::new(".")).unwrap();
        assert!(report.failure.is_none());
        let alice = report
            .participants
            .iter()
            .find(|p| p.id == "alice")
            .unwrap();
        let bob = report.participants.iter().find(|p| p.id == "bob").unwrap();
        assert_eq!(alice.balance_end, 10_500);
        assert_eq!(bob.balance_end, 9_500);
        assert_eq!(report.contracts.len(), 1);
        assert_eq!(report.contracts[0].state, "Inactive");
        assert_eq!(
            report.contracts[0].trail,
            ["Deployed", "Paid", "AccessGranted", "Delivered", "Confirmed", "Settled"]
        );
        assert!(report.chain_ok);
        assert_eq!(report.retrievals.len(), 1);
        assert!(report.retrievals[0].hash_match);
        // deploy + pay + settle
        assert_eq!(report.gas_rows.len(), 3);
        assert!(report.gas_rows.iter().all(|r| r.latency_secs == 15));
    }

    #[test]
    fn reports_are_deterministic() {
        let cfg = ScenarioConfig::from_toml_str(BASIC).unwrap();
        let a = run_scenario(&cfg, Path::new(".")).unwrap().render();
        let b = run_scenario(&cfg, Path::new(".")).unwrap().render();
        assert_eq!(a, b);
    }

    #[test]
    fn missing_seed_is_named() {
        let err = ScenarioConfig::from_toml_str("chunk_size = 64").unwrap_err();
        assert!(
            err.to_string().contains("rng_seed"),
            "error should name the missing field: {err}"
        );
    }

    #[test]
    fn unknown_field_rejected() {
        let err = ScenarioConfig::from_toml_str("rng_seed = 1\nturbo = true").unwrap_err();
        assert!(err.to_string().contains("turbo"), "{err}");
    }

    #[test]
    fn validation_names_field_paths() {
        let cases: &[(&str, &str)] = &[
            (
                r#"
rng_seed = 1
[[participants]]
id = "a"
role = "wizard"
balance = 1
"#,
                "participants[0].role",
            ),
            (
                r#"
rng_seed = 1
[[participants]]
id = "a"
role = "owner"
balance = 1
[[items]]
id = "x"
owner = "a"
data_text = "d"
e_d = 3
"#,
                "items[0].e_d",
            ),
            (
                r#"
rng_seed = 1
[[actions]]
kind = "publish"
"#,
                "actions[0].item",
            ),
            (
                r#"
rng_seed = 1
[[participants]]
id = "a"
role = "owner"
balance = 1
[[items]]
id = "x"
owner = "a"
data_text = "d"
data_hex = "00"
e_d = 2
"#,
                "items[0]",
            ),
        ];
        for (text, needle) in cases {
            let err = ScenarioConfig::from_toml_str(text).unwrap_err();
            assert!(
                err.to_string().contains(needle),
                "expected `{needle}` in `{err}`"
            );
        }
    }

    #[test]
    fn failing_action_carries_index_and_partial_report() {
        let text = r#"
rng_seed = 7

[[participants]]
id = "alice"
role = "owner"
balance = 10000

[[participants]]
id = "bob"
role = "consumer"
balance = 1

[[items]]
id = "x"
owner = "alice"
data_text = "d"
e_d = 1000

[[actions]]
kind = "publish"
item = "x"

[[actions]]
kind = "purchase"
item = "x"
consumer = "bob"
"#;
        let cfg = ScenarioConfig::from_toml_str(text).unwrap();
        match run_scenario(&cfg, Path::new(".")) {
            Err(ScenarioError::Action { index, partial, .. }) => {
                assert_eq!(index, 1);
                assert_eq!(partial.contracts.len(), 1, "publish did happen");
                assert!(partial.failure.as_deref().unwrap().contains("action 1"));
            }
            other => panic!("expected action failure, got {other:?}"),
        }
    }

    #[test]
    fn data_hex_and_file_sources() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("payload.bin"), b"from-a-file").unwrap();
        let text = r#"
rng_seed = 9

[[participants]]
id = "a"
role = "owner"
balance = 10000

[[participants]]
id = "b"
role = "consumer"
balance = 10000

[[items]]
id = "hexed"
owner = "a"
data_hex = "00ff10"
e_d = 10

[[items]]
id = "filed"
owner = "a"
data_file = "payload.bin"
e_d = 10

[[actions]]
kind = "publish"
item = "hexed"

[[actions]]
kind = "publish"
item = "filed"

[[actions]]
kind = "purchase"
item = "filed"
consumer = "b"

[[actions]]
kind = "retrieve"
item = "filed"
consumer = "b"
"#;
        let cfg = ScenarioConfig::from_toml_str(text).unwrap();
        let report = run_scenario(&cfg, dir.path()).unwrap();
        assert_eq!(report.retrievals[0].bytes, 11);
        assert!(report.retrievals[0].hash_match);
    }

    #[test]
    fn schedule_file_resolves_relative_to_config() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("sched.toml"),
            r#"
deploy_base = 1
per_state_write = 1
per_value_transfer = 1
per_event_emit = 1
call_base = 1
"#,
        )
        .unwrap();
        let text = r#"
rng_seed = 1
gas_schedule = "sched.toml"

[[participants]]
id = "a"
role = "owner"
balance = 100

[[items]]
id = "x"
owner = "a"
data_text = "d"
e_d = 2

[[actions]]
kind = "publish"
item = "x"
"#;
        let cfg = ScenarioConfig::from_toml_str(text).unwrap();
        let report = run_scenario(&cfg, dir.path()).unwrap();
        // deploy = deploy_base 1 + 5 writes + 1 transfer + 1 event = 8
        assert_eq!(report.gas_rows[0].gas, 8);
    }
}
