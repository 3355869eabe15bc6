//! Command-line front end: runs scenario files, prints audit trails and gas
//! reports, and exports chains.
//!
//! Exit codes: 0 success; 1 config or argument error; 2 simulation error
//! (a failing action prints the partial report to stdout and the error,
//! naming the action index, to stderr).
//!
//! When `--report` is given a relative path and `CHAINSHARE_REPORT_DIR` is
//! set, the report file lands under that directory.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use chainshare_core::escrow::Event;
use chainshare_core::scenario::{load_scenario, run_scenario_full, ScenarioError};
use chainshare_core::types::Address;

#[derive(Parser)]
#[command(name = "chainshare", version, about = "data-sharing market simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and print the full report.
    Run {
        config: PathBuf,
        /// Also write the report to this file.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Run a scenario, then print one contract's audit trail.
    Audit {
        config: PathBuf,
        /// Contract address (40 hex digits, optional 0x prefix).
        contract: String,
    },
    /// Run a scenario and print only the gas table.
    GasReport { config: PathBuf },
    /// Run a scenario and write the chain to a file in export format.
    ExportChain { config: PathBuf, path: PathBuf },
}

/// 1 = config/argument problem, 2 = simulation failure.
struct Failure {
    code: u8,
    message: String,
}

fn config_error(message: String) -> Failure {
    Failure { code: 1, message }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run_world(config: &Path) -> Result<(chainshare_core::scenario::report::ScenarioReport, chainshare_core::sim::World), Failure> {
    let (cfg, base) = load_scenario(config).map_err(|e| config_error(e.to_string()))?;
    run_scenario_full(&cfg, &base).map_err(|e| match e {
        ScenarioError::Config(c) => config_error(c.to_string()),
        ScenarioError::Setup(s) => Failure {
            code: 2,
            message: format!("world setup failed: {s}"),
        },
        ScenarioError::Action {
            index,
            kind,
            error,
            partial,
        } => {
            // The partial report is still useful evidence; print it before
            // failing.
            print!("{}", partial.render());
            Failure {
                code: 2,
                message: format!("action {index} ({kind}) failed: {error}"),
            }
        }
    })
}

fn report_path(requested: &Path) -> PathBuf {
    if requested.is_relative() {
        if let Ok(dir) = std::env::var("CHAINSHARE_REPORT_DIR") {
            if !dir.is_empty() {
                return PathBuf::from(dir).join(requested);
            }
        }
    }
    requested.to_path_buf()
}

fn event_line(e: &Event) -> String {
    let mut line = format!(
        "seq={} block={} {} ({}) actor=0x{} state={}",
        e.seq,
        e.block_height,
        e.name,
        e.function,
        e.actor.to_hex(),
        e.state_after
    );
    for (k, v) in &e.amounts {
        line.push(' ');
        line.push_str(k);
        line.push('=');
        line.push_str(&v.to_string());
    }
    line
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run { config, report } => {
            let (scenario_report, _world) = run_world(&config)?;
            let text = scenario_report.render();
            print!("{text}");
            if let Some(requested) = report {
                let path = report_path(&requested);
                if let Some(parent) = path.parent() {
                    if !parent.as_os_str().is_empty() {
                        std::fs::create_dir_all(parent).map_err(|e| {
                            config_error(format!("cannot create {}: {e}", parent.display()))
                        })?;
                    }
                }
                std::fs::write(&path, &text)
                    .map_err(|e| config_error(format!("cannot write {}: {e}", path.display())))?;
                eprintln!("report written to {}", path.display());
            }
            Ok(())
        }
        Command::Audit { config, contract } => {
            let addr_hex = contract.strip_prefix("0x").unwrap_or(&contract);
            let addr = Address::from_hex(addr_hex)
                .map_err(|e| config_error(format!("bad contract address `{contract}`: {e}")))?;
            let (_report, world) = run_world(&config)?;
            let trail = world
                .escrow()
                .audit_trail(&addr)
                .map_err(|e| config_error(e.to_string()))?;
            println!("audit trail for 0x{}", addr.to_hex());
            for event in trail {
                println!("{}", event_line(event));
            }
            Ok(())
        }
        Command::GasReport { config } => {
            let (report, _world) = run_world(&config)?;
            print!("{}", report.render_gas_table());
            Ok(())
        }
        Command::ExportChain { config, path } => {
            let (_report, world) = run_world(&config)?;
            let lines = world.chain().export_lines();
            std::fs::write(&path, &lines)
                .map_err(|e| config_error(format!("cannot write {}: {e}", path.display())))?;
            println!(
                "chain exported to {} ({} blocks)",
                path.display(),
                world.chain().blocks().len()
            );
            Ok(())
        }
    }
}
