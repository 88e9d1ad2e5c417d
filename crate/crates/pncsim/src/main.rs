//! Command-line front end: run one scenario, sweep seeds, validate a
//! scenario file, or dump the link-adaptation tables.

use clap::{Parser, Subcommand};
use pncsim::kpi::RunMetadata;
use pncsim::scenario::{PolicyKind, ScenarioConfig};
use pncsim::sim::{run_with, sweep};
use pncsim::tables::LinkAdaptTables;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "pncsim", version, about = "Multi-connectivity downlink flow-control simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write the per-TTI KPI CSV.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Override the scenario's policy (pnc, autonomous_a6,
        /// single_connectivity, max_weight).
        #[arg(long)]
        policy: Option<String>,
        /// Override the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output CSV path; a JSON metadata sidecar lands next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every requested policy over many seeds and aggregate.
    Sweep {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 100)]
        seeds: u64,
        /// First seed of the range.
        #[arg(long, default_value_t = 0)]
        base_seed: u64,
        /// Comma-separated policy list.
        #[arg(long, default_value = "pnc,autonomous_a6")]
        policies: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a scenario file and exit.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Dump the loaded link-adaptation tables as JSON.
    Tables {
        /// Load from a file instead of the bundled tables.
        #[arg(long)]
        file: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    match dispatch() {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}

fn parse_policies(list: &str) -> Result<Vec<PolicyKind>, String> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| PolicyKind::parse(s).ok_or_else(|| format!("unknown policy '{s}'")))
        .collect()
}

fn dispatch() -> Result<(), String> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            scenario,
            policy,
            seed,
            out,
        } => {
            let cfg = ScenarioConfig::from_file(&scenario).map_err(|e| e.to_string())?;
            let policy_kind = match policy.as_deref() {
                Some(name) => {
                    Some(PolicyKind::parse(name).ok_or_else(|| format!("unknown policy '{name}'"))?)
                }
                None => None,
            };
            let result = run_with(&cfg, policy_kind, seed).map_err(|e| e.to_string())?;
            std::fs::write(&out, result.kpi.to_csv()).map_err(|e| e.to_string())?;

            let meta = RunMetadata {
                scenario: cfg.clone(),
                seed: seed.unwrap_or(cfg.seed),
                policy: policy_kind.unwrap_or(cfg.policy.name).name().to_string(),
                tables_checksum_sha256: LinkAdaptTables::checksum_hex(
                    pncsim::tables::BUNDLED_TABLES_JSON,
                ),
                totals: result.totals,
                estimated_transition: result.estimated_transition.clone(),
                scell_switch_ttis: result.scell_switch_ttis.clone(),
                window_mean_throughput_bps: result.window_mean_throughput_bps,
            };
            let meta_path = out.with_extension("meta.json");
            let meta_json =
                serde_json::to_string_pretty(&meta).map_err(|e| e.to_string())?;
            std::fs::write(&meta_path, meta_json).map_err(|e| e.to_string())?;
            eprintln!(
                "wrote {} rows to {} (metadata: {})",
                result.kpi.rows.len(),
                out.display(),
                meta_path.display()
            );
            Ok(())
        }
        Command::Sweep {
            scenario,
            seeds,
            base_seed,
            policies,
            out,
        } => {
            let cfg = ScenarioConfig::from_file(&scenario).map_err(|e| e.to_string())?;
            let kinds = parse_policies(&policies)?;
            if kinds.is_empty() {
                return Err("no policies requested".into());
            }
            let result = sweep(&cfg, &kinds, seeds, base_seed).map_err(|e| e.to_string())?;
            let json = serde_json::to_string_pretty(&result).map_err(|e| e.to_string())?;
            std::fs::write(&out, json).map_err(|e| e.to_string())?;
            for agg in &result.policies {
                eprintln!(
                    "{}: mean {:.1} bps over {} seeds (95% CI [{:.1}, {:.1}])",
                    agg.policy, agg.mean_bps, agg.seeds, agg.ci95_bps[0], agg.ci95_bps[1]
                );
            }
            if let Some(cmp) = &result.pnc_vs_autonomous {
                eprintln!(
                    "{} vs {}: +{:.2}% (diff CI [{:.1}, {:.1}] bps)",
                    cmp.better,
                    cmp.baseline,
                    100.0 * cmp.relative_gain,
                    cmp.ci95_diff_bps[0],
                    cmp.ci95_diff_bps[1]
                );
            }
            Ok(())
        }
        Command::Validate { scenario } => {
            ScenarioConfig::from_file(&scenario).map_err(|e| e.to_string())?;
            eprintln!("{}: ok", scenario.display());
            Ok(())
        }
        Command::Tables { file } => {
            let tables = match file {
                Some(path) => {
                    let text = std::fs::read_to_string(&path).map_err(|e| e.to_string())?;
                    LinkAdaptTables::from_json_str(&text).map_err(|e| e.to_string())?
                }
                None => LinkAdaptTables::bundled().clone(),
            };
            let json = serde_json::to_string_pretty(&tables).map_err(|e| e.to_string())?;
            println!("{json}");
            Ok(())
        }
    }
}
