use std::path::PathBuf;
use std::process::ExitCode;

use bazaar_core::store::read_log;
use bazaar_core::RewardFunding;
use bazaar_sim::fuzz::{fuzz_economy, FuzzConfig};
use bazaar_sim::runner::log_text;
use bazaar_sim::{check_properties, emit_metrics, run_scenario, MetricsFormat, Scenario, SimReport};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "sim", about = "Run and check marketplace scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario; writes events.jsonl and report.json.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "sim-out")]
        out: PathBuf,
    },
    /// Check invariants of an event log.
    Check {
        log: PathBuf,
        /// Report of the run that produced the log, for digest comparison.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, default_value = "fee")]
        mode: RewardFunding,
    },
    /// Emit the per-round metric series of a report.
    Metrics {
        report: PathBuf,
        #[arg(long, value_enum, default_value = "csv")]
        format: MetricsFormat,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Run random command sequences and check each one.
    Fuzz {
        #[arg(long, default_value_t = 100)]
        seeds: u64,
        #[arg(long, default_value_t = 200)]
        commands: usize,
        #[arg(long, default_value = "fee")]
        mode: RewardFunding,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<bool, Box<dyn std::error::Error>> {
    match cli.command {
        Cmd::Run { scenario, seed, out } => {
            let scenario = Scenario::load(&scenario)?;
            let run = run_scenario(&scenario, seed)?;
            std::fs::create_dir_all(&out)?;
            std::fs::write(out.join("events.jsonl"), log_text(run.events()))?;
            std::fs::write(out.join("report.json"), serde_json::to_string_pretty(&run.report)?)?;
            let r = &run.report;
            println!(
                "{}: seed {} events {} rounds {} |K| {} conserved {} log {}",
                r.scenario,
                r.seed,
                r.events,
                r.rounds.len(),
                r.rounds.last().map_or(0, |s| s.assets),
                r.final_conservation,
                r.log_digest
            );
            Ok(r.final_conservation)
        }
        Cmd::Check { log, report, mode } => {
            let events = read_log(&log)?;
            let report: Option<SimReport> = match report {
                Some(path) => Some(serde_json::from_str(&std::fs::read_to_string(path)?)?),
                None => None,
            };
            let mode = report.as_ref().map_or(mode, |r| r.mode);
            let verdicts = check_properties(&events, report.as_ref(), mode)?;
            for v in &verdicts {
                println!("{} {:<20} {}", if v.passed { "PASS" } else { "FAIL" }, v.property, v.detail);
            }
            Ok(verdicts.iter().all(|v| v.passed))
        }
        Cmd::Metrics { report, format, out } => {
            let report: SimReport = serde_json::from_str(&std::fs::read_to_string(report)?)?;
            let path = emit_metrics(&report, format, &out)?;
            println!("{}", path.display());
            Ok(true)
        }
        Cmd::Fuzz { seeds, commands, mode } => {
            let config = FuzzConfig { min_applied: commands, funding: mode, ..FuzzConfig::default() };
            let mut all_ok = true;
            for seed in 0..seeds {
                let run = fuzz_economy(seed, &config, |_, _, _| {});
                let verdicts = check_properties(run.kernel.events(), None, mode)?;
                let failed: Vec<_> = verdicts.iter().filter(|v| !v.passed).collect();
                if !failed.is_empty() {
                    all_ok = false;
                    println!("seed {seed}: {failed:?}");
                }
            }
            println!("{seeds} seeds, {}", if all_ok { "all properties hold" } else { "failures above" });
            Ok(all_ok)
        }
    }
}
