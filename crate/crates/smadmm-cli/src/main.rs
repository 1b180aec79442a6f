//! Experiment runner. Subcommands:
//!
//! - `run <config.toml>`: execute every (algorithm, seed) pair and write the
//!   artifact directory (per-run trace CSVs, summary.json, curves.csv),
//! - `validate <config.toml>`: strict config check without running,
//! - `rate-fit <summary.json ...>`: fit the log-log decay of the best
//!   stationarity residual across experiments with different horizons,
//! - `kkt-report <trace.csv>`: residual summary of one recorded run.
//!
//! Exit code is zero on success; on failure a machine-readable JSON error is
//! printed to stderr.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use smadmm_cli::config::ExperimentConfig;
use smadmm_cli::{experiment, ratefit};

#[derive(Parser)]
#[command(name = "smadmm", about = "stochastic momentum ADMM experiment runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a TOML config.
    Run { config: PathBuf },
    /// Validate a config without running it.
    Validate { config: PathBuf },
    /// Fit the log-log residual decay over several experiment summaries.
    RateFit {
        summaries: Vec<PathBuf>,
        /// Algorithm whose aggregate residual is fitted.
        #[arg(long, default_value = "smadmm")]
        algorithm: String,
    },
    /// Summarize the residual columns of one trace CSV.
    KktReport { trace: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(message) => {
            eprintln!("{}", json!({ "error": message }));
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), String> {
    match cli.command {
        Command::Run { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let outcome = experiment::run_experiment(&cfg)?;
            println!(
                "{}",
                json!({
                    "output": outcome.output_dir,
                    "partial": outcome.summary.partial,
                    "runs": outcome.summary.runs.len(),
                })
            );
            if outcome.summary.partial {
                return Err("experiment completed with failed or diverged runs".into());
            }
            Ok(())
        }
        Command::Validate { config } => {
            ExperimentConfig::load(&config)?;
            println!("{}", json!({ "ok": true }));
            Ok(())
        }
        Command::RateFit {
            summaries,
            algorithm,
        } => {
            if summaries.is_empty() {
                return Err("rate-fit needs at least one summary".into());
            }
            let mut samples = Vec::new();
            for path in &summaries {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
                let value: serde_json::Value = serde_json::from_str(&text)
                    .map_err(|e| format!("{}: {e}", path.display()))?;
                let iterations = value["iterations"]
                    .as_u64()
                    .ok_or_else(|| format!("{}: missing iterations", path.display()))?;
                let aggregate = value["aggregates"]
                    .as_array()
                    .and_then(|arr| {
                        arr.iter()
                            .find(|a| a["algorithm"].as_str() == Some(algorithm.as_str()))
                    })
                    .ok_or_else(|| {
                        format!("{}: no aggregate for '{algorithm}'", path.display())
                    })?;
                let kkt = aggregate["mean_best_kkt"].as_f64().ok_or_else(|| {
                    format!("{}: missing mean_best_kkt for '{algorithm}'", path.display())
                })?;
                samples.push((iterations as f64, kkt));
            }
            let fit = ratefit::fit_rate(&samples)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&fit).map_err(|e| e.to_string())?
            );
            Ok(())
        }
        Command::KktReport { trace } => {
            let text = std::fs::read_to_string(&trace)
                .map_err(|e| format!("cannot read {}: {e}", trace.display()))?;
            let report = kkt_report(&text)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&report).map_err(|e| e.to_string())?
            );
            Ok(())
        }
    }
}

#[derive(serde::Serialize)]
struct KktReport {
    algorithm: String,
    rows: usize,
    best_k: Option<u64>,
    best_kkt_sq: Option<f64>,
    final_kkt_sq: Option<f64>,
    final_feas_sq: Option<f64>,
    identity_violations: usize,
}

fn kkt_report(trace_csv: &str) -> Result<KktReport, String> {
    let mut lines = trace_csv.lines();
    let header = lines.next().ok_or("empty trace file")?;
    let columns: Vec<&str> = header.split(',').collect();
    let col = |name: &str| -> Result<usize, String> {
        columns
            .iter()
            .position(|c| *c == name)
            .ok_or_else(|| format!("trace is missing column '{name}'"))
    };
    let (c_alg, c_k, c_kkt, c_feas, c_flags) = (
        col("algorithm")?,
        col("k")?,
        col("kkt_sq")?,
        col("feas_sq")?,
        col("invariant_flags")?,
    );
    let mut algorithm = String::new();
    let mut rows = 0usize;
    let mut best: Option<(u64, f64)> = None;
    let mut final_kkt = None;
    let mut final_feas = None;
    let mut violations = 0usize;
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != columns.len() {
            return Err(format!("malformed trace row: {line}"));
        }
        rows += 1;
        algorithm = fields[c_alg].to_string();
        let k: u64 = fields[c_k].parse().map_err(|_| "bad iteration index")?;
        let kkt: f64 = fields[c_kkt].parse().unwrap_or(f64::NAN);
        let feas: f64 = fields[c_feas].parse().unwrap_or(f64::NAN);
        let flags: u32 = fields[c_flags].parse().unwrap_or(0);
        if flags != 3 {
            violations += 1;
        }
        if kkt.is_finite() {
            final_kkt = Some(kkt);
            if best.map_or(true, |(_, b)| kkt < b) {
                best = Some((k, kkt));
            }
        }
        if feas.is_finite() {
            final_feas = Some(feas);
        }
    }
    Ok(KktReport {
        algorithm,
        rows,
        best_k: best.map(|(k, _)| k),
        best_kkt_sq: best.map(|(_, v)| v),
        final_kkt_sq: final_kkt,
        final_feas_sq: final_feas,
        identity_violations: violations,
    })
}
