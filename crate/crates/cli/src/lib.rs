//! Driver behind the `volley` binary.
//!
//! Machine-readable output (JSON, CSV) goes to `out`; progress and summaries
//! for humans go to `log`. Exit codes: 0 success, 1 usage or configuration
//! error, 2 runtime error, 3 verification failure.

pub mod verify;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use volley_core::harness::{run_batch, run_trial_with, TrialOptions};
use volley_core::scenario::load_scenario;
use volley_core::{Error, Scenario};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_VERIFY: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "volley", version, about = "Simulate, batch-evaluate and verify the ball interception stack")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one seeded trial and print its result as JSON.
    Run {
        /// Scenario file (JSON); defaults apply when omitted.
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Write the JSONL event trace here.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Run seeds `seed .. seed + trials` and print the summary as JSON.
    Batch {
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// First seed of the batch.
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        trials: usize,
        /// Write per-trial metrics as CSV here.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Write the concatenated JSONL traces here.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Run the oracle suites and print a JSON report.
    Verify,
}

#[derive(Debug)]
enum Failure {
    Config(Error),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> i32 {
        match self {
            Failure::Config(_) => EXIT_USAGE,
            Failure::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(e) => write!(f, "configuration error: {e}"),
            Failure::Runtime(m) => write!(f, "runtime error: {m}"),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Validation { .. } | Error::Parse { .. } | Error::Io { .. } => Failure::Config(e),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn scenario(path: Option<&Path>) -> Result<Scenario, Failure> {
    match path {
        Some(p) => load_scenario(p).map_err(Failure::Config),
        None => Ok(Scenario::default()),
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn emit(out: &mut dyn Write, text: &str) -> Result<(), Failure> {
    writeln!(out, "{text}").map_err(|e| Failure::Runtime(format!("stdout: {e}")))
}

fn to_json<T: serde::Serialize>(v: &T) -> Result<String, Failure> {
    serde_json::to_string_pretty(v).map_err(|e| Failure::Runtime(e.to_string()))
}

fn join_lines<'a>(lines: impl Iterator<Item = &'a String>) -> String {
    let mut s = String::new();
    for l in lines {
        s.push_str(l);
        s.push('\n');
    }
    s
}

fn cmd_run(path: Option<&Path>, seed: u64, trace: Option<&Path>, out: &mut dyn Write, log: &mut dyn Write) -> Result<i32, Failure> {
    let sc = scenario(path)?;
    let opts = TrialOptions {
        trace: trace.is_some(),
        ..TrialOptions::default()
    };
    let r = run_trial_with(&sc, seed, &opts)?;
    if let Some(p) = trace {
        write_file(p, &join_lines(r.trace.iter()))?;
    }
    emit(out, &to_json(&r)?)?;
    let _ = writeln!(
        log,
        "seed {seed}: hit={} returned={} miss={} digest={}",
        r.hit,
        r.returned,
        r.miss_distance.map_or("-".into(), |d| format!("{d:.3} m")),
        r.trace_digest
    );
    Ok(EXIT_OK)
}

fn cmd_batch(
    path: Option<&Path>,
    seed: u64,
    trials: usize,
    csv: Option<&Path>,
    trace: Option<&Path>,
    out: &mut dyn Write,
    log: &mut dyn Write,
) -> Result<i32, Failure> {
    let sc = scenario(path)?;
    let opts = TrialOptions {
        trace: trace.is_some(),
        ..TrialOptions::default()
    };
    let summary = run_batch(&sc, trials, seed, &opts)?;
    if let Some(p) = csv {
        write_file(p, &summary.to_csv())?;
    }
    if let Some(p) = trace {
        write_file(p, &join_lines(summary.trials.iter().flat_map(|t| t.trace.iter())))?;
    }
    emit(out, &to_json(&summary)?)?;
    let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
    let _ = writeln!(log, "trials              {}", summary.n_trials);
    let _ = writeln!(log, "seeds               {}..{}", seed, seed.wrapping_add(trials as u64 - 1));
    let _ = writeln!(log, "hit rate            {:.3}", summary.hit_rate);
    let _ = writeln!(log, "return rate         {:.3}", summary.return_rate);
    let _ = writeln!(log, "median pred error   {} m", fmt(summary.median_final_pred_error));
    let _ = writeln!(log, "median miss         {} m", fmt(summary.median_miss_distance));
    let _ = writeln!(log, "trace digest        {}", summary.trace_digest);
    Ok(EXIT_OK)
}

fn cmd_verify(out: &mut dyn Write, log: &mut dyn Write) -> Result<i32, Failure> {
    let reports = verify::run_all();
    for r in &reports {
        let _ = writeln!(
            log,
            "{:<12} {:<4} {} = {:.3e} (tolerance [{:e}, {:e}]) {}",
            r.suite,
            if r.passed { "PASS" } else { "FAIL" },
            r.measure,
            r.metric,
            r.tolerance[0],
            r.tolerance[1],
            r.detail
        );
    }
    emit(out, &to_json(&reports)?)?;
    Ok(if reports.iter().all(|r| r.passed) { EXIT_OK } else { EXIT_VERIFY })
}

/// Runs a parsed command and returns the process exit code.
pub fn execute(cli: &Cli, out: &mut dyn Write, log: &mut dyn Write) -> i32 {
    let res = match &cli.command {
        Command::Run { scenario, seed, trace } => cmd_run(scenario.as_deref(), *seed, trace.as_deref(), out, log),
        Command::Batch {
            scenario,
            seed,
            trials,
            csv,
            trace,
        } => cmd_batch(scenario.as_deref(), *seed, *trials, csv.as_deref(), trace.as_deref(), out, log),
        Command::Verify => cmd_verify(out, log),
    };
    match res {
        Ok(code) => code,
        Err(f) => {
            let _ = writeln!(log, "volley: {f}");
            f.code()
        }
    }
}
