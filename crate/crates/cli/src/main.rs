//! `capsim`: scenario runner for the partition/economics simulator.
//!
//! Subcommands: `run` executes one scenario and emits its metric stream,
//! `sweep` runs a seed range and reports per-seed trace digests,
//! `check-history` computes the consistency/availability deviations of a
//! standalone history file, and `verify-vectors` checks the committed hash
//! golden vectors.

mod history;
mod scenario;
mod vectors;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use capsim_core::metrics::{
    availability_deviation, consistency_deviation, ConsistencyDeviation, ObjectSpec,
};
use capsim_core::sim::{emit_metrics, run_seeded, MetricFormat, RunTrace};

#[derive(Parser)]
#[command(name = "capsim", version, about = "Partition-aware automaton simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and emit its metric stream.
    Run {
        /// Scenario file (TOML).
        scenario: PathBuf,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output format.
        #[arg(long, default_value = "lines", value_parser = ["lines", "csv"])]
        format: String,
        /// Write the stream to a file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a scenario across a seed range, printing one digest per seed.
    Sweep {
        /// Scenario file (TOML).
        scenario: PathBuf,
        /// Seed range `A..B` (half-open).
        #[arg(long)]
        seeds: String,
        /// Directory to write per-seed metric streams into.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Compute deviation metrics for a line-delimited history file.
    CheckHistory {
        /// History file.
        history: PathBuf,
        /// Response bound tau.
        #[arg(long)]
        tau: u64,
        /// Sequential object semantics.
        #[arg(long, default_value = "register", value_parser = ["register", "counter"])]
        object: String,
        /// Current step used to age pending operations (defaults to the
        /// largest timestamp in the file).
        #[arg(long)]
        now: Option<u64>,
    },
    /// Verify the committed Merkle and hash-chain golden vectors.
    VerifyVectors {
        /// Vector directory.
        #[arg(long, default_value = "crates/cli/vectors")]
        dir: PathBuf,
    },
}

fn parse_format(name: &str) -> MetricFormat {
    match name {
        "csv" => MetricFormat::Csv,
        _ => MetricFormat::Lines,
    }
}

fn write_stream(trace: &RunTrace, format: MetricFormat, out: Option<&PathBuf>) -> Result<()> {
    let stream = emit_metrics(trace, format);
    match out {
        Some(path) => std::fs::write(path, stream)
            .with_context(|| format!("writing {}", path.display()))?,
        None => print!("{stream}"),
    }
    Ok(())
}

fn cmd_run(path: &PathBuf, seed: Option<u64>, format: &str, out: Option<PathBuf>) -> Result<()> {
    let scenario = scenario::load_scenario(path)?;
    let seed = seed.unwrap_or(scenario.seed);
    let trace = run_seeded(&scenario, seed)?;
    write_stream(&trace, parse_format(format), out.as_ref())?;
    eprintln!("digest={}", hex::encode(trace.digest()));
    Ok(())
}

fn parse_seed_range(text: &str) -> Result<std::ops::Range<u64>> {
    let (a, b) = text
        .split_once("..")
        .context("seed range must look like A..B")?;
    let a: u64 = a.parse().context("range start")?;
    let b: u64 = b.parse().context("range end")?;
    if b <= a {
        bail!("empty seed range {a}..{b}");
    }
    Ok(a..b)
}

fn cmd_sweep(path: &PathBuf, seeds: &str, out_dir: Option<PathBuf>) -> Result<()> {
    let scenario = scenario::load_scenario(path)?;
    if let Some(dir) = &out_dir {
        std::fs::create_dir_all(dir)?;
    }
    let stdout = std::io::stdout();
    let mut w = stdout.lock();
    for seed in parse_seed_range(seeds)? {
        let trace = run_seeded(&scenario, seed)?;
        writeln!(
            w,
            "seed={} digest={} eps_c={} eps_a={} envelope={}",
            seed,
            hex::encode(trace.digest()),
            trace.footer.epsilon_c,
            trace.footer.epsilon_a,
            if trace.footer.within_envelope { "ok" } else { "violated" },
        )?;
        if let Some(dir) = &out_dir {
            std::fs::write(
                dir.join(format!("{}-{seed}.lines", scenario.name)),
                emit_metrics(&trace, MetricFormat::Lines),
            )?;
        }
    }
    Ok(())
}

fn cmd_check_history(path: &PathBuf, tau: u64, object: &str, now: Option<u64>) -> Result<()> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading history {}", path.display()))?;
    let object = match object {
        "counter" => ObjectSpec::Counter,
        _ => ObjectSpec::Register,
    };
    let history = history::parse_history(&text, object)?;
    let now = now.unwrap_or_else(|| {
        history
            .records
            .iter()
            .map(|r| r.resp.unwrap_or(r.inv))
            .max()
            .unwrap_or(0)
    });
    match consistency_deviation(&history) {
        Ok(ConsistencyDeviation::Inversions(n)) => println!("eps_c={n}"),
        Ok(ConsistencyDeviation::Unlinearizable) => println!("eps_c=unlinearizable"),
        Err(e) => println!("eps_c=error:{e}"),
    }
    println!("eps_a={}", availability_deviation(&history, tau, now));
    println!(
        "completed={} pending={}",
        history.records.iter().filter(|r| r.resp.is_some()).count(),
        history.records.iter().filter(|r| r.resp.is_none()).count(),
    );
    Ok(())
}

fn cmd_verify_vectors(dir: &PathBuf) -> Result<bool> {
    let results = vectors::verify_all(dir)?;
    let mut all_ok = true;
    for r in &results {
        println!("{} {}", if r.ok { "ok  " } else { "FAIL" }, r.label);
        all_ok &= r.ok;
    }
    Ok(all_ok)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run {
            scenario,
            seed,
            format,
            out,
        } => cmd_run(scenario, *seed, format, out.clone()).map(|()| true),
        Command::Sweep {
            scenario,
            seeds,
            out_dir,
        } => cmd_sweep(scenario, seeds, out_dir.clone()).map(|()| true),
        Command::CheckHistory {
            history,
            tau,
            object,
            now,
        } => cmd_check_history(history, *tau, object, *now).map(|()| true),
        Command::VerifyVectors { dir } => cmd_verify_vectors(dir),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
