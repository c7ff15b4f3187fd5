//! Benchmark CLI for coded distributed MARL experiments.
//!
//! Subcommands:
//! - `run` executes a scheme x straggler grid from a JSON config and
//!   writes per-iteration CSVs, window summaries, checkpoints, and a
//!   provenance sidecar.
//! - `compare` diffs two metric CSVs; the exit code flags a tolerance
//!   breach for CI use.
//! - `tolerance` prints how many arbitrary response losses a scheme
//!   provably survives at a given (N, M).
//!
//! `CODED_MARL_LOG=off|error|warn|info|debug` adjusts log verbosity.

use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use coded_marl::bench::{self, ExperimentConfig, SchemeSpec, TransportKind};
use coded_marl::coding;

#[derive(Parser)]
#[command(
    name = "coded-marl",
    version,
    about = "Straggler-tolerant coded distributed MARL"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment grid described by a JSON config.
    Run(RunArgs),
    /// Compare two per-iteration metric CSVs.
    Compare(CompareArgs),
    /// Print the worst-case straggler tolerance of a coding scheme.
    Tolerance(ToleranceArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Path to the experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override the config's transport.
    #[arg(long, value_enum)]
    transport: Option<TransportArg>,
    /// Output directory (default: the config's stem plus `_out`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum TransportArg {
    Sim,
    Tcp,
}

#[derive(Args)]
struct CompareArgs {
    baseline: PathBuf,
    candidate: PathBuf,
    /// Max tolerated |delta| on rewards and the parameter fingerprint.
    #[arg(long, default_value_t = 0.0)]
    tol: f64,
    /// Iterations per comparison window.
    #[arg(long, default_value_t = 10)]
    window: usize,
}

#[derive(Args)]
struct ToleranceArgs {
    /// Scheme name: uncoded | replication | mds | random-sparse | ldpc.
    #[arg(long)]
    scheme: String,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    m: usize,
    /// LDPC block size (prime), required for --scheme ldpc.
    #[arg(long)]
    w: Option<usize>,
    /// Keep probability for --scheme random-sparse.
    #[arg(long, default_value_t = 0.8)]
    p_m: f64,
    /// Seed for --scheme random-sparse.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run(args) => run(args),
        Command::Compare(args) => compare(args),
        Command::Tolerance(args) => tolerance(args),
    };
    match code {
        Ok(code) => std::process::exit(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            std::process::exit(2);
        }
    }
}

fn run(args: RunArgs) -> Result<i32> {
    let mut config = ExperimentConfig::from_file(&args.config)
        .with_context(|| format!("loading {}", args.config.display()))?;
    if let Some(transport) = args.transport {
        config.transport = match transport {
            TransportArg::Sim => TransportKind::Sim,
            TransportArg::Tcp => TransportKind::Tcp,
        };
        config.validate()?;
    }
    let out_dir = args.out.unwrap_or_else(|| {
        let stem = args
            .config
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "experiment".to_string());
        PathBuf::from(format!("{stem}_out"))
    });

    // SIGINT finishes the current iteration, then writes the final
    // checkpoint and metric files before exiting.
    let stop = Arc::new(AtomicBool::new(false));
    {
        let stop = stop.clone();
        ctrlc::set_handler(move || {
            eprintln!("interrupt: finishing the current iteration and writing outputs");
            stop.store(true, Ordering::Relaxed);
        })
        .context("installing the SIGINT handler")?;
    }

    let report = bench::run_grid(&config, &out_dir, Some(&stop))?;
    println!("config hash: {}", config.hash());
    for cell in &report.cells {
        println!(
            "{} k={} t_s={}: mean round time {:.6}s, mean reward {:.4} -> {}",
            cell.scheme,
            cell.k,
            cell.t_s,
            cell.mean_round_time,
            cell.mean_reward,
            cell.csv.display()
        );
    }
    println!("summary: {}", report.summary_csv.display());
    println!("sidecar: {}", report.sidecar.display());
    Ok(if stop.load(Ordering::Relaxed) { 130 } else { 0 })
}

fn compare(args: CompareArgs) -> Result<i32> {
    let report = bench::compare(&args.baseline, &args.candidate, args.tol, args.window)?;
    println!("rows compared: {}", report.rows);
    for (i, delta) in report.window_reward_deltas.iter().enumerate() {
        println!("window {i}: max |d reward| = {delta:.3e}");
    }
    println!("max |d reward|      = {:.3e}", report.max_reward_delta);
    println!("max |d theta_linf|  = {:.3e}", report.max_theta_linf_delta);
    println!("round time ratio    = {:.6}", report.round_time_ratio);
    println!(
        "verdict: {} (tol {:.1e})",
        if report.within_tolerance {
            "within tolerance"
        } else {
            "BREACH"
        },
        report.tolerance
    );
    Ok(report.exit_code())
}

fn tolerance(args: ToleranceArgs) -> Result<i32> {
    let spec = match args.scheme.as_str() {
        "uncoded" => SchemeSpec::Uncoded,
        "replication" => SchemeSpec::Replication,
        "mds" => SchemeSpec::Mds { alphas: None },
        "random-sparse" | "random_sparse" => SchemeSpec::RandomSparse {
            p_m: args.p_m,
            seed: args.seed,
        },
        "ldpc" => match args.w {
            Some(w) => SchemeSpec::Ldpc { w },
            None => bail!("--scheme ldpc requires --w"),
        },
        other => bail!("unknown scheme {other:?}"),
    };
    let matrix = spec.build(args.n, args.m)?;
    let k = coding::worst_case_tolerance(&matrix)?;
    println!(
        "{} (n={}, m={}): tolerates any {} lost response{}",
        spec.label(),
        args.n,
        args.m,
        k,
        if k == 1 { "" } else { "s" }
    );
    Ok(0)
}
