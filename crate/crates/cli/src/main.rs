//! `mvsde <subcommand> [--config path] [--seed u64] [--out dir] [--threads n]`
//!
//! Exit codes: 0 when every acceptance check passes, 2 when a check fails,
//! 1 on any error.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use mvsde_core::harness::{run_experiment, run_simulate, write_trajectory, ExperimentConfig, ExperimentKind, ExperimentReport};

#[derive(Parser)]
#[command(name = "mvsde", version, about = "Mean-field particle system experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Propagation-of-chaos rate in N.
    Chaos(Common),
    /// Discretisation rate in the step size.
    DeltaRate(Common),
    /// Exponential decay of the distance between two initial laws.
    Decay(Common),
    /// Rate in the delay r0.
    DelayRate(Common),
    /// Long-horizon moment bounds and the explicit blow-up contrast.
    Moments(Common),
    /// Marginals of the reflection coupling against uncoupled runs.
    CoupleCheck(Common),
    /// Grid verification of the contraction inequality.
    ContractionCheck(Common),
    /// Single trajectory run, written as CSV or binary.
    Simulate(Common),
}

#[derive(Args, Clone)]
struct Common {
    /// Flat TOML experiment configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for series.csv and report.json.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads (defaults to all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Overrides the `model` key.
    #[arg(long)]
    model: Option<String>,
    /// Overrides the `scheme` key.
    #[arg(long)]
    scheme: Option<String>,
}

impl Command {
    fn split(&self) -> (ExperimentKind, &Common) {
        match self {
            Self::Chaos(c) => (ExperimentKind::Chaos, c),
            Self::DeltaRate(c) => (ExperimentKind::DeltaRate, c),
            Self::Decay(c) => (ExperimentKind::Decay, c),
            Self::DelayRate(c) => (ExperimentKind::DelayRate, c),
            Self::Moments(c) => (ExperimentKind::Moments, c),
            Self::CoupleCheck(c) => (ExperimentKind::CoupleCheck, c),
            Self::ContractionCheck(c) => (ExperimentKind::ContractionCheck, c),
            Self::Simulate(c) => (ExperimentKind::Simulate, c),
        }
    }
}

fn load_config(args: &Common) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.seed = Some(s);
    }
    if args.model.is_some() {
        cfg.model.clone_from(&args.model);
    }
    if args.scheme.is_some() {
        cfg.scheme.clone_from(&args.scheme);
    }
    Ok(cfg)
}

fn summary(report: &ExperimentReport) {
    for c in &report.checks {
        println!("{} {} = {:.6e} (threshold {:.6e})", if c.pass { "ok  " } else { "FAIL" }, c.name, c.value, c.threshold);
    }
    if let Some(f) = &report.fit {
        println!("fit: slope {:.4} (se {:.4}), r2 {:.4}", f.slope, f.slope_stderr, f.r2);
    }
    println!("{}: {} in {:.1}s", report.experiment, if report.pass { "PASS" } else { "FAIL" }, report.wall_clock_seconds);
}

fn run(cli: &Cli) -> anyhow::Result<bool> {
    let (kind, args) = cli.command.split();
    if let Some(t) = args.threads {
        rayon::ThreadPoolBuilder::new().num_threads(t).build_global().context("configuring the thread pool")?;
    }
    let cfg = load_config(args)?;
    let report = if kind == ExperimentKind::Simulate {
        let started = std::time::Instant::now();
        let (mut report, traj) = run_simulate(&cfg)?;
        report.wall_clock_seconds = started.elapsed().as_secs_f64();
        let format = report.config.format.clone().unwrap_or_else(|| "csv".into());
        let path = write_trajectory(&traj, &args.out, &format)?;
        println!("wrote {}", path.display());
        report
    } else {
        run_experiment(kind, &cfg)?
    };
    report.write_to(&args.out).with_context(|| format!("writing outputs to {}", args.out.display()))?;
    summary(&report);
    Ok(report.pass)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
