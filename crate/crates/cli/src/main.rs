//! Experiment runner. Each subcommand picks its desk-scale defaults (or the
//! full-size protocol under `--paper-scale`), overlays an optional
//! `key = value` config file and command-line flags, runs the sweep in a
//! worker pool, and writes a CSV. Exit codes: 0 success, 2 configuration
//! error, 3 when any grid point failed (the remaining rows are still
//! written).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use advlab_cli::config::{ExperimentConfig, ExperimentKind};
use advlab_cli::experiments;

#[derive(Parser)]
#[command(name = "advlab", about = "Max-margin robustness experiments", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Flat key = value config file overlaying the defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output CSV path (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated seed list (overrides the config).
    #[arg(long)]
    seed_list: Option<String>,
    /// Use the full-size experiment protocol instead of desk-scale defaults.
    #[arg(long)]
    paper_scale: bool,
    /// Monte Carlo sample count per evaluation (overrides the config).
    #[arg(long)]
    mc: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Robust-error gap vs. training budget at fixed (d, n).
    EpsSweep(RunArgs),
    /// Error and gap vs. ambient dimension at fixed n.
    OverparamSweep(RunArgs),
    /// Error and gap vs. sample count at fixed d.
    SamplesizeSweep(RunArgs),
    /// Robust error decomposition across training budgets.
    Decomposition(RunArgs),
    /// Coverage of margin and susceptibility intervals across seeds.
    BoundsCheck(RunArgs),
    /// Mask-budget sweep of adversarial logistic regression on images.
    ImageLab(RunArgs),
}

impl Command {
    fn split(self) -> (ExperimentKind, RunArgs) {
        match self {
            Command::EpsSweep(a) => (ExperimentKind::EpsSweep, a),
            Command::OverparamSweep(a) => (ExperimentKind::OverparamSweep, a),
            Command::SamplesizeSweep(a) => (ExperimentKind::SamplesizeSweep, a),
            Command::Decomposition(a) => (ExperimentKind::Decomposition, a),
            Command::BoundsCheck(a) => (ExperimentKind::BoundsCheck, a),
            Command::ImageLab(a) => (ExperimentKind::ImageLab, a),
        }
    }
}

fn build_config(kind: ExperimentKind, args: &RunArgs) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = if args.paper_scale {
        ExperimentConfig::paper(kind)
    } else {
        ExperimentConfig::desk(kind)
    };
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("cannot read {}: {e}", path.display()))?;
        cfg.apply_file(&text)?;
    }
    if let Some(out) = &args.out {
        cfg.out = out.clone();
    }
    if let Some(list) = &args.seed_list {
        cfg.seeds = list
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<u64>().map_err(|e| anyhow::anyhow!("bad seed {s:?}: {e}")))
            .collect::<anyhow::Result<Vec<u64>>>()?;
    }
    if let Some(mc) = args.mc {
        cfg.n_mc = mc;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, args) = cli.command.split();

    let cfg = match build_config(kind, &args) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("configuration error: {e:#}");
            return ExitCode::from(2);
        }
    };

    let outcome = match experiments::run(&cfg) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("configuration error: {e:#}");
            return ExitCode::from(2);
        }
    };

    if let Err(e) = experiments::write_csv(&outcome, &cfg.out) {
        eprintln!("failed to write {}: {e:#}", cfg.out.display());
        return ExitCode::from(2);
    }
    println!(
        "{}: wrote {} rows to {}",
        kind.name(),
        outcome.rows.len(),
        cfg.out.display()
    );
    for line in &outcome.summary {
        println!("{line}");
    }
    if !outcome.errors.is_empty() {
        for e in &outcome.errors {
            eprintln!("row failed: {e}");
        }
        eprintln!(
            "{} of {} grid points failed",
            outcome.errors.len(),
            outcome.errors.len() + outcome.rows.len()
        );
        return ExitCode::from(3);
    }
    ExitCode::SUCCESS
}
