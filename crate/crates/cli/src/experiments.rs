//! Experiment drivers: each one expands a config into deterministic work
//! units, runs them in a worker pool, and emits rows in a fixed order so
//! that identical configs reproduce byte-identical CSV output (wall-time
//! column aside). A failed unit becomes an error record instead of a row;
//! nothing is silently dropped.

use std::path::Path;
use std::time::Instant;

use anyhow::{Context, Result};
use rayon::prelude::*;

use advlab::adv_train::{StepRule, TrainConfig};
use advlab::eval::{decomposition_curve, MetricsRow};
use advlab::img_lab::{adv_train_images, evaluate_mask_exact, synth_corpus, MaskObjective};
use advlab::lin_data::{sample_dataset, DistributionSpec};
use advlab::maxmargin::margin_bounds;
use advlab::theory::{susceptibility_bounds, TheoryParams};
use advlab::RngSeed;

use crate::config::{ExperimentConfig, ExperimentKind};

/// Derivation tag separating the image-lab test corpus stream from the
/// training corpus stream of the same seed.
const TEST_CORPUS_TAG: u64 = 0x7357;

/// One emitted CSV row.
#[derive(Debug, Clone)]
pub struct OutRow {
    pub experiment: &'static str,
    pub row: MetricsRow,
    pub wall_ms: u128,
}

/// Everything a run produced.
#[derive(Debug, Default)]
pub struct RunOutcome {
    pub rows: Vec<OutRow>,
    pub errors: Vec<String>,
    /// Human-readable coverage/trend summaries, printed to stdout.
    pub summary: Vec<String>,
}

pub fn run(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let outcome = match cfg.kind {
        ExperimentKind::EpsSweep => sweep_budgets(cfg, "eps_sweep", true),
        ExperimentKind::Decomposition => sweep_budgets(cfg, "decomposition", false),
        ExperimentKind::OverparamSweep => sweep_dimension_or_samples(cfg, true),
        ExperimentKind::SamplesizeSweep => sweep_dimension_or_samples(cfg, false),
        ExperimentKind::BoundsCheck => bounds_check(cfg),
        ExperimentKind::ImageLab => image_lab(cfg),
    };
    Ok(outcome)
}

/// Writes `outcome.rows` as CSV with the fixed column order.
pub fn write_csv(outcome: &RunOutcome, path: &Path) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::BufWriter::new(
        std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?,
    );
    writeln!(out, "experiment,{},wall_time_ms", MetricsRow::CSV_HEADER)?;
    for r in &outcome.rows {
        writeln!(out, "{},{},{}", r.experiment, r.row.csv_line(), r.wall_ms)?;
    }
    out.flush()?;
    Ok(())
}

fn spec_of(cfg: &ExperimentConfig, d: usize) -> Result<DistributionSpec, advlab::Error> {
    DistributionSpec::new(cfg.r, cfg.sigma, d)
}

/// eps_sweep and decomposition: one unit per (seed, training budget).
/// The eps sweep prepends the zero-budget baseline so gap columns can be
/// derived from the rows.
fn sweep_budgets(cfg: &ExperimentConfig, name: &'static str, with_baseline: bool) -> RunOutcome {
    let mut grid = cfg.eps_tr_grid.clone();
    if with_baseline && !grid.contains(&0.0) {
        grid.insert(0, 0.0);
    }
    let units: Vec<(u64, f64)> = cfg
        .seeds
        .iter()
        .flat_map(|&s| grid.iter().map(move |&e| (s, e)))
        .collect();
    let results: Vec<Result<OutRow, String>> = units
        .par_iter()
        .map(|&(seed, eps_tr)| {
            let t0 = Instant::now();
            let spec = spec_of(cfg, cfg.d).map_err(|e| format!("{name} seed {seed}: {e}"))?;
            let data = sample_dataset(spec, cfg.n, RngSeed(seed))
                .map_err(|e| format!("{name} seed {seed}: {e}"))?;
            let mut points =
                decomposition_curve(&data, &[eps_tr], cfg.eps_te, cfg.n_mc, RngSeed(seed), cfg.delta);
            let (_, row) = points.pop().expect("one grid point");
            let row =
                row.map_err(|e| format!("{name} seed {seed} eps_tr {eps_tr}: {e}"))?;
            Ok(OutRow { experiment: name, row, wall_ms: t0.elapsed().as_millis() })
        })
        .collect();
    collect_rows(results)
}

/// overparam_sweep (vary d at fixed n) and samplesize_sweep (vary n at
/// fixed d): one unit per (seed, grid value, budget in {0, eps_tr}).
fn sweep_dimension_or_samples(cfg: &ExperimentConfig, vary_d: bool) -> RunOutcome {
    let name: &'static str = if vary_d { "overparam_sweep" } else { "samplesize_sweep" };
    let grid: Vec<usize> = if vary_d { cfg.d_grid.clone() } else { cfg.n_grid.clone() };
    let budgets: Vec<f64> =
        if cfg.eps_tr == 0.0 { vec![0.0] } else { vec![0.0, cfg.eps_tr] };
    let units: Vec<(u64, usize, f64)> = cfg
        .seeds
        .iter()
        .flat_map(|&s| {
            let budgets = budgets.clone();
            grid.iter()
                .flat_map(move |&g| budgets.clone().into_iter().map(move |e| (s, g, e)))
                .collect::<Vec<_>>()
        })
        .collect();
    let results: Vec<Result<OutRow, String>> = units
        .par_iter()
        .map(|&(seed, g, eps_tr)| {
            let t0 = Instant::now();
            let (d, n) = if vary_d { (g, cfg.n) } else { (cfg.d, g) };
            let ctx = format!("{name} seed {seed} d {d} n {n} eps_tr {eps_tr}");
            let spec = spec_of(cfg, d).map_err(|e| format!("{ctx}: {e}"))?;
            let data = sample_dataset(spec, n, RngSeed(seed)).map_err(|e| format!("{ctx}: {e}"))?;
            let mut points =
                decomposition_curve(&data, &[eps_tr], cfg.eps_te, cfg.n_mc, RngSeed(seed), cfg.delta);
            let (_, row) = points.pop().expect("one grid point");
            let row = row.map_err(|e| format!("{ctx}: {e}"))?;
            Ok(OutRow { experiment: name, row, wall_ms: t0.elapsed().as_millis() })
        })
        .collect();
    collect_rows(results)
}

/// Margin-interval and susceptibility-interval coverage across seeds.
fn bounds_check(cfg: &ExperimentConfig) -> RunOutcome {
    let units: Vec<(u64, f64)> = cfg
        .seeds
        .iter()
        .flat_map(|&s| cfg.eps_tr_grid.iter().map(move |&e| (s, e)))
        .collect();
    let results: Vec<Result<OutRow, String>> = units
        .par_iter()
        .map(|&(seed, eps_tr)| {
            let t0 = Instant::now();
            let ctx = format!("bounds_check seed {seed} eps_tr {eps_tr}");
            let spec = spec_of(cfg, cfg.d).map_err(|e| format!("{ctx}: {e}"))?;
            let data = sample_dataset(spec, cfg.n, RngSeed(seed)).map_err(|e| format!("{ctx}: {e}"))?;
            let mut points =
                decomposition_curve(&data, &[eps_tr], cfg.eps_te, cfg.n_mc, RngSeed(seed), cfg.delta);
            let (_, row) = points.pop().expect("one grid point");
            let row = row.map_err(|e| format!("{ctx}: {e}"))?;
            Ok(OutRow { experiment: "bounds_check", row, wall_ms: t0.elapsed().as_millis() })
        })
        .collect();
    let mut outcome = collect_rows(results);
    outcome.summary = bounds_summary(cfg, &outcome.rows);
    outcome
}

/// Coverage statistics for the bounds-check rows.
fn bounds_summary(cfg: &ExperimentConfig, rows: &[OutRow]) -> Vec<String> {
    let mut lines = Vec::new();
    let Ok(spec) = spec_of(cfg, cfg.d) else { return lines };
    let t = (2.0 * (2.0 / cfg.delta).ln()).sqrt();
    let Ok(mb) = margin_bounds(spec, cfg.n, t) else { return lines };

    // margin coverage: one gamma per seed (it does not depend on eps_tr)
    let mut seen = std::collections::BTreeMap::new();
    for r in rows {
        seen.entry(r.row.seed).or_insert(r.row.gamma_tilde);
    }
    let inside = seen.values().filter(|&&g| g >= mb.lo && g <= mb.hi).count();
    lines.push(format!(
        "margin interval coverage: {inside}/{} seeds inside [{:.6}, {:.6}] (delta {})",
        seen.len(),
        mb.lo,
        mb.hi,
        cfg.delta
    ));

    // susceptibility coverage per row
    let mut inside = 0usize;
    let mut total = 0usize;
    for r in rows {
        let Ok(params) = TheoryParams::new(spec, cfg.n, r.row.eps_tr, cfg.eps_te, cfg.delta) else {
            continue;
        };
        let Ok(b) = susceptibility_bounds(&params) else { continue };
        total += 1;
        if r.row.suscept >= b.lo && r.row.suscept <= b.hi {
            inside += 1;
        }
    }
    lines.push(format!("susceptibility interval coverage: {inside}/{total} rows"));
    lines
}

/// Mask-budget sweep on the synthetic corpus: train at each m in the grid,
/// evaluate with the exact grid-search attack at m_te.
fn image_lab(cfg: &ExperimentConfig) -> RunOutcome {
    let units: Vec<(u64, usize)> = cfg
        .seeds
        .iter()
        .flat_map(|&s| cfg.m_grid.iter().map(move |&m| (s, m)))
        .collect();
    let results: Vec<Result<OutRow, String>> = units
        .par_iter()
        .map(|&(seed, m)| {
            let t0 = Instant::now();
            let ctx = format!("image_lab seed {seed} m {m}");
            let train = synth_corpus(cfg.n_train, cfg.height, cfg.width, RngSeed(seed))
                .map_err(|e| format!("{ctx}: {e}"))?;
            let test = synth_corpus(
                cfg.n_test,
                cfg.height,
                cfg.width,
                RngSeed(seed).derive(&[TEST_CORPUS_TAG]),
            )
            .map_err(|e| format!("{ctx}: {e}"))?;
            let tc = TrainConfig {
                lr: cfg.lr,
                max_epochs: cfg.max_epochs,
                stop_tol: 1e-12,
                seed: RngSeed(seed),
                step_rule: StepRule::LossScaled,
            };
            let (model, trace) =
                adv_train_images(&train, m, &tc, MaskObjective::LossExact, false)
                    .map_err(|e| format!("{ctx}: {e}"))?;
            if trace.diverged {
                return Err(format!("{ctx}: training diverged"));
            }
            let rep = evaluate_mask_exact(&model, &test, cfg.m_te)
                .map_err(|e| format!("{ctx}: {e}"))?;
            let row = MetricsRow {
                seed,
                n: cfg.n_train,
                d: cfg.height * cfg.width,
                r: f64::NAN,
                sigma: f64::NAN,
                eps_tr: m as f64,
                eps_te: cfg.m_te as f64,
                std_err: rep.std_err,
                rob_err: rep.rob_err,
                suscept: rep.suscept,
                gamma_tilde: f64::NAN,
                gap_lower: f64::NAN,
            };
            Ok(OutRow { experiment: "image_lab", row, wall_ms: t0.elapsed().as_millis() })
        })
        .collect();
    let mut outcome = collect_rows(results);
    outcome.summary = image_lab_summary(cfg, &outcome.rows);
    outcome
}

fn image_lab_summary(cfg: &ExperimentConfig, rows: &[OutRow]) -> Vec<String> {
    let mut lines = Vec::new();
    for &m in &cfg.m_grid {
        let vals: Vec<f64> = rows
            .iter()
            .filter(|r| r.row.eps_tr == m as f64)
            .map(|r| r.row.rob_err)
            .collect();
        if !vals.is_empty() {
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            lines.push(format!(
                "mask budget {m}: mean robust error {mean:.4} over {} seeds",
                vals.len()
            ));
        }
    }
    lines
}

fn collect_rows(results: Vec<Result<OutRow, String>>) -> RunOutcome {
    let mut outcome = RunOutcome::default();
    for r in results {
        match r {
            Ok(row) => outcome.rows.push(row),
            Err(e) => outcome.errors.push(e),
        }
    }
    outcome
}
