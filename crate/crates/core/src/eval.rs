//! Exact and Monte Carlo evaluation of standard error, robust error, and
//! attack susceptibility for linear classifiers.
//!
//! The inner maximizations are solved exactly (closed form for both linear
//! perturbation sets), so the only randomness is the sample draw. Robust
//! error maximizes the classification loss over the set; susceptibility
//! maximizes the prediction-flip indicator, i.e. it counts a sample whenever
//! some point of the set changes the prediction, regardless of whether the
//! clean prediction was correct. Sampling is sharded: each shard derives its
//! own generator from the master seed, so the result is bit-identical
//! whether shards run on one thread or many, for a fixed shard count.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::adv_train::PerturbationSet;
use crate::error::{Error, Result};
use crate::lin_data::{DistributionSpec, LinDataset};
use crate::maxmargin::{robust_maxmargin_full, LinearClassifier};
use crate::rng::{stream, RngSeed};
use crate::theory::{theory_bounds, TheoryParams};

/// Default shard count; recorded in every report.
pub const DEFAULT_SHARDS: usize = 8;

/// Monte Carlo estimates for one classifier at one test budget.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    pub std_err: f64,
    pub rob_err: f64,
    pub suscept: f64,
    /// Largest binomial standard error among the three estimates.
    pub mc_std_err_of_estimates: f64,
    pub n_mc: usize,
    pub eps_te: f64,
    /// Shard count the estimate was computed with.
    pub n_shards: usize,
}

impl EvalReport {
    /// Probability that a correctly classified sample is flipped to wrong,
    /// conditioned on being correct. A correct sample flips exactly when the
    /// loss-worst point misclassifies it, so the numerator is
    /// `rob_err - std_err`.
    pub fn suscept_conditional_on_correct(&self) -> f64 {
        if self.std_err >= 1.0 {
            0.0
        } else {
            (self.rob_err - self.std_err) / (1.0 - self.std_err)
        }
    }
}

#[derive(Default, Clone, Copy)]
struct Counts {
    std: u64,
    rob: u64,
    flip: u64,
}

/// Evaluates one classifier by fresh sampling with [`DEFAULT_SHARDS`] shards.
pub fn evaluate_mc(
    theta: &LinearClassifier,
    spec: DistributionSpec,
    pert: PerturbationSet,
    n_mc: usize,
    seed: RngSeed,
) -> Result<EvalReport> {
    evaluate_mc_sharded(theta, spec, pert, n_mc, seed, DEFAULT_SHARDS)
}

/// Evaluates with an explicit shard count. Shards split `n_mc` as evenly as
/// possible; shard `s` draws from the derived stream `(seed, EVAL, s)` and
/// counts are summed in shard order.
pub fn evaluate_mc_sharded(
    theta: &LinearClassifier,
    spec: DistributionSpec,
    pert: PerturbationSet,
    n_mc: usize,
    seed: RngSeed,
    n_shards: usize,
) -> Result<EvalReport> {
    if n_mc == 0 {
        return Err(Error::invalid("n_mc must be >= 1"));
    }
    if n_shards == 0 {
        return Err(Error::invalid("n_shards must be >= 1"));
    }
    if theta.dim() != spec.d {
        return Err(Error::ShapeMismatch(format!(
            "classifier has dim {}, spec.d = {}",
            theta.dim(),
            spec.d
        )));
    }
    let eps = pert.eps();
    if eps >= spec.r / 2.0 {
        return Err(Error::invalid(format!(
            "test budget {eps} >= r/2 = {} is not a consistent perturbation",
            spec.r / 2.0
        )));
    }

    let w = theta.weights();
    let head = w[0];
    // worst-case score drop is eps * |theta_j| on the attacked coordinate
    let j_star = pert.attack_coordinate(w.view());
    let drop = eps * w[j_star].abs();

    let base = n_mc / n_shards;
    let extra = n_mc % n_shards;
    let counts: Vec<Counts> = (0..n_shards)
        .into_par_iter()
        .map(|s| {
            let quota = base + usize::from(s < extra);
            let mut rng = seed.stream(stream::EVAL, &[s as u64]);
            let mut c = Counts::default();
            let tail = &w.as_slice().expect("contiguous weights")[1..];
            for _ in 0..quota {
                let y: f64 = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                let mut dot = 0.0;
                for &wj in tail {
                    let g: f64 = rng.sample(StandardNormal);
                    dot += wj * (spec.sigma * g);
                }
                // signed clean score y theta.x; first coordinate contributes
                // theta_1 * r/2 regardless of the label
                let s_clean = head * spec.r / 2.0 + y * dot;
                let s_rob = s_clean - drop;
                if s_clean <= 0.0 {
                    c.std += 1;
                }
                if s_rob <= 0.0 {
                    c.rob += 1;
                }
                // the perturbation sweeps the signed score over
                // [s_clean - drop, s_clean + drop]; the prediction flips
                // whenever that interval crosses zero
                let flips = if s_clean > 0.0 { s_rob <= 0.0 } else { s_clean + drop > 0.0 };
                if flips {
                    c.flip += 1;
                }
            }
            c
        })
        .collect();

    let mut total = Counts::default();
    for c in counts {
        total.std += c.std;
        total.rob += c.rob;
        total.flip += c.flip;
    }
    let nf = n_mc as f64;
    let std_err = total.std as f64 / nf;
    let rob_err = total.rob as f64 / nf;
    let suscept = total.flip as f64 / nf;
    let se = [std_err, rob_err, suscept]
        .iter()
        .map(|p| (p * (1.0 - p) / nf).sqrt())
        .fold(0.0_f64, f64::max);
    Ok(EvalReport {
        std_err,
        rob_err,
        suscept,
        mc_std_err_of_estimates: se,
        n_mc,
        eps_te: eps,
        n_shards,
    })
}

/// One experiment measurement in the fixed CSV schema.
#[derive(Debug, Clone, Copy)]
pub struct MetricsRow {
    pub seed: u64,
    pub n: usize,
    pub d: usize,
    pub r: f64,
    pub sigma: f64,
    pub eps_tr: f64,
    pub eps_te: f64,
    pub std_err: f64,
    pub rob_err: f64,
    pub suscept: f64,
    pub gamma_tilde: f64,
    pub gap_lower: f64,
}

impl MetricsRow {
    pub const CSV_HEADER: &'static str =
        "seed,n,d,r,sigma,eps_tr,eps_te,std_err,rob_err,suscept,gamma_tilde,gap_lower";

    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.seed,
            self.n,
            self.d,
            self.r,
            self.sigma,
            self.eps_tr,
            self.eps_te,
            self.std_err,
            self.rob_err,
            self.suscept,
            self.gamma_tilde,
            self.gap_lower
        )
    }
}

/// Robust-error decomposition across a grid of training budgets: for each
/// `eps_tr`, fit the robust max-margin classifier and evaluate it under the
/// signal-interval attack of budget `eps_te`. Per-budget failures are
/// reported in place so a sweep never silently drops a grid point.
/// `delta` parameterizes the `gap_lower` column.
pub fn decomposition_curve(
    data: &LinDataset,
    eps_tr_grid: &[f64],
    eps_te: f64,
    n_mc: usize,
    seed: RngSeed,
    delta: f64,
) -> Vec<(f64, Result<MetricsRow>)> {
    eps_tr_grid
        .iter()
        .map(|&eps_tr| (eps_tr, decomposition_row(data, eps_tr, eps_te, n_mc, seed, delta)))
        .collect()
}

fn decomposition_row(
    data: &LinDataset,
    eps_tr: f64,
    eps_te: f64,
    n_mc: usize,
    seed: RngSeed,
    delta: f64,
) -> Result<MetricsRow> {
    let spec = data.spec();
    let (clf, margin) = robust_maxmargin_full(data, eps_tr)?;
    let pert = PerturbationSet::signal_interval(eps_te)?;
    let report = evaluate_mc(&clf, spec, pert, n_mc, seed)?;
    let gap_lower = TheoryParams::new(spec, data.n(), eps_tr, eps_te, delta)
        .and_then(|p| theory_bounds(&p))
        .map(|b| b.gap_lower)
        .unwrap_or(f64::NAN);
    Ok(MetricsRow {
        seed: seed.0,
        n: data.n(),
        d: spec.d,
        r: spec.r,
        sigma: spec.sigma,
        eps_tr,
        eps_te,
        std_err: report.std_err,
        rob_err: report.rob_err,
        suscept: report.suscept,
        gamma_tilde: margin.gamma_tilde(),
        gap_lower,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adv_train::worst_case_point;
    use crate::lin_data::sample_dataset;
    use crate::theory;
    use ndarray::Array1;

    fn spec(r: f64, sigma: f64, d: usize) -> DistributionSpec {
        DistributionSpec::new(r, sigma, d).unwrap()
    }

    fn e1(d: usize) -> LinearClassifier {
        let mut w = Array1::zeros(d);
        w[0] = 1.0;
        LinearClassifier::from_weights(w).unwrap()
    }

    #[test]
    fn ground_truth_classifier_is_perfect() {
        let s = spec(6.0, 1.0, 20);
        let pert = PerturbationSet::signal_interval(0.0).unwrap();
        let rep = evaluate_mc(&e1(20), s, pert, 20_000, RngSeed(1)).unwrap();
        assert_eq!(rep.std_err, 0.0);

        let pert = PerturbationSet::signal_interval(2.9).unwrap();
        let rep = evaluate_mc(&e1(20), s, pert, 20_000, RngSeed(1)).unwrap();
        assert_eq!(rep.rob_err, 0.0);
        assert_eq!(rep.suscept, 0.0);
    }

    #[test]
    fn rejects_inconsistent_budget_and_bad_args() {
        let s = spec(6.0, 1.0, 4);
        let pert = PerturbationSet::signal_interval(3.0).unwrap();
        assert!(evaluate_mc(&e1(4), s, pert, 100, RngSeed(0)).is_err());
        let pert = PerturbationSet::signal_interval(1.0).unwrap();
        assert!(evaluate_mc(&e1(4), s, pert, 0, RngSeed(0)).is_err());
        assert!(evaluate_mc(&e1(5), s, pert, 10, RngSeed(0)).is_err());
    }

    #[test]
    fn seed_determinism_and_shard_invariance() {
        let s = spec(6.0, 1.0, 30);
        let mut w = Array1::zeros(30);
        w[0] = 0.4;
        w[3] = 0.9;
        w[7] = -0.2;
        let clf = LinearClassifier::from_weights(w).unwrap();
        let pert = PerturbationSet::signal_interval(2.0).unwrap();
        let a = evaluate_mc(&clf, s, pert, 50_000, RngSeed(9)).unwrap();
        let b = evaluate_mc(&clf, s, pert, 50_000, RngSeed(9)).unwrap();
        assert_eq!(a, b);
        // different shard count is a different (still deterministic) stream
        let c = evaluate_mc_sharded(&clf, s, pert, 50_000, RngSeed(9), 1).unwrap();
        let d = evaluate_mc_sharded(&clf, s, pert, 50_000, RngSeed(9), 1).unwrap();
        assert_eq!(c, d);
    }

    #[test]
    fn counts_satisfy_the_decomposition_sandwich() {
        let s = spec(6.0, 1.0, 30);
        let mut w = Array1::zeros(30);
        w[0] = 0.3;
        w[5] = 1.0;
        let clf = LinearClassifier::from_weights(w).unwrap();
        for pert in [
            PerturbationSet::signal_interval(2.0).unwrap(),
            PerturbationSet::l1_ball(2.0).unwrap(),
        ] {
            let rep = evaluate_mc(&clf, s, pert, 30_000, RngSeed(2)).unwrap();
            // on counts: wrong <= robust-wrong <= wrong + flippable, and the
            // flippable band contains every correct-then-flipped sample
            assert!(rep.rob_err >= rep.std_err);
            assert!(rep.rob_err >= rep.suscept);
            assert!(rep.rob_err <= rep.std_err + rep.suscept + 1e-12);
            assert!(rep.rob_err - rep.std_err <= rep.suscept + 1e-12);
        }
    }

    #[test]
    fn streaming_scores_match_materialized_worst_case_points() {
        // replays the exact sampling stream, materializes each sample, and
        // compares against worst_case_point-based classification
        let s = spec(6.0, 1.3, 12);
        let mut w = Array1::zeros(12);
        w[0] = 0.5;
        w[2] = -1.2;
        w[9] = 0.8;
        let clf = LinearClassifier::from_weights(w).unwrap();
        let pert = PerturbationSet::l1_ball(1.7).unwrap();
        let n_mc = 5_000;
        let rep = evaluate_mc_sharded(&clf, s, pert, n_mc, RngSeed(33), 1).unwrap();

        let mut rng = RngSeed(33).stream(stream::EVAL, &[0]);
        let mut rob = 0u64;
        let mut std = 0u64;
        for _ in 0..n_mc {
            let y: f64 = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            let mut x = Array1::zeros(12);
            x[0] = y * s.r / 2.0;
            for j in 1..12 {
                let g: f64 = rng.sample(StandardNormal);
                x[j] = s.sigma * g;
            }
            if y * clf.score(x.view()) <= 0.0 {
                std += 1;
            }
            let adv = worst_case_point(x.view(), y, clf.weights().view(), pert);
            if y * clf.score(adv.view()) <= 0.0 {
                rob += 1;
            }
        }
        assert_eq!(std as f64 / n_mc as f64, rep.std_err);
        assert_eq!(rob as f64 / n_mc as f64, rep.rob_err);
    }

    #[test]
    fn monte_carlo_agrees_with_closed_forms() {
        use rand::Rng;
        let s = spec(6.0, 1.0, 100);
        let mut rng = RngSeed(41).rng();
        let n_mc = 100_000;
        let mut misses = 0usize;
        for trial in 0..100 {
            let mut w: Array1<f64> =
                Array1::from_iter((0..100).map(|_| rng.sample::<f64, _>(StandardNormal)));
            // keep a meaningful signal component
            w[0] = w[0].abs() + 0.3;
            let clf = LinearClassifier::from_weights(w).unwrap();
            let pert = PerturbationSet::signal_interval(2.0).unwrap();
            let rep = evaluate_mc(&clf, s, pert, n_mc, RngSeed(1000 + trial)).unwrap();
            let rob = theory::robust_error_general_linear(&clf, s, 2.0).unwrap();
            let std = theory::standard_error_general_linear(&clf, s).unwrap();
            let sus = theory::susceptibility_general_linear(&clf, s, 2.0).unwrap();
            let tol = 3.0 * rep.mc_std_err_of_estimates + 1e-9;
            if (rep.rob_err - rob).abs() >= tol
                || (rep.std_err - std).abs() >= tol
                || (rep.suscept - sus).abs() >= tol
            {
                misses += 1;
            }
        }
        assert!(misses <= 1, "{misses}/100 comparisons fell outside 3 standard errors");
    }

    #[test]
    fn sandwich_bounds_hold_for_reports() {
        use rand::Rng;
        let s = spec(6.0, 1.0, 50);
        let mut rng = RngSeed(4242).rng();
        for trial in 0..20 {
            let w: Array1<f64> =
                Array1::from_iter((0..50).map(|_| rng.sample::<f64, _>(StandardNormal)));
            let clf = LinearClassifier::from_weights(w).unwrap();
            let pert = PerturbationSet::signal_interval(1.5).unwrap();
            let rep = evaluate_mc(&clf, s, pert, 20_000, RngSeed(trial)).unwrap();
            assert!(rep.rob_err <= rep.std_err + rep.suscept + 1e-12);
            let floor = rep.std_err.max(rep.suscept_conditional_on_correct());
            assert!(rep.rob_err + 1e-12 >= floor, "rob {} < floor {floor}", rep.rob_err);
        }
    }

    #[test]
    fn decomposition_curve_shape_and_ordering() {
        let s = spec(12.0, 1.0, 200);
        let data = sample_dataset(s, 20, RngSeed(300)).unwrap();
        let grid = [0.0, 1.0, 3.0, 5.0];
        let rows = decomposition_curve(&data, &grid, 4.0, 20_000, RngSeed(301), 0.05);
        assert_eq!(rows.len(), 4);
        let ok: Vec<&MetricsRow> = rows.iter().map(|(_, r)| r.as_ref().unwrap()).collect();
        for (i, row) in ok.iter().enumerate() {
            assert_eq!(row.eps_tr, grid[i]);
            assert_eq!(row.d, 200);
            assert!(row.gamma_tilde > 0.0);
        }
        // single-point grid equals a direct evaluation of the standard
        // max-margin classifier
        let single = decomposition_curve(&data, &[0.0], 4.0, 20_000, RngSeed(301), 0.05);
        let row = single[0].1.as_ref().unwrap();
        let clf = crate::maxmargin::robust_maxmargin(&data, 0.0).unwrap();
        let rep = evaluate_mc(
            &clf,
            s,
            PerturbationSet::signal_interval(4.0).unwrap(),
            20_000,
            RngSeed(301),
        )
        .unwrap();
        assert_eq!(row.rob_err, rep.rob_err);
        assert_eq!(row.std_err, rep.std_err);

        // a budget past r/2 fails for that row but not the others
        let rows = decomposition_curve(&data, &[0.0, 7.0], 4.0, 1_000, RngSeed(1), 0.05);
        assert!(rows[0].1.is_ok());
        assert!(rows[1].1.is_err());
    }

    #[test]
    fn csv_row_layout() {
        let row = MetricsRow {
            seed: 3,
            n: 50,
            d: 1000,
            r: 12.0,
            sigma: 1.0,
            eps_tr: 2.0,
            eps_te: 4.0,
            std_err: 0.25,
            rob_err: 0.5,
            suscept: 0.25,
            gamma_tilde: 4.4,
            gap_lower: f64::NAN,
        };
        assert_eq!(
            row.csv_line(),
            "3,50,1000,12,1,2,4,0.25,0.5,0.25,4.4,NaN"
        );
        assert_eq!(MetricsRow::CSV_HEADER.split(',').count(), 12);
    }
}
