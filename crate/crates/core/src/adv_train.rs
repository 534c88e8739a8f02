//! Adversarial logistic regression with exact inner maximization.
//!
//! For the two linear perturbation sets studied here the worst-case point of
//! a sample has a closed form, so each training step solves the inner
//! maximization exactly and then takes a full-batch gradient step on the
//! robust logistic loss. On separable data the normalized iterate drifts
//! toward the robust max-margin direction; convergence is logarithmic in the
//! epoch count for a constant step size, so the trainer also offers a
//! loss-scaled step rule that reaches the same limit direction in far fewer
//! epochs.

use ndarray::{Array1, ArrayView1};
use std::io::Write;

use crate::error::{Error, Result};
use crate::lin_data::LinDataset;
use crate::maxmargin::LinearClassifier;
use crate::rng::RngSeed;

/// A perturbation family with budget `eps`.
///
/// `SignalInterval` moves mass only along the first coordinate (the signal
/// direction); `L1Ball` allows any perturbation of l1 norm at most `eps`,
/// whose worst case against a linear model is concentrated on the single
/// coordinate where the model weight is largest in magnitude.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PerturbationSet {
    SignalInterval { eps: f64 },
    L1Ball { eps: f64 },
}

impl PerturbationSet {
    pub fn signal_interval(eps: f64) -> Result<Self> {
        if !(eps >= 0.0 && eps.is_finite()) {
            return Err(Error::invalid(format!("budget eps must be >= 0, got {eps}")));
        }
        Ok(Self::SignalInterval { eps })
    }

    pub fn l1_ball(eps: f64) -> Result<Self> {
        if !(eps >= 0.0 && eps.is_finite()) {
            return Err(Error::invalid(format!("budget eps must be >= 0, got {eps}")));
        }
        Ok(Self::L1Ball { eps })
    }

    pub fn eps(&self) -> f64 {
        match *self {
            Self::SignalInterval { eps } | Self::L1Ball { eps } => eps,
        }
    }

    /// Index of the coordinate the worst-case perturbation acts on, given
    /// model weights. Ties in the l1 case go to the lowest index.
    pub(crate) fn attack_coordinate(&self, theta: ArrayView1<f64>) -> usize {
        match self {
            Self::SignalInterval { .. } => 0,
            Self::L1Ball { .. } => {
                let mut best = 0;
                let mut best_abs = theta[0].abs();
                for (j, &v) in theta.iter().enumerate().skip(1) {
                    if v.abs() > best_abs {
                        best = j;
                        best_abs = v.abs();
                    }
                }
                best
            }
        }
    }
}

/// sign with the documented tie-break sign(0) = +1.
fn sign_pos(v: f64) -> f64 {
    if v < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// The point of the perturbation set that minimizes `y * theta . x'`
/// (equivalently maximizes any loss decreasing in the signed score).
/// SignalInterval: `x - y eps sign(theta_1) e_1`. L1Ball: the same shift on
/// the max-|weight| coordinate.
pub fn worst_case_point(
    x: ArrayView1<f64>,
    y: f64,
    theta: ArrayView1<f64>,
    pert: PerturbationSet,
) -> Array1<f64> {
    let j = pert.attack_coordinate(theta);
    let mut out = x.to_owned();
    out[j] -= y * pert.eps() * sign_pos(theta[j]);
    out
}

/// Step-size rule for the full-batch updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StepRule {
    /// `theta -= lr * grad`. The protocol default.
    #[default]
    Constant,
    /// `theta -= (lr / robust_loss) * grad`. Counteracts the exponentially
    /// vanishing gradient on separable data; same limit direction, far
    /// faster directional convergence.
    LossScaled,
}

/// Training hyperparameters.
#[derive(Debug, Clone, Copy)]
pub struct TrainConfig {
    pub lr: f64,
    pub max_epochs: usize,
    /// Relative robust-loss decrease over 100 epochs below which training
    /// stops.
    pub stop_tol: f64,
    pub seed: RngSeed,
    pub step_rule: StepRule,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            max_epochs: 100_000,
            stop_tol: 1e-10,
            seed: RngSeed(0),
            step_rule: StepRule::Constant,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(format!("lr must be positive, got {}", self.lr)));
        }
        if self.max_epochs == 0 {
            return Err(Error::invalid("max_epochs must be >= 1"));
        }
        if !(self.stop_tol > 0.0) {
            return Err(Error::invalid("stop_tol must be positive"));
        }
        Ok(())
    }
}

/// One logged snapshot of the optimization.
#[derive(Debug, Clone, Copy)]
pub struct TraceRecord {
    pub epoch: usize,
    pub robust_loss: f64,
    /// Worst-case margin of the normalized iterate.
    pub margin: f64,
    /// Cosine to the supplied reference direction; NaN when none was given.
    pub cosine_to_ref: f64,
}

/// Convergence diagnostics of a training run.
#[derive(Debug, Clone)]
pub struct TrainTrace {
    pub records: Vec<TraceRecord>,
    pub epochs_run: usize,
    pub converged: bool,
    /// Robust loss increased persistently: the step size is too large.
    pub diverged: bool,
    /// Loss plateaued at or above ln 2: no positive-robust-margin direction.
    pub non_separable: bool,
}

impl TrainTrace {
    /// CSV export with header `epoch,robust_loss,margin,cosine_to_ref`.
    pub fn to_csv<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(b"epoch,robust_loss,margin,cosine_to_ref\n")?;
        for r in &self.records {
            writeln!(out, "{},{},{},{}", r.epoch, r.robust_loss, r.margin, r.cosine_to_ref)?;
        }
        Ok(())
    }
}

/// Numerically stable log(1 + exp(u)).
fn softplus(u: f64) -> f64 {
    if u > 35.0 {
        u
    } else if u < -35.0 {
        u.exp()
    } else {
        u.exp().ln_1p()
    }
}

/// Logistic sigmoid.
fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

/// Robust logistic loss and its gradient at `theta`, with the inner
/// maximization solved exactly at `theta` (Danskin evaluation).
pub fn robust_loss_grad(
    data: &LinDataset,
    theta: ArrayView1<f64>,
    pert: PerturbationSet,
) -> (f64, Array1<f64>) {
    let n = data.n();
    let xs = data.xs();
    let ys = data.ys();
    let j = pert.attack_coordinate(theta);
    let shift = pert.eps() * sign_pos(theta[j]);

    let mut loss = 0.0;
    let mut grad = Array1::zeros(theta.len());
    for i in 0..n {
        let y = ys[i];
        let row = xs.row(i);
        // worst-case score y theta.x' = y theta.x - eps |theta_j|
        let z = y * row.dot(&theta) - theta[j] * shift;
        loss += softplus(-z);
        let w = sigmoid(-z) * y / n as f64;
        grad.scaled_add(-w, &row);
        grad[j] += w * y * shift;
    }
    (loss / n as f64, grad)
}

/// Adversarial logistic regression: full-batch gradient descent on the
/// robust loss from `theta = 0`, returning the normalized final iterate and
/// a convergence trace.
pub fn adv_logistic_regression(
    data: &LinDataset,
    pert: PerturbationSet,
    cfg: &TrainConfig,
) -> Result<(LinearClassifier, TrainTrace)> {
    adv_logistic_regression_with_reference(data, pert, cfg, None)
}

/// As [`adv_logistic_regression`], additionally stopping as soon as the
/// iterate's cosine to `reference` exceeds `1 - 1e-4` and logging that
/// cosine in the trace.
pub fn adv_logistic_regression_with_reference(
    data: &LinDataset,
    pert: PerturbationSet,
    cfg: &TrainConfig,
    reference: Option<&LinearClassifier>,
) -> Result<(LinearClassifier, TrainTrace)> {
    cfg.validate()?;
    let d = data.spec().d;
    let n = data.n();
    let mut theta: Array1<f64> = Array1::zeros(d);

    let log_stride = (cfg.max_epochs / 2000).max(1);
    let check_stride = 100;
    let mut records = Vec::new();
    let mut prev_check_loss = f64::INFINITY;
    let mut best_loss = f64::INFINITY;
    let mut rising_epochs = 0usize;
    let mut converged = false;
    let mut diverged = false;
    let mut non_separable = false;
    let mut last_loss = f64::INFINITY;
    let mut epochs_run = 0;

    for epoch in 0..cfg.max_epochs {
        let (loss, grad) = robust_loss_grad(data, theta.view(), pert);
        last_loss = loss;
        epochs_run = epoch + 1;

        if !loss.is_finite() {
            diverged = true;
            break;
        }
        if loss > best_loss * (1.0 + 1e-12) {
            rising_epochs += 1;
            if rising_epochs > 200 {
                diverged = true;
                break;
            }
        } else {
            rising_epochs = 0;
            best_loss = loss;
        }

        if epoch % log_stride == 0 {
            records.push(snapshot(epoch, loss, &theta, data, pert, reference));
        }

        if epoch % check_stride == 0 {
            if let Some(r) = reference {
                let norm = theta.dot(&theta).sqrt();
                if norm > 0.0 && theta.dot(r.weights()) / norm > 1.0 - 1e-4 {
                    converged = true;
                    break;
                }
            }
            if prev_check_loss.is_finite() {
                let rel = (prev_check_loss - loss) / prev_check_loss.abs().max(f64::MIN_POSITIVE);
                if rel >= 0.0 && rel < cfg.stop_tol {
                    converged = true;
                    if loss >= std::f64::consts::LN_2 {
                        non_separable = true;
                    }
                    break;
                }
            }
            prev_check_loss = loss;
        }

        let scale = match cfg.step_rule {
            StepRule::Constant => cfg.lr,
            StepRule::LossScaled => cfg.lr / loss.max(f64::MIN_POSITIVE),
        };
        theta.scaled_add(-scale, &grad);
    }

    records.push(snapshot(epochs_run.saturating_sub(1), last_loss, &theta, data, pert, reference));

    let clf = LinearClassifier::from_weights(theta).map_err(|_| {
        Error::invalid(format!(
            "training produced a zero direction after {epochs_run} epochs on n={n} samples"
        ))
    })?;
    Ok((
        clf,
        TrainTrace { records, epochs_run, converged, diverged, non_separable },
    ))
}

fn snapshot(
    epoch: usize,
    loss: f64,
    theta: &Array1<f64>,
    data: &LinDataset,
    pert: PerturbationSet,
    reference: Option<&LinearClassifier>,
) -> TraceRecord {
    let norm = theta.dot(theta).sqrt();
    let (margin, cosine) = if norm == 0.0 {
        (f64::NEG_INFINITY, f64::NAN)
    } else {
        let unit = theta / norm;
        let j = pert.attack_coordinate(unit.view());
        let shift = pert.eps() * sign_pos(unit[j]);
        let margin = data
            .xs()
            .rows()
            .into_iter()
            .zip(data.ys())
            .map(|(row, &y)| y * row.dot(&unit) - unit[j] * shift)
            .fold(f64::INFINITY, f64::min);
        let cosine = reference.map_or(f64::NAN, |r| unit.dot(r.weights()));
        (margin, cosine)
    };
    TraceRecord { epoch, robust_loss: loss, margin, cosine_to_ref: cosine }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lin_data::{sample_dataset, DistributionSpec, LinDataset};
    use crate::maxmargin::robust_maxmargin;
    use ndarray::array;

    #[test]
    fn worst_case_point_signal_interval() {
        let theta = array![1.0, 0.0, 0.0];
        let x = array![6.0, 1.0, -2.0];
        let out = worst_case_point(x.view(), 1.0, theta.view(), PerturbationSet::signal_interval(2.0).unwrap());
        assert_eq!(out, array![4.0, 1.0, -2.0]);
    }

    #[test]
    fn worst_case_point_l1_picks_largest_weight() {
        let theta = array![0.1, 0.9, 0.0];
        let x = array![1.0, 1.0, 1.0];
        let out = worst_case_point(x.view(), -1.0, theta.view(), PerturbationSet::l1_ball(1.0).unwrap());
        // y=-1 moves coordinate 2 up by sign(0.9)
        assert_eq!(out, array![1.0, 2.0, 1.0]);
    }

    #[test]
    fn worst_case_point_tie_breaks() {
        // zero weights: l1 picks the lowest index, sign(0) = +1
        let theta = array![0.0, 0.0];
        let x = array![5.0, 5.0];
        let out = worst_case_point(x.view(), 1.0, theta.view(), PerturbationSet::l1_ball(1.0).unwrap());
        assert_eq!(out, array![4.0, 5.0]);
        let out = worst_case_point(x.view(), 1.0, theta.view(), PerturbationSet::signal_interval(1.0).unwrap());
        assert_eq!(out, array![4.0, 5.0]);
    }

    #[test]
    fn worst_case_point_attains_minimum_over_random_feasible_points() {
        use rand::Rng;
        let mut rng = crate::RngSeed(3).rng();
        for _ in 0..20 {
            let d = 6;
            let theta = Array1::from_iter((0..d).map(|_| rng.gen::<f64>() - 0.5));
            let x = Array1::from_iter((0..d).map(|_| rng.gen::<f64>() * 4.0 - 2.0));
            let y = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            for pert in [
                PerturbationSet::signal_interval(1.5).unwrap(),
                PerturbationSet::l1_ball(1.5).unwrap(),
            ] {
                let star = worst_case_point(x.view(), y, theta.view(), pert);
                let best = y * theta.dot(&star);
                // random feasible perturbations never score lower
                for _ in 0..5000 {
                    let mut delta = Array1::zeros(d);
                    match pert {
                        PerturbationSet::SignalInterval { eps } => {
                            delta[0] = (rng.gen::<f64>() * 2.0 - 1.0) * eps;
                        }
                        PerturbationSet::L1Ball { eps } => {
                            // random direction on the l1 sphere, random radius
                            let mut mass: Vec<f64> =
                                (0..d).map(|_| rng.gen::<f64>()).collect();
                            let tot: f64 = mass.iter().sum();
                            let radius = rng.gen::<f64>() * eps;
                            for (k, m) in mass.iter_mut().enumerate() {
                                let sgn = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                                delta[k] = sgn * radius * *m / tot;
                            }
                        }
                    }
                    let cand = y * theta.dot(&(&x + &delta));
                    assert!(cand >= best - 1e-12, "random point beat the closed form");
                }
            }
        }
    }

    fn two_point_dataset() -> LinDataset {
        let spec = DistributionSpec::new(2.0, 1.0, 2).unwrap();
        LinDataset::from_parts(
            array![[1.0, 0.0], [-1.0, 0.0]],
            array![1.0, -1.0],
            spec,
        )
        .unwrap()
    }

    #[test]
    fn symmetric_pair_converges_to_signal_axis() {
        let data = two_point_dataset();
        let cfg = TrainConfig { lr: 0.1, max_epochs: 20_000, ..Default::default() };
        let (clf, trace) =
            adv_logistic_regression(&data, PerturbationSet::signal_interval(0.0).unwrap(), &cfg)
                .unwrap();
        assert!(clf.weights()[0] > 0.999, "theta = {:?}", clf.weights());
        assert!(!trace.diverged);
        assert!(!trace.non_separable);
    }

    #[test]
    fn converges_to_robust_maxmargin_direction() {
        let spec = DistributionSpec::new(12.0, 1.0, 50).unwrap();
        let data = sample_dataset(spec, 20, crate::RngSeed(11)).unwrap();
        let eps = 3.0;
        let oracle = robust_maxmargin(&data, eps).unwrap();
        let cfg = TrainConfig {
            lr: 0.05,
            max_epochs: 30_000,
            step_rule: StepRule::LossScaled,
            ..Default::default()
        };
        let (clf, trace) = adv_logistic_regression_with_reference(
            &data,
            PerturbationSet::signal_interval(eps).unwrap(),
            &cfg,
            Some(&oracle),
        )
        .unwrap();
        assert!(clf.cosine(&oracle) > 0.99, "cosine = {}", clf.cosine(&oracle));
        assert!(!trace.diverged);
    }

    #[test]
    fn l1_and_signal_training_share_the_limit() {
        let spec = DistributionSpec::new(12.0, 1.0, 50).unwrap();
        let data = sample_dataset(spec, 20, crate::RngSeed(13)).unwrap();
        let cfg = TrainConfig {
            lr: 0.05,
            max_epochs: 20_000,
            step_rule: StepRule::LossScaled,
            ..Default::default()
        };
        let (a, _) =
            adv_logistic_regression(&data, PerturbationSet::signal_interval(3.0).unwrap(), &cfg)
                .unwrap();
        let (b, _) =
            adv_logistic_regression(&data, PerturbationSet::l1_ball(3.0).unwrap(), &cfg).unwrap();
        assert!(a.cosine(&b) > 0.999, "cosine = {}", a.cosine(&b));
    }

    #[test]
    fn gradient_matches_central_differences() {
        use rand::Rng;
        let spec = DistributionSpec::new(6.0, 1.0, 12).unwrap();
        let data = sample_dataset(spec, 8, crate::RngSeed(4)).unwrap();
        let pert = PerturbationSet::signal_interval(1.0).unwrap();
        let mut rng = crate::RngSeed(5).rng();
        for it in 0..20 {
            // keep |theta_1| away from the sign kink
            let mut theta: Array1<f64> =
                Array1::from_iter((0..12).map(|_| rng.gen::<f64>() - 0.5));
            if theta[0].abs() < 0.2 {
                theta[0] = 0.3;
            }
            let (_, grad) = robust_loss_grad(&data, theta.view(), pert);
            let mut fd = Array1::zeros(12);
            let h = 1e-6;
            for j in 0..12 {
                let mut tp = theta.clone();
                tp[j] += h;
                let (lp, _) = robust_loss_grad(&data, tp.view(), pert);
                let mut tm = theta.clone();
                tm[j] -= h;
                let (lm, _) = robust_loss_grad(&data, tm.view(), pert);
                fd[j] = (lp - lm) / (2.0 * h);
            }
            let diff = (&grad - &fd).dot(&(&grad - &fd)).sqrt();
            let denom = grad.dot(&grad).sqrt().max(1e-12);
            assert!(diff / denom < 1e-5, "iterate {it}: relative gradient error {}", diff / denom);
        }
    }

    #[test]
    fn loss_is_non_increasing_in_constant_full_batch_mode() {
        let spec = DistributionSpec::new(12.0, 1.0, 30).unwrap();
        let data = sample_dataset(spec, 10, crate::RngSeed(8)).unwrap();
        let cfg = TrainConfig { lr: 0.01, max_epochs: 5_000, ..Default::default() };
        let (_, trace) =
            adv_logistic_regression(&data, PerturbationSet::signal_interval(2.0).unwrap(), &cfg)
                .unwrap();
        let losses: Vec<f64> = trace.records.iter().map(|r| r.robust_loss).collect();
        for w in losses.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "loss increased: {} -> {}", w[0], w[1]);
        }
        assert!(!trace.diverged);
    }

    #[test]
    fn divergence_is_flagged_for_huge_steps() {
        // non-separable objective: the optimum is interior, so an oversized
        // step rate oscillates outward and the loss rises persistently
        let spec = DistributionSpec::new(2.0, 1.0, 2).unwrap();
        let data = LinDataset::from_parts(
            array![[1.0, 0.5], [-1.0, 0.4], [1.0, 0.3], [-1.0, 0.6]],
            array![1.0, -1.0, 1.0, -1.0],
            spec,
        )
        .unwrap();
        let cfg = TrainConfig { lr: 500.0, max_epochs: 5_000, ..Default::default() };
        let (_, trace) =
            adv_logistic_regression(&data, PerturbationSet::signal_interval(1.8).unwrap(), &cfg)
                .unwrap();
        assert!(trace.diverged, "expected divergence flag, trace ran {} epochs", trace.epochs_run);
    }

    #[test]
    fn non_separable_flag_when_budget_kills_margin() {
        // eps > r/2: every direction has negative worst-case margin on the
        // signal coordinate and the noise is too low-dimensional to separate
        let spec = DistributionSpec::new(2.0, 1.0, 2).unwrap();
        let data = LinDataset::from_parts(
            array![[1.0, 0.5], [-1.0, 0.4], [1.0, 0.3], [-1.0, 0.6]],
            array![1.0, -1.0, 1.0, -1.0],
            spec,
        )
        .unwrap();
        let cfg = TrainConfig { lr: 0.5, max_epochs: 60_000, stop_tol: 1e-9, ..Default::default() };
        let (_, trace) =
            adv_logistic_regression(&data, PerturbationSet::signal_interval(1.8).unwrap(), &cfg)
                .unwrap();
        assert!(
            trace.non_separable || trace.records.last().unwrap().robust_loss >= 0.5,
            "expected a non-separability signal, trace end {:?}",
            trace.records.last()
        );
    }

    #[test]
    fn implicit_bias_cosine_is_monotone_on_the_tail() {
        let spec = DistributionSpec::new(12.0, 1.0, 40).unwrap();
        let data = sample_dataset(spec, 15, crate::RngSeed(17)).unwrap();
        let oracle = robust_maxmargin(&data, 2.0).unwrap();
        let cfg = TrainConfig {
            lr: 0.05,
            max_epochs: 10_000,
            step_rule: StepRule::LossScaled,
            stop_tol: 1e-14,
            ..Default::default()
        };
        let (_, trace) = adv_logistic_regression_with_reference(
            &data,
            PerturbationSet::signal_interval(2.0).unwrap(),
            &cfg,
            Some(&oracle),
        )
        .unwrap();
        let recs: Vec<&TraceRecord> =
            trace.records.iter().filter(|r| r.cosine_to_ref.is_finite()).collect();
        let tail = &recs[recs.len() / 2..];
        for w in tail.windows(2) {
            assert!(
                w[1].cosine_to_ref >= w[0].cosine_to_ref - 1e-3,
                "cosine regressed on the tail: {} -> {}",
                w[0].cosine_to_ref,
                w[1].cosine_to_ref
            );
        }
    }

    #[test]
    fn margin_converges_to_closed_form() {
        let spec = DistributionSpec::new(12.0, 1.0, 40).unwrap();
        let data = sample_dataset(spec, 15, crate::RngSeed(19)).unwrap();
        let eps = 2.0;
        let (_, margin) = crate::maxmargin::robust_maxmargin_full(&data, eps).unwrap();
        let g = margin.gamma_tilde();
        let closed = ((spec.r - 2.0 * eps) * (spec.r - 2.0 * eps) / 4.0 + g * g).sqrt();
        let cfg = TrainConfig {
            lr: 0.05,
            max_epochs: 20_000,
            step_rule: StepRule::LossScaled,
            stop_tol: 1e-14,
            ..Default::default()
        };
        let (_, trace) =
            adv_logistic_regression(&data, PerturbationSet::signal_interval(eps).unwrap(), &cfg)
                .unwrap();
        let last = trace.records.last().unwrap();
        assert!(
            (closed - last.margin) / closed < 0.05,
            "final margin {} vs closed form {closed}",
            last.margin
        );
        // margins trend upward
        let first_finite = trace.records.iter().find(|r| r.margin.is_finite()).unwrap();
        assert!(last.margin >= first_finite.margin);
    }

    #[test]
    fn trace_csv_layout() {
        let data = two_point_dataset();
        let cfg = TrainConfig { lr: 0.1, max_epochs: 200, ..Default::default() };
        let (_, trace) =
            adv_logistic_regression(&data, PerturbationSet::signal_interval(0.0).unwrap(), &cfg)
                .unwrap();
        let mut buf = Vec::new();
        trace.to_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("epoch,robust_loss,margin,cosine_to_ref\n"));
        assert!(text.lines().count() >= 2);
    }
}
