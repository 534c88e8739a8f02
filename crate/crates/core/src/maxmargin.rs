//! Exact hard-margin solver and the closed-form robust max-margin classifier.
//!
//! The max-l2-margin direction of labeled points equals the direction of the
//! minimum-norm point of the convex hull of the signed samples `y_i * x_i`,
//! and the margin equals that point's norm. [`solve_margin`] finds it with
//! the Mitchell-Demyanov-Malozemov pairwise update (Frank-Wolfe family),
//! certifying optimality through the duality gap between the achieved margin
//! of the current direction and the norm of the current hull point.
//!
//! On top of that, [`robust_maxmargin`] builds the classifier that maximizes
//! the worst-case margin under signal-interval perturbations of budget
//! `eps_tr`: the data is implicitly shifted toward the decision boundary and
//! the closed form `[r - 2 eps_tr, 2 gamma theta_tilde]` (normalized) applies.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};
use crate::lin_data::{DistributionSpec, LinDataset};

/// Duality-gap tolerance at which the solver certifies optimality.
pub const DUALITY_GAP_TOL: f64 = 1e-10;
/// Iteration cap for the pairwise updates.
pub const MAX_ITERS: usize = 1_000_000;
/// Scale-relative threshold below which the hull-point norm certifies
/// non-separability.
const NONSEP_TOL: f64 = 1e-9;

/// Normalized max-margin direction of the stripped (noise) coordinates and
/// the attained margin.
#[derive(Debug, Clone)]
pub struct MarginSolution {
    theta_tilde: Array1<f64>,
    gamma_tilde: f64,
}

impl MarginSolution {
    /// Unit-norm direction.
    pub fn theta_tilde(&self) -> &Array1<f64> {
        &self.theta_tilde
    }

    /// Attained minimum margin; positive on separable input.
    pub fn gamma_tilde(&self) -> f64 {
        self.gamma_tilde
    }
}

/// A unit-norm linear classifier over the full ambient space.
#[derive(Debug, Clone)]
pub struct LinearClassifier {
    theta: Array1<f64>,
}

impl LinearClassifier {
    /// Normalizes `weights` to unit l2 norm. Rejects zero or non-finite input.
    pub fn from_weights(weights: Array1<f64>) -> Result<Self> {
        if weights.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("classifier weights must be finite"));
        }
        let norm = weights.dot(&weights).sqrt();
        if norm == 0.0 {
            return Err(Error::invalid("classifier weights must be nonzero"));
        }
        Ok(Self { theta: weights / norm })
    }

    pub fn weights(&self) -> &Array1<f64> {
        &self.theta
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    /// Signed score `theta . x`.
    pub fn score(&self, x: ArrayView1<f64>) -> f64 {
        self.theta.dot(&x)
    }

    /// Cosine similarity between two classifiers (both are unit norm).
    pub fn cosine(&self, other: &LinearClassifier) -> f64 {
        self.theta.dot(&other.theta)
    }
}

/// Deviation-parameterized high-probability envelope for the noise margin:
/// `sigma * (sqrt((d-1)/n) +- (1 + t/sqrt(n)))`, each side holding with
/// probability at least `1 - 2 exp(-t^2/2)`.
#[derive(Debug, Clone, Copy)]
pub struct MarginBounds {
    pub lo: f64,
    pub hi: f64,
    pub t: f64,
}

pub fn margin_bounds(spec: DistributionSpec, n: usize, t: f64) -> Result<MarginBounds> {
    if n == 0 {
        return Err(Error::invalid("n must be >= 1"));
    }
    if !(t >= 0.0) {
        return Err(Error::invalid(format!("deviation t must be >= 0, got {t}")));
    }
    let ratio = ((spec.d - 1) as f64 / n as f64).sqrt();
    let dev = 1.0 + t / (n as f64).sqrt();
    Ok(MarginBounds { lo: spec.sigma * (ratio - dev), hi: spec.sigma * (ratio + dev), t })
}

/// Maximizes the minimum margin `min_i y_i theta . x_i` over unit-norm
/// directions. Returns the optimal direction and margin, certified to
/// [`DUALITY_GAP_TOL`]; reports [`Error::NonSeparable`] when the gap closes
/// at a non-positive margin.
pub fn solve_margin(points: ArrayView2<f64>, labels: ArrayView1<f64>) -> Result<MarginSolution> {
    let n = points.nrows();
    let dim = points.ncols();
    if n == 0 || dim == 0 {
        return Err(Error::invalid("margin problem needs at least one point and one dimension"));
    }
    if labels.len() != n {
        return Err(Error::ShapeMismatch(format!("{n} points vs {} labels", labels.len())));
    }
    if labels.iter().any(|&y| y != 1.0 && y != -1.0) {
        return Err(Error::invalid("labels must be +1 or -1"));
    }

    // signed samples z_i = y_i x_i and their Gram matrix
    let mut zs = points.to_owned();
    for (mut row, &y) in zs.rows_mut().into_iter().zip(labels.iter()) {
        row.mapv_inplace(|v| v * y);
    }
    let gram = zs.dot(&zs.t());
    let scale = (0..n).map(|i| gram[[i, i]]).fold(0.0_f64, f64::max).sqrt();
    if scale == 0.0 {
        return Err(Error::NonSeparable { margin: 0.0 });
    }

    // start from the smallest-norm signed sample
    let start = (0..n)
        .min_by(|&a, &b| gram[[a, a]].total_cmp(&gram[[b, b]]))
        .expect("nonempty");
    let mut lambda = vec![0.0_f64; n];
    lambda[start] = 1.0;
    let mut q: Vec<f64> = (0..n).map(|i| gram[[i, start]]).collect();

    let mut last_gap = f64::INFINITY;
    for iter in 0..MAX_ITERS {
        // periodic refresh kills incremental drift in q
        if iter % 4096 == 4095 {
            for i in 0..n {
                q[i] = (0..n).map(|j| gram[[i, j]] * lambda[j]).sum();
            }
        }
        let w_sq: f64 = (0..n).map(|i| lambda[i] * q[i]).sum();
        let w_norm = w_sq.max(0.0).sqrt();
        if w_norm <= NONSEP_TOL * scale {
            return Err(Error::NonSeparable { margin: w_norm });
        }

        let mut i_min = 0;
        for i in 1..n {
            if q[i] < q[i_min] {
                i_min = i;
            }
        }
        let mut i_max = usize::MAX;
        for i in 0..n {
            if lambda[i] > 0.0 && (i_max == usize::MAX || q[i] > q[i_max]) {
                i_max = i;
            }
        }
        let i_max = i_max;

        // margin bracket: q[i_min]/|w| <= gamma <= |w|
        let lower = q[i_min] / w_norm;
        let gap = w_norm - lower;
        last_gap = gap;
        if gap <= DUALITY_GAP_TOL * w_norm.max(1.0) {
            if lower <= 0.0 {
                return Err(Error::NonSeparable { margin: lower });
            }
            return Ok(finish(&zs, &lambda));
        }

        // pairwise step: shift weight from the worst active sample onto the
        // blocking one
        let d_sq = gram[[i_min, i_min]] + gram[[i_max, i_max]] - 2.0 * gram[[i_min, i_max]];
        if d_sq <= 0.0 || i_min == i_max {
            // identical support points; the bracket above is as tight as the
            // geometry allows
            if lower <= 0.0 {
                return Err(Error::NonSeparable { margin: lower });
            }
            return Ok(finish(&zs, &lambda));
        }
        let step = ((q[i_max] - q[i_min]) / d_sq).min(lambda[i_max]);
        lambda[i_min] += step;
        lambda[i_max] = (lambda[i_max] - step).max(0.0);
        for i in 0..n {
            q[i] += step * (gram[[i, i_min]] - gram[[i, i_max]]);
        }
    }
    Err(Error::IterationBudget { iters: MAX_ITERS, gap: last_gap })
}

/// Builds the final solution from the hull weights: direction `w/|w|` and
/// the margin actually attained on the input points.
fn finish(zs: &Array2<f64>, lambda: &[f64]) -> MarginSolution {
    let dim = zs.ncols();
    let mut w = Array1::zeros(dim);
    for (i, &l) in lambda.iter().enumerate() {
        if l > 0.0 {
            w.scaled_add(l, &zs.row(i));
        }
    }
    let norm = w.dot(&w).sqrt();
    let theta = w / norm;
    let gamma = zs
        .rows()
        .into_iter()
        .map(|z| z.dot(&theta))
        .fold(f64::INFINITY, f64::min);
    MarginSolution { theta_tilde: theta, gamma_tilde: gamma }
}

/// The eps_tr-robust max-margin classifier of a dataset under signal-interval
/// perturbations, via the closed form
/// `[r - 2 eps_tr, 2 gamma theta_tilde] / norm`. Equivalent to solving the
/// plain max-margin problem on the dataset shifted toward the boundary.
pub fn robust_maxmargin(data: &LinDataset, eps_tr: f64) -> Result<LinearClassifier> {
    robust_maxmargin_full(data, eps_tr).map(|(clf, _)| clf)
}

/// As [`robust_maxmargin`], additionally returning the noise-margin solution
/// that parameterizes the closed form.
pub fn robust_maxmargin_full(
    data: &LinDataset,
    eps_tr: f64,
) -> Result<(LinearClassifier, MarginSolution)> {
    let spec = data.spec();
    if !(eps_tr >= 0.0) {
        return Err(Error::invalid(format!("eps_tr must be >= 0, got {eps_tr}")));
    }
    if eps_tr >= spec.r / 2.0 {
        return Err(Error::invalid(format!(
            "eps_tr = {eps_tr} >= r/2 = {}: classifier sign would be ill-defined",
            spec.r / 2.0
        )));
    }
    let margin = solve_margin(data.stripped(), data.ys().view())?;
    let mut theta = Array1::zeros(spec.d);
    theta[0] = spec.r - 2.0 * eps_tr;
    theta
        .slice_mut(ndarray::s![1..])
        .assign(&(margin.theta_tilde() * (2.0 * margin.gamma_tilde())));
    let clf = LinearClassifier::from_weights(theta)?;
    Ok((clf, margin))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lin_data::sample_dataset;
    use crate::RngSeed;
    use ndarray::array;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn single_point_margin_is_its_norm() {
        let pts = array![[1.0, 0.0]];
        let sol = solve_margin(pts.view(), array![1.0].view()).unwrap();
        assert!((sol.gamma_tilde() - 1.0).abs() < 1e-12);
        assert!((sol.theta_tilde()[0] - 1.0).abs() < 1e-12);
        assert!(sol.theta_tilde()[1].abs() < 1e-12);
    }

    #[test]
    fn symmetric_pair() {
        let pts = array![[1.0, 0.0], [-1.0, 0.0]];
        let sol = solve_margin(pts.view(), array![1.0, -1.0].view()).unwrap();
        assert!((sol.gamma_tilde() - 1.0).abs() < 1e-12);
        assert!((sol.theta_tilde()[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn detects_non_separable_input() {
        // same point with both labels cannot be separated
        let pts = array![[1.0, 1.0], [1.0, 1.0]];
        let res = solve_margin(pts.view(), array![1.0, -1.0].view());
        assert!(matches!(res, Err(Error::NonSeparable { .. })), "got {res:?}");
    }

    #[test]
    fn attained_margin_is_feasible_and_locally_optimal() {
        let ds = sample_dataset(
            DistributionSpec::new(12.0, 1.0, 40).unwrap(),
            15,
            RngSeed(21),
        )
        .unwrap();
        let pts = ds.stripped().to_owned();
        let sol = solve_margin(pts.view(), ds.ys().view()).unwrap();

        // every point attains at least gamma (gamma is defined as the min)
        for (row, &y) in pts.rows().into_iter().zip(ds.ys()) {
            assert!(y * row.dot(sol.theta_tilde()) >= sol.gamma_tilde() - 1e-12);
        }

        // no 1e-3 perturbation of the direction improves the minimum margin
        let mut rng = RngSeed(22).rng();
        let dim = pts.ncols();
        for _ in 0..100 {
            let noise: Array1<f64> =
                Array1::from_iter((0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)));
            let nn = noise.dot(&noise).sqrt();
            let cand = sol.theta_tilde() + &(noise * (1e-3 / nn));
            let cand = &cand / cand.dot(&cand).sqrt();
            let m = pts
                .rows()
                .into_iter()
                .zip(ds.ys())
                .map(|(row, &y)| y * row.dot(&cand))
                .fold(f64::INFINITY, f64::min);
            assert!(m <= sol.gamma_tilde() + 1e-9, "perturbation improved margin to {m}");
        }
    }

    #[test]
    fn relabel_negate_symmetry() {
        let ds = sample_dataset(
            DistributionSpec::new(6.0, 1.0, 30).unwrap(),
            12,
            RngSeed(77),
        )
        .unwrap();
        let pts = ds.stripped().to_owned();
        let sol = solve_margin(pts.view(), ds.ys().view()).unwrap();
        let neg_pts = pts.mapv(|v| -v);
        let neg_ys = ds.ys().mapv(|y| -y);
        let neg = solve_margin(neg_pts.view(), neg_ys.view()).unwrap();
        assert!((sol.gamma_tilde() - neg.gamma_tilde()).abs() < 1e-9);
    }

    #[test]
    fn margin_bounds_arithmetic() {
        let spec = DistributionSpec::new(1.0, 1.0, 101).unwrap();
        let b = margin_bounds(spec, 25, 0.0).unwrap();
        assert!((b.hi - 3.0).abs() < 1e-12);
        assert!((b.lo - 1.0).abs() < 1e-12);

        let spec = DistributionSpec::new(1.0, 2.0, 901).unwrap();
        let b = margin_bounds(spec, 100, 10.0).unwrap();
        assert!((b.hi - 10.0).abs() < 1e-12);
        assert!((b.lo - 2.0).abs() < 1e-12);

        assert!(margin_bounds(spec, 0, 1.0).is_err());
        assert!(margin_bounds(spec, 5, -1.0).is_err());
    }

    #[test]
    fn robust_maxmargin_closed_form_substitution() {
        // r=12, eps_tr=4 gives head weight 4; with gamma=2 the tail weight is
        // 4*theta_tilde, so the normalized head is 1/sqrt(2)
        let ds = sample_dataset(
            DistributionSpec::new(12.0, 1.0, 30).unwrap(),
            10,
            RngSeed(5),
        )
        .unwrap();
        let (clf, margin) = robust_maxmargin_full(&ds, 4.0).unwrap();
        let g = margin.gamma_tilde();
        let z = ((12.0 - 8.0_f64).powi(2) + 4.0 * g * g).sqrt();
        assert!((clf.weights()[0] - 4.0 / z).abs() < 1e-12);
        for j in 1..30 {
            let want = 2.0 * g * margin.theta_tilde()[j - 1] / z;
            assert!((clf.weights()[j] - want).abs() < 1e-12);
        }
        let norm: f64 = clf.weights().dot(clf.weights());
        assert!((norm - 1.0).abs() < 1e-10);
    }

    #[test]
    fn rejects_budget_at_half_separation() {
        let ds = sample_dataset(
            DistributionSpec::new(12.0, 1.0, 30).unwrap(),
            10,
            RngSeed(5),
        )
        .unwrap();
        assert!(robust_maxmargin(&ds, 6.0).is_err());
        assert!(robust_maxmargin(&ds, -0.5).is_err());
        assert!(robust_maxmargin(&ds, 5.999).is_ok());
    }

    #[test]
    fn shift_equivalence() {
        // the closed form equals the max margin of the explicitly shifted
        // dataset (shift every sample toward the boundary by y*eps_tr*e1)
        let spec = DistributionSpec::new(12.0, 1.0, 50).unwrap();
        let ds = sample_dataset(spec, 20, RngSeed(42)).unwrap();
        let eps = 3.0;
        let clf = robust_maxmargin(&ds, eps).unwrap();

        let mut shifted = ds.xs().clone();
        for (mut row, &y) in shifted.rows_mut().into_iter().zip(ds.ys()) {
            row[0] -= y * eps;
        }
        let sol = solve_margin(shifted.view(), ds.ys().view()).unwrap();
        let direct = LinearClassifier::from_weights(sol.theta_tilde().clone()).unwrap();
        assert!(
            clf.cosine(&direct) > 1.0 - 1e-6,
            "cosine = {}",
            clf.cosine(&direct)
        );
    }

    #[test]
    fn signal_weight_decreases_with_budget() {
        let spec = DistributionSpec::new(12.0, 1.0, 60).unwrap();
        let ds = sample_dataset(spec, 25, RngSeed(9)).unwrap();
        let mut prev = f64::INFINITY;
        for k in 0..6 {
            let eps = k as f64;
            let clf = robust_maxmargin(&ds, eps).unwrap();
            assert!(clf.weights()[0] > 0.0);
            assert!(clf.weights()[0] < prev, "head weight not decreasing at eps={eps}");
            prev = clf.weights()[0];
        }
    }

    #[test]
    fn classifier_normalization_and_validation() {
        assert!(LinearClassifier::from_weights(array![0.0, 0.0]).is_err());
        assert!(LinearClassifier::from_weights(array![f64::NAN, 1.0]).is_err());
        let c = LinearClassifier::from_weights(array![3.0, 4.0]).unwrap();
        assert!((c.weights()[0] - 0.6).abs() < 1e-15);
        assert!((c.weights()[1] - 0.8).abs() < 1e-15);
    }
}
