//! The synthetic signal-plus-Gaussian distribution and dataset containers.
//!
//! A sample is `x = [y * r/2, g]` with label `y` drawn uniformly from
//! {+1, -1} and `g` an isotropic Gaussian in the remaining `d - 1`
//! coordinates. The first coordinate carries the entire class signal; the
//! rest is noise. Sampling is a pure function of `(spec, n, seed)`.

use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;
use std::io::Write;

use crate::error::{Error, Result};
use crate::rng::{stream, RngSeed};

/// Parameters of the sampling distribution: class separation `r`, noise
/// standard deviation `sigma`, ambient dimension `d`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistributionSpec {
    pub r: f64,
    pub sigma: f64,
    pub d: usize,
}

impl DistributionSpec {
    pub fn new(r: f64, sigma: f64, d: usize) -> Result<Self> {
        if !(r.is_finite() && r > 0.0) {
            return Err(Error::invalid(format!("separation r must be positive, got {r}")));
        }
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::invalid(format!("noise sigma must be positive, got {sigma}")));
        }
        if d < 2 {
            return Err(Error::invalid(format!("dimension d must be >= 2, got {d}")));
        }
        Ok(Self { r, sigma, d })
    }
}

/// A sampled dataset. Row `i` of `xs` is the covariate vector of sample `i`;
/// its first coordinate always equals `ys[i] * r/2` exactly.
#[derive(Debug, Clone)]
pub struct LinDataset {
    xs: Array2<f64>,
    ys: Array1<f64>,
    spec: DistributionSpec,
}

impl LinDataset {
    /// Builds a dataset from raw parts, enforcing the container invariants:
    /// labels in {+1, -1}, first coordinate `y * r/2` exactly, `n >= 1`.
    pub fn from_parts(xs: Array2<f64>, ys: Array1<f64>, spec: DistributionSpec) -> Result<Self> {
        if xs.nrows() != ys.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} rows vs {} labels",
                xs.nrows(),
                ys.len()
            )));
        }
        if xs.nrows() == 0 {
            return Err(Error::invalid("dataset must contain at least one sample"));
        }
        if xs.ncols() != spec.d {
            return Err(Error::ShapeMismatch(format!(
                "xs has {} columns, spec.d = {}",
                xs.ncols(),
                spec.d
            )));
        }
        for (i, (&y, row)) in ys.iter().zip(xs.rows()).enumerate() {
            if y != 1.0 && y != -1.0 {
                return Err(Error::invalid(format!("label {i} is {y}, expected +1 or -1")));
            }
            if row[0] != y * spec.r / 2.0 {
                return Err(Error::invalid(format!(
                    "sample {i}: first coordinate {} != y*r/2 = {}",
                    row[0],
                    y * spec.r / 2.0
                )));
            }
        }
        Ok(Self { xs, ys, spec })
    }

    pub fn xs(&self) -> &Array2<f64> {
        &self.xs
    }

    pub fn ys(&self) -> &Array1<f64> {
        &self.ys
    }

    pub fn spec(&self) -> DistributionSpec {
        self.spec
    }

    pub fn n(&self) -> usize {
        self.xs.nrows()
    }

    /// The covariates with the signal coordinate stripped: an `n x (d-1)`
    /// view of the Gaussian part.
    pub fn stripped(&self) -> ArrayView2<'_, f64> {
        self.xs.slice(ndarray::s![.., 1..])
    }

    /// Applies an orthogonal change of basis `z = Q x` to every sample and
    /// returns the transformed covariate matrix. The signal direction of the
    /// transformed data is the first column of `Q`; the transformed samples
    /// no longer satisfy this container's axis-aligned invariant, so a plain
    /// matrix is returned. `Q` must be `d x d` orthogonal.
    pub fn rotated(&self, q: &Array2<f64>) -> Result<Array2<f64>> {
        let d = self.spec.d;
        if q.nrows() != d || q.ncols() != d {
            return Err(Error::ShapeMismatch(format!(
                "rotation is {}x{}, expected {d}x{d}",
                q.nrows(),
                q.ncols()
            )));
        }
        let gram = q.t().dot(q);
        for i in 0..d {
            for j in 0..d {
                let expect = if i == j { 1.0 } else { 0.0 };
                if (gram[[i, j]] - expect).abs() > 1e-10 {
                    return Err(Error::invalid("rotation matrix is not orthogonal"));
                }
            }
        }
        Ok(self.xs.dot(&q.t()))
    }

    /// Writes the dataset as CSV with header `y,x_0,...,x_{d-1}`.
    pub fn to_csv<W: Write>(&self, mut out: W) -> Result<()> {
        write!(out, "y")?;
        for j in 0..self.spec.d {
            write!(out, ",x_{j}")?;
        }
        out.write_all(b"\n")?;
        for (y, row) in self.ys.iter().zip(self.xs.rows()) {
            write!(out, "{y}")?;
            for v in row {
                write!(out, ",{v}")?;
            }
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Draws `n` i.i.d. samples. Labels are equiprobable; per sample the label
/// is drawn first, then the `d - 1` noise coordinates in order, so the
/// layout of the stream is fixed and seed-reproducible.
pub fn sample_dataset(spec: DistributionSpec, n: usize, seed: RngSeed) -> Result<LinDataset> {
    if n == 0 {
        return Err(Error::invalid("sample count n must be >= 1"));
    }
    let mut rng = seed.stream(stream::DATASET, &[]);
    let mut xs = Array2::zeros((n, spec.d));
    let mut ys = Array1::zeros(n);
    for i in 0..n {
        let y: f64 = if rng.gen::<bool>() { 1.0 } else { -1.0 };
        ys[i] = y;
        xs[[i, 0]] = y * spec.r / 2.0;
        for j in 1..spec.d {
            let g: f64 = rng.sample(StandardNormal);
            xs[[i, j]] = spec.sigma * g;
        }
    }
    LinDataset::from_parts(xs, ys, spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn spec(r: f64, sigma: f64, d: usize) -> DistributionSpec {
        DistributionSpec::new(r, sigma, d).unwrap()
    }

    #[test]
    fn rejects_bad_spec() {
        assert!(DistributionSpec::new(0.0, 1.0, 10).is_err());
        assert!(DistributionSpec::new(1.0, -1.0, 10).is_err());
        assert!(DistributionSpec::new(1.0, 1.0, 1).is_err());
    }

    #[test]
    fn rejects_empty_dataset() {
        assert!(sample_dataset(spec(12.0, 1.0, 10), 0, RngSeed(1)).is_err());
    }

    #[test]
    fn signal_coordinate_is_exact() {
        let ds = sample_dataset(spec(12.0, 1.0, 1000), 50, RngSeed(3)).unwrap();
        for (&y, row) in ds.ys().iter().zip(ds.xs().rows()) {
            assert_eq!(row[0], y * 6.0);
            assert!(y == 1.0 || y == -1.0);
        }
    }

    #[test]
    fn tiny_dataset_matches_definition() {
        let ds = sample_dataset(spec(2.0, 1.0, 2), 1, RngSeed(99)).unwrap();
        let x = ds.xs().row(0);
        assert_eq!(x[0], ds.ys()[0]);
        assert_eq!(x[0].signum(), ds.ys()[0]);
    }

    #[test]
    fn seeded_sampling_is_reproducible() {
        let a = sample_dataset(spec(6.0, 2.0, 40), 25, RngSeed(7)).unwrap();
        let b = sample_dataset(spec(6.0, 2.0, 40), 25, RngSeed(7)).unwrap();
        assert_eq!(a.xs(), b.xs());
        assert_eq!(a.ys(), b.ys());
        let c = sample_dataset(spec(6.0, 2.0, 40), 25, RngSeed(8)).unwrap();
        assert_ne!(a.xs(), c.xs());
    }

    #[test]
    fn labels_roughly_balanced() {
        let ds = sample_dataset(spec(6.0, 1.0, 2), 10_000, RngSeed(11)).unwrap();
        let frac_pos = ds.ys().iter().filter(|&&y| y > 0.0).count() as f64 / 10_000.0;
        assert!((frac_pos - 0.5).abs() < 0.02, "fraction(+1) = {frac_pos}");
    }

    #[test]
    fn conditional_mean_and_noise_moments() {
        // r=6: the first coordinate given y=+1 is exactly 3; noise moments
        // obey the law of large numbers at n*(d-1) >= 1e5.
        let ds = sample_dataset(spec(6.0, 1.0, 100), 10_000, RngSeed(5)).unwrap();
        let n = ds.n() as f64;
        let mut sum_pos = 0.0;
        let mut n_pos = 0.0;
        for (&y, row) in ds.ys().iter().zip(ds.xs().rows()) {
            if y > 0.0 {
                sum_pos += row[0];
                n_pos += 1.0;
            }
        }
        assert!((sum_pos / n_pos - 3.0).abs() < 3.0 / n.sqrt());

        let noise = ds.stripped();
        let count = (noise.nrows() * noise.ncols()) as f64;
        let mean = noise.sum() / count;
        let var = noise.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / count;
        assert!(mean.abs() < 4.0 / count.sqrt(), "noise mean {mean}");
        assert!((var - 1.0).abs() < 0.1, "noise variance {var}");
        assert!((noise.iter().map(|v| v * v).sum::<f64>() / count - 1.0).abs() < 0.05);
    }

    #[test]
    fn from_parts_rejects_broken_invariants() {
        let s = spec(2.0, 1.0, 2);
        let xs = array![[1.0, 0.3], [-0.9, 0.1]];
        let ys = array![1.0, -1.0];
        // second row's first coordinate should be exactly -1
        assert!(LinDataset::from_parts(xs, ys, s).is_err());
        let xs = array![[1.0, 0.3]];
        let ys = array![2.0];
        assert!(LinDataset::from_parts(xs, ys, s).is_err());
    }

    #[test]
    fn rotation_requires_orthogonality() {
        let ds = sample_dataset(spec(2.0, 1.0, 3), 4, RngSeed(1)).unwrap();
        let skew = array![[1.0, 0.1, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(ds.rotated(&skew).is_err());

        // permutation matrix is orthogonal; norms are preserved
        let perm = array![[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]];
        let rot = ds.rotated(&perm).unwrap();
        for (a, b) in ds.xs().rows().into_iter().zip(rot.rows()) {
            let na: f64 = a.iter().map(|v| v * v).sum();
            let nb: f64 = b.iter().map(|v| v * v).sum();
            assert!((na - nb).abs() < 1e-12);
        }
    }

    #[test]
    fn csv_layout() {
        let ds = sample_dataset(spec(2.0, 1.0, 3), 2, RngSeed(4)).unwrap();
        let mut buf = Vec::new();
        ds.to_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "y,x_0,x_1,x_2");
        assert_eq!(lines.count(), 2);
    }
}
