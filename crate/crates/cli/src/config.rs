//! Experiment configuration: desk-scale defaults per experiment kind, a
//! flat `key = value` config-file format, and flag overrides.
//!
//! Precedence: built-in defaults (desk or paper scale) < config file <
//! command-line flags.

use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};

/// The experiment families the harness can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    /// Robust-error gap against the training budget at fixed (d, n).
    EpsSweep,
    /// Error and gap against the ambient dimension at fixed n.
    OverparamSweep,
    /// Error and gap against the sample count at fixed d.
    SamplesizeSweep,
    /// Robust error decomposition across training budgets.
    Decomposition,
    /// Coverage of the margin and susceptibility intervals across seeds.
    BoundsCheck,
    /// Mask-budget sweep of adversarial logistic regression on the
    /// synthetic image corpus.
    ImageLab,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::EpsSweep => "eps_sweep",
            Self::OverparamSweep => "overparam_sweep",
            Self::SamplesizeSweep => "samplesize_sweep",
            Self::Decomposition => "decomposition",
            Self::BoundsCheck => "bounds_check",
            Self::ImageLab => "image_lab",
        }
    }
}

/// Full parameter set for one run. Fields not used by the chosen experiment
/// are ignored.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub r: f64,
    pub sigma: f64,
    pub d: usize,
    pub n: usize,
    pub eps_te: f64,
    /// Fixed training budget for the dimension/sample-size sweeps.
    pub eps_tr: f64,
    pub eps_tr_grid: Vec<f64>,
    pub d_grid: Vec<usize>,
    pub n_grid: Vec<usize>,
    pub seeds: Vec<u64>,
    pub n_mc: usize,
    pub delta: f64,
    pub out: PathBuf,
    // image-lab parameters
    pub height: usize,
    pub width: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub m_grid: Vec<usize>,
    pub m_te: usize,
    pub lr: f64,
    pub max_epochs: usize,
}

impl ExperimentConfig {
    /// Desk-scale defaults: small enough to run in seconds to a few minutes.
    pub fn desk(kind: ExperimentKind) -> Self {
        let base = Self {
            kind,
            r: 12.0,
            sigma: 1.0,
            d: 200,
            n: 20,
            eps_te: 4.0,
            eps_tr: 4.0,
            eps_tr_grid: vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0],
            d_grid: vec![50, 100, 200, 500, 1000, 2000],
            n_grid: vec![20, 50, 100, 400, 1000],
            seeds: vec![1, 2, 3, 4, 5],
            n_mc: 20_000,
            delta: 0.05,
            out: PathBuf::from("results.csv"),
            height: 16,
            width: 16,
            n_train: 20,
            n_test: 200,
            m_grid: vec![0, 2, 4, 6],
            m_te: 2,
            lr: 0.1,
            max_epochs: 6_000,
        };
        match kind {
            ExperimentKind::SamplesizeSweep => Self { d: 2000, eps_tr: 4.5, ..base },
            ExperimentKind::BoundsCheck => Self {
                r: 6.0,
                d: 1000,
                n: 50,
                eps_te: 2.5,
                eps_tr_grid: vec![0.0, 1.0, 2.0],
                seeds: (1..=50).collect(),
                delta: 0.05,
                ..base
            },
            _ => base,
        }
    }

    /// Settings matching the synthetic experiment protocols at full size.
    pub fn paper(kind: ExperimentKind) -> Self {
        let desk = Self::desk(kind);
        match kind {
            ExperimentKind::EpsSweep => {
                Self { d: 1000, n: 50, n_mc: 1_000_000, ..desk }
            }
            ExperimentKind::OverparamSweep => Self {
                n: 50,
                d_grid: vec![100, 200, 500, 1000, 2000, 5000, 10_000],
                n_mc: 1_000_000,
                ..desk
            },
            ExperimentKind::SamplesizeSweep => Self {
                d: 10_000,
                n_grid: vec![50, 100, 200, 500, 1000, 2000, 5000],
                eps_tr: 4.5,
                n_mc: 200_000,
                ..desk
            },
            ExperimentKind::Decomposition => Self {
                d: 1000,
                n: 50,
                seeds: (1..=10).collect(),
                n_mc: 1_000_000,
                ..desk
            },
            ExperimentKind::BoundsCheck => Self {
                seeds: (1..=200).collect(),
                n_mc: 100_000,
                ..desk
            },
            ExperimentKind::ImageLab => Self { n_test: 500, max_epochs: 20_000, ..desk },
        }
    }

    /// Applies `key = value` lines. Unknown keys are errors; `#` starts a
    /// comment; blank lines are skipped.
    pub fn apply_file(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected key = value, got {raw:?}", lineno + 1))?;
            self.apply_kv(key.trim(), value.trim())
                .with_context(|| format!("config line {}", lineno + 1))?;
        }
        Ok(())
    }

    fn apply_kv(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(v: &str) -> Result<T>
        where
            T::Err: std::fmt::Display,
        {
            v.parse::<T>().map_err(|e| anyhow!("cannot parse {v:?}: {e}"))
        }
        fn list<T: std::str::FromStr>(v: &str) -> Result<Vec<T>>
        where
            T::Err: std::fmt::Display,
        {
            v.split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(num::<T>)
                .collect()
        }
        match key {
            "r" => self.r = num(value)?,
            "sigma" => self.sigma = num(value)?,
            "d" => self.d = num(value)?,
            "n" => self.n = num(value)?,
            "eps_te" => self.eps_te = num(value)?,
            "eps_tr" => self.eps_tr = num(value)?,
            "eps_tr_grid" => self.eps_tr_grid = list(value)?,
            "d_grid" => self.d_grid = list(value)?,
            "n_grid" => self.n_grid = list(value)?,
            "seeds" => self.seeds = list(value)?,
            "n_mc" => self.n_mc = num(value)?,
            "delta" => self.delta = num(value)?,
            "out" => self.out = PathBuf::from(value),
            "height" => self.height = num(value)?,
            "width" => self.width = num(value)?,
            "n_train" => self.n_train = num(value)?,
            "n_test" => self.n_test = num(value)?,
            "m_grid" => self.m_grid = list(value)?,
            "m_te" => self.m_te = num(value)?,
            "lr" => self.lr = num(value)?,
            "max_epochs" => self.max_epochs = num(value)?,
            other => bail!("unknown config key {other:?}"),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            bail!("seed list must not be empty");
        }
        if self.n_mc == 0 {
            bail!("n_mc must be >= 1");
        }
        if !(self.r > 0.0 && self.sigma > 0.0) {
            bail!("r and sigma must be positive");
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            bail!("delta must lie in (0,1)");
        }
        match self.kind {
            ExperimentKind::EpsSweep | ExperimentKind::Decomposition | ExperimentKind::BoundsCheck => {
                if self.eps_tr_grid.is_empty() {
                    bail!("eps_tr_grid must not be empty");
                }
            }
            ExperimentKind::OverparamSweep => {
                if self.d_grid.is_empty() {
                    bail!("d_grid must not be empty");
                }
            }
            ExperimentKind::SamplesizeSweep => {
                if self.n_grid.is_empty() {
                    bail!("n_grid must not be empty");
                }
            }
            ExperimentKind::ImageLab => {
                if self.m_grid.is_empty() {
                    bail!("m_grid must not be empty");
                }
                if self.height < 8 || self.width < 8 {
                    bail!("corpus images must be at least 8x8");
                }
            }
        }
        Ok(())
    }
}
