//! Logistic regression on flattened images with exact square-mask
//! adversarial training, plus a synthetic motif corpus to drive it.
//!
//! The corpus generator stands in for a real occlusion-sensitive image
//! dataset: class +1 images carry a bright vertical bar, class -1 images a
//! bright L shape, both at jittered positions over pixel noise. Training
//! with a mask budget `m` zeroes the loss-maximizing `m x m` window of each
//! image before every gradient step; evaluation performs the exact grid
//! search over all windows.

use ndarray::Array1;
use rand::Rng;
use rand_distr::StandardNormal;
use std::io::Write as _;
use std::path::Path;

use crate::adv_train::{StepRule, TrainConfig, TrainTrace, TraceRecord};
use crate::error::{Error, Result};
use crate::img_attacks::{mask_candidates_by_gradient, Image, MaskSpec, SegMask};
use crate::pnm;

/// Brightness of the painted motifs, before pixel noise.
pub const MOTIF_INTENSITY: f64 = 0.9;
/// Standard deviation of the additive pixel noise.
pub const NOISE_SIGMA: f64 = 0.08;
/// Background brightness under the noise.
pub const BACKGROUND_LEVEL: f64 = 0.1;

/// A labeled image collection of uniform shape, optionally with motif
/// segmentation masks.
#[derive(Debug, Clone)]
pub struct ImageDataset {
    images: Vec<Image>,
    labels: Vec<f64>,
    segs: Option<Vec<SegMask>>,
}

impl ImageDataset {
    pub fn new(images: Vec<Image>, labels: Vec<f64>, segs: Option<Vec<SegMask>>) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::invalid("dataset must contain at least one image"));
        }
        if images.len() != labels.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} images vs {} labels",
                images.len(),
                labels.len()
            )));
        }
        let (h, w, c) = (images[0].height(), images[0].width(), images[0].channels());
        for img in &images {
            if img.height() != h || img.width() != w || img.channels() != c {
                return Err(Error::ShapeMismatch("images must share one shape".into()));
            }
        }
        if labels.iter().any(|&y| y != 1.0 && y != -1.0) {
            return Err(Error::invalid("labels must be +1 or -1"));
        }
        if let Some(segs) = &segs {
            if segs.len() != images.len() {
                return Err(Error::ShapeMismatch("segmentation count mismatch".into()));
            }
            for s in segs {
                if s.height() != h || s.width() != w {
                    return Err(Error::ShapeMismatch("segmentation shape mismatch".into()));
                }
            }
        }
        Ok(Self { images, labels, segs })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn images(&self) -> &[Image] {
        &self.images
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn segs(&self) -> Option<&[SegMask]> {
        self.segs.as_deref()
    }

    /// (height, width, channels) shared by every image.
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.images[0].height(), self.images[0].width(), self.images[0].channels())
    }
}

/// A linear model over flattened pixels with an optional bias.
#[derive(Debug, Clone)]
pub struct FlatLinearModel {
    theta: Array1<f64>,
    bias: f64,
    h: usize,
    w: usize,
    c: usize,
}

impl FlatLinearModel {
    pub fn zeros(h: usize, w: usize, c: usize) -> Self {
        Self { theta: Array1::zeros(h * w * c), bias: 0.0, h, w, c }
    }

    pub fn from_parts(theta: Array1<f64>, bias: f64, h: usize, w: usize, c: usize) -> Result<Self> {
        if theta.len() != h * w * c {
            return Err(Error::ShapeMismatch(format!(
                "theta has {} entries for a {h}x{w}x{c} image",
                theta.len()
            )));
        }
        if theta.iter().any(|v| !v.is_finite()) || !bias.is_finite() {
            return Err(Error::invalid("model parameters must be finite"));
        }
        Ok(Self { theta, bias, h, w, c })
    }

    pub fn theta(&self) -> &Array1<f64> {
        &self.theta
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.h, self.w, self.c)
    }

    #[inline]
    fn idx(&self, i: usize, j: usize, ch: usize) -> usize {
        (i * self.w + j) * self.c + ch
    }

    /// Raw score `theta . x + bias`.
    pub fn score(&self, img: &Image) -> f64 {
        let mut s = self.bias;
        for i in 0..self.h {
            for j in 0..self.w {
                for ch in 0..self.c {
                    s += self.theta[self.idx(i, j, ch)] * img.get(i, j, ch);
                }
            }
        }
        s
    }

    /// Weighted mass `sum theta * pixel` inside a window.
    fn window_drop(&self, img: &Image, spec: MaskSpec) -> f64 {
        let mut s = 0.0;
        for i in spec.row..spec.row + spec.size {
            for j in spec.col..spec.col + spec.size {
                for ch in 0..self.c {
                    s += self.theta[self.idx(i, j, ch)] * img.get(i, j, ch);
                }
            }
        }
        s
    }

    /// Plain weight mass `sum theta` inside a window.
    fn window_weight(&self, spec: MaskSpec) -> f64 {
        let mut s = 0.0;
        for i in spec.row..spec.row + spec.size {
            for j in spec.col..spec.col + spec.size {
                for ch in 0..self.c {
                    s += self.theta[self.idx(i, j, ch)];
                }
            }
        }
        s
    }
}

/// Objective used to pick the black-mask window against a linear model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MaskObjective {
    /// Maximize the summed model weights inside the window, ignoring pixel
    /// values. Cheap, but not the true worst case on general inputs.
    WeightSum,
    /// Maximize `y * sum(theta * pixels)` inside the window, which exactly
    /// maximizes the logistic loss after zeroing the window. The default.
    #[default]
    LossExact,
}

/// The loss-maximizing `m x m` window for a linear model, under the chosen
/// objective. Ties resolve row-major.
pub fn optimal_mask_linear(
    model: &FlatLinearModel,
    img: &Image,
    label: f64,
    m: usize,
    mode: MaskObjective,
) -> Result<MaskSpec> {
    let (h, w, _) = model.shape();
    if img.height() != h || img.width() != w || img.channels() != model.c {
        return Err(Error::ShapeMismatch("image does not match model shape".into()));
    }
    if m == 0 || m > h || m > w {
        return Err(Error::invalid(format!("mask size {m} invalid for {h}x{w} images")));
    }
    let mut best = MaskSpec { size: m, row: 0, col: 0 };
    let mut best_score = f64::NEG_INFINITY;
    for row in 0..=h - m {
        for col in 0..=w - m {
            let spec = MaskSpec { size: m, row, col };
            let score = match mode {
                MaskObjective::WeightSum => model.window_weight(spec),
                MaskObjective::LossExact => label * model.window_drop(img, spec),
            };
            if score > best_score {
                best_score = score;
                best = spec;
            }
        }
    }
    Ok(best)
}

fn softplus(u: f64) -> f64 {
    if u > 35.0 {
        u
    } else if u < -35.0 {
        u.exp()
    } else {
        u.exp().ln_1p()
    }
}

fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

/// Adversarial logistic regression over flattened images. Each epoch zeroes
/// the worst window of every image (per `mode`) before the full-batch
/// gradient step; `m = 0` is standard logistic regression. The bias is
/// frozen at zero unless `train_bias` is set (masks zero pixels, never the
/// bias).
pub fn adv_train_images(
    data: &ImageDataset,
    m: usize,
    cfg: &TrainConfig,
    mode: MaskObjective,
    train_bias: bool,
) -> Result<(FlatLinearModel, TrainTrace)> {
    let (h, w, c) = data.shape();
    if m > h || m > w {
        return Err(Error::invalid(format!("mask size {m} exceeds {h}x{w} images")));
    }
    if !(cfg.lr > 0.0 && cfg.lr.is_finite()) {
        return Err(Error::invalid("lr must be positive"));
    }
    if cfg.max_epochs == 0 {
        return Err(Error::invalid("max_epochs must be >= 1"));
    }
    let n = data.len();
    let dim = h * w * c;
    let mut model = FlatLinearModel::zeros(h, w, c);

    let log_stride = (cfg.max_epochs / 2000).max(1);
    let check_stride = 100;
    let mut records = Vec::new();
    let mut prev_check_loss = f64::INFINITY;
    let mut best_loss = f64::INFINITY;
    let mut rising = 0usize;
    let mut converged = false;
    let mut diverged = false;
    let mut non_separable = false;
    let mut epochs_run = 0;
    let mut last_loss = f64::INFINITY;
    let mut last_margin = f64::NEG_INFINITY;
    let mut grad = Array1::<f64>::zeros(dim);

    for epoch in 0..cfg.max_epochs {
        grad.fill(0.0);
        let mut bias_grad = 0.0;
        let mut loss = 0.0;
        let mut min_margin = f64::INFINITY;
        for (img, &y) in data.images().iter().zip(data.labels()) {
            let clean = model.score(img);
            let (z, spec) = if m == 0 {
                (y * clean, None)
            } else {
                let spec = optimal_mask_linear(&model, img, y, m, mode)?;
                (y * (clean - model.window_drop(img, spec)), Some(spec))
            };
            loss += softplus(-z);
            min_margin = min_margin.min(z);
            let wgt = sigmoid(-z) * y / n as f64;
            // gradient of the masked sample: the window contributes nothing
            for i in 0..h {
                for j in 0..w {
                    let masked = spec.is_some_and(|s| {
                        i >= s.row && i < s.row + s.size && j >= s.col && j < s.col + s.size
                    });
                    if masked {
                        continue;
                    }
                    for ch in 0..c {
                        grad[model.idx(i, j, ch)] -= wgt * img.get(i, j, ch);
                    }
                }
            }
            bias_grad -= wgt;
        }
        loss /= n as f64;
        last_loss = loss;
        epochs_run = epoch + 1;
        {
            let norm = model.theta.dot(&model.theta).sqrt();
            last_margin = if norm > 0.0 { min_margin / norm } else { f64::NEG_INFINITY };
        }

        if !loss.is_finite() {
            diverged = true;
            break;
        }
        if loss > best_loss * (1.0 + 1e-12) {
            rising += 1;
            if rising > 200 {
                diverged = true;
                break;
            }
        } else {
            rising = 0;
            best_loss = loss;
        }

        if epoch % log_stride == 0 {
            records.push(TraceRecord {
                epoch,
                robust_loss: loss,
                margin: last_margin,
                cosine_to_ref: f64::NAN,
            });
        }

        if epoch % check_stride == 0 {
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
        model.theta.scaled_add(-scale, &grad);
        if train_bias {
            model.bias -= scale * bias_grad;
        }
    }

    records.push(TraceRecord {
        epoch: epochs_run.saturating_sub(1),
        robust_loss: last_loss,
        margin: last_margin,
        cosine_to_ref: f64::NAN,
    });

    Ok((
        model,
        TrainTrace { records, epochs_run, converged, diverged, non_separable },
    ))
}

/// Error rates of a model over a labeled corpus under the exact mask attack.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImgEvalReport {
    pub std_err: f64,
    pub rob_err: f64,
    pub suscept: f64,
    pub n_eval: usize,
}

/// Exact evaluation: the worst window of every image is found by full grid
/// search (`m_te = 0` disables the attack).
pub fn evaluate_mask_exact(
    model: &FlatLinearModel,
    data: &ImageDataset,
    m_te: usize,
) -> Result<ImgEvalReport> {
    evaluate_mask_impl(model, data, m_te, None)
}

/// Evaluation restricted to the `k` gradient-guided candidate windows; a
/// weaker attack than the exact grid search.
pub fn evaluate_mask_candidates(
    model: &FlatLinearModel,
    data: &ImageDataset,
    m_te: usize,
    k: usize,
) -> Result<ImgEvalReport> {
    if k == 0 {
        return Err(Error::invalid("k must be >= 1"));
    }
    evaluate_mask_impl(model, data, m_te, Some(k))
}

fn evaluate_mask_impl(
    model: &FlatLinearModel,
    data: &ImageDataset,
    m_te: usize,
    candidates: Option<usize>,
) -> Result<ImgEvalReport> {
    let (h, w, c) = data.shape();
    let (mh, mw, mc) = model.shape();
    if (h, w, c) != (mh, mw, mc) {
        return Err(Error::ShapeMismatch("model and corpus shapes differ".into()));
    }
    if m_te > h || m_te > w {
        return Err(Error::invalid(format!("mask size {m_te} exceeds {h}x{w} images")));
    }
    let mut std_cnt = 0usize;
    let mut rob_cnt = 0usize;
    let mut flip_cnt = 0usize;
    for (img, &y) in data.images().iter().zip(data.labels()) {
        let clean = y * model.score(img);
        // the masks sweep the signed score over [attacked, boosted]:
        // attacked minimizes it (the loss-worst window), boosted maximizes it
        let (attacked, boosted) = if m_te == 0 {
            (clean, clean)
        } else {
            match candidates {
                None => {
                    let worst = optimal_mask_linear(model, img, y, m_te, MaskObjective::LossExact)?;
                    let best = optimal_mask_linear(model, img, -y, m_te, MaskObjective::LossExact)?;
                    (
                        clean - y * model.window_drop(img, worst),
                        clean - y * model.window_drop(img, best),
                    )
                }
                Some(k) => {
                    // input gradient of the logistic loss for a linear model
                    // is a positive scalar times -y * theta; the candidate
                    // ranking only depends on |theta|
                    let mut gabs = ndarray::Array3::zeros((h, w, c));
                    for i in 0..h {
                        for j in 0..w {
                            for ch in 0..c {
                                gabs[[i, j, ch]] = model.theta[model.idx(i, j, ch)];
                            }
                        }
                    }
                    let specs = mask_candidates_by_gradient(&gabs, m_te, k)?;
                    let scores: Vec<f64> = specs
                        .into_iter()
                        .map(|s| clean - y * model.window_drop(img, s))
                        .collect();
                    (
                        scores.iter().copied().fold(f64::INFINITY, f64::min),
                        scores.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                    )
                }
            }
        };
        if clean <= 0.0 {
            std_cnt += 1;
        }
        if attacked <= 0.0 {
            rob_cnt += 1;
        }
        let flips = if clean > 0.0 { attacked <= 0.0 } else { boosted > 0.0 };
        if flips {
            flip_cnt += 1;
        }
    }
    let n = data.len() as f64;
    Ok(ImgEvalReport {
        std_err: std_cnt as f64 / n,
        rob_err: rob_cnt as f64 / n,
        suscept: flip_cnt as f64 / n,
        n_eval: data.len(),
    })
}

/// Min-max normalized weight map `(theta - min) / (max - min)` as a
/// single-channel-per-channel image; a constant weight vector maps to 0.5
/// everywhere.
pub fn weight_visualization(model: &FlatLinearModel) -> Result<Image> {
    let (h, w, c) = model.shape();
    let min = model.theta.iter().copied().fold(f64::INFINITY, f64::min);
    let max = model.theta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut img = Image::zeros(h, w, c)?;
    for i in 0..h {
        for j in 0..w {
            for ch in 0..c {
                let v = if max > min {
                    (model.theta[model.idx(i, j, ch)] - min) / (max - min)
                } else {
                    0.5
                };
                img.set(i, j, ch, v);
            }
        }
    }
    Ok(img)
}

/// Generates the synthetic motif corpus: labels alternate +1, -1 (balanced
/// classes); class +1 paints a vertical bar, class -1 an L shape, both at
/// seed-jittered positions with intensity [`MOTIF_INTENSITY`]; Gaussian
/// pixel noise of scale [`NOISE_SIGMA`] is added everywhere and clipped to
/// `[0,1]`. Segmentation masks mark the motif pixels. The motifs span most of
/// the image height, so a square mask of up to half the image side can
/// occlude only part of a motif and never erases the class evidence.
pub fn synth_corpus(n: usize, h: usize, w: usize, seed: crate::RngSeed) -> Result<ImageDataset> {
    if n == 0 {
        return Err(Error::invalid("corpus size must be >= 1"));
    }
    if h < 8 || w < 8 {
        return Err(Error::invalid(format!("corpus images must be at least 8x8, got {h}x{w}")));
    }
    let mut rng = seed.stream(crate::rng::stream::CORPUS, &[]);
    let bar_h = 3 * h / 4;
    let foot_w = w / 2;
    let mut images = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let mut segs = Vec::with_capacity(n);
    for i in 0..n {
        let label = if i % 2 == 0 { 1.0 } else { -1.0 };
        // keep room for the L's foot so both motifs share the jitter range
        let r0 = rng.gen_range(1..=h - bar_h - 1);
        let c0 = rng.gen_range(1..=w - 3 - foot_w);
        let mut img = Image::zeros(h, w, 1)?;
        let mut seg = SegMask::zeros(h, w);
        let paint = |img: &mut Image, seg: &mut SegMask, i: usize, j: usize| {
            img.set(i, j, 0, MOTIF_INTENSITY);
            seg.set(i, j, true);
        };
        for r in r0..r0 + bar_h {
            paint(&mut img, &mut seg, r, c0);
            paint(&mut img, &mut seg, r, c0 + 1);
        }
        if label < 0.0 {
            // the foot turns the bar into an L
            for r in (r0 + bar_h - 2)..(r0 + bar_h) {
                for j in (c0 + 2)..(c0 + 2 + foot_w) {
                    paint(&mut img, &mut seg, r, j);
                }
            }
        }
        for r in 0..h {
            for j in 0..w {
                let g: f64 = rng.sample(StandardNormal);
                let base = if seg.get(r, j) { img.get(r, j, 0) } else { BACKGROUND_LEVEL };
                img.set(r, j, 0, base + NOISE_SIGMA * g);
            }
        }
        images.push(img);
        labels.push(label);
        segs.push(seg);
    }
    ImageDataset::new(images, labels, Some(segs))
}

/// Writes a corpus as numbered PGM/PPM files plus `labels.csv`
/// (`filename,label`); segmentation masks, when present, are written as
/// `seg_NNNN.pgm`.
pub fn export_corpus(data: &ImageDataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let (_, _, c) = data.shape();
    let mut labels = std::io::BufWriter::new(std::fs::File::create(dir.join("labels.csv"))?);
    labels.write_all(b"filename,label\n")?;
    for (i, (img, &y)) in data.images().iter().zip(data.labels()).enumerate() {
        let name = if c == 1 { format!("img_{i:04}.pgm") } else { format!("img_{i:04}.ppm") };
        let path = dir.join(&name);
        if c == 1 {
            pnm::write_pgm(img, &path)?;
        } else {
            pnm::write_ppm(img, &path)?;
        }
        writeln!(labels, "{name},{y}")?;
        if let Some(segs) = data.segs() {
            pnm::write_seg_pgm(&segs[i], &dir.join(format!("seg_{i:04}.pgm")))?;
        }
    }
    labels.flush()?;
    Ok(())
}

/// Reads a corpus written by [`export_corpus`].
pub fn import_corpus(dir: &Path) -> Result<ImageDataset> {
    let text = std::fs::read_to_string(dir.join("labels.csv"))?;
    let mut images = Vec::new();
    let mut labels = Vec::new();
    let mut segs = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if lineno == 0 {
            if line != "filename,label" {
                return Err(Error::Parse(format!("unexpected labels.csv header: {line}")));
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let (name, label) = line
            .split_once(',')
            .ok_or_else(|| Error::Parse(format!("bad labels.csv line: {line}")))?;
        let y: f64 =
            label.parse().map_err(|_| Error::Parse(format!("bad label: {label}")))?;
        let path = dir.join(name);
        let img = if name.ends_with(".ppm") { pnm::read_ppm(&path)? } else { pnm::read_pgm(&path)? };
        images.push(img);
        labels.push(y);
        let idx = images.len() - 1;
        let seg_path = dir.join(format!("seg_{idx:04}.pgm"));
        if seg_path.exists() {
            segs.push(pnm::read_seg_pgm(&seg_path)?);
        }
    }
    let segs = if segs.len() == images.len() { Some(segs) } else { None };
    ImageDataset::new(images, labels, segs)
}
