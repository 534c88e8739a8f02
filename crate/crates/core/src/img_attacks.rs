//! Directed image attacks at desk scale: square occlusion masks (exact and
//! gradient-guided), motion blur over a segmented object, and adversarial
//! illumination.
//!
//! Attack searches are exhaustive list searches over small candidate sets,
//! evaluated against a caller-supplied scoring function `(image, label) ->
//! loss`. All tie-breaks are fixed (row-major locations, smallest shift
//! magnitude, smallest kernel) so results are identical across platforms.

use ndarray::{Array2, Array3};

use crate::error::{Error, Result};

/// An H x W x C image with samples in `[0,1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    data: Array3<f64>,
}

impl Image {
    /// Validates shape and range. Channels must be 1 or 3.
    pub fn from_array(data: Array3<f64>) -> Result<Self> {
        let (h, w, c) = data.dim();
        if h == 0 || w == 0 {
            return Err(Error::invalid("image must be non-empty"));
        }
        if c != 1 && c != 3 {
            return Err(Error::invalid(format!("channels must be 1 or 3, got {c}")));
        }
        if data.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::invalid("pixel values must lie in [0,1]"));
        }
        Ok(Self { data })
    }

    pub fn zeros(h: usize, w: usize, c: usize) -> Result<Self> {
        if c != 1 && c != 3 {
            return Err(Error::invalid(format!("channels must be 1 or 3, got {c}")));
        }
        if h == 0 || w == 0 {
            return Err(Error::invalid("image must be non-empty"));
        }
        Ok(Self { data: Array3::zeros((h, w, c)) })
    }

    pub fn height(&self) -> usize {
        self.data.dim().0
    }

    pub fn width(&self) -> usize {
        self.data.dim().1
    }

    pub fn channels(&self) -> usize {
        self.data.dim().2
    }

    pub fn get(&self, i: usize, j: usize, c: usize) -> f64 {
        self.data[[i, j, c]]
    }

    /// Sets a sample, clamping into `[0,1]`.
    pub fn set(&mut self, i: usize, j: usize, c: usize, v: f64) {
        self.data[[i, j, c]] = v.clamp(0.0, 1.0);
    }

    pub fn as_array(&self) -> &Array3<f64> {
        &self.data
    }
}

/// A binary segmentation profile paired with an image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegMask {
    mask: Array2<bool>,
}

impl SegMask {
    pub fn zeros(h: usize, w: usize) -> Self {
        Self { mask: Array2::from_elem((h, w), false) }
    }

    pub fn from_array(mask: Array2<bool>) -> Self {
        Self { mask }
    }

    pub fn height(&self) -> usize {
        self.mask.dim().0
    }

    pub fn width(&self) -> usize {
        self.mask.dim().1
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.mask[[i, j]]
    }

    pub fn set(&mut self, i: usize, j: usize, v: bool) {
        self.mask[[i, j]] = v;
    }

    fn matches(&self, img: &Image) -> bool {
        self.height() == img.height() && self.width() == img.width()
    }
}

/// Location and side length of a square occlusion window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaskSpec {
    pub size: usize,
    pub row: usize,
    pub col: usize,
}

impl MaskSpec {
    fn check(&self, img: &Image) -> Result<()> {
        if self.size == 0 {
            return Err(Error::invalid("mask size must be >= 1"));
        }
        if self.row + self.size > img.height() || self.col + self.size > img.width() {
            return Err(Error::invalid(format!(
                "mask {}x{} at ({},{}) leaves a {}x{} image",
                self.size,
                self.size,
                self.row,
                self.col,
                img.height(),
                img.width()
            )));
        }
        Ok(())
    }
}

/// Returns a copy with the window zeroed in all channels.
pub fn apply_mask(img: &Image, spec: MaskSpec) -> Result<Image> {
    spec.check(img)?;
    let mut out = img.clone();
    for i in spec.row..spec.row + spec.size {
        for j in spec.col..spec.col + spec.size {
            for c in 0..img.channels() {
                out.data[[i, j, c]] = 0.0;
            }
        }
    }
    Ok(out)
}

/// Exhaustive grid search over all `(H-m+1)(W-m+1)` mask locations; returns
/// the location maximizing `model(masked, label)`. Ties resolve to the first
/// occurrence in row-major order.
pub fn mask_attack_exact(
    img: &Image,
    label: f64,
    model: impl Fn(&Image, f64) -> f64,
    m: usize,
) -> Result<(MaskSpec, f64)> {
    if m == 0 {
        return Err(Error::invalid("mask size must be >= 1"));
    }
    if m > img.height() || m > img.width() {
        return Err(Error::invalid(format!(
            "mask size {m} exceeds image {}x{}",
            img.height(),
            img.width()
        )));
    }
    let mut best: Option<(MaskSpec, f64)> = None;
    for row in 0..=img.height() - m {
        for col in 0..=img.width() - m {
            let spec = MaskSpec { size: m, row, col };
            let loss = model(&apply_mask(img, spec)?, label);
            match best {
                Some((_, b)) if loss <= b => {}
                _ => best = Some((spec, loss)),
            }
        }
    }
    Ok(best.expect("at least one window"))
}

/// The `k` mask locations whose windows have the largest l1 norm of the
/// supplied input gradient, in descending order; ties resolve row-major.
/// Asking for more windows than exist returns them all.
pub fn mask_candidates_by_gradient(
    grad: &Array3<f64>,
    m: usize,
    k: usize,
) -> Result<Vec<MaskSpec>> {
    let (h, w, _c) = grad.dim();
    if k == 0 {
        return Err(Error::invalid("k must be >= 1"));
    }
    if m == 0 || m > h || m > w {
        return Err(Error::invalid(format!("mask size {m} invalid for {h}x{w} gradient")));
    }
    let mut scored = Vec::with_capacity((h - m + 1) * (w - m + 1));
    for row in 0..=h - m {
        for col in 0..=w - m {
            let mut sum = 0.0;
            for i in row..row + m {
                for j in col..col + m {
                    for c in 0..grad.dim().2 {
                        sum += grad[[i, j, c]].abs();
                    }
                }
            }
            scored.push((sum, MaskSpec { size: m, row, col }));
        }
    }
    // stable sort keeps row-major order among exact ties
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    scored.truncate(k);
    Ok(scored.into_iter().map(|(_, s)| s).collect())
}

/// Orientation of the motion streak.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BlurAngle {
    /// Streak along image rows (the kernel's nonzero row).
    #[default]
    Horizontal,
    /// Kernel rotated 90 degrees: streak along columns.
    Vertical,
}

/// An m x m motion-blur kernel: one row holds 1/m, everything else is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct BlurKernel {
    m: usize,
    kernel: Array2<f64>,
}

impl BlurKernel {
    pub fn size(&self) -> usize {
        self.m
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.kernel
    }

    /// Index of the filled row, `floor((m-1)/2)`.
    pub fn filled_row(&self) -> usize {
        (self.m - 1) / 2
    }

    /// Per-row sums computed with compensated (Neumaier) summation, i.e.
    /// correctly rounded; the filled row sums to exactly 1.0 for every
    /// kernel size used by the attacks here.
    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.m)
            .map(|i| {
                let mut s = 0.0_f64;
                let mut comp = 0.0_f64;
                for j in 0..self.m {
                    let v = self.kernel[[i, j]];
                    let t = s + v;
                    if s.abs() >= v.abs() {
                        comp += (s - t) + v;
                    } else {
                        comp += (v - t) + s;
                    }
                    s = t;
                }
                s + comp
            })
            .collect()
    }
}

/// Builds the kernel: row `floor((m-1)/2)` filled with `1/m`.
pub fn motion_blur_kernel(m: usize) -> Result<BlurKernel> {
    if m == 0 {
        return Err(Error::invalid("kernel size must be >= 1"));
    }
    let mut kernel = Array2::zeros((m, m));
    let row = (m - 1) / 2;
    for j in 0..m {
        kernel[[row, j]] = 1.0 / m as f64;
    }
    Ok(BlurKernel { m, kernel })
}

/// Reflect-101 index mapping (no edge duplication), the border mode of the
/// usual 2D filtering implementations.
fn reflect(mut t: isize, len: usize) -> usize {
    let n = len as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    t = t.rem_euclid(period);
    if t >= n {
        t = period - t;
    }
    t as usize
}

/// Applies the motion-blur kernel over the whole image and pastes the result
/// onto the original through the segmentation mask:
/// `out = (1-seg) * img + seg * blurred`. Background samples are copied
/// bit for bit. The windowed mean accumulates deviations from the center
/// pixel, which keeps constant regions (and m = 1) exact fixed points.
pub fn blur_object(img: &Image, seg: &SegMask, m: usize) -> Result<Image> {
    blur_object_oriented(img, seg, m, BlurAngle::Horizontal)
}

/// [`blur_object`] with an explicit streak orientation.
pub fn blur_object_oriented(
    img: &Image,
    seg: &SegMask,
    m: usize,
    angle: BlurAngle,
) -> Result<Image> {
    if m == 0 {
        return Err(Error::invalid("kernel size must be >= 1"));
    }
    if !seg.matches(img) {
        return Err(Error::ShapeMismatch(format!(
            "segmentation {}x{} does not match image {}x{}",
            seg.height(),
            seg.width(),
            img.height(),
            img.width()
        )));
    }
    let off = ((m - 1) / 2) as isize;
    let mut out = img.clone();
    for i in 0..img.height() {
        for j in 0..img.width() {
            if !seg.get(i, j) {
                continue;
            }
            for c in 0..img.channels() {
                let v0 = img.get(i, j, c);
                let mut acc = 0.0;
                for b in 0..m as isize {
                    let sample = match angle {
                        BlurAngle::Horizontal => {
                            img.get(i, reflect(j as isize + b - off, img.width()), c)
                        }
                        BlurAngle::Vertical => {
                            img.get(reflect(i as isize + b - off, img.height()), j, c)
                        }
                    };
                    acc += sample - v0;
                }
                out.data[[i, j, c]] = (v0 + acc / m as f64).clamp(0.0, 1.0);
            }
        }
    }
    Ok(out)
}

/// Additive illumination attack over the segmented object. Evaluates all
/// `2*k_max + 1` shifts `a = eps * k / k_max`, clipping the shifted object
/// samples to `[0,1]` before pasting, and returns the loss-maximizing shift.
/// Ties prefer the smaller |a|, then the negative sign.
pub fn illumination_attack(
    img: &Image,
    seg: &SegMask,
    label: f64,
    model: impl Fn(&Image, f64) -> f64,
    eps: f64,
    k_max: usize,
) -> Result<(f64, Image, f64)> {
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(Error::invalid(format!("eps must be >= 0, got {eps}")));
    }
    if k_max == 0 {
        return Err(Error::invalid("k_max must be >= 1"));
    }
    if !seg.matches(img) {
        return Err(Error::ShapeMismatch("segmentation does not match image".into()));
    }
    let mut best: Option<(f64, Image, f64)> = None;
    for k in -(k_max as isize)..=(k_max as isize) {
        let a = eps * k as f64 / k_max as f64;
        let cand = shift_object(img, seg, a);
        let loss = model(&cand, label);
        let better = match &best {
            None => true,
            Some((ba, _, bl)) => {
                loss > *bl
                    || (loss == *bl
                        && (a.abs() < ba.abs() || (a.abs() == ba.abs() && a < *ba)))
            }
        };
        if better {
            best = Some((a, cand, loss));
        }
    }
    Ok(best.expect("at least one candidate"))
}

fn shift_object(img: &Image, seg: &SegMask, a: f64) -> Image {
    let mut out = img.clone();
    for i in 0..img.height() {
        for j in 0..img.width() {
            if seg.get(i, j) {
                for c in 0..img.channels() {
                    out.data[[i, j, c]] = (img.get(i, j, c) + a).clamp(0.0, 1.0);
                }
            }
        }
    }
    out
}

/// Exhaustive search over motion-blur severities: kernel sizes `1..=m_max`
/// at stride 1, or the even sizes `2, 4, ...` at stride 2 (falling back to
/// the identity when that list is empty). Ties prefer the smallest size.
pub fn blur_attack_exact(
    img: &Image,
    seg: &SegMask,
    label: f64,
    model: impl Fn(&Image, f64) -> f64,
    m_max: usize,
    stride: usize,
) -> Result<(usize, Image, f64)> {
    if m_max == 0 {
        return Err(Error::invalid("m_max must be >= 1"));
    }
    if stride != 1 && stride != 2 {
        return Err(Error::invalid(format!("stride must be 1 or 2, got {stride}")));
    }
    let sizes: Vec<usize> = if stride == 1 {
        (1..=m_max).collect()
    } else {
        let evens: Vec<usize> = (1..).map(|i| 2 * i).take_while(|&s| s <= m_max).collect();
        if evens.is_empty() {
            vec![1]
        } else {
            evens
        }
    };
    let mut best: Option<(usize, Image, f64)> = None;
    for m in sizes {
        let cand = blur_object(img, seg, m)?;
        let loss = model(&cand, label);
        match &best {
            Some((_, _, bl)) if loss <= *bl => {}
            _ => best = Some((m, cand, loss)),
        }
    }
    Ok(best.expect("at least one candidate"))
}
