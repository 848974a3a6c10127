//! Hybrid reconstruction loss: a squared distance between intensity
//! histograms plus a small weighted per-pixel squared error.
//!
//! ```text
//! L_generated = L_hist + omega * L_spatial
//! L_hist      = 1/N_bins * sum_i (hist(X)_i - hist(X_recon)_i)^2
//! L_spatial   = 1/N_pix  * sum_p (X_p - X_recon_p)^2
//! ```
//!
//! `hist` returns raw counts. For training it is replaced by a soft
//! histogram: each pixel splits unit mass between its two nearest bin
//! centres (a triangular kernel eased by a quintic smootherstep), with a sharpness knob
//! that pushes the split towards a hard assignment. Batched inputs (`[N,C,H,W]`) are scored per sample and the
//! losses averaged over the batch.

use crate::error::TensorError;
use crate::tensor::{CustomOp, Real, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct LossConfig {
    /// Weight of the per-pixel term.
    pub omega: f64,
    pub n_bins: usize,
    /// At 1.0 the transition between neighbouring bins spans the full bin
    /// width; larger values narrow it around each bin edge. From 2.0 up,
    /// pixels more than a quarter width from an edge are binned exactly.
    /// `f64::INFINITY` gives hard binning.
    pub sharpness: f64,
    pub value_range: (f64, f64),
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            omega: 0.001,
            n_bins: 64,
            sharpness: 1.0,
            value_range: (-1.0, 1.0),
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), TensorError> {
        let bad = |r: &str| Err(TensorError::invalid("loss config", r));
        if !(self.omega >= 0.0) {
            return bad("omega must be >= 0");
        }
        if self.n_bins < 2 {
            return bad("n_bins must be >= 2");
        }
        if !(self.sharpness > 0.0) {
            return bad("sharpness must be > 0");
        }
        if !(self.value_range.0 < self.value_range.1) {
            return bad("value_range must satisfy lo < hi");
        }
        Ok(())
    }

    pub fn hard_limit(mut self) -> Self {
        self.sharpness = f64::INFINITY;
        self
    }

    fn bin_width(&self) -> f64 {
        (self.value_range.1 - self.value_range.0) / self.n_bins as f64
    }
}

/// Exact bin counts: uniform bins over `range`, values clamped into the
/// range, last bin right-closed.
pub fn hard_histogram(
    values: &[f64],
    n_bins: usize,
    range: (f64, f64),
) -> Result<Vec<u64>, TensorError> {
    if values.is_empty() {
        return Err(TensorError::invalid("hard_histogram", "empty image"));
    }
    if n_bins < 2 {
        return Err(TensorError::invalid("hard_histogram", "n_bins must be >= 2"));
    }
    let (lo, hi) = range;
    let width = (hi - lo) / n_bins as f64;
    let mut counts = vec![0u64; n_bins];
    for &v in values {
        let v = v.clamp(lo, hi);
        let bin = (((v - lo) / width).floor() as usize).min(n_bins - 1);
        counts[bin] += 1;
    }
    Ok(counts)
}

/// Where one pixel's unit mass lands: `(lower_bin, upper_share, d_share_dv)`.
/// The lower bin receives `1 - upper_share`.
fn split<T: Real>(v: T, cfg: &LossConfig) -> (usize, f64, f64) {
    let (lo, hi) = cfg.value_range;
    let v = v.to_f64().unwrap_or(f64::NAN);
    let inside = v > lo && v < hi;
    let width = cfg.bin_width();
    let u = (v.clamp(lo, hi) - lo) / width - 0.5;
    let last = cfg.n_bins - 1;
    if u <= 0.0 {
        return (0, 0.0, 0.0);
    }
    if u >= last as f64 {
        return (last - 1, 1.0, 0.0);
    }
    let i = u.floor() as usize;
    let t = u - i as f64;
    if cfg.sharpness.is_infinite() {
        return (i, if t >= 0.5 { 1.0 } else { 0.0 }, 0.0);
    }
    let ramp = cfg.sharpness * (t - 0.5) + 0.5;
    if ramp <= 0.0 {
        (i, 0.0, 0.0)
    } else if ramp >= 1.0 {
        (i, 1.0, 0.0)
    } else {
        // quintic smootherstep keeps the counts C2 in the pixel value, also
        // at bin centres where the active pair of bins changes
        let share = ramp * ramp * ramp * (ramp * (6.0 * ramp - 15.0) + 10.0);
        let d = if inside {
            30.0 * (ramp * (1.0 - ramp)).powi(2) * cfg.sharpness / width
        } else {
            0.0
        };
        (i, share, d)
    }
}

/// `(samples, pixels per sample)`: rank-4 inputs are a batch, anything else
/// is one image.
fn batch_layout(shape: &[usize]) -> (usize, usize) {
    let total: usize = shape.iter().product();
    if shape.len() == 4 {
        (shape[0], total / shape[0])
    } else {
        (1, total)
    }
}

fn soft_counts<T: Real>(x: &Tensor<T>, cfg: &LossConfig) -> Tensor<T> {
    let (n, pix) = batch_layout(x.shape());
    let mut out = vec![0f64; n * cfg.n_bins];
    for (s, img) in x.data().chunks(pix).enumerate() {
        let row = &mut out[s * cfg.n_bins..(s + 1) * cfg.n_bins];
        // accumulate in value order so the counts are bit-identical under
        // any permutation of the pixels
        let mut sorted: Vec<f64> = img.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect();
        sorted.sort_by(f64::total_cmp);
        for &v in &sorted {
            let (i, up, _) = split(v, cfg);
            row[i] += 1.0 - up;
            row[i + 1] += up;
        }
    }
    Tensor::new(
        &[n, cfg.n_bins],
        out.into_iter().map(T::from_f64_lossy).collect(),
    )
    .expect("histogram shape")
}

struct SoftHistogramOp {
    cfg: LossConfig,
}

impl<T: Real> CustomOp<T> for SoftHistogramOp {
    fn name(&self) -> &'static str {
        "soft_histogram"
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &Tensor<T>,
    ) -> Vec<Option<Tensor<T>>> {
        let x = inputs[0];
        let (_, pix) = batch_layout(x.shape());
        let nb = self.cfg.n_bins;
        let g = grad.data();
        let data = x
            .data()
            .iter()
            .enumerate()
            .map(|(p, &v)| {
                let (i, _, d) = split(v, &self.cfg);
                if d == 0.0 {
                    return T::zero();
                }
                let row = (p / pix) * nb;
                (g[row + i + 1] - g[row + i]) * T::from_f64_lossy(d)
            })
            .collect();
        vec![Some(Tensor::new(x.shape(), data).expect("same shape"))]
    }
}

/// Differentiable bin counts, `[N, n_bins]` (N = 1 unless the input is a
/// rank-4 batch). Every row sums to the pixel count.
pub fn soft_histogram<'g, T: Real>(
    image: &Var<'g, T>,
    cfg: &LossConfig,
) -> Result<Var<'g, T>, TensorError> {
    cfg.validate()?;
    let value = {
        let x = image.value_ref();
        if x.is_empty() {
            return Err(TensorError::invalid("soft_histogram", "empty image"));
        }
        soft_counts(&x, cfg)
    };
    Ok(image
        .graph()
        .custom(&[*image], value, Box::new(SoftHistogramOp { cfg: cfg.clone() })))
}

fn check_pair<T: Real>(op: &'static str, x: &Var<'_, T>, r: &Var<'_, T>) -> Result<(), TensorError> {
    let (sx, sr) = (x.shape(), r.shape());
    if sx != sr {
        return Err(TensorError::shape(op, format!("{sx:?}"), &sr));
    }
    Ok(())
}

/// Whether gradient may flow into the target image as well as the
/// reconstruction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TargetGrad {
    Blocked,
    Through,
}

fn target<'g, T: Real>(x: &Var<'g, T>, mode: TargetGrad) -> Var<'g, T> {
    match mode {
        TargetGrad::Blocked => x.detach(),
        TargetGrad::Through => *x,
    }
}

fn hist_loss_mode<'g, T: Real>(
    x: &Var<'g, T>,
    x_recon: &Var<'g, T>,
    cfg: &LossConfig,
    mode: TargetGrad,
) -> Result<Var<'g, T>, TensorError> {
    check_pair("hist_loss", x, x_recon)?;
    let hx = soft_histogram(&target(x, mode), cfg)?;
    let hr = soft_histogram(x_recon, cfg)?;
    // mean over [N, n_bins] == batch mean of (1/n_bins) * sum of squares
    Ok(hx.sub(&hr)?.square().mean())
}

fn spatial_loss_mode<'g, T: Real>(
    x: &Var<'g, T>,
    x_recon: &Var<'g, T>,
    mode: TargetGrad,
) -> Result<Var<'g, T>, TensorError> {
    check_pair("spatial_loss", x, x_recon)?;
    Ok(target(x, mode).sub(x_recon)?.square().mean())
}

/// Histogram distance; gradient flows only into `x_recon`.
pub fn hist_loss<'g, T: Real>(
    x: &Var<'g, T>,
    x_recon: &Var<'g, T>,
    cfg: &LossConfig,
) -> Result<Var<'g, T>, TensorError> {
    hist_loss_mode(x, x_recon, cfg, TargetGrad::Blocked)
}

/// Mean squared per-pixel difference; gradient flows only into `x_recon`.
pub fn spatial_loss<'g, T: Real>(
    x: &Var<'g, T>,
    x_recon: &Var<'g, T>,
) -> Result<Var<'g, T>, TensorError> {
    spatial_loss_mode(x, x_recon, TargetGrad::Blocked)
}

/// `hist_loss + omega * spatial_loss` with the target held constant.
pub fn generated_loss<'g, T: Real>(
    x: &Var<'g, T>,
    x_recon: &Var<'g, T>,
    cfg: &LossConfig,
) -> Result<Var<'g, T>, TensorError> {
    generated_loss_with(x, x_recon, cfg, TargetGrad::Blocked)
}

pub fn generated_loss_with<'g, T: Real>(
    x: &Var<'g, T>,
    x_recon: &Var<'g, T>,
    cfg: &LossConfig,
    mode: TargetGrad,
) -> Result<Var<'g, T>, TensorError> {
    let h = hist_loss_mode(x, x_recon, cfg, mode)?;
    if cfg.omega == 0.0 {
        return Ok(h);
    }
    let s = spatial_loss_mode(x, x_recon, mode)?;
    h.add(&s.scale(T::from_f64_lossy(cfg.omega)))
}
