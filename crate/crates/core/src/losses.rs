//! Image objectives and quality metrics.
//!
//! Every differentiable term comes with a `*_grad` companion returning
//! the derivative with respect to its first image argument, so training
//! can assemble `dL/dpred` without an autodiff tape.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageBuffer;
use crate::scene::GaussianModel;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda_ssim: f64,
    pub lambda_vol: f64,
    pub lambda_reg: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_ssim: 0.2,
            lambda_vol: 0.01,
            lambda_reg: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda_ssim, self.lambda_vol, self.lambda_reg];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config(format!("loss weights must be finite and >= 0: {self:?}")));
        }
        Ok(())
    }
}

/// Image distance used by the reference hinge.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Distance {
    /// Mean absolute difference.
    #[default]
    L1,
    /// Mean squared difference.
    L2,
}

impl Distance {
    pub fn eval(self, a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
        match self {
            Distance::L1 => l1_loss(a, b),
            Distance::L2 => mse(a, b),
        }
    }

    pub fn grad(self, a: &ImageBuffer, b: &ImageBuffer) -> Result<ImageBuffer> {
        match self {
            Distance::L1 => l1_grad(a, b),
            Distance::L2 => {
                a.ensure_same_dims(b)?;
                let n = a.pixels.len() as f64;
                Ok(map2(a, b, |x, y| 2.0 * (x - y) / n))
            }
        }
    }
}

fn map2(a: &ImageBuffer, b: &ImageBuffer, f: impl Fn(f64, f64) -> f64) -> ImageBuffer {
    ImageBuffer {
        width: a.width,
        height: a.height,
        pixels: a.pixels.iter().zip(&b.pixels).map(|(&x, &y)| f(x, y)).collect(),
    }
}

pub fn l1_loss(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    a.ensure_same_dims(b)?;
    if a.pixels.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = a.pixels.iter().zip(&b.pixels).map(|(x, y)| (x - y).abs()).sum();
    Ok(sum / a.pixels.len() as f64)
}

/// Subgradient of [`l1_loss`] in `a`; zero at ties.
pub fn l1_grad(a: &ImageBuffer, b: &ImageBuffer) -> Result<ImageBuffer> {
    a.ensure_same_dims(b)?;
    let n = a.pixels.len() as f64;
    Ok(map2(a, b, |x, y| {
        if x > y {
            1.0 / n
        } else if x < y {
            -1.0 / n
        } else {
            0.0
        }
    }))
}

pub fn mse(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    a.ensure_same_dims(b)?;
    if a.pixels.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = a.pixels.iter().zip(&b.pixels).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(sum / a.pixels.len() as f64)
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}

/// Peak signal-to-noise ratio in dB for unit-range images. Identical
/// images give `f64::INFINITY`.
pub fn psnr(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Separable "valid" filtering of a `w x h` plane.
fn filter_valid(src: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (ow, oh) = (w + 1 - SSIM_WINDOW, h + 1 - SSIM_WINDOW);
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..ow {
            tmp[y * ow + x] = k.iter().zip(&row[x..x + SSIM_WINDOW]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            let mut s = 0.0;
            for (j, kv) in k.iter().enumerate() {
                s += kv * tmp[(y + j) * ow + x];
            }
            out[y * ow + x] = s;
        }
    }
    out
}

/// Adjoint of [`filter_valid`]: scatters an `ow x oh` map back to `w x h`.
fn filter_valid_adjoint(src: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (ow, oh) = (w + 1 - SSIM_WINDOW, h + 1 - SSIM_WINDOW);
    let mut tmp = vec![0.0; ow * h];
    for y in 0..oh {
        for x in 0..ow {
            let v = src[y * ow + x];
            for (j, kv) in k.iter().enumerate() {
                tmp[(y + j) * ow + x] += kv * v;
            }
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..ow {
            let v = tmp[y * ow + x];
            for (i, kv) in k.iter().enumerate() {
                out[y * w + x + i] += kv * v;
            }
        }
    }
    out
}

fn channel(img: &ImageBuffer, c: usize) -> Vec<f64> {
    img.pixels.iter().skip(c).step_by(3).copied().collect()
}

fn check_ssim_dims(a: &ImageBuffer, b: &ImageBuffer) -> Result<()> {
    a.ensure_same_dims(b)?;
    if a.width < SSIM_WINDOW || a.height < SSIM_WINDOW {
        return Err(Error::ImageTooSmall {
            width: a.width,
            height: a.height,
            window: SSIM_WINDOW,
        });
    }
    Ok(())
}

/// Local statistics of one channel pair over every valid window position.
struct SsimStats {
    mu_a: Vec<f64>,
    mu_b: Vec<f64>,
    var_a: Vec<f64>,
    var_b: Vec<f64>,
    cov: Vec<f64>,
}

fn ssim_stats(a: &[f64], b: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> SsimStats {
    let sq = |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(p, q)| p * q).collect() };
    let mu_a = filter_valid(a, w, h, k);
    let mu_b = filter_valid(b, w, h, k);
    let e_aa = filter_valid(&sq(a, a), w, h, k);
    let e_bb = filter_valid(&sq(b, b), w, h, k);
    let e_ab = filter_valid(&sq(a, b), w, h, k);
    let n = mu_a.len();
    let mut var_a = vec![0.0; n];
    let mut var_b = vec![0.0; n];
    let mut cov = vec![0.0; n];
    for i in 0..n {
        var_a[i] = e_aa[i] - mu_a[i] * mu_a[i];
        var_b[i] = e_bb[i] - mu_b[i] * mu_b[i];
        cov[i] = e_ab[i] - mu_a[i] * mu_b[i];
    }
    SsimStats {
        mu_a,
        mu_b,
        var_a,
        var_b,
        cov,
    }
}

/// Mean SSIM over all 11x11 (sigma 1.5) window positions fully inside the
/// image, averaged over the three channels.
pub fn ssim(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    check_ssim_dims(a, b)?;
    let k = gaussian_window();
    let (w, h) = a.dims();
    let mut total = 0.0;
    let mut count = 0usize;
    for c in 0..3 {
        let st = ssim_stats(&channel(a, c), &channel(b, c), w, h, &k);
        for i in 0..st.mu_a.len() {
            let num = (2.0 * st.mu_a[i] * st.mu_b[i] + SSIM_C1) * (2.0 * st.cov[i] + SSIM_C2);
            let den =
                (st.mu_a[i] * st.mu_a[i] + st.mu_b[i] * st.mu_b[i] + SSIM_C1) * (st.var_a[i] + st.var_b[i] + SSIM_C2);
            total += num / den;
        }
        count += st.mu_a.len();
    }
    Ok(total / count as f64)
}

/// SSIM and its gradient with respect to `a`.
pub fn ssim_grad(a: &ImageBuffer, b: &ImageBuffer) -> Result<(f64, ImageBuffer)> {
    check_ssim_dims(a, b)?;
    let k = gaussian_window();
    let (w, h) = a.dims();
    let mut grad = ImageBuffer::new(w, h);
    let mut total = 0.0;
    let n_windows = (w + 1 - SSIM_WINDOW) * (h + 1 - SSIM_WINDOW);
    let norm = 1.0 / (3 * n_windows) as f64;
    for c in 0..3 {
        let pa = channel(a, c);
        let pb = channel(b, c);
        let st = ssim_stats(&pa, &pb, w, h, &k);
        // Partials of each window's SSIM with respect to mu_a, E[a^2], E[ab].
        let mut d_mu = vec![0.0; n_windows];
        let mut d_eaa = vec![0.0; n_windows];
        let mut d_eab = vec![0.0; n_windows];
        for i in 0..n_windows {
            let (ma, mb) = (st.mu_a[i], st.mu_b[i]);
            let n1 = 2.0 * ma * mb + SSIM_C1;
            let n2 = 2.0 * st.cov[i] + SSIM_C2;
            let d1 = ma * ma + mb * mb + SSIM_C1;
            let d2 = st.var_a[i] + st.var_b[i] + SSIM_C2;
            let s = n1 * n2 / (d1 * d2);
            total += s;
            d_mu[i] = norm * s * (2.0 * mb / n1 - 2.0 * mb / n2 - 2.0 * ma / d1 + 2.0 * ma / d2);
            d_eaa[i] = -norm * s / d2;
            d_eab[i] = norm * s * 2.0 / n2;
        }
        let g_mu = filter_valid_adjoint(&d_mu, w, h, &k);
        let g_aa = filter_valid_adjoint(&d_eaa, w, h, &k);
        let g_ab = filter_valid_adjoint(&d_eab, w, h, &k);
        for p in 0..w * h {
            grad.pixels[p * 3 + c] = g_mu[p] + 2.0 * pa[p] * g_aa[p] + pb[p] * g_ab[p];
        }
    }
    Ok((total * norm, grad))
}

/// Sum over primitives of the product of their per-axis scales.
pub fn volume_reg(model: &GaussianModel) -> f64 {
    model.gaussians.iter().map(|g| g.log_scale.sum().exp()).sum()
}

/// Gradient of [`volume_reg`] with respect to each primitive's log-scales.
pub fn volume_reg_grad(model: &GaussianModel) -> Vec<[f64; 3]> {
    model
        .gaussians
        .iter()
        .map(|g| {
            let v = g.log_scale.sum().exp();
            [v, v, v]
        })
        .collect()
}

/// `L1 + λ_ssim (1 - SSIM) + λ_vol · volume`.
pub fn reconstruction_loss(
    pred: &ImageBuffer,
    gt: &ImageBuffer,
    model: &GaussianModel,
    w: &LossWeights,
) -> Result<f64> {
    let l1 = l1_loss(pred, gt)?;
    let d_ssim = 1.0 - ssim(pred, gt)?;
    Ok(l1 + w.lambda_ssim * d_ssim + w.lambda_vol * volume_reg(model))
}

/// Hinge on the prediction being further from ground truth than the
/// reference is: `max(0, d(pred, gt) - d(ref, gt))` with mean-L1 `d`.
pub fn regularization_loss(pred: &ImageBuffer, reference: &ImageBuffer, gt: &ImageBuffer) -> Result<f64> {
    regularization_loss_with(Distance::L1, pred, reference, gt)
}

pub fn regularization_loss_with(
    distance: Distance,
    pred: &ImageBuffer,
    reference: &ImageBuffer,
    gt: &ImageBuffer,
) -> Result<f64> {
    reference.ensure_same_dims(gt)?;
    let d_pred = distance.eval(pred, gt)?;
    let d_ref = distance.eval(reference, gt)?;
    Ok((d_pred - d_ref).max(0.0))
}

/// Hinge value and its gradient in `pred`. The reference distance is a
/// constant, and the gradient is zero wherever the hinge is inactive.
pub fn regularization_grad(
    distance: Distance,
    pred: &ImageBuffer,
    reference: &ImageBuffer,
    gt: &ImageBuffer,
) -> Result<(f64, ImageBuffer)> {
    reference.ensure_same_dims(gt)?;
    let d_pred = distance.eval(pred, gt)?;
    let d_ref = distance.eval(reference, gt)?;
    if d_pred > d_ref {
        Ok((d_pred - d_ref, distance.grad(pred, gt)?))
    } else {
        Ok((0.0, ImageBuffer::new(pred.width, pred.height)))
    }
}

pub fn total_loss(
    pred: &ImageBuffer,
    reference: &ImageBuffer,
    gt: &ImageBuffer,
    model: &GaussianModel,
    w: &LossWeights,
) -> Result<f64> {
    Ok(w.lambda_reg * regularization_loss(pred, reference, gt)? + reconstruction_loss(pred, gt, model, w)?)
}

/// Individual loss terms of one evaluation.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossTerms {
    pub l1: f64,
    pub ssim: f64,
    pub volume: f64,
    pub reg: f64,
}

impl LossTerms {
    pub fn reconstruction(&self, w: &LossWeights) -> f64 {
        self.l1 + w.lambda_ssim * (1.0 - self.ssim) + w.lambda_vol * self.volume
    }

    pub fn total(&self, w: &LossWeights) -> f64 {
        w.lambda_reg * self.reg + self.reconstruction(w)
    }
}

/// Value and image-space gradient of the training objective.
///
/// With `reference = None` (or `λ_reg = 0`) this is the reconstruction
/// loss alone. The volume term's gradient does not flow through the image
/// and is returned separately by [`volume_reg_grad`].
pub fn objective_and_grad(
    pred: &ImageBuffer,
    gt: &ImageBuffer,
    reference: Option<&ImageBuffer>,
    model: &GaussianModel,
    w: &LossWeights,
    distance: Distance,
) -> Result<(LossTerms, ImageBuffer)> {
    let l1 = l1_loss(pred, gt)?;
    let mut grad = l1_grad(pred, gt)?;
    let (s, g_ssim) = ssim_grad(pred, gt)?;
    for (g, d) in grad.pixels.iter_mut().zip(&g_ssim.pixels) {
        *g -= w.lambda_ssim * d;
    }
    let mut reg = 0.0;
    if let (Some(reference), true) = (reference, w.lambda_reg > 0.0) {
        let (r, g_reg) = regularization_grad(distance, pred, reference, gt)?;
        reg = r;
        if r > 0.0 {
            for (g, d) in grad.pixels.iter_mut().zip(&g_reg.pixels) {
                *g += w.lambda_reg * d;
            }
        }
    }
    let terms = LossTerms {
        l1,
        ssim: s,
        volume: volume_reg(model),
        reg,
    };
    Ok((terms, grad))
}
