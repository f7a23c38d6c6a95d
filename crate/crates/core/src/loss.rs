//! Photometric loss: L1, single-scale SSIM and the time-mask regularizer.

use crate::autodiff::{AutodiffError, CustomOp, Graph, Tensor, Value};
use crate::raster::{Image, RasterError};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
pub const DEFAULT_LAMBDA: f64 = 0.2;
pub const DEFAULT_LAMBDA_T: f64 = 0.2;

fn window() -> [f64; SSIM_WINDOW] {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut w = [0.0; SSIM_WINDOW];
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Separable Gaussian blur of one `h×w` plane with zero padding. The kernel
/// is symmetric, so this is also its own adjoint.
fn blur(src: &[f64], w: usize, h: usize) -> Vec<f64> {
    let k = window();
    let r = (SSIM_WINDOW / 2) as isize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let xx = x as isize + i as isize - r;
                if xx >= 0 && (xx as usize) < w {
                    acc += kv * src[y * w + xx as usize];
                }
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let yy = y as isize + i as isize - r;
                if yy >= 0 && (yy as usize) < h {
                    acc += kv * tmp[yy as usize * w + x];
                }
            }
            out[y * w + x] = acc;
        }
    }
    out
}

fn channel(data: &[f64], c: usize) -> Vec<f64> {
    data.iter().skip(c).step_by(3).copied().collect()
}

struct Stats {
    mu_a: Vec<f64>,
    mu_b: Vec<f64>,
    var_a: Vec<f64>,
    var_b: Vec<f64>,
    cov: Vec<f64>,
}

fn stats(a: &[f64], b: &[f64], w: usize, h: usize) -> Stats {
    let mu_a = blur(a, w, h);
    let mu_b = blur(b, w, h);
    let sq = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).collect::<Vec<_>>();
    let e_aa = blur(&sq(a, a), w, h);
    let e_bb = blur(&sq(b, b), w, h);
    let e_ab = blur(&sq(a, b), w, h);
    let n = w * h;
    Stats {
        var_a: (0..n).map(|i| e_aa[i] - mu_a[i] * mu_a[i]).collect(),
        var_b: (0..n).map(|i| e_bb[i] - mu_b[i] * mu_b[i]).collect(),
        cov: (0..n).map(|i| e_ab[i] - mu_a[i] * mu_b[i]).collect(),
        mu_a,
        mu_b,
    }
}

/// Mean SSIM over pixels and channels of interleaved RGB buffers.
fn ssim_data(a: &[f64], b: &[f64], w: usize, h: usize) -> f64 {
    let mut total = 0.0;
    for c in 0..3 {
        let s = stats(&channel(a, c), &channel(b, c), w, h);
        for i in 0..w * h {
            let l = 2.0 * s.mu_a[i] * s.mu_b[i] + SSIM_C1;
            let cs = 2.0 * s.cov[i] + SSIM_C2;
            let m = s.mu_a[i] * s.mu_a[i] + s.mu_b[i] * s.mu_b[i] + SSIM_C1;
            let v = s.var_a[i] + s.var_b[i] + SSIM_C2;
            total += l * cs / (m * v);
        }
    }
    total / (3 * w * h) as f64
}

/// `∂ssim/∂a`, interleaved like the input.
fn ssim_grad_data(a: &[f64], b: &[f64], w: usize, h: usize) -> Vec<f64> {
    let n = w * h;
    let scale = 1.0 / (3 * n) as f64;
    let mut out = vec![0.0; 3 * n];
    for c in 0..3 {
        let (ca, cb) = (channel(a, c), channel(b, c));
        let s = stats(&ca, &cb, w, h);
        // Gradients with respect to the blurred maps E[a], E[a²], E[ab].
        let mut g_ea = vec![0.0; n];
        let mut g_eaa = vec![0.0; n];
        let mut g_eab = vec![0.0; n];
        for i in 0..n {
            let (ma, mb) = (s.mu_a[i], s.mu_b[i]);
            let l = 2.0 * ma * mb + SSIM_C1;
            let cs = 2.0 * s.cov[i] + SSIM_C2;
            let m = ma * ma + mb * mb + SSIM_C1;
            let v = s.var_a[i] + s.var_b[i] + SSIM_C2;
            let d_mu = 2.0 * mb * cs / (m * v) - l * cs * 2.0 * ma / (m * m * v);
            let d_var = -l * cs / (m * v * v);
            let d_cov = 2.0 * l / (m * v);
            g_ea[i] = scale * (d_mu - 2.0 * ma * d_var - mb * d_cov);
            g_eaa[i] = scale * d_var;
            g_eab[i] = scale * d_cov;
        }
        let (ba, baa, bab) = (blur(&g_ea, w, h), blur(&g_eaa, w, h), blur(&g_eab, w, h));
        for i in 0..n {
            out[3 * i + c] = ba[i] + 2.0 * ca[i] * baa[i] + cb[i] * bab[i];
        }
    }
    out
}

/// Structural similarity of two images, averaged over channels.
pub fn ssim(a: &Image, b: &Image) -> Result<f64, RasterError> {
    a.same_size(b)?;
    Ok(ssim_data(&a.data, &b.data, a.width, a.height))
}

struct SsimOp {
    width: usize,
    height: usize,
}

impl CustomOp for SsimOp {
    fn name(&self) -> &str {
        "ssim"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad_output: &Tensor) -> Vec<Option<Tensor>> {
        let g = grad_output.item();
        let (w, h) = (self.width, self.height);
        let (a, b) = (inputs[0].data(), inputs[1].data());
        let wrap = |d: Vec<f64>| Tensor::new(w * h, 3, d.into_iter().map(|v| v * g).collect()).expect("image");
        vec![Some(wrap(ssim_grad_data(a, b, w, h))), Some(wrap(ssim_grad_data(b, a, w, h)))]
    }
}

/// SSIM of two `(H·W)×3` image values as a graph node.
pub fn ssim_graph(g: &mut Graph, a: Value, b: Value, width: usize, height: usize) -> Result<Value, AutodiffError> {
    let (sa, sb) = (g.shape(a), g.shape(b));
    if sa != sb || sa.rows != width * height || sa.cols != 3 {
        return Err(AutodiffError::ShapeMismatch {
            op: "ssim",
            lhs: sa,
            rhs: sb,
        });
    }
    let value = ssim_data(g.value(a).data(), g.value(b).data(), width, height);
    Ok(g.custom(Box::new(SsimOp { width, height }), &[a, b], Tensor::scalar(value)))
}

/// Loss terms of one step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossTerms {
    pub total: f64,
    pub l1: f64,
    pub ssim: f64,
    pub mask: f64,
}

/// `(1−λ)·L1 + λ·(1 − SSIM) + λ_t·mean(p)`.
pub fn total_loss(render: &Image, gt: &Image, mask_probs: &[f64], lambda: f64, lambda_t: f64) -> Result<LossTerms, RasterError> {
    render.same_size(gt)?;
    let l1 = render.data.iter().zip(&gt.data).map(|(a, b)| (a - b).abs()).sum::<f64>() / render.data.len() as f64;
    let s = ssim(render, gt)?;
    let mask = if mask_probs.is_empty() {
        0.0
    } else {
        mask_probs.iter().sum::<f64>() / mask_probs.len() as f64
    };
    Ok(LossTerms {
        total: (1.0 - lambda) * l1 + lambda * (1.0 - s) + lambda_t * mask,
        l1,
        ssim: s,
        mask,
    })
}

/// Graph handles of the loss terms.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Value,
    pub l1: Value,
    pub ssim: Value,
    pub mask: Value,
}

/// Graph form of [`total_loss`]; `render` and `gt` are `(H·W)×3`, `mask_probs` is `N×1`.
#[allow(clippy::too_many_arguments)]
pub fn total_loss_graph(
    g: &mut Graph,
    render: Value,
    gt: Value,
    mask_probs: Value,
    width: usize,
    height: usize,
    lambda: f64,
    lambda_t: f64,
) -> Result<LossVars, AutodiffError> {
    let diff = g.sub(render, gt)?;
    let ad = g.abs(diff)?;
    let l1 = g.mean(ad)?;
    let s = ssim_graph(g, render, gt, width, height)?;
    let mask = g.mean(mask_probs)?;
    let a = g.scale(l1, 1.0 - lambda)?;
    let dissim = g.neg(s)?;
    let dissim = g.add_scalar(dissim, 1.0)?;
    let b = g.scale(dissim, lambda)?;
    let c = g.scale(mask, lambda_t)?;
    let ab = g.add(a, b)?;
    let total = g.add(ab, c)?;
    Ok(LossVars {
        total,
        l1,
        ssim: s,
        mask,
    })
}
