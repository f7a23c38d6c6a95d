//! Composition of render-ready Gaussians at a timestep.
//!
//! Anchor motion comes from the deformation network and reaches each offset
//! through a similarity weight. Scale and rotation deltas come straight from
//! their heads. All time-variant terms are multiplied by the anchor's gate:
//! the soft mask probability while training, and at inference either the
//! probability (anchors labelled dynamic) or nothing at all (static anchors
//! skip the time-variant heads).

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use crate::autodiff::{positional_encoding, AutodiffError, CustomOp, Graph, Tensor, Value, EXP_CLAMP};
use crate::heads::{deform_inputs, time_encoding_width, HeadBank, HeadVars, TIME_FREQUENCIES};
use crate::scene::{AnchorSet, AnchorVars};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Time at which the scene is in its canonical (anchor) configuration.
pub const CANONICAL_TIME: f64 = 0.0;
/// Mask probability above which an anchor is labelled dynamic.
pub const MASK_THRESHOLD: f64 = 0.5;
const KNN_EPS: f64 = 1e-6;
const COSINE_EPS: f64 = 1e-24;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum DeformError {
    #[error("feature lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("sigma must be positive, got {0}")]
    BadSigma(f64),
    #[error("knn_k must be at least 1")]
    BadKnn,
    #[error("unknown deformation strategy {0:?} (expected rbf, rigid, knn or cosine)")]
    UnknownStrategy(String),
    #[error("scene and heads disagree: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DeformKind {
    Rbf,
    Rigid,
    Knn,
    Cosine,
}

impl DeformKind {
    pub const ALL: [DeformKind; 4] = [DeformKind::Rbf, DeformKind::Rigid, DeformKind::Knn, DeformKind::Cosine];

    pub fn as_str(self) -> &'static str {
        match self {
            DeformKind::Rbf => "rbf",
            DeformKind::Rigid => "rigid",
            DeformKind::Knn => "knn",
            DeformKind::Cosine => "cosine",
        }
    }
}

impl fmt::Display for DeformKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DeformKind {
    type Err = DeformError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DeformKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| DeformError::UnknownStrategy(s.to_string()))
    }
}

/// How anchor motion is shared with its offsets.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DeformStrategy {
    pub kind: DeformKind,
    /// RBF bandwidth.
    pub sigma: f64,
    /// Neighbour count of the KNN strategy.
    pub knn_k: usize,
}

impl Default for DeformStrategy {
    fn default() -> Self {
        Self {
            kind: DeformKind::Rbf,
            sigma: 1.0,
            knn_k: 4,
        }
    }
}

impl DeformStrategy {
    pub fn new(kind: DeformKind) -> Self {
        Self {
            kind,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), DeformError> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(DeformError::BadSigma(self.sigma));
        }
        if self.knn_k == 0 {
            return Err(DeformError::BadKnn);
        }
        Ok(())
    }
}

/// Which anchors receive time-variant terms and with what weight.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Gating {
    /// Every anchor, scaled by its mask probability.
    Soft,
    /// Thresholded gate in the forward pass, identity gradient to the
    /// probability in the backward pass.
    StraightThrough,
    /// Each anchor's gate drawn from Bernoulli(p) with the given seed
    /// (training). Every Gaussian is rendered twice, deformed with opacity
    /// scaled by the gate and canonical with the complement, so the gate
    /// gradient is the difference between the two renderings rather than the
    /// local slope along the motion.
    Sampled { seed: u64 },
    /// Only anchors with probability above [`MASK_THRESHOLD`] at full weight;
    /// the rest skip the time-variant heads (inference).
    Hard,
    /// Every anchor at full weight; the time mask is not used.
    Disabled,
    /// No anchor receives time-variant terms.
    Frozen,
}

/// `exp(−‖f_a − f_o‖² / 2σ²)`.
pub fn rbf_weight(f_a: &[f64], f_o: &[f64], sigma: f64) -> Result<f64, DeformError> {
    if f_a.len() != f_o.len() {
        return Err(DeformError::LengthMismatch(f_a.len(), f_o.len()));
    }
    if !(sigma > 0.0) {
        return Err(DeformError::BadSigma(sigma));
    }
    let d2: f64 = f_a.iter().zip(f_o).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(rbf_from_sq(d2, sigma))
}

fn rbf_from_sq(d2: f64, sigma: f64) -> f64 {
    (d2 * (-1.0 / (2.0 * sigma * sigma))).min(EXP_CLAMP).exp()
}

/// `max(0, cos(f_a, f_o))`, zero when either vector vanishes.
pub fn cosine_weight(f_a: &[f64], f_o: &[f64]) -> Result<f64, DeformError> {
    if f_a.len() != f_o.len() {
        return Err(DeformError::LengthMismatch(f_a.len(), f_o.len()));
    }
    let dot: f64 = f_a.iter().zip(f_o).map(|(a, b)| a * b).sum();
    let na: f64 = f_a.iter().map(|a| a * a).sum();
    let nb: f64 = f_o.iter().map(|b| b * b).sum();
    Ok(cosine_from_parts(dot, na, nb))
}

fn cosine_from_parts(dot: f64, na2: f64, nb2: f64) -> f64 {
    (dot / (na2 * nb2 + COSINE_EPS).sqrt()).max(0.0)
}

/// Indices and normalized inverse-distance weights of the `k` anchors
/// nearest to `p`. Ties go to the lower index.
pub fn knn_weights(positions: &Tensor, p: [f64; 3], k: usize) -> Vec<(usize, f64)> {
    let mut d: Vec<(f64, usize)> = (0..positions.rows())
        .map(|j| {
            let r = positions.row(j);
            let s = (r[0] - p[0]).powi(2) + (r[1] - p[1]).powi(2) + (r[2] - p[2]).powi(2);
            (s.sqrt(), j)
        })
        .collect();
    let k = k.min(d.len());
    d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    d.truncate(k);
    let inv: Vec<f64> = d.iter().map(|(dist, _)| 1.0 / (dist + KNN_EPS)).collect();
    let total: f64 = inv.iter().sum();
    d.iter().zip(inv).map(|(&(_, j), w)| (j, w / total)).collect()
}

/// Motion of offset `k` of `anchor` given every anchor's (already gated)
/// motion, `N×3`.
pub fn offset_motion(
    strategy: &DeformStrategy,
    scene: &AnchorSet,
    anchor_motions: &Tensor,
    anchor: usize,
    k: usize,
) -> Result<[f64; 3], DeformError> {
    let m = anchor_motions.row(anchor);
    let d = scene.feature_dim();
    let f_a = scene.features.row(anchor);
    let f_o = &scene.offset_features.row(anchor)[k * d..(k + 1) * d];
    let w = match strategy.kind {
        DeformKind::Rigid => 1.0,
        DeformKind::Rbf => rbf_weight(f_a, f_o, strategy.sigma)?,
        DeformKind::Cosine => cosine_weight(f_a, f_o)?,
        DeformKind::Knn => {
            let p = scene.canonical_offset_position(anchor, k);
            let mut out = [0.0; 3];
            for (j, w) in knn_weights(scene.positions(), p, strategy.knn_k) {
                let mj = anchor_motions.row(j);
                for c in 0..3 {
                    out[c] += w * mj[c];
                }
            }
            return Ok(out);
        }
    };
    Ok([w * m[0], w * m[1], w * m[2]])
}

/// One render-ready Gaussian.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianPrimitive {
    pub position: [f64; 3],
    pub scale: [f64; 3],
    pub quaternion: [f64; 4],
    pub opacity: f64,
    pub color: [f64; 3],
    /// (anchor index, offset index).
    pub parent: (usize, usize),
}

/// Struct-of-arrays Gaussians, one row each: positions and scales `M×3`,
/// quaternions `M×4`, opacities `M×1`, colours `M×3`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianSet {
    pub positions: Tensor,
    pub scales: Tensor,
    pub quats: Tensor,
    pub opacities: Tensor,
    pub colors: Tensor,
    pub parents: Vec<(usize, usize)>,
}

impl GaussianSet {
    pub fn len(&self) -> usize {
        self.positions.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn empty() -> Self {
        Self::from_primitives(&[])
    }

    pub fn primitive(&self, i: usize) -> GaussianPrimitive {
        let a3 = |t: &Tensor| {
            let r = t.row(i);
            [r[0], r[1], r[2]]
        };
        let q = self.quats.row(i);
        GaussianPrimitive {
            position: a3(&self.positions),
            scale: a3(&self.scales),
            quaternion: [q[0], q[1], q[2], q[3]],
            opacity: self.opacities.get(i, 0),
            color: a3(&self.colors),
            parent: self.parents[i],
        }
    }

    pub fn to_primitives(&self) -> Vec<GaussianPrimitive> {
        (0..self.len()).map(|i| self.primitive(i)).collect()
    }

    pub fn from_primitives(prims: &[GaussianPrimitive]) -> Self {
        let m = prims.len();
        let flat = |f: &dyn Fn(&GaussianPrimitive) -> Vec<f64>, c: usize| {
            Tensor::new(m, c, prims.iter().flat_map(f).collect()).expect("primitive width")
        };
        Self {
            positions: flat(&|p| p.position.to_vec(), 3),
            scales: flat(&|p| p.scale.to_vec(), 3),
            quats: flat(&|p| p.quaternion.to_vec(), 4),
            opacities: flat(&|p| vec![p.opacity], 1),
            colors: flat(&|p| p.color.to_vec(), 3),
            parents: prims.iter().map(|p| p.parent).collect(),
        }
    }
}

/// Per-anchor unit direction from the camera centre to the anchor (`N×3`).
pub fn view_directions(positions: &Tensor, camera_center: [f64; 3]) -> Tensor {
    let mut out = Tensor::zeros(positions.rows(), 3);
    for r in 0..positions.rows() {
        let p = positions.row(r);
        let d = [p[0] - camera_center[0], p[1] - camera_center[1], p[2] - camera_center[2]];
        let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        let row = out.row_mut(r);
        if n > 0.0 {
            for c in 0..3 {
                row[c] = d[c] / n;
            }
        } else {
            row[2] = 1.0;
        }
    }
    out
}

fn check_consistent(scene: &AnchorSet, heads: &HeadBank) -> Result<(), DeformError> {
    if scene.k() != heads.k || scene.feature_dim() != heads.feature_dim {
        return Err(DeformError::Inconsistent(format!(
            "scene K={} d={}, heads K={} d={}",
            scene.k(),
            scene.feature_dim(),
            heads.k,
            heads.feature_dim
        )));
    }
    Ok(())
}

/// Constant `NK×N` matrix of KNN interpolation weights.
fn knn_matrix(scene: &AnchorSet, knn_k: usize) -> Tensor {
    let (n, k) = (scene.len(), scene.k());
    let mut m = Tensor::zeros(n * k, n);
    for a in 0..n {
        for o in 0..k {
            let p = scene.canonical_offset_position(a, o);
            for (j, w) in knn_weights(scene.positions(), p, knn_k) {
                m.set(a * k + o, j, w);
            }
        }
    }
    m
}

/// Graph handles of composed Gaussians, rows anchor-major, offset-minor.
#[derive(Clone, Copy, Debug)]
pub struct ComposedVars {
    pub positions: Value,
    pub scales: Value,
    pub quats: Value,
    pub opacities: Value,
    pub colors: Value,
    /// `N×1` mask probabilities.
    pub mask_probs: Value,
    /// Rendered rows per Gaussian: 2 under [`Gating::Sampled`] (deformed and
    /// canonical copies, interleaved), 1 otherwise.
    pub copies: usize,
}

/// Rows of `a` and `b` interleaved: `a0, b0, a1, b1, …`.
fn interleave(g: &mut Graph, a: Value, b: Value) -> Result<Value, AutodiffError> {
    let s = g.shape(a);
    let ab = g.concat(&[a, b])?;
    g.reshape(ab, 2 * s.rows, s.cols)
}

/// Differentiable composition used for training. `Gating::Hard` is not
/// differentiable and is treated as `Soft`.
#[allow(clippy::too_many_arguments)]
pub fn compose_graph(
    g: &mut Graph,
    scene: &AnchorSet,
    sv: &AnchorVars,
    heads: &HeadBank,
    hv: &HeadVars,
    strategy: &DeformStrategy,
    t: f64,
    camera_center: [f64; 3],
    gating: Gating,
) -> Result<ComposedVars, DeformError> {
    check_consistent(scene, heads)?;
    strategy.validate()?;
    let (n, k, d) = (scene.len(), scene.k(), scene.feature_dim());
    let nk = n * k;

    let f = sv.features;
    let logits = heads.opacity.forward_graph(g, &hv.opacity, f)?;
    let op = g.sigmoid(logits)?;
    let opacities = g.reshape(op, nk, 1)?;

    let color_in = if heads.view_dependent {
        let v = g.constant(view_directions(scene.positions(), camera_center));
        g.concat(&[f, v])?
    } else {
        f
    };
    let c = heads.color.forward_graph(g, &hv.color, color_in)?;
    let c = g.sigmoid(c)?;
    let colors = g.reshape(c, nk, 3)?;

    let mask_logit = heads.mask.forward_graph(g, &hv.mask, f)?;
    let mask_probs = g.sigmoid(mask_logit)?;
    let gate = match gating {
        Gating::Soft => Some(mask_probs),
        Gating::StraightThrough | Gating::Hard | Gating::Sampled { .. } => {
            let hard = Tensor::new(n, 1, binary_gates(g.value(mask_probs).data(), gating))?;
            Some(g.custom(Box::new(StraightThrough), &[mask_probs], hard))
        }
        Gating::Disabled => None,
        Gating::Frozen => Some(g.constant(Tensor::zeros(n, 1))),
    };
    let crossfade = matches!(gating, Gating::Sampled { .. });
    let gated = |g: &mut Graph, x: Value| -> Result<Value, AutodiffError> {
        match gate.filter(|_| !crossfade) {
            Some(p) => g.mul(x, p),
            None => Ok(x),
        }
    };

    // Time-variant outputs are taken relative to the canonical time.
    let mut tv_in = Vec::new();
    for time in [t, CANONICAL_TIME] {
        let enc = positional_encoding(&[time], TIME_FREQUENCIES);
        let tenc = g.constant(Tensor::from_fn(n, time_encoding_width(), |_, c| enc[c]));
        tv_in.push(g.concat(&[f, tenc])?);
    }
    let relative = |g: &mut Graph, mlp: &crate::heads::Mlp, vars: &crate::heads::MlpVars, inputs: &[Value]| {
        let now = mlp.forward_graph(g, vars, inputs[0])?;
        let canon = mlp.forward_graph(g, vars, inputs[1])?;
        g.sub(now, canon)
    };

    let ds = relative(g, &heads.scale, &hv.scale, &tv_in)?;
    let ds = gated(g, ds)?;
    let ds = g.reshape(ds, nk, 3)?;
    let sa = g.repeat_rows(sv.anchor_scales, k)?;
    let so = g.reshape(sv.offset_scales, nk, 3)?;
    let ls0 = g.add(sa, so)?;
    let ls = g.add(ls0, ds)?;
    let scales = g.exp(ls)?;
    let canon_scales = g.exp(ls0)?;

    let dr = relative(g, &heads.quat, &hv.quat, &tv_in)?;
    let dr = gated(g, dr)?;
    let dr = g.reshape(dr, nk, 4)?;
    let base = g.reshape(sv.offset_quats, nk, 4)?;
    let q = g.add(base, dr)?;
    let qn = g.row_squared_norm(q)?;
    let qn = g.sqrt(qn)?;
    let quats = g.div(q, qn)?;
    let bn = g.row_squared_norm(base)?;
    let bn = g.sqrt(bn)?;
    let canon_quats = g.div(base, bn)?;

    let din = [t, CANONICAL_TIME].map(|time| g.constant(deform_inputs(scene.positions(), time)));
    let dx = relative(g, &heads.deform, &hv.deform, &din)?;
    let dx = gated(g, dx)?;
    let motion = match strategy.kind {
        DeformKind::Rigid => g.repeat_rows(dx, k)?,
        DeformKind::Knn => {
            let w = g.constant(knn_matrix(scene, strategy.knn_k));
            g.matmul(w, dx)?
        }
        DeformKind::Rbf | DeformKind::Cosine => {
            let fo = g.reshape(sv.offset_features, nk, d)?;
            let fa = g.repeat_rows(f, k)?;
            let w = if strategy.kind == DeformKind::Rbf {
                let diff = g.sub(fo, fa)?;
                let d2 = g.row_squared_norm(diff)?;
                let e = g.scale(d2, -1.0 / (2.0 * strategy.sigma * strategy.sigma))?;
                g.exp(e)?
            } else {
                let prod = g.mul(fo, fa)?;
                let dot = g.row_sum(prod)?;
                let na = g.row_squared_norm(fa)?;
                let nb = g.row_squared_norm(fo)?;
                let nn = g.mul(na, nb)?;
                let nn = g.add_scalar(nn, COSINE_EPS)?;
                let nn = g.sqrt(nn)?;
                let cos = g.div(dot, nn)?;
                g.relu(cos)?
            };
            let rep = g.repeat_rows(dx, k)?;
            g.mul(w, rep)?
        }
    };
    let xa = g.repeat_rows(sv.positions, k)?;
    let xo = g.reshape(sv.offset_positions, nk, 3)?;
    let ps = g.repeat_rows(sv.position_scale, k)?;
    let local = g.mul(xo, ps)?;
    let canon = g.add(xa, local)?;
    let positions = g.add(canon, motion)?;

    if !crossfade {
        return Ok(ComposedVars {
            positions,
            scales,
            quats,
            opacities,
            colors,
            mask_probs,
            copies: 1,
        });
    }
    let gk = g.repeat_rows(gate.expect("sampled gate"), k)?;
    let on = g.mul(opacities, gk)?;
    let off = g.sub(opacities, on)?;
    Ok(ComposedVars {
        positions: interleave(g, positions, canon)?,
        scales: interleave(g, scales, canon_scales)?,
        quats: interleave(g, quats, canon_quats)?,
        opacities: interleave(g, on, off)?,
        colors: interleave(g, colors, colors)?,
        mask_probs,
        copies: 2,
    })
}

/// 0/1 gate per anchor for the binary gating modes.
fn binary_gates(probs: &[f64], gating: Gating) -> Vec<f64> {
    match gating {
        Gating::Sampled { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            probs.iter().map(|&p| f64::from(u8::from(rng.gen::<f64>() < p))).collect()
        }
        _ => probs.iter().map(|&p| f64::from(u8::from(p > MASK_THRESHOLD))).collect(),
    }
}

/// Passes the output gradient through unchanged.
struct StraightThrough;

impl CustomOp for StraightThrough {
    fn name(&self) -> &str {
        "straight_through"
    }

    fn backward(&self, _inputs: &[&Tensor], _output: &Tensor, grad_output: &Tensor) -> Vec<Option<Tensor>> {
        vec![Some(grad_output.clone())]
    }
}

/// Composition without a graph. Also reports how long the time-variant head
/// queries took.
#[derive(Clone, Debug)]
pub struct Composed {
    pub gaussians: GaussianSet,
    pub mask_probs: Vec<f64>,
    /// Anchors that received time-variant terms.
    pub dynamic: Vec<bool>,
    pub time_variant: Duration,
}

pub fn compose_gaussians(
    scene: &AnchorSet,
    heads: &HeadBank,
    strategy: &DeformStrategy,
    t: f64,
    camera_center: [f64; 3],
    gating: Gating,
) -> Result<GaussianSet, DeformError> {
    Ok(compose_profiled(scene, heads, strategy, t, camera_center, gating)?.gaussians)
}

pub fn compose_profiled(
    scene: &AnchorSet,
    heads: &HeadBank,
    strategy: &DeformStrategy,
    t: f64,
    camera_center: [f64; 3],
    gating: Gating,
) -> Result<Composed, DeformError> {
    check_consistent(scene, heads)?;
    strategy.validate()?;
    let (n, k, d) = (scene.len(), scene.k(), scene.feature_dim());
    let nk = n * k;
    let feats = &scene.features;

    let opacities = heads.opacity_batch(feats).reshaped(nk, 1)?;
    let colors = heads
        .color_batch(feats, &view_directions(scene.positions(), camera_center))
        .reshaped(nk, 3)?;
    let mask_probs = heads.mask_batch(feats).into_data();

    let start = Instant::now();
    let (rows, gates): (Vec<usize>, Vec<f64>) = match gating {
        Gating::Soft => (0..n).map(|a| (a, mask_probs[a])).unzip(),
        Gating::StraightThrough | Gating::Sampled { .. } => binary_gates(&mask_probs, gating).into_iter().enumerate().unzip(),
        Gating::Hard => (0..n).filter(|&a| mask_probs[a] > MASK_THRESHOLD).map(|a| (a, 1.0)).unzip(),
        Gating::Disabled => (0..n).map(|a| (a, 1.0)).unzip(),
        Gating::Frozen => (Vec::new(), Vec::new()),
    };
    let mut dynamic = vec![false; n];
    // Gated deltas for every anchor; zero rows for skipped anchors.
    let mut ds = Tensor::zeros(n, 3 * k);
    let mut dr = Tensor::zeros(n, 4 * k);
    let mut dx = Tensor::zeros(n, 3);
    if !rows.is_empty() {
        let sub_f = feats.select_rows(&rows);
        let sub_x = scene.positions().select_rows(&rows);
        let relative = |mlp: &crate::heads::Mlp, input: &dyn Fn(f64) -> Tensor| {
            let now = mlp.forward(&input(t));
            let canon = mlp.forward(&input(CANONICAL_TIME));
            now.zip_map(&canon, |a, b| a - b)
        };
        let s = relative(&heads.scale, &|time| heads.time_variant_input(&sub_f, time));
        let q = relative(&heads.quat, &|time| heads.time_variant_input(&sub_f, time));
        let m = relative(&heads.deform, &|time| deform_inputs(&sub_x, time));
        for (i, (&a, &gt)) in rows.iter().zip(&gates).enumerate() {
            dynamic[a] = gt > 0.0;
            let apply = |src: &[f64], dst: &mut [f64]| {
                for (o, v) in dst.iter_mut().zip(src) {
                    *o = if gating == Gating::Disabled { *v } else { v * gt };
                }
            };
            apply(s.row(i), ds.row_mut(a));
            apply(q.row(i), dr.row_mut(a));
            if matches!(gating, Gating::Sampled { .. }) {
                // Neighbour motion reaches KNN offsets ungated, as in training.
                dx.row_mut(a).copy_from_slice(m.row(i));
            } else {
                apply(m.row(i), dx.row_mut(a));
            }
        }
    }
    let time_variant = start.elapsed();

    let knn = (strategy.kind == DeformKind::Knn).then(|| knn_matrix(scene, strategy.knn_k));
    let mut positions = Tensor::zeros(nk, 3);
    let mut scales = Tensor::zeros(nk, 3);
    let mut quats = Tensor::zeros(nk, 4);
    let mut parents = Vec::with_capacity(nk);
    for a in 0..n {
        let xa = scene.position(a);
        let fa = feats.row(a);
        let sa = scene.anchor_scales.row(a);
        let ps = scene.position_scale.row(a);
        for o in 0..k {
            let row = a * k + o;
            parents.push((a, o));
            let so = &scene.offset_scales.row(a)[3 * o..3 * o + 3];
            let dso = &ds.row(a)[3 * o..3 * o + 3];
            for c in 0..3 {
                scales.set(row, c, (sa[c] + so[c] + dso[c]).min(EXP_CLAMP).exp());
            }
            let base = &scene.offset_quats.row(a)[4 * o..4 * o + 4];
            let dq = &dr.row(a)[4 * o..4 * o + 4];
            let q: Vec<f64> = (0..4).map(|c| base[c] + dq[c]).collect();
            let qn = q.iter().map(|v| v * v).sum::<f64>().sqrt();
            for c in 0..4 {
                quats.set(row, c, q[c] / qn);
            }

            let motion = if !dynamic[a] {
                [0.0; 3]
            } else {
                let m = dx.row(a);
                let fo = &scene.offset_features.row(a)[d * o..d * o + d];
                let w = match strategy.kind {
                    DeformKind::Rigid => Some(1.0),
                    DeformKind::Rbf => {
                        let d2: f64 = fo.iter().zip(fa).map(|(x, y)| (x - y) * (x - y)).sum();
                        Some(rbf_from_sq(d2, strategy.sigma))
                    }
                    DeformKind::Cosine => {
                        let dot: f64 = fo.iter().zip(fa).map(|(x, y)| x * y).sum();
                        let na: f64 = fa.iter().map(|v| v * v).sum();
                        let nb: f64 = fo.iter().map(|v| v * v).sum();
                        Some(cosine_from_parts(dot, na, nb))
                    }
                    DeformKind::Knn => None,
                };
                match (w, &knn) {
                    (Some(w), _) => [w * m[0], w * m[1], w * m[2]],
                    (None, Some(km)) => {
                        let wr = km.row(row);
                        let mut out = [0.0; 3];
                        for (j, &wj) in wr.iter().enumerate() {
                            if wj != 0.0 {
                                for c in 0..3 {
                                    out[c] += wj * dx.get(j, c);
                                }
                            }
                        }
                        out
                    }
                    (None, None) => unreachable!("knn matrix built for knn strategy"),
                }
            };
            let xo = &scene.offset_positions.row(a)[3 * o..3 * o + 3];
            for c in 0..3 {
                positions.set(row, c, xa[c] + xo[c] * ps[c] + motion[c]);
            }
        }
    }
    let gaussians = GaussianSet {
        positions,
        scales,
        quats,
        opacities,
        colors,
        parents,
    };
    Ok(Composed {
        gaussians,
        mask_probs,
        dynamic,
        time_variant,
    })
}
