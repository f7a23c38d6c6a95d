//! Optimization loop: loss assembly, Adam updates and the anchor
//! densify/prune lifecycle.

use std::cell::RefCell;
use std::rc::Rc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{AutodiffError, Graph, Tensor, Value};
use crate::deform::{compose_gaussians, compose_graph, DeformError, DeformKind, DeformStrategy, Gating, MASK_THRESHOLD};
use crate::heads::HeadBank;
use crate::loss::{ssim, total_loss_graph, DEFAULT_LAMBDA, DEFAULT_LAMBDA_T};
use crate::raster::{render_gaussians, render_graph, CameraFrame, Image, RasterError, RenderMode};
use crate::scene::{
    learnable_inventory, learnable_inventory_mut, voxelize_points, AnchorSet, ParamGroup, PointCloud, SceneError,
    DEFAULT_FEATURE_DIM, DEFAULT_OFFSETS, DEFAULT_VOXEL_SIZE,
};
use crate::synthetic::psnr;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("no training frames")]
    NoFrames,
    #[error("frame {0} has no ground-truth image")]
    MissingGroundTruth(usize),
    #[error("non-finite {what} at iteration {iteration} (parameter group {group})")]
    NonFinite { iteration: usize, what: String, group: String },
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Deform(#[from] DeformError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// Base learning rate of every parameter group. Head and deformation rates
/// decay exponentially to `decay_ratio` of their base over the run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LearningRates {
    pub features: f64,
    pub offsets: f64,
    pub scales: f64,
    pub heads: f64,
    pub mask: f64,
    pub deform: f64,
    pub decay_ratio: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            features: 0.0075,
            offsets: 0.01,
            scales: 0.007,
            heads: 0.002,
            mask: 0.002,
            deform: 0.0008,
            decay_ratio: 0.01,
        }
    }
}

impl LearningRates {
    pub fn at(&self, group: ParamGroup, iteration: usize, total: usize) -> f64 {
        let progress = if total == 0 {
            0.0
        } else {
            (iteration as f64 / total as f64).min(1.0)
        };
        let decay = self.decay_ratio.powf(progress);
        match group {
            ParamGroup::Features => self.features,
            ParamGroup::Offsets => self.offsets,
            ParamGroup::Scales => self.scales,
            ParamGroup::Heads => self.heads * decay,
            ParamGroup::Mask => self.mask * decay,
            ParamGroup::Deform => self.deform * decay,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub iterations: usize,
    pub lambda: f64,
    pub lambda_t: f64,
    pub densify_interval: usize,
    pub densify_grad_threshold: f64,
    pub densify_subvoxels: usize,
    pub prune_opacity_threshold: f64,
    pub densify_start: usize,
    /// Last iteration that may densify or prune; see [`TrainConfig::densify_end`].
    pub densify_stop: usize,
    pub lr: LearningRates,
    pub seed: u64,
    pub deform: DeformStrategy,
    /// Gate time-variant terms with the learned mask; when off the mask
    /// regularizer is dropped and every anchor is treated as dynamic.
    pub time_mask: bool,
    pub voxel_size: f64,
    pub offsets: usize,
    pub feature_dim: usize,
    pub view_dependent: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 30_000,
            lambda: DEFAULT_LAMBDA,
            lambda_t: DEFAULT_LAMBDA_T,
            densify_interval: 100,
            densify_grad_threshold: 0.0002,
            densify_subvoxels: 8,
            prune_opacity_threshold: 0.005,
            densify_start: 500,
            densify_stop: 15_000,
            lr: LearningRates::default(),
            seed: 0,
            deform: DeformStrategy::default(),
            time_mask: true,
            voxel_size: DEFAULT_VOXEL_SIZE,
            offsets: DEFAULT_OFFSETS,
            feature_dim: DEFAULT_FEATURE_DIM,
            view_dependent: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if !(0.0..=1.0).contains(&self.lambda) || !(0.0..=1.0).contains(&self.lambda_t) {
            return bad("lambda and lambda_t must lie in [0, 1]");
        }
        if !(self.densify_grad_threshold > 0.0) {
            return bad("densify_grad_threshold must be positive");
        }
        if !matches!(self.densify_subvoxels, 4 | 8) {
            return bad("densify_subvoxels must be 4 or 8");
        }
        if self.densify_interval == 0 {
            return bad("densify_interval must be at least 1");
        }
        if !(self.voxel_size > 0.0) {
            return bad("voxel_size must be positive");
        }
        if self.offsets == 0 || self.feature_dim == 0 {
            return bad("offsets and feature_dim must be at least 1");
        }
        self.deform.validate()?;
        Ok(())
    }

    /// Last densify/prune iteration: `densify_stop`, but never past the
    /// middle of the run so short runs keep the same proportions. Until then
    /// every anchor is treated as dynamic and the mask is not trained.
    pub fn densify_end(&self) -> usize {
        self.densify_stop.min(self.iterations / 2)
    }

    /// Gating at a 1-based training iteration; `seed` drives the sampled
    /// mask gates.
    pub fn gating_at(&self, iteration: usize, seed: u64) -> Gating {
        if iteration <= self.densify_end() {
            Gating::Disabled
        } else if self.time_mask {
            Gating::Sampled { seed }
        } else {
            Gating::Disabled
        }
    }

    /// Mask regularizer weight at a 1-based training iteration.
    pub fn lambda_t_at(&self, iteration: usize) -> f64 {
        if self.time_mask && iteration > self.densify_end() {
            self.lambda_t
        } else {
            0.0
        }
    }

    /// Gating used when rendering a model trained with this configuration.
    pub fn inference_gating(&self) -> Gating {
        if self.time_mask {
            Gating::Hard
        } else {
            Gating::Disabled
        }
    }
}

/// Voxelized anchors and freshly initialized heads.
pub fn init_model(cloud: &PointCloud, config: &TrainConfig) -> Result<(AnchorSet, HeadBank), TrainError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let scene = voxelize_points(cloud, config.voxel_size, config.offsets, config.feature_dim, &mut rng)?;
    let heads = HeadBank::new(config.offsets, config.feature_dim, config.view_dependent, &mut rng);
    Ok((scene, heads))
}

/// Adam with per-group learning rates; one moment pair per inventory entry.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(scene: &AnchorSet, heads: &HeadBank) -> Self {
        let zeros: Vec<Tensor> = learnable_inventory(scene, heads)
            .iter()
            .map(|p| Tensor::zeros(p.tensor.rows(), p.tensor.cols()))
            .collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-15,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn update(&mut self, scene: &mut AnchorSet, heads: &mut HeadBank, grads: &[Tensor], lr: impl Fn(ParamGroup) -> f64) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (i, p) in learnable_inventory_mut(scene, heads).into_iter().enumerate() {
            let rate = lr(p.group);
            let (m, v, g) = (self.m[i].data_mut(), self.v[i].data_mut(), grads[i].data());
            for (j, x) in p.tensor.data_mut().iter_mut().enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let mh = m[j] / bc1;
                let vh = v[j] / bc2;
                *x -= rate * mh / (vh.sqrt() + self.eps);
            }
        }
    }

    /// Zero moments for anchors appended to the scene.
    fn grow(&mut self, scene: &AnchorSet, heads: &HeadBank) {
        for (i, p) in learnable_inventory(scene, heads).iter().enumerate() {
            if p.per_anchor {
                let extra = p.tensor.rows() - self.m[i].rows();
                let z = Tensor::zeros(extra, p.tensor.cols());
                self.m[i].append_rows(&z).expect("moment width");
                self.v[i].append_rows(&z).expect("moment width");
            }
        }
    }

    fn retain(&mut self, per_anchor: &[bool], keep: &[usize]) {
        for (i, &pa) in per_anchor.iter().enumerate() {
            if pa {
                self.m[i] = self.m[i].select_rows(keep);
                self.v[i] = self.v[i].select_rows(keep);
            }
        }
    }
}

/// Densification and pruning statistics over the current window.
#[derive(Clone, Debug, PartialEq)]
pub struct GradStats {
    /// Sum over steps of each anchor's mean screen-space gradient norm.
    pub grad_sum: Vec<f64>,
    /// Steps in which the anchor had at least one visible offset.
    pub grad_count: Vec<u32>,
    /// Per-offset opacity sums, `N×K` row-major.
    pub opacity_sum: Vec<f64>,
    pub opacity_count: u32,
    k: usize,
}

impl GradStats {
    pub fn new(n: usize, k: usize) -> Self {
        Self {
            grad_sum: vec![0.0; n],
            grad_count: vec![0; n],
            opacity_sum: vec![0.0; n * k],
            opacity_count: 0,
            k,
        }
    }

    pub fn len(&self) -> usize {
        self.grad_sum.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grad_sum.is_empty()
    }

    /// Adds one step: `screen` and `opacities` hold one entry per Gaussian.
    pub fn record(&mut self, screen: &[f64], opacities: &[f64]) {
        let k = self.k;
        for a in 0..self.len() {
            let s = &screen[a * k..(a + 1) * k];
            let visible = s.iter().filter(|&&v| v > 0.0).count();
            if visible > 0 {
                self.grad_sum[a] += s.iter().sum::<f64>() / visible as f64;
                self.grad_count[a] += 1;
            }
        }
        for (acc, o) in self.opacity_sum.iter_mut().zip(opacities) {
            *acc += o;
        }
        self.opacity_count += 1;
    }

    pub fn mean_grad(&self, a: usize) -> f64 {
        if self.grad_count[a] == 0 {
            0.0
        } else {
            self.grad_sum[a] / f64::from(self.grad_count[a])
        }
    }

    pub fn mean_opacity(&self, a: usize) -> f64 {
        if self.opacity_count == 0 {
            return 1.0;
        }
        let k = self.k;
        self.opacity_sum[a * k..(a + 1) * k].iter().sum::<f64>() / (k as f64 * f64::from(self.opacity_count))
    }
}

/// Sub-voxel centres of anchor `n`'s cell.
fn subvoxel_centers(scene: &AnchorSet, n: usize, m: usize) -> Vec<[f64; 3]> {
    let o = scene.cell_origin(n);
    let c = scene.cell_size(n);
    let mut out = Vec::with_capacity(m);
    let zs: &[f64] = if m == 8 { &[0.25, 0.75] } else { &[0.5] };
    for &fz in zs {
        for fy in [0.25, 0.75] {
            for fx in [0.25, 0.75] {
                out.push([o[0] + fx * c, o[1] + fy * c, o[2] + fz * c]);
            }
        }
    }
    out
}

/// Spawns children for anchors whose mean gradient exceeds `eps`. Returns the
/// number of anchors added. Existing anchors are untouched.
pub fn densify_anchors<R: Rng>(scene: &mut AnchorSet, stats: &GradStats, eps: f64, m: usize, rng: &mut R) -> usize {
    let n = scene.len();
    let mut occupied: Vec<[f64; 3]> = (0..n).map(|a| scene.position(a)).collect();
    let mut added = 0;
    for a in 0..n {
        if stats.mean_grad(a) <= eps {
            continue;
        }
        let level = scene.levels()[a] + 1;
        let feature = scene.features.row(a).to_vec();
        for p in subvoxel_centers(scene, a, m) {
            let tol = scene.voxel_size() * 1e-9;
            if occupied.iter().any(|q| (0..3).all(|i| (q[i] - p[i]).abs() <= tol)) {
                continue;
            }
            scene.push_child(p, level, &feature, rng);
            occupied.push(p);
            added += 1;
        }
    }
    added
}

/// Removes anchors whose mean offset opacity is below `threshold`, returning
/// the surviving indices in order.
pub fn prune_anchors(scene: &mut AnchorSet, stats: &GradStats, threshold: f64) -> Result<Vec<usize>, SceneError> {
    let keep: Vec<usize> = (0..scene.len()).filter(|&a| stats.mean_opacity(a) >= threshold).collect();
    if keep.len() != scene.len() {
        scene.retain_rows(&keep)?;
    }
    Ok(keep)
}

/// One row of the metrics log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsRow {
    pub iteration: usize,
    pub loss: f64,
    pub l1: f64,
    pub ssim: f64,
    pub mask_loss: f64,
    pub psnr: f64,
    pub n_anchors: usize,
    pub n_dynamic_anchors: usize,
    pub wall_ms: f64,
}

impl MetricsRow {
    pub const HEADER: &'static str = "iteration,loss,l1,ssim,mask_loss,psnr,n_anchors,n_dynamic_anchors,wall_ms";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{:.3}",
            self.iteration,
            self.loss,
            self.l1,
            self.ssim,
            self.mask_loss,
            self.psnr,
            self.n_anchors,
            self.n_dynamic_anchors,
            self.wall_ms
        )
    }
}

/// Complete optimizer state.
pub struct Trainer {
    pub scene: AnchorSet,
    pub heads: HeadBank,
    pub config: TrainConfig,
    pub iteration: usize,
    pub rng: ChaCha8Rng,
    adam: Adam,
    stats: GradStats,
    order: Vec<usize>,
    cursor: usize,
    started: Instant,
    mask_grad: Vec<f64>,
}

impl Trainer {
    pub fn new(scene: AnchorSet, heads: HeadBank, config: TrainConfig) -> Result<Self, TrainError> {
        config.validate()?;
        let adam = Adam::new(&scene, &heads);
        let stats = GradStats::new(scene.len(), scene.k());
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1);
        Ok(Self {
            scene,
            heads,
            config,
            iteration: 0,
            rng,
            adam,
            stats,
            order: Vec::new(),
            cursor: 0,
            started: Instant::now(),
            mask_grad: Vec::new(),
        })
    }

    fn next_frame(&mut self, n: usize) -> usize {
        if self.cursor >= self.order.len() {
            self.order = (0..n).collect();
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        self.cursor += 1;
        self.order[self.cursor - 1]
    }

    fn inventory_names(&self) -> Vec<(String, ParamGroup, bool)> {
        learnable_inventory(&self.scene, &self.heads)
            .into_iter()
            .map(|p| (p.name, p.group, p.per_anchor))
            .collect()
    }

    /// One optimization step on a seeded-shuffled frame.
    pub fn step(&mut self, frames: &[CameraFrame]) -> Result<MetricsRow, TrainError> {
        if frames.is_empty() {
            return Err(TrainError::NoFrames);
        }
        let fi = self.next_frame(frames.len());
        let frame = &frames[fi];
        let gt = frame.ground_truth.as_ref().ok_or(TrainError::MissingGroundTruth(fi))?;
        let (w, h) = (frame.width, frame.height);
        self.iteration += 1;
        let it = self.iteration;

        let gating = self.config.gating_at(it, self.rng.gen());
        let mut g = Graph::new();
        let sv = self.scene.bind(&mut g);
        let hv = self.heads.bind(&mut g);
        let c = compose_graph(
            &mut g,
            &self.scene,
            &sv,
            &self.heads,
            &hv,
            &self.config.deform,
            frame.t,
            frame.center(),
            gating,
        )?;
        let sink = Rc::new(RefCell::new(Vec::new()));
        let img = render_graph(
            &mut g,
            c.positions,
            c.scales,
            c.quats,
            c.opacities,
            c.colors,
            frame,
            Some(sink.clone()),
        )?;
        let gtv = g.constant(gt.to_tensor());
        let lambda_t = self.config.lambda_t_at(it);
        let l = total_loss_graph(&mut g, img, gtv, c.mask_probs, w, h, self.config.lambda, lambda_t)?;
        let loss = g.value(l.total).item();
        if !loss.is_finite() {
            return Err(self.non_finite(&g, &sv, &hv, "loss"));
        }
        g.backward(l.total)?;

        let vars: Vec<Value> = crate::scene::AnchorSet::var_list(&sv)
            .into_iter()
            .chain(hv.values())
            .collect();
        let grads: Vec<Tensor> = vars.iter().map(|v| g.grad_or_zero(*v)).collect();
        let names = self.inventory_names();
        if let Some(i) = grads.iter().position(|t| !t.is_finite()) {
            return Err(TrainError::NonFinite {
                iteration: it,
                what: format!("gradient of {}", names[i].0),
                group: format!("{:?}", names[i].1),
            });
        }
        let render = Image::from_tensor(w, h, g.value(img))?;
        let mask_probs = g.value(c.mask_probs).data().to_vec();
        self.mask_grad = g.grad_or_zero(c.mask_probs).into_data();
        let fold = |v: &[f64]| -> Vec<f64> { v.chunks(c.copies).map(|ch| ch.iter().sum()).collect() };
        let opacities = fold(g.value(c.opacities).data());
        let row = MetricsRow {
            iteration: it,
            loss,
            l1: g.value(l.l1).item(),
            ssim: g.value(l.ssim).item(),
            mask_loss: g.value(l.mask).item(),
            psnr: psnr(&render, gt)?,
            n_anchors: self.scene.len(),
            n_dynamic_anchors: mask_probs.iter().filter(|&&p| p > MASK_THRESHOLD).count(),
            wall_ms: 0.0,
        };
        drop(g);

        let (lr, total) = (self.config.lr, self.config.iterations);
        self.adam
            .update(&mut self.scene, &mut self.heads, &grads, |grp| lr.at(grp, it - 1, total));
        self.stats.record(&fold(&sink.borrow()), &opacities);

        if it % self.config.densify_interval == 0 && (self.config.densify_start..=self.config.densify_end()).contains(&it) {
            self.densify_and_prune();
        }
        Ok(MetricsRow {
            wall_ms: self.started.elapsed().as_secs_f64() * 1e3,
            ..row
        })
    }

    /// Loss gradient on each anchor's mask probability from the last step.
    pub fn mask_gradient(&self) -> &[f64] {
        &self.mask_grad
    }

    fn non_finite(&self, g: &Graph, sv: &crate::scene::AnchorVars, hv: &crate::heads::HeadVars, what: &str) -> TrainError {
        let names = self.inventory_names();
        let vars: Vec<Value> = crate::scene::AnchorSet::var_list(sv).into_iter().chain(hv.values()).collect();
        let group = vars
            .iter()
            .position(|v| !g.value(*v).is_finite())
            .map(|i| format!("{:?} ({})", names[i].1, names[i].0))
            .unwrap_or_else(|| "none (all parameters finite)".into());
        TrainError::NonFinite {
            iteration: self.iteration,
            what: what.into(),
            group,
        }
    }

    fn densify_and_prune(&mut self) {
        let before = self.scene.len();
        let added = densify_anchors(
            &mut self.scene,
            &self.stats,
            self.config.densify_grad_threshold,
            self.config.densify_subvoxels,
            &mut self.rng,
        );
        if added > 0 {
            self.adam.grow(&self.scene, &self.heads);
        }
        // New anchors have no statistics yet and are kept.
        let mut stats = self.stats.clone();
        stats.grad_sum.resize(self.scene.len(), 0.0);
        stats.grad_count.resize(self.scene.len(), 0);
        let k = self.scene.k();
        if stats.opacity_count > 0 {
            let fill = f64::from(stats.opacity_count);
            stats.opacity_sum.resize(self.scene.len() * k, fill);
        }
        let grown = self.scene.len();
        match prune_anchors(&mut self.scene, &stats, self.config.prune_opacity_threshold) {
            Ok(keep) => {
                if keep.len() != grown {
                    let per_anchor: Vec<bool> = self.inventory_names().iter().map(|n| n.2).collect();
                    self.adam.retain(&per_anchor, &keep);
                }
            }
            Err(e) => log::warn!("iteration {}: prune skipped: {e}", self.iteration),
        }
        log::debug!(
            "iteration {}: {} anchors -> {} (+{added})",
            self.iteration,
            before,
            self.scene.len()
        );
        self.stats = GradStats::new(self.scene.len(), k);
    }

    /// Runs the remaining iterations, handing every metrics row to `on_row`.
    pub fn run<E>(&mut self, frames: &[CameraFrame], mut on_row: impl FnMut(&MetricsRow) -> Result<(), E>) -> Result<(), E>
    where
        E: From<TrainError>,
    {
        while self.iteration < self.config.iterations {
            let row = self.step(frames)?;
            on_row(&row)?;
        }
        Ok(())
    }
}

/// Full training loss on one frame with every learnable array supplied as a
/// graph value in [`learnable_inventory`] order.
#[allow(clippy::too_many_arguments)]
pub fn loss_of_params(
    g: &mut Graph,
    scene: &AnchorSet,
    heads: &HeadBank,
    params: &[Value],
    frame: &CameraFrame,
    config: &TrainConfig,
    gating: Gating,
    lambda_t: f64,
) -> Result<Value, TrainError> {
    let gt = frame.ground_truth.as_ref().ok_or(TrainError::MissingGroundTruth(0))?;
    let anchor_values: &[Value; 7] = params
        .get(..7)
        .and_then(|s| s.try_into().ok())
        .ok_or_else(|| TrainError::Config("too few parameter values".into()))?;
    let sv = scene.vars_from(g, anchor_values);
    let hv = heads.vars_from(&params[7..]);
    let c = compose_graph(g, scene, &sv, heads, &hv, &config.deform, frame.t, frame.center(), gating)?;
    let img = render_graph(g, c.positions, c.scales, c.quats, c.opacities, c.colors, frame, None)?;
    let gtv = g.constant(gt.to_tensor());
    let l = total_loss_graph(g, img, gtv, c.mask_probs, frame.width, frame.height, config.lambda, lambda_t)?;
    Ok(l.total)
}

/// Result of [`train`].
pub struct TrainOutput {
    pub scene: AnchorSet,
    pub heads: HeadBank,
    pub metrics: Vec<MetricsRow>,
}

pub fn train(scene: AnchorSet, heads: HeadBank, frames: &[CameraFrame], config: &TrainConfig) -> Result<TrainOutput, TrainError> {
    let mut trainer = Trainer::new(scene, heads, config.clone())?;
    let mut metrics = Vec::with_capacity(config.iterations);
    trainer.run::<TrainError>(frames, |row| {
        metrics.push(*row);
        Ok(())
    })?;
    Ok(TrainOutput {
        scene: trainer.scene,
        heads: trainer.heads,
        metrics,
    })
}

/// Image metrics of a trained model on a set of frames.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub psnr: Vec<f64>,
    pub ssim: Vec<f64>,
}

impl EvalReport {
    pub fn mean_psnr(&self) -> f64 {
        self.psnr.iter().sum::<f64>() / self.psnr.len().max(1) as f64
    }

    pub fn mean_ssim(&self) -> f64 {
        self.ssim.iter().sum::<f64>() / self.ssim.len().max(1) as f64
    }
}

/// Renders a frame at its own time in inference mode.
pub fn render_frame(
    scene: &AnchorSet,
    heads: &HeadBank,
    strategy: &DeformStrategy,
    camera: &CameraFrame,
    gating: Gating,
) -> Result<Image, TrainError> {
    let set = compose_gaussians(scene, heads, strategy, camera.t, camera.center(), gating)?;
    Ok(render_gaussians(&set, camera, RenderMode::Tiled).image)
}

pub fn evaluate(
    scene: &AnchorSet,
    heads: &HeadBank,
    strategy: &DeformStrategy,
    frames: &[CameraFrame],
    gating: Gating,
) -> Result<EvalReport, TrainError> {
    let mut report = EvalReport {
        psnr: Vec::new(),
        ssim: Vec::new(),
    };
    for (i, f) in frames.iter().enumerate() {
        let gt = f.ground_truth.as_ref().ok_or(TrainError::MissingGroundTruth(i))?;
        let img = render_frame(scene, heads, strategy, f, gating)?;
        report.psnr.push(psnr(&img, gt)?);
        report.ssim.push(ssim(&img, gt)?);
    }
    Ok(report)
}

/// Held-out PSNR of each deformation strategy trained from the same start.
pub fn ablate(
    cloud: &PointCloud,
    train_frames: &[CameraFrame],
    eval_frames: &[CameraFrame],
    config: &TrainConfig,
) -> Result<Vec<(DeformKind, EvalReport)>, TrainError> {
    DeformKind::ALL
        .iter()
        .map(|&kind| {
            let cfg = TrainConfig {
                deform: DeformStrategy { kind, ..config.deform },
                ..config.clone()
            };
            let (scene, heads) = init_model(cloud, &cfg)?;
            let out = train(scene, heads, train_frames, &cfg)?;
            let report = evaluate(&out.scene, &out.heads, &cfg.deform, eval_frames, cfg.inference_gating())?;
            Ok((kind, report))
        })
        .collect()
}
