//! Steady-state frame timing against Gaussian count.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::deform::{compose_profiled, DeformError, DeformStrategy, Gating};
use crate::heads::HeadBank;
use crate::raster::{render_gaussians, CameraFrame, RenderMode};
use crate::scene::{voxelize_points, AnchorSet, PointCloud, SceneError};

pub const WARMUP_FRAMES: usize = 10;
pub const TIMED_FRAMES: usize = 50;

/// Median timings of one configuration, in milliseconds per frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BenchSample {
    pub gaussians: usize,
    /// Whole composition (all heads plus assembly).
    pub compose_ms: f64,
    /// Time-variant head queries inside composition.
    pub time_variant_ms: f64,
    pub raster_ms: f64,
}

impl BenchSample {
    pub const HEADER: &'static str = "gaussians,ms_per_frame,compose_ms,time_variant_ms,raster_ms";

    pub fn frame_ms(&self) -> f64 {
        self.compose_ms + self.raster_ms
    }

    pub fn to_csv(&self) -> String {
        format!(
            "{},{:.4},{:.4},{:.4},{:.4}",
            self.gaussians,
            self.frame_ms(),
            self.compose_ms,
            self.time_variant_ms,
            self.raster_ms
        )
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Renders `warmup` untimed frames, then reports medians over `runs` frames
/// with time swept across `[0, 1]`.
pub fn bench_model(
    scene: &AnchorSet,
    heads: &HeadBank,
    strategy: &DeformStrategy,
    camera: &CameraFrame,
    gating: Gating,
    warmup: usize,
    runs: usize,
) -> Result<BenchSample, DeformError> {
    let (mut compose, mut tv, mut raster) = (Vec::new(), Vec::new(), Vec::new());
    for i in 0..warmup + runs {
        let t = i as f64 / (warmup + runs - 1).max(1) as f64;
        let start = Instant::now();
        let c = compose_profiled(scene, heads, strategy, t, camera.center(), gating)?;
        let composed = start.elapsed();
        let cam = CameraFrame {
            t,
            ..camera.without_ground_truth()
        };
        let start = Instant::now();
        std::hint::black_box(render_gaussians(&c.gaussians, &cam, RenderMode::Tiled));
        let rendered = start.elapsed();
        if i >= warmup {
            compose.push(composed.as_secs_f64() * 1e3);
            tv.push(c.time_variant.as_secs_f64() * 1e3);
            raster.push(rendered.as_secs_f64() * 1e3);
        }
    }
    Ok(BenchSample {
        gaussians: scene.len() * scene.k(),
        compose_ms: median(compose),
        time_variant_ms: median(tv),
        raster_ms: median(raster),
    })
}

/// A cubic grid of `ceil(count / k)` anchors with random heads, viewed by a
/// 64×64 camera. A `static_fraction` of the anchors (chosen at random) has a
/// mask probability near 0, the rest near 1.
pub fn bench_scene(
    count: usize,
    k: usize,
    static_fraction: f64,
    seed: u64,
) -> Result<(AnchorSet, HeadBank, CameraFrame), SceneError> {
    const SPACING: f64 = 0.1;
    const FEATURE_DIM: usize = 8;
    let n = count.div_ceil(k).max(1);
    let side = (n as f64).cbrt().ceil() as usize;
    // Whole cells to the centre keep every point in the middle of its voxel.
    let half = (side / 2) as f64 * SPACING;
    let points: Vec<[f64; 3]> = (0..n)
        .map(|i| {
            let (x, y, z) = (i % side, (i / side) % side, i / (side * side));
            [x, y, z].map(|c| (c as f64 + 0.5) * SPACING - half)
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scene = voxelize_points(&PointCloud::new(points, None)?, SPACING, k, FEATURE_DIM, &mut rng)?;
    let mut heads = HeadBank::new(k, FEATURE_DIM, true, &mut rng);

    // Mask logit 20·relu(f₀) − 10: feature 0 set to 1 marks a dynamic anchor.
    for layer in &mut heads.mask.layers {
        layer.weight.data_mut().fill(0.0);
        layer.bias.data_mut().fill(0.0);
    }
    heads.mask.layers[0].weight.set(0, 0, 1.0);
    heads.mask.layers[1].weight.set(0, 0, 20.0);
    heads.mask.layers[1].bias.data_mut()[0] = -10.0;
    let mut order: Vec<usize> = (0..scene.len()).collect();
    order.shuffle(&mut rng);
    let n_static = (static_fraction.clamp(0.0, 1.0) * scene.len() as f64).round() as usize;
    for (i, &a) in order.iter().enumerate() {
        scene.features.set(a, 0, if i < n_static { 0.0 } else { 1.0 });
    }

    let distance = 2.0 * half + 2.0;
    let camera = CameraFrame::look_at([0.0, 0.0, -distance], [0.0; 3], [0.0, 1.0, 0.0], 64.0, 64.0, 64, 64, 0.0);
    Ok((scene, heads, camera))
}
