use edgs_core::autodiff::{finite_diff_check_with, GradCheckOptions, Graph, Tensor, Value};
use edgs_core::deform::Gating;
use edgs_core::heads::HeadBank;
use edgs_core::raster::CameraFrame;
use edgs_core::scene::{learnable_inventory, voxelize_points, AnchorSet, PointCloud};
use edgs_core::synthetic::{generate, SceneSpec};
use edgs_core::trainer::{loss_of_params, TrainConfig, TrainError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Up to eight anchors with K = 4 in front of an 8×8 camera, every head
/// randomized (including the time-variant output layers), two timesteps.
fn tiny_problem(seed: u64) -> (AnchorSet, HeadBank, Vec<CameraFrame>, TrainConfig) {
    let spec = SceneSpec {
        width: 8,
        height: 8,
        focal: 9.0,
        n_timesteps: 2,
        n_cameras: 1,
        ..SceneSpec::preset("blobs-v1").unwrap()
    };
    let frames = generate(&spec).unwrap().frames.into_iter().map(|f| f.camera).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts: Vec<[f64; 3]> = (0..8)
        .map(|_| [rng.gen_range(-1.2..1.2), rng.gen_range(-1.2..1.2), rng.gen_range(-1.5..1.5)])
        .collect();
    let scene = voxelize_points(&PointCloud::new(pts, None).unwrap(), 0.6, 4, 8, &mut rng).unwrap();
    let mut heads = HeadBank::new(4, 8, true, &mut rng);
    for (_, mlp) in heads.mlps_mut() {
        for layer in &mut mlp.layers {
            for v in layer.weight.data_mut().iter_mut().chain(layer.bias.data_mut()) {
                if *v == 0.0 {
                    *v = rng.gen_range(-0.05..0.05);
                }
            }
        }
    }
    let config = TrainConfig {
        offsets: 4,
        ..Default::default()
    };
    (scene, heads, frames, config)
}

/// Worst relative error and coverage per parameter group, over both frames.
struct GroupResult {
    name: String,
    max_rel_error: f64,
    checked: usize,
    skipped: usize,
}

fn check(seed: u64, max_coords: Option<usize>) -> Vec<GroupResult> {
    let (scene, heads, frames, config) = tiny_problem(seed);
    assert!(scene.len() <= 8);
    let inventory = learnable_inventory(&scene, &heads);
    let params: Vec<Tensor> = inventory.iter().map(|p| p.tensor.clone()).collect();
    let mut out: Vec<GroupResult> = inventory
        .iter()
        .map(|p| GroupResult {
            name: p.name.clone(),
            max_rel_error: 0.0,
            checked: 0,
            skipped: 0,
        })
        .collect();
    let opts = GradCheckOptions {
        step: 1e-4,
        max_coords_per_param: max_coords,
        seed,
    };
    for frame in &frames {
        let f = |g: &mut Graph, p: &[Value]| -> Result<Value, TrainError> {
            loss_of_params(g, &scene, &heads, p, frame, &config, Gating::Soft, config.lambda_t)
        };
        let report = finite_diff_check_with(f, &params, &opts).unwrap();
        for p in &report.params {
            let r = &mut out[p.param];
            r.max_rel_error = r.max_rel_error.max(p.max_rel_error);
            r.checked += p.coords_checked;
            r.skipped += p.coords_skipped;
        }
    }
    out
}

#[test]
fn full_loss_gradient_matches_finite_differences() {
    for seed in [1, 2] {
        for r in check(seed, Some(16)) {
            assert!(r.checked > 0, "{}: every probe crossed a branch", r.name);
            assert!(
                r.skipped * 10 <= r.checked + r.skipped,
                "{}: {} of {} probes skipped",
                r.name,
                r.skipped,
                r.checked + r.skipped
            );
            assert!(r.max_rel_error < 1e-3, "seed {seed} {}: {:e}", r.name, r.max_rel_error);
        }
    }
}
