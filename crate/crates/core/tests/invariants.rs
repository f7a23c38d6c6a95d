use edgs_core::deform::{compose_gaussians, rbf_weight, DeformStrategy, Gating};
use edgs_core::heads::HeadBank;
use edgs_core::io::{load_checkpoint, save_checkpoint, write_checkpoint, Checkpoint};
use edgs_core::scene::{voxelize_points, PointCloud};
use edgs_core::synthetic::{generate, SceneSpec};
use edgs_core::trainer::{init_model, TrainConfig, Trainer};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_spec() -> SceneSpec {
    SceneSpec {
        width: 20,
        height: 20,
        focal: 22.0,
        n_timesteps: 4,
        n_cameras: 2,
        points_per_blob: 30,
        ..SceneSpec::preset("blobs-v1").unwrap()
    }
}

fn small_config() -> TrainConfig {
    TrainConfig {
        iterations: 40,
        densify_start: 5,
        densify_stop: 5,
        densify_interval: 5,
        densify_grad_threshold: 1e-9,
        prune_opacity_threshold: 0.0,
        voxel_size: 0.4,
        offsets: 4,
        feature_dim: 8,
        ..Default::default()
    }
}

#[test]
fn anchor_positions_never_move_during_training() {
    let scene = generate(&small_spec()).unwrap();
    let config = small_config();
    let (anchors, heads) = init_model(&scene.init_cloud, &config).unwrap();
    let before = anchors.positions().clone();
    let mut trainer = Trainer::new(anchors, heads, config).unwrap();
    let frames = scene.train_frames();
    while trainer.iteration < trainer.config.iterations {
        trainer.step(&frames).unwrap();
    }
    let after = trainer.scene.positions();
    assert!(after.rows() > before.rows(), "the run should have densified");
    // Pruning is off, so the original anchors keep their rows.
    for r in 0..before.rows() {
        assert_eq!(before.row(r), after.row(r), "anchor {r}");
    }
}

#[test]
fn checkpoint_file_round_trip_is_bitwise() {
    let scene = generate(&small_spec()).unwrap();
    let config = TrainConfig {
        iterations: 6,
        ..small_config()
    };
    let (anchors, heads) = init_model(&scene.init_cloud, &config).unwrap();
    let mut trainer = Trainer::new(anchors, heads, config.clone()).unwrap();
    for _ in 0..6 {
        trainer.step(&scene.train_frames()).unwrap();
    }
    let ck = Checkpoint {
        scene: trainer.scene.clone(),
        heads: trainer.heads.clone(),
        config,
        iteration: trainer.iteration as u64,
        rng: trainer.rng.clone(),
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.edgs");
    save_checkpoint(&path, &ck).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back, ck);
    assert_eq!(write_checkpoint(&back), std::fs::read(&path).unwrap());
}

fn cloud_strategy() -> impl Strategy<Value = Vec<[f64; 3]>> {
    prop::collection::vec(prop::array::uniform3(-3.0f64..3.0), 1..60)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn voxelizing_anchor_corners_is_idempotent(points in cloud_strategy(), voxel in 0.05f64..1.0, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let once = voxelize_points(&PointCloud::new(points, None).unwrap(), voxel, 2, 4, &mut rng).unwrap();
        let corners: Vec<[f64; 3]> = (0..once.len()).map(|a| once.position(a)).collect();
        let twice = voxelize_points(&PointCloud::new(corners, None).unwrap(), voxel, 2, 4, &mut rng).unwrap();
        prop_assert_eq!(once.positions(), twice.positions());
    }

    #[test]
    fn rbf_weight_properties(
        a in prop::collection::vec(-2.0f64..2.0, 8),
        b in prop::collection::vec(-2.0f64..2.0, 8),
        sigma in 0.05f64..4.0,
    ) {
        prop_assert_eq!(rbf_weight(&a, &a, sigma).unwrap(), 1.0);
        let w = rbf_weight(&a, &b, sigma).unwrap();
        prop_assert!((0.0..=1.0).contains(&w));
        prop_assert_eq!(w, rbf_weight(&b, &a, sigma).unwrap());
        // Moving b halfway towards a never lowers the weight.
        let mid: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect();
        prop_assert!(rbf_weight(&a, &mid, sigma).unwrap() >= w);
    }

    #[test]
    fn composed_primitives_have_unit_quaternions_and_positive_scales(seed in any::<u64>(), t in 0.0f64..=1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let points: Vec<[f64; 3]> = (0..12).map(|_| std::array::from_fn(|_| rng.gen_range(-1.0..1.0))).collect();
        let scene = voxelize_points(&PointCloud::new(points, None).unwrap(), 0.5, 4, 8, &mut rng).unwrap();
        let mut heads = HeadBank::new(4, 8, true, &mut rng);
        for (_, mlp) in heads.mlps_mut() {
            for layer in &mut mlp.layers {
                for v in layer.weight.data_mut().iter_mut().chain(layer.bias.data_mut()) {
                    *v += rng.gen_range(-0.5..0.5);
                }
            }
        }
        for gating in [Gating::Disabled, Gating::Soft, Gating::Hard] {
            let set = compose_gaussians(&scene, &heads, &DeformStrategy::default(), t, [0.0, 0.0, -4.0], gating).unwrap();
            for i in 0..set.len() {
                let p = set.primitive(i);
                let n: f64 = p.quaternion.iter().map(|v| v * v).sum::<f64>().sqrt();
                prop_assert!((n - 1.0).abs() < 1e-12);
                prop_assert!(p.scale.iter().all(|&s| s > 0.0 && s.is_finite()));
                prop_assert!((0.0..=1.0).contains(&p.opacity));
            }
        }
    }
}
