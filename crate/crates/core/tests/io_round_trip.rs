use edgs_core::io::{decode_ppm, encode_ppm, load_scene_dir, quantize, save_scene_dir, MetricsWriter, RunConfig};
use edgs_core::raster::Image;
use edgs_core::synthetic::{generate, SceneSpec};
use edgs_core::trainer::{evaluate, init_model, train, TrainConfig};
use proptest::prelude::*;

fn small_spec() -> SceneSpec {
    SceneSpec {
        width: 24,
        height: 24,
        focal: 26.0,
        n_timesteps: 6,
        n_cameras: 2,
        points_per_blob: 30,
        ..SceneSpec::preset("blobs-v1").unwrap()
    }
}

#[test]
fn scene_dir_round_trip() {
    let scene = generate(&small_spec()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_scene_dir(dir.path(), &scene).unwrap();
    let back = load_scene_dir(dir.path()).unwrap();
    assert_eq!(back.spec, scene.spec);
    assert_eq!(back.init_cloud, scene.init_cloud);
    assert_eq!(back.region_labels, scene.region_labels);
    assert_eq!(back.frames.len(), scene.frames.len());
    for (a, b) in scene.frames.iter().zip(&back.frames) {
        assert_eq!((a.camera_index, a.timestep), (b.camera_index, b.timestep));
        assert_eq!(a.camera.without_ground_truth(), b.camera.without_ground_truth());
        let (ga, gb) = (
            a.camera.ground_truth.as_ref().unwrap(),
            b.camera.ground_truth.as_ref().unwrap(),
        );
        for (x, y) in ga.data.iter().zip(&gb.data) {
            assert!((x - y).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }
}

#[test]
fn psnr_against_stored_frames_matches_in_memory() {
    let scene = generate(&small_spec()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_scene_dir(dir.path(), &scene).unwrap();
    let stored = load_scene_dir(dir.path()).unwrap();
    let config = TrainConfig {
        iterations: 30,
        voxel_size: 0.4,
        offsets: 4,
        feature_dim: 8,
        ..Default::default()
    };
    let (anchors, heads) = init_model(&scene.init_cloud, &config).unwrap();
    let out = train(anchors, heads, &scene.train_frames(), &config).unwrap();
    let a = evaluate(
        &out.scene,
        &out.heads,
        &config.deform,
        &scene.held_out_frames(),
        config.inference_gating(),
    )
    .unwrap();
    let b = evaluate(
        &out.scene,
        &out.heads,
        &config.deform,
        &stored.held_out_frames(),
        config.inference_gating(),
    )
    .unwrap();
    assert!(
        (a.mean_psnr() - b.mean_psnr()).abs() < 0.1,
        "{} vs {}",
        a.mean_psnr(),
        b.mean_psnr()
    );
}

#[test]
fn metrics_file_has_one_row_per_push() {
    let config = TrainConfig {
        iterations: 5,
        voxel_size: 0.4,
        offsets: 4,
        feature_dim: 8,
        ..Default::default()
    };
    let scene = generate(&small_spec()).unwrap();
    let (anchors, heads) = init_model(&scene.init_cloud, &config).unwrap();
    let out = train(anchors, heads, &scene.train_frames(), &config).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("metrics.csv");
    let mut w = MetricsWriter::create(&path).unwrap();
    for row in &out.metrics {
        w.push(row).unwrap();
    }
    assert_eq!(w.finish().unwrap(), 5);
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(
        lines[0],
        "iteration,loss,l1,ssim,mask_loss,psnr,n_anchors,n_dynamic_anchors,wall_ms"
    );
    assert_eq!(lines.len(), 6);
    assert!(lines[5].starts_with("5,"));
}

#[test]
fn default_config_text_round_trip() {
    let c = RunConfig::default();
    assert_eq!(RunConfig::parse(&c.to_text()).unwrap(), c);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn ppm_round_trip_is_quantization(w in 1usize..12, h in 1usize..12, seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut img = Image::new(w, h);
        img.data.iter_mut().for_each(|v| *v = rng.gen_range(-0.2..1.2));
        let back = decode_ppm(&encode_ppm(&img)).unwrap();
        prop_assert_eq!((back.width, back.height), (w, h));
        for (x, y) in img.data.iter().zip(&back.data) {
            prop_assert_eq!(quantize(*x) as f64 / 255.0, *y);
        }
    }
}
