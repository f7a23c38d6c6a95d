use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use edgs_core::synthetic::SceneSpec;

fn edgs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_edgs"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn edgs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Writes a small scene and a matching fast config; returns (scene dir, config file).
fn small_scene(root: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let spec = SceneSpec {
        width: 24,
        height: 24,
        focal: 26.0,
        n_timesteps: 6,
        n_cameras: 2,
        points_per_blob: 30,
        ..SceneSpec::preset("blobs-v1").unwrap()
    };
    let spec_file = root.join("small_spec.txt");
    fs::write(&spec_file, spec.to_text()).unwrap();
    let scene = root.join("scene");
    let o = edgs(&["gen", "--spec", p(&spec_file), "--out", p(&scene)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let config = root.join("run.txt");
    fs::write(
        &config,
        "voxel_size=0.4\noffsets=4\nfeature_dim=8\n# short runs\niterations=12\n",
    )
    .unwrap();
    (scene, config)
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&edgs(&[])), 1);
    assert_eq!(code(&edgs(&["frobnicate"])), 1);
    assert_eq!(code(&edgs(&["train", "--bogus"])), 1);
    assert_eq!(code(&edgs(&["bench", "--mask", "maybe"])), 1);
    let help = edgs(&["--help"]);
    assert_eq!(code(&help), 0);
    for sub in ["gen", "train", "render", "eval", "bench", "ablate"] {
        assert!(stdout(&help).contains(sub), "help lists {sub}");
    }
}

#[test]
fn runtime_failures_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = edgs(&["eval", "--checkpoint", p(&dir.path().join("missing.edgs"))]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).starts_with("error:"));
    let o = edgs(&["gen", "--preset", "no-such-preset", "--out", p(&dir.path().join("x"))]);
    assert_eq!(code(&o), 2);
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.txt");
    fs::write(&cfg, "iterations=10\nlearning_rate=3\n").unwrap();
    let o = edgs(&["train", "--config", p(&cfg), "--out", p(&dir.path().join("out"))]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("learning_rate"), "{}", stderr(&o));
}

#[test]
fn gen_train_render_eval_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let (scene, config) = small_scene(dir.path());
    assert!(scene.join("frames").join("cam1_t5.ppm").is_file());
    assert!(scene.join("cameras.txt").is_file());

    let out = dir.path().join("run");
    let o = edgs(&[
        "train",
        "--scene",
        p(&scene),
        "--config",
        p(&config),
        "--iters",
        "15",
        "--out",
        p(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("held-out PSNR"));
    let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 16, "header plus one row per iteration");
    // The flag overrides the file.
    assert!(fs::read_to_string(out.join("config.txt"))
        .unwrap()
        .contains("iterations=15\n"));

    let a = dir.path().join("a.ppm");
    let b = dir.path().join("b.ppm");
    for img in [&a, &b] {
        let o = edgs(&[
            "render",
            "--scene",
            p(&scene),
            "--checkpoint",
            p(&out),
            "--camera",
            "1",
            "--t",
            "0.4",
            "--out",
            p(img),
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let bytes = fs::read(&a).unwrap();
    assert!(bytes.starts_with(b"P6\n24 24\n255\n"));
    assert_eq!(bytes, fs::read(&b).unwrap(), "render is reproducible");

    let png = dir.path().join("c.png");
    let o = edgs(&["render", "--scene", p(&scene), "--checkpoint", p(&out), "--out", p(&png)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(fs::read(&png).unwrap().starts_with(b"\x89PNG"));

    let sweep = dir.path().join("sweep");
    let o = edgs(&[
        "render",
        "--scene",
        p(&scene),
        "--checkpoint",
        p(&out),
        "--sweep-t",
        "3",
        "--out",
        p(&sweep),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for i in 0..3 {
        assert!(sweep.join(format!("frame_{i:04}.ppm")).is_file());
    }

    let o = edgs(&[
        "render",
        "--scene",
        p(&scene),
        "--checkpoint",
        p(&out),
        "--camera",
        "7",
        "--out",
        p(&a),
    ]);
    assert_eq!(code(&o), 2);

    let o = edgs(&["eval", "--scene", p(&scene), "--checkpoint", p(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.lines().any(|l| l.trim_start().starts_with("mean")));
    assert!(text.contains("mask: accuracy"));
}

#[test]
fn truncated_checkpoint_names_the_array() {
    let dir = tempfile::tempdir().unwrap();
    let (scene, config) = small_scene(dir.path());
    let out = dir.path().join("run");
    let o = edgs(&[
        "train",
        "--scene",
        p(&scene),
        "--config",
        p(&config),
        "--iters",
        "2",
        "--out",
        p(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let ck = out.join("checkpoint.edgs");
    let bytes = fs::read(&ck).unwrap();
    fs::write(&ck, &bytes[..bytes.len() - 8]).unwrap();
    let o = edgs(&["eval", "--scene", p(&scene), "--checkpoint", p(&ck)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("head.deform.3.bias"), "{}", stderr(&o));
}

#[test]
fn bench_writes_one_row_per_count() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("bench.csv");
    let o = edgs(&["bench", "--counts", "200,400", "--mask", "off", "--out", p(&csv)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "gaussians,ms_per_frame,compose_ms,time_variant_ms,raster_ms");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("200,"));
    assert_eq!(stdout(&o), text);
}

#[test]
fn ablate_reports_all_four_strategies() {
    let dir = tempfile::tempdir().unwrap();
    let (scene, config) = small_scene(dir.path());
    let o = edgs(&["ablate", "--scene", p(&scene), "--config", p(&config), "--iters", "3"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = stdout(&o);
    let names: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(text.lines().next(), Some("strategy,psnr,ssim"));
    assert_eq!(names, ["rbf", "rigid", "knn", "cosine"]);
}
