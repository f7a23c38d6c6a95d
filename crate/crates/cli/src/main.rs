use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use edgs_core::bench::{bench_model, bench_scene, BenchSample, TIMED_FRAMES, WARMUP_FRAMES};
use edgs_core::deform::{DeformKind, DeformStrategy, Gating};
use edgs_core::io::{
    load_checkpoint, load_scene_dir, save_checkpoint, save_scene_dir, write_image, Checkpoint, MetricsWriter, RunConfig,
};
use edgs_core::synthetic::{anchor_labels, format_psnr, generate, mask_report, SceneSpec, SyntheticScene};
use edgs_core::trainer::{ablate, evaluate, init_model, render_frame, Trainer};

const CHECKPOINT_FILE: &str = "checkpoint.edgs";

#[derive(Parser)]
#[command(
    name = "edgs",
    version,
    about = "Dynamic anchor-based Gaussian splatting on synthetic scenes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene directory.
    Gen(GenArgs),
    /// Train a model and write a checkpoint plus metrics CSV.
    Train(TrainArgs),
    /// Render a checkpoint from one of the scene's cameras.
    Render(RenderArgs),
    /// PSNR/SSIM on held-out frames and time-mask accuracy.
    Eval(EvalArgs),
    /// Frame time against Gaussian count.
    Bench(BenchArgs),
    /// Train every deformation strategy and compare held-out PSNR.
    Ablate(AblateArgs),
}

#[derive(Args)]
struct SceneArgs {
    /// Scene directory written by `gen`.
    #[arg(long, conflicts_with = "preset")]
    scene: Option<PathBuf>,
    /// Generate the named preset in memory instead.
    #[arg(long)]
    preset: Option<String>,
}

impl SceneArgs {
    fn load(&self, fallback: &str) -> Result<SyntheticScene> {
        match &self.scene {
            Some(dir) => load_scene_dir(dir).with_context(|| format!("loading scene {}", dir.display())),
            None => {
                let name = self.preset.as_deref().unwrap_or(fallback);
                Ok(generate(&SceneSpec::preset(name)?)?)
            }
        }
    }
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value = "blobs-v1")]
    preset: String,
    /// Scene description file (key=value) used instead of the preset.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainOverrides {
    /// Run configuration file (key=value).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    deform: Option<DeformKind>,
    /// Train without the time mask: every anchor receives time-variant terms.
    #[arg(long)]
    no_time_mask: bool,
    #[arg(long)]
    seed: Option<u64>,
}

impl TrainOverrides {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                RunConfig::parse(&text).with_context(|| format!("parsing {}", p.display()))?
            }
            None => RunConfig::default(),
        };
        if let Some(n) = self.iters {
            cfg.train.iterations = n;
        }
        if let Some(k) = self.deform {
            cfg.train.deform.kind = k;
        }
        if self.no_time_mask {
            cfg.train.time_mask = false;
        }
        if let Some(s) = self.seed {
            cfg.train.seed = s;
        }
        cfg.train.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    scene: SceneArgs,
    #[command(flatten)]
    overrides: TrainOverrides,
    /// Output directory for the checkpoint, metrics and resolved config.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RenderArgs {
    #[command(flatten)]
    scene: SceneArgs,
    /// Checkpoint file or the directory written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 0)]
    camera: usize,
    /// Normalized time in [0, 1].
    #[arg(long, default_value_t = 0.0)]
    t: f64,
    /// Render this many frames evenly spaced over [0, 1] into the `--out` directory.
    #[arg(long)]
    sweep_t: Option<usize>,
    /// Give every anchor time-variant terms, ignoring the mask.
    #[arg(long)]
    all_dynamic: bool,
    /// Image file (.ppm or .png), or a directory with `--sweep-t`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    scene: SceneArgs,
    #[arg(long)]
    checkpoint: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Toggle {
    On,
    Off,
}

#[derive(Args)]
struct BenchArgs {
    /// Comma-separated Gaussian counts of generated grid scenes.
    #[arg(long, value_delimiter = ',', default_values_t = [1000, 5000, 20000, 50000])]
    counts: Vec<usize>,
    /// Benchmark this checkpoint instead of generated scenes.
    #[arg(long, conflicts_with = "counts")]
    checkpoint: Option<PathBuf>,
    /// Skip time-variant heads for anchors the mask labels static.
    #[arg(long, value_enum, default_value_t = Toggle::On)]
    mask: Toggle,
    /// Fraction of static anchors in generated scenes.
    #[arg(long, default_value_t = 0.5)]
    static_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the table to this CSV file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    scene: SceneArgs,
    #[command(flatten)]
    overrides: TrainOverrides,
    /// Also write the table to this CSV file.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn checkpoint_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join(CHECKPOINT_FILE)
    } else {
        p.to_path_buf()
    }
}

fn load(p: &Path) -> Result<Checkpoint> {
    let path = checkpoint_path(p);
    load_checkpoint(&path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn cmd_gen(a: &GenArgs) -> Result<()> {
    let mut spec = match &a.spec {
        Some(p) => SceneSpec::parse(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)?,
        None => SceneSpec::preset(&a.preset)?,
    };
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    let scene = generate(&spec)?;
    save_scene_dir(&a.out, &scene)?;
    println!(
        "wrote {} frames, {} cloud points to {}",
        scene.frames.len(),
        scene.init_cloud.len(),
        a.out.display()
    );
    Ok(())
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let cfg = a.overrides.resolve()?;
    let scene = a.scene.load(&cfg.preset)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    fs::write(a.out.join("config.txt"), cfg.to_text())?;

    let (anchors, heads) = init_model(&scene.init_cloud, &cfg.train)?;
    log::info!("{} anchors from {} points", anchors.len(), scene.init_cloud.len());
    let frames = scene.train_frames();
    let mut metrics = MetricsWriter::create(&a.out.join("metrics.csv"))?;
    let mut trainer = Trainer::new(anchors, heads, cfg.train.clone())?;
    let started = Instant::now();
    trainer.run::<anyhow::Error>(&frames, |row| {
        metrics.push(row)?;
        if row.iteration % 500 == 0 {
            log::info!(
                "iter {} loss {:.5} psnr {} anchors {} dynamic {}",
                row.iteration,
                row.loss,
                format_psnr(row.psnr),
                row.n_anchors,
                row.n_dynamic_anchors
            );
        }
        Ok(())
    })?;
    let rows = metrics.finish()?;

    let ck = Checkpoint {
        scene: trainer.scene,
        heads: trainer.heads,
        config: trainer.config,
        iteration: trainer.iteration as u64,
        rng: trainer.rng,
    };
    save_checkpoint(&a.out.join(CHECKPOINT_FILE), &ck)?;
    let report = evaluate(
        &ck.scene,
        &ck.heads,
        &ck.config.deform,
        &scene.held_out_frames(),
        ck.config.inference_gating(),
    )?;
    println!(
        "{rows} iterations in {:.1} s; held-out PSNR {} SSIM {:.4}; checkpoint {}",
        started.elapsed().as_secs_f64(),
        format_psnr(report.mean_psnr()),
        report.mean_ssim(),
        a.out.join(CHECKPOINT_FILE).display()
    );
    Ok(())
}

fn cmd_render(a: &RenderArgs) -> Result<()> {
    let ck = load(&a.checkpoint)?;
    let spec = a.scene.load(&RunConfig::default().preset)?.spec;
    if a.camera >= spec.n_cameras {
        bail!("camera {} out of range (scene has {})", a.camera, spec.n_cameras);
    }
    let gating = if a.all_dynamic {
        Gating::Disabled
    } else {
        ck.config.inference_gating()
    };
    let base = spec.camera(a.camera, 0);
    let times: Vec<f64> = match a.sweep_t {
        Some(0) => bail!("--sweep-t needs at least one frame"),
        Some(1) => vec![0.0],
        Some(n) => (0..n).map(|i| i as f64 / (n - 1) as f64).collect(),
        None => {
            if !(0.0..=1.0).contains(&a.t) {
                bail!("--t must lie in [0, 1], got {}", a.t);
            }
            vec![a.t]
        }
    };
    if a.sweep_t.is_some() {
        fs::create_dir_all(&a.out)?;
    }
    for (i, &t) in times.iter().enumerate() {
        let cam = edgs_core::raster::CameraFrame { t, ..base.clone() };
        let img = render_frame(&ck.scene, &ck.heads, &ck.config.deform, &cam, gating)?;
        let path = if a.sweep_t.is_some() {
            a.out.join(format!("frame_{i:04}.ppm"))
        } else {
            a.out.clone()
        };
        write_image(&path, &img)?;
    }
    println!("rendered {} frame(s) to {}", times.len(), a.out.display());
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let ck = load(&a.checkpoint)?;
    let scene = a.scene.load(&RunConfig::default().preset)?;
    let held: Vec<_> = scene
        .frames
        .iter()
        .filter(|f| SyntheticScene::is_held_out(f.timestep))
        .collect();
    let cams: Vec<_> = held.iter().map(|f| f.camera.clone()).collect();
    let report = evaluate(&ck.scene, &ck.heads, &ck.config.deform, &cams, ck.config.inference_gating())?;
    println!("{:>6} {:>8} {:>9} {:>7}", "camera", "timestep", "psnr", "ssim");
    for (f, (p, s)) in held.iter().zip(report.psnr.iter().zip(&report.ssim)) {
        println!("{:>6} {:>8} {:>9} {:>7.4}", f.camera_index, f.timestep, format_psnr(*p), s);
    }
    println!(
        "{:>6} {:>8} {:>9} {:>7.4}",
        "mean",
        "",
        format_psnr(report.mean_psnr()),
        report.mean_ssim()
    );
    let probs = ck.heads.mask_batch(&ck.scene.features).into_data();
    let m = mask_report(&anchor_labels(&scene.spec, &ck.scene), &probs);
    println!(
        "mask: accuracy {:.4} ({} anchors, {} labelled dynamic, {} predicted dynamic, dynamic recall {:.4}, all-static accuracy {:.4})",
        m.accuracy, m.anchors, m.labelled_dynamic, m.predicted_dynamic, m.dynamic_recall, m.all_static_accuracy
    );
    Ok(())
}

fn cmd_bench(a: &BenchArgs) -> Result<()> {
    let gating = match a.mask {
        Toggle::On => Gating::Hard,
        Toggle::Off => Gating::Disabled,
    };
    let mut rows = Vec::new();
    if let Some(p) = &a.checkpoint {
        let ck = load(p)?;
        let spec = SceneSpec::preset(&RunConfig::default().preset)?;
        let cam = spec.camera(0, 0);
        rows.push(bench_model(
            &ck.scene,
            &ck.heads,
            &ck.config.deform,
            &cam,
            gating,
            WARMUP_FRAMES,
            TIMED_FRAMES,
        )?);
    } else {
        for &count in &a.counts {
            let (scene, heads, cam) = bench_scene(count, edgs_core::scene::DEFAULT_OFFSETS, a.static_fraction, a.seed)?;
            rows.push(bench_model(
                &scene,
                &heads,
                &DeformStrategy::default(),
                &cam,
                gating,
                WARMUP_FRAMES,
                TIMED_FRAMES,
            )?);
        }
    }
    let mut table = String::from(BenchSample::HEADER);
    table.push('\n');
    for r in &rows {
        table.push_str(&r.to_csv());
        table.push('\n');
    }
    print!("{table}");
    if let Some(out) = &a.out {
        fs::write(out, &table).with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(())
}

fn cmd_ablate(a: &AblateArgs) -> Result<()> {
    let cfg = a.overrides.resolve()?;
    let scene = a.scene.load(&cfg.preset)?;
    let results = ablate(&scene.init_cloud, &scene.train_frames(), &scene.held_out_frames(), &cfg.train)?;
    let mut table = String::from("strategy,psnr,ssim\n");
    for (kind, r) in &results {
        table.push_str(&format!("{kind},{},{:.4}\n", format_psnr(r.mean_psnr()), r.mean_ssim()));
    }
    print!("{table}");
    if let Some(out) = &a.out {
        fs::write(out, &table).with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Train(a) => cmd_train(a),
        Command::Render(a) => cmd_render(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Ablate(a) => cmd_ablate(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
