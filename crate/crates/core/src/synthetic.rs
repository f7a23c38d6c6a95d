//! Procedural dynamic scenes with analytically rendered ground truth.
//!
//! Each blob is a Gaussian density cloud, optionally stretched along one
//! axis. Along a ray its optical depth has a closed form, so frames are
//! rendered without touching the rasterizer: blobs become semi-transparent
//! layers composited front to back by their closest-approach depth.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::deform::MASK_THRESHOLD;
use crate::raster::{CameraFrame, Image, RasterError};
use crate::scene::{AnchorSet, PointCloud};

pub const PRESET_BLOBS_V1: &str = "blobs-v1";
/// Dynamic-only coverage below which a pixel counts as static.
pub const STATIC_ALPHA: f64 = 1e-3;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SyntheticError {
    #[error("unknown preset {0:?}")]
    UnknownPreset(String),
    #[error("scene needs at least one blob")]
    NoBlobs,
    #[error("scene needs at least two timesteps")]
    TooFewTimesteps,
    #[error("scene needs at least one camera and a non-empty image")]
    NoCameras,
    #[error("blob {blob} leaves the view of camera {camera} at timestep {timestep}")]
    OutOfFrustum { blob: usize, camera: usize, timestep: usize },
    #[error("spec line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Raster(#[from] RasterError),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Motion {
    Static,
    /// Moves by `displacement` between t = 0 and t = 1.
    Linear {
        displacement: [f64; 3],
    },
    /// Circles in the xz plane with the given radius, starting at angle 0.
    Circular {
        radius: f64,
    },
    /// `amplitude · sin(2πt)` translation plus a stretch of
    /// `1 + stretch · sin(2πt)` along the x axis.
    Oscillating {
        amplitude: [f64; 3],
        stretch: f64,
    },
}

impl Motion {
    pub fn is_dynamic(&self) -> bool {
        !matches!(self, Motion::Static)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlobSpec {
    pub center: [f64; 3],
    /// Standard deviation of the density in world units.
    pub radius: f64,
    pub color: [f64; 3],
    /// Optical depth of a ray through the centre.
    pub peak_depth: f64,
    pub motion: Motion,
}

impl BlobSpec {
    /// Centre at normalized time `t`.
    pub fn center_at(&self, t: f64) -> [f64; 3] {
        let c = self.center;
        match self.motion {
            Motion::Static => c,
            Motion::Linear { displacement: d } => [c[0] + d[0] * t, c[1] + d[1] * t, c[2] + d[2] * t],
            Motion::Circular { radius } => {
                let a = 2.0 * PI * t;
                [c[0] + radius * (a.cos() - 1.0), c[1], c[2] + radius * a.sin()]
            }
            Motion::Oscillating { amplitude: a, .. } => {
                let s = (2.0 * PI * t).sin();
                [c[0] + a[0] * s, c[1] + a[1] * s, c[2] + a[2] * s]
            }
        }
    }

    /// Per-axis standard deviations at time `t`.
    pub fn axes_at(&self, t: f64) -> [f64; 3] {
        let r = self.radius;
        match self.motion {
            Motion::Oscillating { stretch, .. } => [r * (1.0 + stretch * (2.0 * PI * t).sin()), r, r],
            _ => [r; 3],
        }
    }

    /// Displacement of the blob centre relative to t = 0.
    pub fn displacement(&self, t: f64) -> [f64; 3] {
        let (a, b) = (self.center_at(t), self.center_at(0.0));
        [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
    }

    /// Opacity along a unit-direction ray and the ray parameter of closest
    /// approach in the blob's normalized frame.
    fn ray_alpha(&self, origin: [f64; 3], dir: [f64; 3], t: f64) -> (f64, f64) {
        let c = self.center_at(t);
        let ax = self.axes_at(t);
        let o: [f64; 3] = std::array::from_fn(|i| (origin[i] - c[i]) / ax[i]);
        let d: [f64; 3] = std::array::from_fn(|i| dir[i] / ax[i]);
        let dd = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
        let od = o[0] * d[0] + o[1] * d[1] + o[2] * d[2];
        let oo = o[0] * o[0] + o[1] * o[1] + o[2] * o[2];
        let s_star = -od / dd;
        let dist2 = (oo - od * od / dd).max(0.0);
        // Density scale chosen so that a ray through the centre of the
        // unstretched blob has optical depth `peak_depth`.
        let rho0 = self.peak_depth / ((2.0 * PI).sqrt() * self.radius);
        let tau = rho0 * (2.0 * PI).sqrt() / dd.sqrt() * (-0.5 * dist2).exp();
        (1.0 - (-tau).exp(), s_star)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub blobs: Vec<BlobSpec>,
    pub n_timesteps: usize,
    pub n_cameras: usize,
    pub width: usize,
    pub height: usize,
    pub focal: f64,
    pub camera_distance: f64,
    /// Total azimuth spread of the camera arc in degrees.
    pub camera_spread_deg: f64,
    pub camera_elevation_deg: f64,
    pub points_per_blob: usize,
    pub seed: u64,
}

impl SceneSpec {
    pub fn preset(name: &str) -> Result<Self, SyntheticError> {
        match name {
            PRESET_BLOBS_V1 => Ok(blobs_v1()),
            _ => Err(SyntheticError::UnknownPreset(name.to_string())),
        }
    }

    pub fn n_static(&self) -> usize {
        self.blobs.iter().filter(|b| !b.motion.is_dynamic()).count()
    }

    pub fn n_dynamic(&self) -> usize {
        self.blobs.len() - self.n_static()
    }

    pub fn time(&self, timestep: usize) -> f64 {
        timestep as f64 / (self.n_timesteps - 1) as f64
    }

    pub fn validate(&self) -> Result<(), SyntheticError> {
        if self.blobs.is_empty() {
            return Err(SyntheticError::NoBlobs);
        }
        if self.n_timesteps < 2 {
            return Err(SyntheticError::TooFewTimesteps);
        }
        if self.n_cameras == 0 || self.width == 0 || self.height == 0 {
            return Err(SyntheticError::NoCameras);
        }
        Ok(())
    }

    pub fn camera(&self, index: usize, timestep: usize) -> CameraFrame {
        let az = if self.n_cameras == 1 {
            0.0
        } else {
            -self.camera_spread_deg / 2.0 + self.camera_spread_deg * index as f64 / (self.n_cameras - 1) as f64
        };
        let (az, el) = (az.to_radians(), self.camera_elevation_deg.to_radians());
        let d = self.camera_distance;
        let eye = [d * el.cos() * az.sin(), d * el.sin(), -d * el.cos() * az.cos()];
        CameraFrame::look_at(
            eye,
            [0.0; 3],
            [0.0, 1.0, 0.0],
            self.focal,
            self.focal,
            self.width,
            self.height,
            self.time(timestep),
        )
    }

    /// `key=value` text; blob lines are `blobN=kind cx cy cz radius r g b depth [motion params]`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "n_timesteps={}", self.n_timesteps);
        let _ = writeln!(s, "n_cameras={}", self.n_cameras);
        let _ = writeln!(s, "width={}", self.width);
        let _ = writeln!(s, "height={}", self.height);
        let _ = writeln!(s, "focal={}", self.focal);
        let _ = writeln!(s, "camera_distance={}", self.camera_distance);
        let _ = writeln!(s, "camera_spread_deg={}", self.camera_spread_deg);
        let _ = writeln!(s, "camera_elevation_deg={}", self.camera_elevation_deg);
        let _ = writeln!(s, "points_per_blob={}", self.points_per_blob);
        let _ = writeln!(s, "seed={}", self.seed);
        for (i, b) in self.blobs.iter().enumerate() {
            let [cx, cy, cz] = b.center;
            let [r, g, bl] = b.color;
            let common = format!("{cx} {cy} {cz} {} {r} {g} {bl} {}", b.radius, b.peak_depth);
            let line = match b.motion {
                Motion::Static => format!("static {common}"),
                Motion::Linear { displacement: d } => format!("linear {common} {} {} {}", d[0], d[1], d[2]),
                Motion::Circular { radius } => format!("circular {common} {radius}"),
                Motion::Oscillating { amplitude: a, stretch } => {
                    format!("oscillating {common} {} {} {} {stretch}", a[0], a[1], a[2])
                }
            };
            let _ = writeln!(s, "blob{i}={line}");
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self, SyntheticError> {
        let mut spec = SceneSpec {
            blobs: Vec::new(),
            ..blobs_v1()
        };
        let mut blobs: Vec<(usize, BlobSpec)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| SyntheticError::Parse { line: i + 1, msg };
            let (key, value) = line.split_once('=').ok_or_else(|| err("expected key=value".into()))?;
            let (key, value) = (key.trim(), value.trim());
            let num = |v: &str| v.parse::<f64>().map_err(|e| err(format!("{key}: {e}")));
            let int = |v: &str| v.parse::<usize>().map_err(|e| err(format!("{key}: {e}")));
            match key {
                "n_timesteps" => spec.n_timesteps = int(value)?,
                "n_cameras" => spec.n_cameras = int(value)?,
                "width" => spec.width = int(value)?,
                "height" => spec.height = int(value)?,
                "focal" => spec.focal = num(value)?,
                "camera_distance" => spec.camera_distance = num(value)?,
                "camera_spread_deg" => spec.camera_spread_deg = num(value)?,
                "camera_elevation_deg" => spec.camera_elevation_deg = num(value)?,
                "points_per_blob" => spec.points_per_blob = int(value)?,
                "seed" => spec.seed = value.parse().map_err(|e| err(format!("seed: {e}")))?,
                k if k.starts_with("blob") => {
                    let idx = int(&k[4..])?;
                    let mut parts = value.split_whitespace();
                    let kind = parts.next().ok_or_else(|| err("empty blob".into()))?;
                    let v: Vec<f64> = parts.map(num).collect::<Result<_, _>>()?;
                    let need = match kind {
                        "static" => 8,
                        "linear" => 11,
                        "circular" => 9,
                        "oscillating" => 12,
                        other => return Err(err(format!("unknown motion {other:?}"))),
                    };
                    if v.len() != need {
                        return Err(err(format!("{kind} blob needs {need} numbers, got {}", v.len())));
                    }
                    let motion = match kind {
                        "static" => Motion::Static,
                        "linear" => Motion::Linear {
                            displacement: [v[8], v[9], v[10]],
                        },
                        "circular" => Motion::Circular { radius: v[8] },
                        _ => Motion::Oscillating {
                            amplitude: [v[8], v[9], v[10]],
                            stretch: v[11],
                        },
                    };
                    blobs.push((
                        idx,
                        BlobSpec {
                            center: [v[0], v[1], v[2]],
                            radius: v[3],
                            color: [v[4], v[5], v[6]],
                            peak_depth: v[7],
                            motion,
                        },
                    ));
                }
                other => return Err(err(format!("unknown key {other:?}"))),
            }
        }
        blobs.sort_by_key(|(i, _)| *i);
        spec.blobs = blobs.into_iter().map(|(_, b)| b).collect();
        spec.validate()?;
        Ok(spec)
    }
}

/// Six static blobs on a ring around two dynamic ones, seen by two cameras
/// 30° apart.
fn blobs_v1() -> SceneSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut blobs = Vec::new();
    for i in 0..6 {
        let a = 2.0 * PI * (i as f64 + 0.5) / 6.0 + rng.gen_range(-0.15..0.15);
        let ring = rng.gen_range(RING.0..RING.1);
        blobs.push(BlobSpec {
            center: [ring * a.cos(), 0.8 * ring * a.sin(), STATIC_DEPTH + rng.gen_range(-0.3..0.3)],
            radius: rng.gen_range(STATIC_RADIUS.0..STATIC_RADIUS.1),
            color: random_color(&mut rng),
            peak_depth: 3.0,
            motion: Motion::Static,
        });
    }
    blobs.push(BlobSpec {
        center: [-LINEAR_TRAVEL / 2.0, 0.25, DYNAMIC_DEPTH],
        radius: DYNAMIC_RADIUS,
        color: random_color(&mut rng),
        peak_depth: 3.0,
        motion: Motion::Linear {
            displacement: [LINEAR_TRAVEL, 0.0, 0.0],
        },
    });
    blobs.push(BlobSpec {
        center: [0.0, -0.3, DYNAMIC_DEPTH],
        radius: DYNAMIC_RADIUS,
        color: random_color(&mut rng),
        peak_depth: 3.0,
        motion: Motion::Oscillating {
            amplitude: [OSC_AMPLITUDE, 0.0, 0.0],
            stretch: 0.5,
        },
    });
    SceneSpec {
        blobs,
        n_timesteps: 20,
        n_cameras: 2,
        width: 64,
        height: 64,
        focal: 80.0,
        camera_distance: 5.0,
        camera_spread_deg: 30.0,
        camera_elevation_deg: 10.0,
        points_per_blob: 60,
        seed: 42,
    }
}

// Static blobs sit behind the origin, dynamic ones in front of it.
const STATIC_DEPTH: f64 = 3.0;
const DYNAMIC_DEPTH: f64 = -1.5;
const RING: (f64, f64) = (1.3, 1.4);
const STATIC_RADIUS: (f64, f64) = (0.35, 0.42);
const DYNAMIC_RADIUS: f64 = 0.14;
const LINEAR_TRAVEL: f64 = 0.7;
const OSC_AMPLITUDE: f64 = 0.25;
/// Blob extent, in standard deviations, that must stay inside every view.
pub const FRUSTUM_MARGIN: f64 = 2.0;

fn random_color(rng: &mut ChaCha8Rng) -> [f64; 3] {
    // Saturated but never black.
    let mut c: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.15..0.95));
    let k = rng.gen_range(0..3);
    c[k] = rng.gen_range(0.8..1.0);
    c
}

/// One generated frame.
#[derive(Clone, Debug)]
pub struct SyntheticFrame {
    pub camera_index: usize,
    pub timestep: usize,
    pub camera: CameraFrame,
}

#[derive(Clone, Debug)]
pub struct SyntheticScene {
    pub spec: SceneSpec,
    /// Ordered by camera, then timestep.
    pub frames: Vec<SyntheticFrame>,
    pub init_cloud: PointCloud,
    /// Per cloud point: 1 for dynamic blobs, 0 for static ones.
    pub region_labels: Vec<u8>,
}

fn ray_direction(camera: &CameraFrame, u: f64, v: f64) -> [f64; 3] {
    let d = [(u - camera.cx) / camera.fx, (v - camera.cy) / camera.fy, 1.0];
    let r = &camera.rotation;
    let w: [f64; 3] = std::array::from_fn(|i| r[0][i] * d[0] + r[1][i] * d[1] + r[2][i] * d[2]);
    let n = (w[0] * w[0] + w[1] * w[1] + w[2] * w[2]).sqrt();
    w.map(|x| x / n)
}

/// Colour and coverage of one ray through the selected blobs at time `t`.
fn trace(blobs: &[BlobSpec], select: impl Fn(&BlobSpec) -> bool, origin: [f64; 3], dir: [f64; 3], t: f64) -> ([f64; 3], f64) {
    let mut layers: Vec<(f64, f64, [f64; 3])> = blobs
        .iter()
        .filter(|b| select(b))
        .map(|b| {
            let (alpha, s) = b.ray_alpha(origin, dir, t);
            (s, alpha, b.color)
        })
        .collect();
    layers.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut color = [0.0; 3];
    let mut trans = 1.0;
    for (_, alpha, c) in layers {
        for k in 0..3 {
            color[k] += trans * alpha * c[k];
        }
        trans *= 1.0 - alpha;
    }
    (color, 1.0 - trans)
}

const SUBSAMPLES: [f64; 2] = [0.25, 0.75];

/// 2×2 supersampled render of the selected blobs; also returns coverage.
fn render_blobs(spec: &SceneSpec, camera: &CameraFrame, select: impl Fn(&BlobSpec) -> bool + Copy) -> (Image, Vec<f64>) {
    let origin = camera.center();
    let mut img = Image::new(camera.width, camera.height);
    let mut cover = vec![0.0; camera.width * camera.height];
    for y in 0..camera.height {
        for x in 0..camera.width {
            let mut acc = [0.0; 3];
            let mut a = 0.0;
            for sy in SUBSAMPLES {
                for sx in SUBSAMPLES {
                    let dir = ray_direction(camera, x as f64 + sx, y as f64 + sy);
                    let (c, cov) = trace(&spec.blobs, select, origin, dir, camera.t);
                    for k in 0..3 {
                        acc[k] += c[k] / 4.0;
                    }
                    a += cov / 4.0;
                }
            }
            img.set(x, y, acc);
            cover[y * camera.width + x] = a;
        }
    }
    (img, cover)
}

/// Ground-truth image of the full scene.
pub fn render_ground_truth(spec: &SceneSpec, camera: &CameraFrame) -> Image {
    render_blobs(spec, camera, |_| true).0
}

/// Pixels of `camera_index` that no dynamic blob covers (coverage below
/// [`STATIC_ALPHA`]) at any timestep.
pub fn static_region_mask(spec: &SceneSpec, camera_index: usize) -> Vec<bool> {
    let n = spec.width * spec.height;
    let mut mask = vec![true; n];
    for t in 0..spec.n_timesteps {
        let cam = spec.camera(camera_index, t);
        let (_, cover) = render_blobs(spec, &cam, |b| b.motion.is_dynamic());
        for (m, c) in mask.iter_mut().zip(cover) {
            if c >= STATIC_ALPHA {
                *m = false;
            }
        }
    }
    mask
}

pub fn generate(spec: &SceneSpec) -> Result<SyntheticScene, SyntheticError> {
    spec.validate()?;
    for c in 0..spec.n_cameras {
        for t in 0..spec.n_timesteps {
            let cam = spec.camera(c, t);
            for (bi, b) in spec.blobs.iter().enumerate() {
                let center = b.center_at(cam.t);
                let extent = FRUSTUM_MARGIN * b.axes_at(cam.t).iter().copied().fold(0.0, f64::max);
                let inside = (0..8).all(|corner| {
                    let p: [f64; 3] = std::array::from_fn(|i| center[i] + if corner >> i & 1 == 1 { extent } else { -extent });
                    cam.project_point(p)
                        .is_some_and(|q| q[0] >= 0.0 && q[0] <= cam.width as f64 && q[1] >= 0.0 && q[1] <= cam.height as f64)
                });
                if !inside {
                    return Err(SyntheticError::OutOfFrustum {
                        blob: bi,
                        camera: c,
                        timestep: t,
                    });
                }
            }
        }
    }
    let mut frames = Vec::new();
    for c in 0..spec.n_cameras {
        for t in 0..spec.n_timesteps {
            let mut camera = spec.camera(c, t);
            camera.ground_truth = Some(render_ground_truth(spec, &camera));
            frames.push(SyntheticFrame {
                camera_index: c,
                timestep: t,
                camera,
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut points = Vec::new();
    let mut colors = Vec::new();
    let mut labels = Vec::new();
    for b in &spec.blobs {
        let ax = b.axes_at(0.0);
        for _ in 0..spec.points_per_blob {
            // Uniform direction on the one-sigma ellipsoid surface.
            let dir = loop {
                let v: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
                let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                if n > 1e-3 && n <= 1.0 {
                    break v.map(|x| x / n);
                }
            };
            points.push(std::array::from_fn(|i| b.center[i] + ax[i] * dir[i]));
            colors.push(b.color);
            labels.push(u8::from(b.motion.is_dynamic()));
        }
    }
    let init_cloud = PointCloud::new(points, Some(colors)).expect("finite blob samples");
    Ok(SyntheticScene {
        spec: spec.clone(),
        frames,
        init_cloud,
        region_labels: labels,
    })
}

impl SyntheticScene {
    /// Timesteps used for evaluation only.
    pub fn is_held_out(timestep: usize) -> bool {
        timestep % 5 == 0
    }

    pub fn train_frames(&self) -> Vec<CameraFrame> {
        self.frames
            .iter()
            .filter(|f| !Self::is_held_out(f.timestep))
            .map(|f| f.camera.clone())
            .collect()
    }

    pub fn held_out_frames(&self) -> Vec<CameraFrame> {
        self.frames
            .iter()
            .filter(|f| Self::is_held_out(f.timestep))
            .map(|f| f.camera.clone())
            .collect()
    }
}

/// Ground-truth dynamic label for a point: that of the blob nearest in
/// units of blob radius at t = 0.
pub fn point_label(spec: &SceneSpec, p: [f64; 3]) -> u8 {
    let nearest = spec
        .blobs
        .iter()
        .map(|b| {
            let d: f64 = (0..3).map(|i| (p[i] - b.center[i]).powi(2)).sum::<f64>().sqrt();
            (d / b.radius, b)
        })
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .expect("at least one blob");
    u8::from(nearest.1.motion.is_dynamic())
}

/// Ground-truth label of each anchor: that of the centroid of its offsets in
/// the canonical frame.
pub fn anchor_labels(spec: &SceneSpec, scene: &AnchorSet) -> Vec<u8> {
    let k = scene.k();
    (0..scene.len())
        .map(|a| {
            let mut c = [0.0; 3];
            for o in 0..k {
                let p = scene.canonical_offset_position(a, o);
                for i in 0..3 {
                    c[i] += p[i] / k as f64;
                }
            }
            point_label(spec, c)
        })
        .collect()
}

/// Thresholded time mask against ground-truth anchor labels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaskReport {
    pub anchors: usize,
    pub labelled_dynamic: usize,
    pub predicted_dynamic: usize,
    /// Fraction of anchors whose thresholded mask matches the label.
    pub accuracy: f64,
    /// Fraction of dynamic-labelled anchors predicted dynamic.
    pub dynamic_recall: f64,
    /// Accuracy of predicting every anchor static.
    pub all_static_accuracy: f64,
}

pub fn mask_report(labels: &[u8], mask_probs: &[f64]) -> MaskReport {
    assert_eq!(labels.len(), mask_probs.len(), "one probability per label");
    let n = labels.len();
    let pred: Vec<bool> = mask_probs.iter().map(|&p| p > MASK_THRESHOLD).collect();
    let truth: Vec<bool> = labels.iter().map(|&l| l == 1).collect();
    let correct = pred.iter().zip(&truth).filter(|(p, t)| p == t).count();
    let labelled = truth.iter().filter(|&&t| t).count();
    let hits = pred.iter().zip(&truth).filter(|(p, t)| **p && **t).count();
    let frac = |a: usize, b: usize| if b == 0 { 1.0 } else { a as f64 / b as f64 };
    MaskReport {
        anchors: n,
        labelled_dynamic: labelled,
        predicted_dynamic: pred.iter().filter(|&&p| p).count(),
        accuracy: frac(correct, n),
        dynamic_recall: frac(hits, labelled),
        all_static_accuracy: frac(n - labelled, n),
    }
}

/// `10·log10(1 / MSE)`; infinite for identical images.
pub fn psnr(a: &Image, b: &Image) -> Result<f64, RasterError> {
    a.same_size(b)?;
    let mse = a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.data.len() as f64;
    Ok(if mse == 0.0 { f64::INFINITY } else { -10.0 * mse.log10() })
}

/// PSNR formatted for tables, `inf` for identical images.
pub fn format_psnr(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v:.3}")
    }
}
