//! Pinhole projection and depth-sorted alpha compositing of Gaussians.
//!
//! Both render modes composite exactly the same splats in the same order at
//! every pixel: a splat contributes only where its Mahalanobis distance is
//! within three sigma, and the tile binning uses the matching three-sigma
//! box. Tiled output is therefore identical to the naive global sort.

use std::cell::RefCell;
use std::hash::{DefaultHasher, Hash};
use std::rc::Rc;

use rayon::prelude::*;

use crate::autodiff::{AutodiffError, CustomOp, Graph, Tensor, Value};
use crate::deform::{GaussianPrimitive, GaussianSet};

pub const TILE: usize = 16;
pub const COV2D_DILATION: f64 = 0.3;
pub const MAX_ALPHA: f64 = 0.99;
pub const MIN_TRANSMITTANCE: f64 = 1e-4;
pub const NEAR_PLANE: f64 = 0.01;
/// Squared Mahalanobis radius beyond which a splat is ignored (three sigma).
pub const CUTOFF_Q: f64 = 9.0;

/// Splat falloff at squared Mahalanobis distance `q` and its derivative in
/// `q`. A Gaussian minus its first-order expansion at [`CUTOFF_Q`], rescaled
/// to 1 at the centre, so value and slope both reach zero at the cutoff and
/// the image is continuously differentiable in every splat parameter.
#[inline]
pub fn falloff(q: f64) -> (f64, f64) {
    if q >= CUTOFF_Q {
        return (0.0, 0.0);
    }
    let e = (-0.5 * CUTOFF_Q).exp();
    let norm = 1.0 - e * (1.0 + 0.5 * CUTOFF_Q);
    let g = (-0.5 * q).exp();
    ((g - e * (1.0 - 0.5 * (q - CUTOFF_Q))) / norm, 0.5 * (e - g) / norm)
}
const BIN_MARGIN: f64 = 1.0;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum RasterError {
    #[error("camera rotation is not orthonormal (deviation {0:.3e})")]
    NotOrthonormal(f64),
    #[error("focal lengths must be positive")]
    BadFocal,
    #[error("image size {0}x{1} is empty")]
    EmptyImage(usize, usize),
    #[error("image is {got:?}, expected {expected:?}")]
    ImageSize { expected: (usize, usize), got: (usize, usize) },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// Row-major `H×W` RGB image with values nominally in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height * 3],
        }
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height * 3],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Self {
        let mut img = Self::new(width, height);
        for y in 0..height {
            for x in 0..width {
                img.set(x, y, f(x, y));
            }
        }
        img
    }

    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set(&mut self, x: usize, y: usize, c: [f64; 3]) {
        let i = 3 * (y * self.width + x);
        self.data[i..i + 3].copy_from_slice(&c);
    }

    /// `(H·W)×3`, one row per pixel.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(self.width * self.height, 3, self.data.clone()).expect("image length")
    }

    pub fn from_tensor(width: usize, height: usize, t: &Tensor) -> Result<Self, RasterError> {
        if t.rows() != width * height || t.cols() != 3 {
            return Err(RasterError::ImageSize {
                expected: (width, height),
                got: (t.rows(), t.cols()),
            });
        }
        Ok(Self {
            width,
            height,
            data: t.data().to_vec(),
        })
    }

    pub fn same_size(&self, other: &Image) -> Result<(), RasterError> {
        if (self.width, self.height) != (other.width, other.height) {
            return Err(RasterError::ImageSize {
                expected: (self.width, self.height),
                got: (other.width, other.height),
            });
        }
        Ok(())
    }
}

/// Pinhole camera with a world-to-camera rigid transform `x_c = R x + t`.
#[derive(Clone, Debug, PartialEq)]
pub struct CameraFrame {
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// Normalized time in `[0, 1]`.
    pub t: f64,
    pub ground_truth: Option<Image>,
}

impl CameraFrame {
    pub fn validate(&self) -> Result<(), RasterError> {
        if self.width == 0 || self.height == 0 {
            return Err(RasterError::EmptyImage(self.width, self.height));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(RasterError::BadFocal);
        }
        let r = &self.rotation;
        let mut dev: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| r[k][i] * r[k][j]).sum();
                dev = dev.max((dot - if i == j { 1.0 } else { 0.0 }).abs());
            }
        }
        if dev > 1e-9 {
            return Err(RasterError::NotOrthonormal(dev));
        }
        Ok(())
    }

    /// Camera looking from `eye` at `target`; image `y` points along `-up`.
    #[allow(clippy::too_many_arguments)]
    pub fn look_at(eye: [f64; 3], target: [f64; 3], up: [f64; 3], fx: f64, fy: f64, width: usize, height: usize, t: f64) -> Self {
        let sub = |a: [f64; 3], b: [f64; 3]| [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
        let norm = |a: [f64; 3]| {
            let n = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
            [a[0] / n, a[1] / n, a[2] / n]
        };
        let cross = |a: [f64; 3], b: [f64; 3]| {
            [
                a[1] * b[2] - a[2] * b[1],
                a[2] * b[0] - a[0] * b[2],
                a[0] * b[1] - a[1] * b[0],
            ]
        };
        let z = norm(sub(target, eye));
        let x = norm(cross(z, up));
        let y = cross(z, x);
        let rotation = [x, y, z];
        let translation = [
            -(x[0] * eye[0] + x[1] * eye[1] + x[2] * eye[2]),
            -(y[0] * eye[0] + y[1] * eye[1] + y[2] * eye[2]),
            -(z[0] * eye[0] + z[1] * eye[1] + z[2] * eye[2]),
        ];
        Self {
            rotation,
            translation,
            fx,
            fy,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
            t,
            ground_truth: None,
        }
    }

    /// Camera centre in world space, `−Rᵀt`.
    pub fn center(&self) -> [f64; 3] {
        let r = &self.rotation;
        let t = &self.translation;
        let mut c = [0.0; 3];
        for (i, ci) in c.iter_mut().enumerate() {
            *ci = -(r[0][i] * t[0] + r[1][i] * t[1] + r[2][i] * t[2]);
        }
        c
    }

    pub fn to_camera(&self, p: [f64; 3]) -> [f64; 3] {
        let r = &self.rotation;
        let mut out = self.translation;
        for i in 0..3 {
            out[i] += r[i][0] * p[0] + r[i][1] * p[1] + r[i][2] * p[2];
        }
        out
    }

    /// Pixel coordinates of a world point, or `None` behind the near plane.
    pub fn project_point(&self, p: [f64; 3]) -> Option<[f64; 2]> {
        let c = self.to_camera(p);
        (c[2] > NEAR_PLANE).then(|| [self.fx * c[0] / c[2] + self.cx, self.fy * c[1] / c[2] + self.cy])
    }

    pub fn without_ground_truth(&self) -> Self {
        Self {
            ground_truth: None,
            ..self.clone()
        }
    }
}

type Mat3 = [[f64; 3]; 3];

fn rotation_matrix(q: [f64; 4]) -> Mat3 {
    let [w, x, y, z] = q;
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

/// `M = R(q)·diag(s)`.
fn factor(q: [f64; 4], s: [f64; 3]) -> Mat3 {
    let r = rotation_matrix(q);
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = r[i][j] * s[j];
        }
    }
    m
}

/// `Σ = R S Sᵀ Rᵀ`.
pub fn build_covariance(q: [f64; 4], s: [f64; 3]) -> Mat3 {
    let m = factor(q, s);
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| m[i][k] * m[j][k]).sum();
        }
    }
    out
}

/// A Gaussian after projection.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Splat2D {
    /// Row of the source Gaussian.
    pub index: usize,
    pub center: [f64; 2],
    /// Dilated 2D covariance.
    pub cov2d: [[f64; 2]; 2],
    /// Inverse covariance `(a, b, c)` for `[[a, b], [b, c]]`.
    pub conic: [f64; 3],
    pub depth: f64,
    pub opacity: f64,
    pub color: [f64; 3],
    /// Three-sigma half extents in x and y.
    pub radius: [f64; 2],
}

/// Local-affine projection intermediates shared with the backward pass.
struct Projection {
    cam: [f64; 3],
    /// `J W`, 2×3.
    t: [[f64; 3]; 2],
    sigma: Mat3,
    cov: [[f64; 2]; 2],
}

fn projection(pos: [f64; 3], q: [f64; 4], s: [f64; 3], camera: &CameraFrame) -> Option<Projection> {
    let cam = camera.to_camera(pos);
    let z = cam[2];
    if z <= NEAR_PLANE {
        return None;
    }
    let j = [
        [camera.fx / z, 0.0, -camera.fx * cam[0] / (z * z)],
        [0.0, camera.fy / z, -camera.fy * cam[1] / (z * z)],
    ];
    let w = &camera.rotation;
    let mut t = [[0.0; 3]; 2];
    for r in 0..2 {
        for c in 0..3 {
            t[r][c] = (0..3).map(|k| j[r][k] * w[k][c]).sum();
        }
    }
    let sigma = build_covariance(q, s);
    let mut cov = [[0.0; 2]; 2];
    for a in 0..2 {
        for b in 0..2 {
            let mut acc = 0.0;
            for k in 0..3 {
                for l in 0..3 {
                    acc += t[a][k] * sigma[k][l] * t[b][l];
                }
            }
            cov[a][b] = acc;
        }
    }
    cov[0][0] += COV2D_DILATION;
    cov[1][1] += COV2D_DILATION;
    Some(Projection { cam, t, sigma, cov })
}

fn project_raw(
    index: usize,
    pos: [f64; 3],
    s: [f64; 3],
    q: [f64; 4],
    opacity: f64,
    color: [f64; 3],
    camera: &CameraFrame,
) -> Option<Splat2D> {
    let p = projection(pos, q, s, camera)?;
    let [[a, b], [_, c]] = p.cov;
    let det = a * c - b * b;
    if !(det > 0.0) || !det.is_finite() {
        log::debug!("skipping splat {index}: singular 2D covariance (det {det:e})");
        return None;
    }
    let z = p.cam[2];
    let center = [camera.fx * p.cam[0] / z + camera.cx, camera.fy * p.cam[1] / z + camera.cy];
    let radius = [3.0 * a.sqrt(), 3.0 * c.sqrt()];
    let (w, h) = (camera.width as f64, camera.height as f64);
    if center[0] + radius[0] < 0.0 || center[0] - radius[0] > w || center[1] + radius[1] < 0.0 || center[1] - radius[1] > h {
        return None;
    }
    Some(Splat2D {
        index,
        center,
        cov2d: p.cov,
        conic: [c / det, -b / det, a / det],
        depth: z,
        opacity,
        color,
        radius,
    })
}

/// Projects one primitive; `None` when culled.
pub fn project_gaussian(p: &GaussianPrimitive, camera: &CameraFrame) -> Option<Splat2D> {
    project_raw(0, p.position, p.scale, p.quaternion, p.opacity, p.color, camera)
}

fn row3(t: &Tensor, i: usize) -> [f64; 3] {
    let r = t.row(i);
    [r[0], r[1], r[2]]
}

fn row4(t: &Tensor, i: usize) -> [f64; 4] {
    let r = t.row(i);
    [r[0], r[1], r[2], r[3]]
}

fn project_set(g: &GaussianSet, camera: &CameraFrame) -> Vec<Splat2D> {
    (0..g.len())
        .filter_map(|i| {
            project_raw(
                i,
                row3(&g.positions, i),
                row3(&g.scales, i),
                row4(&g.quats, i),
                g.opacities.get(i, 0),
                row3(&g.colors, i),
                camera,
            )
        })
        .collect()
}

fn depth_order(splats: &[Splat2D], list: &mut [u32]) {
    list.sort_by(|&a, &b| {
        let (sa, sb) = (&splats[a as usize], &splats[b as usize]);
        sa.depth.total_cmp(&sb.depth).then(sa.index.cmp(&sb.index))
    });
}

/// Squared Mahalanobis distance from the splat centre.
#[inline]
fn mahalanobis(s: &Splat2D, px: f64, py: f64) -> (f64, f64, f64) {
    let dx = px - s.center[0];
    let dy = py - s.center[1];
    let [a, b, c] = s.conic;
    (a * dx * dx + 2.0 * b * dx * dy + c * dy * dy, dx, dy)
}

fn composite_list(splats: &[Splat2D], list: &[u32], px: f64, py: f64) -> ([f64; 3], f64) {
    let mut color = [0.0; 3];
    let mut t = 1.0;
    for &i in list {
        let s = &splats[i as usize];
        let (q, _, _) = mahalanobis(s, px, py);
        if q > CUTOFF_Q {
            continue;
        }
        let alpha = (s.opacity * falloff(q).0).min(MAX_ALPHA);
        for c in 0..3 {
            color[c] += s.color[c] * alpha * t;
        }
        t *= 1.0 - alpha;
        if t < MIN_TRANSMITTANCE {
            break;
        }
    }
    (color, t)
}

/// Front-to-back compositing of depth-sorted splats at one pixel. Returns the
/// colour over a black background and the remaining transmittance.
pub fn composite_pixel(splats: &[Splat2D], pixel: [f64; 2]) -> ([f64; 3], f64) {
    let list: Vec<u32> = (0..splats.len() as u32).collect();
    composite_list(splats, &list, pixel[0], pixel[1])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RenderMode {
    /// Global depth sort, every pixel against every splat.
    Naive,
    /// Per-tile binning and sorting.
    Tiled,
}

/// Rendered colour plus per-pixel remaining transmittance.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderOutput {
    pub image: Image,
    pub transmittance: Vec<f64>,
}

struct Binned {
    splats: Vec<Splat2D>,
    tiles_x: usize,
    /// Depth-sorted splat lists, one per tile.
    tiles: Vec<Vec<u32>>,
}

fn bin(splats: Vec<Splat2D>, width: usize, height: usize) -> Binned {
    let tiles_x = width.div_ceil(TILE);
    let tiles_y = height.div_ceil(TILE);
    let mut tiles = vec![Vec::new(); tiles_x * tiles_y];
    for (i, s) in splats.iter().enumerate() {
        let lo_x = s.center[0] - s.radius[0] - BIN_MARGIN;
        let hi_x = s.center[0] + s.radius[0] + BIN_MARGIN;
        let lo_y = s.center[1] - s.radius[1] - BIN_MARGIN;
        let hi_y = s.center[1] + s.radius[1] + BIN_MARGIN;
        // Pixel centres sit at integer + 0.5.
        let px0 = (lo_x - 0.5).ceil().max(0.0) as usize;
        let py0 = (lo_y - 0.5).ceil().max(0.0) as usize;
        let px1 = (hi_x - 0.5).floor();
        let py1 = (hi_y - 0.5).floor();
        if px1 < 0.0 || py1 < 0.0 {
            continue;
        }
        let px1 = (px1 as usize).min(width - 1);
        let py1 = (py1 as usize).min(height - 1);
        if px0 > px1 || py0 > py1 {
            continue;
        }
        for ty in py0 / TILE..=py1 / TILE {
            for tx in px0 / TILE..=px1 / TILE {
                tiles[ty * tiles_x + tx].push(i as u32);
            }
        }
    }
    for list in &mut tiles {
        depth_order(&splats, list);
    }
    Binned { splats, tiles_x, tiles }
}

fn tile_pixels(tile: usize, tiles_x: usize, width: usize, height: usize) -> impl Iterator<Item = (usize, usize)> {
    let (tx, ty) = (tile % tiles_x, tile / tiles_x);
    let (x0, y0) = (tx * TILE, ty * TILE);
    let (x1, y1) = ((x0 + TILE).min(width), (y0 + TILE).min(height));
    (y0..y1).flat_map(move |y| (x0..x1).map(move |x| (x, y)))
}

/// Renders a Gaussian set from one camera.
pub fn render_gaussians(g: &GaussianSet, camera: &CameraFrame, mode: RenderMode) -> RenderOutput {
    let (w, h) = (camera.width, camera.height);
    let splats = project_set(g, camera);
    let mut image = Image::new(w, h);
    let mut transmittance = vec![1.0; w * h];
    match mode {
        RenderMode::Naive => {
            let mut order: Vec<u32> = (0..splats.len() as u32).collect();
            depth_order(&splats, &mut order);
            for y in 0..h {
                for x in 0..w {
                    let (c, t) = composite_list(&splats, &order, x as f64 + 0.5, y as f64 + 0.5);
                    image.set(x, y, c);
                    transmittance[y * w + x] = t;
                }
            }
        }
        RenderMode::Tiled => {
            let binned = bin(splats, w, h);
            let results: Vec<Vec<(usize, usize, [f64; 3], f64)>> = binned
                .tiles
                .par_iter()
                .enumerate()
                .map(|(ti, list)| {
                    tile_pixels(ti, binned.tiles_x, w, h)
                        .map(|(x, y)| {
                            let (c, t) = composite_list(&binned.splats, list, x as f64 + 0.5, y as f64 + 0.5);
                            (x, y, c, t)
                        })
                        .collect()
                })
                .collect();
            for (x, y, c, t) in results.into_iter().flatten() {
                image.set(x, y, c);
                transmittance[y * w + x] = t;
            }
        }
    }
    RenderOutput { image, transmittance }
}

/// Gradients of a scalar loss with respect to every Gaussian attribute.
#[derive(Clone, Debug, PartialEq)]
pub struct RasterGrads {
    pub positions: Tensor,
    pub scales: Tensor,
    pub quats: Tensor,
    pub opacities: Tensor,
    pub colors: Tensor,
    /// Norm of the gradient with respect to each Gaussian's projected centre
    /// in normalized device coordinates; zero for culled Gaussians.
    pub screen: Vec<f64>,
}

/// Per-splat accumulator in image space.
#[derive(Clone, Copy, Default)]
struct SplatGrad {
    center: [f64; 2],
    /// `∂L/∂conic` for entries a, b (counted once per off-diagonal slot), c.
    conic: [f64; 3],
    opacity: f64,
    color: [f64; 3],
}

struct Contribution {
    local: usize,
    alpha: f64,
    t: f64,
    gauss: f64,
    dgauss: f64,
    clamped: bool,
    dx: f64,
    dy: f64,
}

fn backward_tile(binned: &Binned, tile: usize, width: usize, height: usize, grad_image: &[f64]) -> Vec<SplatGrad> {
    let list = &binned.tiles[tile];
    let mut acc = vec![SplatGrad::default(); list.len()];
    let mut contrib: Vec<Contribution> = Vec::new();
    for (x, y) in tile_pixels(tile, binned.tiles_x, width, height) {
        let gi = 3 * (y * width + x);
        let gc = [grad_image[gi], grad_image[gi + 1], grad_image[gi + 2]];
        if gc == [0.0; 3] {
            continue;
        }
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        contrib.clear();
        let mut t = 1.0;
        for (local, &i) in list.iter().enumerate() {
            let s = &binned.splats[i as usize];
            let (q, dx, dy) = mahalanobis(s, px, py);
            if q > CUTOFF_Q {
                continue;
            }
            let (gauss, dgauss) = falloff(q);
            let raw = s.opacity * gauss;
            let alpha = raw.min(MAX_ALPHA);
            contrib.push(Contribution {
                local,
                alpha,
                t,
                gauss,
                dgauss,
                clamped: raw > MAX_ALPHA,
                dx,
                dy,
            });
            t *= 1.0 - alpha;
            if t < MIN_TRANSMITTANCE {
                break;
            }
        }
        // Colour accumulated behind the current splat.
        let mut behind = [0.0; 3];
        for k in contrib.iter().rev() {
            let s = &binned.splats[list[k.local] as usize];
            let g = &mut acc[k.local];
            let w = k.alpha * k.t;
            let mut d_alpha = 0.0;
            for c in 0..3 {
                g.color[c] += w * gc[c];
                d_alpha += gc[c] * (s.color[c] * k.t - behind[c] / (1.0 - k.alpha));
                behind[c] += s.color[c] * w;
            }
            if k.clamped {
                continue;
            }
            g.opacity += d_alpha * k.gauss;
            let d_q = d_alpha * s.opacity * k.dgauss;
            let [a, b, c] = s.conic;
            g.center[0] -= d_q * 2.0 * (a * k.dx + b * k.dy);
            g.center[1] -= d_q * 2.0 * (b * k.dx + c * k.dy);
            g.conic[0] += d_q * k.dx * k.dx;
            g.conic[1] += d_q * k.dx * k.dy;
            g.conic[2] += d_q * k.dy * k.dy;
        }
    }
    acc
}

fn quat_grad(q: [f64; 4], dr: &Mat3) -> [f64; 4] {
    let [w, x, y, z] = q;
    let d = dr;
    let dw = 2.0 * (-z * d[0][1] + y * d[0][2] + z * d[1][0] - x * d[1][2] - y * d[2][0] + x * d[2][1]);
    let dx = 2.0
        * (y * d[0][1] + z * d[0][2] + y * d[1][0] - 2.0 * x * d[1][1] - w * d[1][2] + z * d[2][0] + w * d[2][1]
            - 2.0 * x * d[2][2]);
    let dy = 2.0
        * (-2.0 * y * d[0][0] + x * d[0][1] + w * d[0][2] + x * d[1][0] + z * d[1][2] - w * d[2][0] + z * d[2][1]
            - 2.0 * y * d[2][2]);
    let dz = 2.0
        * (-2.0 * z * d[0][0] - w * d[0][1] + x * d[0][2] + w * d[1][0] - 2.0 * z * d[1][1]
            + y * d[1][2]
            + x * d[2][0]
            + y * d[2][1]);
    [dw, dx, dy, dz]
}

/// Chains image-space splat gradients back to the 3D attributes.
fn splat_to_world(g: &GaussianSet, i: usize, sg: &SplatGrad, camera: &CameraFrame, out: &mut RasterGrads) {
    let pos = row3(&g.positions, i);
    let s = row3(&g.scales, i);
    let q = row4(&g.quats, i);
    let p = projection(pos, q, s, camera).expect("projected splat");
    let [[a, b], [_, c]] = p.cov;
    let det = a * c - b * b;
    let inv = [[c / det, -b / det], [-b / det, a / det]];
    // ∂L/∂conic as a full matrix; the off-diagonal slot appears twice in q.
    let ga = [[sg.conic[0], sg.conic[1]], [sg.conic[1], sg.conic[2]]];
    // ∂L/∂cov = −A·G·A.
    let mut gcov = [[0.0; 2]; 2];
    for r in 0..2 {
        for col in 0..2 {
            let mut acc = 0.0;
            for k in 0..2 {
                for l in 0..2 {
                    acc += inv[r][k] * ga[k][l] * inv[l][col];
                }
            }
            gcov[r][col] = -acc;
        }
    }
    // cov = T Σ Tᵀ: ∂Σ = Tᵀ G T, ∂T = (G + Gᵀ) T Σ.
    let t = &p.t;
    let mut gsigma = [[0.0; 3]; 3];
    for k in 0..3 {
        for l in 0..3 {
            let mut acc = 0.0;
            for r in 0..2 {
                for col in 0..2 {
                    acc += t[r][k] * gcov[r][col] * t[col][l];
                }
            }
            gsigma[k][l] = acc;
        }
    }
    let mut ts = [[0.0; 3]; 2];
    for r in 0..2 {
        for col in 0..3 {
            ts[r][col] = (0..3).map(|k| t[r][k] * p.sigma[k][col]).sum();
        }
    }
    let mut gt = [[0.0; 3]; 2];
    for r in 0..2 {
        for col in 0..3 {
            gt[r][col] = (0..2).map(|k| (gcov[r][k] + gcov[k][r]) * ts[k][col]).sum();
        }
    }
    // T = J W: ∂J = ∂T Wᵀ.
    let w = &camera.rotation;
    let mut gj = [[0.0; 3]; 2];
    for r in 0..2 {
        for col in 0..3 {
            gj[r][col] = (0..3).map(|k| gt[r][k] * w[col][k]).sum();
        }
    }
    let (fx, fy) = (camera.fx, camera.fy);
    let [x, y, z] = p.cam;
    let (z2, z3) = (z * z, z * z * z);
    let mut gcam = [0.0; 3];
    // Mean projection.
    gcam[0] += sg.center[0] * fx / z;
    gcam[1] += sg.center[1] * fy / z;
    gcam[2] += -sg.center[0] * fx * x / z2 - sg.center[1] * fy * y / z2;
    // Jacobian entries.
    gcam[2] += gj[0][0] * (-fx / z2) + gj[1][1] * (-fy / z2);
    gcam[0] += gj[0][2] * (-fx / z2);
    gcam[2] += gj[0][2] * (2.0 * fx * x / z3);
    gcam[1] += gj[1][2] * (-fy / z2);
    gcam[2] += gj[1][2] * (2.0 * fy * y / z3);
    for col in 0..3 {
        let v: f64 = (0..3).map(|k| w[k][col] * gcam[k]).sum();
        out.positions.row_mut(i)[col] += v;
    }
    // Σ = M Mᵀ: ∂M = (G + Gᵀ) M.
    let m = factor(q, s);
    let r = rotation_matrix(q);
    let mut gm = [[0.0; 3]; 3];
    for row in 0..3 {
        for col in 0..3 {
            gm[row][col] = (0..3).map(|k| (gsigma[row][k] + gsigma[k][row]) * m[k][col]).sum();
        }
    }
    let mut gr = [[0.0; 3]; 3];
    for row in 0..3 {
        for col in 0..3 {
            out.scales.row_mut(i)[col] += gm[row][col] * r[row][col];
            gr[row][col] = gm[row][col] * s[col];
        }
    }
    let gq = quat_grad(q, &gr);
    for (o, v) in out.quats.row_mut(i).iter_mut().zip(gq) {
        *o += v;
    }
    out.opacities.row_mut(i)[0] += sg.opacity;
    for (o, v) in out.colors.row_mut(i).iter_mut().zip(sg.color) {
        *o += v;
    }
    let ndc = [
        sg.center[0] * camera.width as f64 / 2.0,
        sg.center[1] * camera.height as f64 / 2.0,
    ];
    out.screen[i] += (ndc[0] * ndc[0] + ndc[1] * ndc[1]).sqrt();
}

/// Vector-Jacobian product of [`render_gaussians`] given `∂L/∂image`
/// (`H·W·3`, same layout as [`Image::data`]).
pub fn render_backward(g: &GaussianSet, camera: &CameraFrame, grad_image: &[f64]) -> RasterGrads {
    let (w, h) = (camera.width, camera.height);
    let binned = bin(project_set(g, camera), w, h);
    let partials: Vec<Vec<SplatGrad>> = (0..binned.tiles.len())
        .into_par_iter()
        .map(|tile| backward_tile(&binned, tile, w, h, grad_image))
        .collect();
    let mut per_splat = vec![SplatGrad::default(); binned.splats.len()];
    for (tile, part) in partials.iter().enumerate() {
        for (local, sg) in part.iter().enumerate() {
            let dst = &mut per_splat[binned.tiles[tile][local] as usize];
            for k in 0..2 {
                dst.center[k] += sg.center[k];
            }
            for k in 0..3 {
                dst.conic[k] += sg.conic[k];
                dst.color[k] += sg.color[k];
            }
            dst.opacity += sg.opacity;
        }
    }
    let n = g.len();
    let mut out = RasterGrads {
        positions: Tensor::zeros(n, 3),
        scales: Tensor::zeros(n, 3),
        quats: Tensor::zeros(n, 4),
        opacities: Tensor::zeros(n, 1),
        colors: Tensor::zeros(n, 3),
        screen: vec![0.0; n],
    };
    for (splat, sg) in binned.splats.iter().zip(&per_splat) {
        splat_to_world(g, splat.index, sg, camera, &mut out);
    }
    out
}

/// Shared slot that receives the screen-space gradient norms of the last
/// backward pass through a [`render_graph`] node.
pub type ScreenGradSink = Rc<RefCell<Vec<f64>>>;

struct RasterOp {
    camera: CameraFrame,
    sink: Option<ScreenGradSink>,
}

impl CustomOp for RasterOp {
    fn name(&self) -> &str {
        "rasterize"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad_output: &Tensor) -> Vec<Option<Tensor>> {
        let set = gaussian_set_from(inputs);
        let grads = render_backward(&set, &self.camera, grad_output.data());
        if let Some(sink) = &self.sink {
            *sink.borrow_mut() = grads.screen.clone();
        }
        vec![
            Some(grads.positions),
            Some(grads.scales),
            Some(grads.quats),
            Some(grads.opacities),
            Some(grads.colors),
        ]
    }

    fn hash_branches(&self, inputs: &[&Tensor], state: &mut DefaultHasher) {
        hash_render_branches(&gaussian_set_from(inputs), &self.camera, state);
    }
}

/// Hashes every discrete choice of a render: near-plane culls, the global
/// depth order, alpha clamps and where each pixel stops early.
fn hash_render_branches(g: &GaussianSet, camera: &CameraFrame, state: &mut DefaultHasher) {
    let splats = project_set(g, camera);
    let mut order: Vec<u32> = (0..splats.len() as u32).collect();
    depth_order(&splats, &mut order);
    for &i in &order {
        splats[i as usize].index.hash(state);
    }
    for y in 0..camera.height {
        for x in 0..camera.width {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let mut t = 1.0;
            for &i in &order {
                let s = &splats[i as usize];
                let (q, _, _) = mahalanobis(s, px, py);
                if q > CUTOFF_Q {
                    continue;
                }
                let raw = s.opacity * falloff(q).0;
                if raw > MAX_ALPHA {
                    (0u8, s.index).hash(state);
                }
                t *= 1.0 - raw.min(MAX_ALPHA);
                if t < MIN_TRANSMITTANCE {
                    (1u8, s.index).hash(state);
                    break;
                }
            }
        }
    }
}

fn gaussian_set_from(inputs: &[&Tensor]) -> GaussianSet {
    GaussianSet {
        positions: inputs[0].clone(),
        scales: inputs[1].clone(),
        quats: inputs[2].clone(),
        opacities: inputs[3].clone(),
        colors: inputs[4].clone(),
        parents: Vec::new(),
    }
}

/// Rasterization as a graph node. Inputs are `M×3` positions, `M×3` scales,
/// `M×4` quaternions, `M×1` opacities and `M×3` colours; the output is the
/// `(H·W)×3` image.
#[allow(clippy::too_many_arguments)]
pub fn render_graph(
    g: &mut Graph,
    positions: Value,
    scales: Value,
    quats: Value,
    opacities: Value,
    colors: Value,
    camera: &CameraFrame,
    sink: Option<ScreenGradSink>,
) -> Result<Value, RasterError> {
    let inputs = [positions, scales, quats, opacities, colors];
    let widths = [3, 3, 4, 1, 3];
    let m = g.shape(positions).rows;
    for (v, w) in inputs.iter().zip(widths) {
        let s = g.shape(*v);
        if s.rows != m || s.cols != w {
            return Err(AutodiffError::ShapeMismatch {
                op: "rasterize",
                lhs: g.shape(positions),
                rhs: s,
            }
            .into());
        }
    }
    let set = gaussian_set_from(&inputs.map(|v| g.value(v)));
    let out = render_gaussians(&set, camera, RenderMode::Tiled);
    let image = out.image.to_tensor();
    let op = RasterOp {
        camera: camera.without_ground_truth(),
        sink,
    };
    Ok(g.custom(Box::new(op), &inputs, image))
}
