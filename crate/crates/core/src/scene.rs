//! Sparse anchor grid: voxelization of an input point cloud, per-anchor
//! learnable state and the inventory of everything the optimizer touches.

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::Rng;

use crate::autodiff::{Graph, Tensor, Value};
use crate::heads::HeadBank;

pub const DEFAULT_VOXEL_SIZE: f64 = 0.6;
pub const DEFAULT_OFFSETS: usize = 10;
pub const DEFAULT_FEATURE_DIM: usize = 8;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SceneError {
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("point {index} has a non-finite coordinate")]
    NonFinitePoint { index: usize },
    #[error("voxel size must be positive, got {0}")]
    BadVoxelSize(f64),
    #[error("colour count {colors} does not match point count {points}")]
    ColorCount { points: usize, colors: usize },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("operation would leave the scene without anchors")]
    NoAnchorsLeft,
}

/// Input points in world units, optionally coloured.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    pub points: Vec<[f64; 3]>,
    pub colors: Option<Vec<[f64; 3]>>,
}

impl PointCloud {
    pub fn new(points: Vec<[f64; 3]>, colors: Option<Vec<[f64; 3]>>) -> Result<Self, SceneError> {
        if points.is_empty() {
            return Err(SceneError::EmptyCloud);
        }
        if let Some(index) = points.iter().position(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(SceneError::NonFinitePoint { index });
        }
        if let Some(c) = &colors {
            if c.len() != points.len() {
                return Err(SceneError::ColorCount {
                    points: points.len(),
                    colors: c.len(),
                });
            }
        }
        Ok(Self { points, colors })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Parses `x y z [r g b]` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, SceneError> {
        let mut points = Vec::new();
        let mut colors = Vec::new();
        let mut colored = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| SceneError::Parse {
                    line: i + 1,
                    msg: e.to_string(),
                })?;
            let has_color = match vals.len() {
                3 => false,
                6 => true,
                n => {
                    return Err(SceneError::Parse {
                        line: i + 1,
                        msg: format!("expected 3 or 6 values, got {n}"),
                    })
                }
            };
            if *colored.get_or_insert(has_color) != has_color {
                return Err(SceneError::Parse {
                    line: i + 1,
                    msg: "mixed coloured and uncoloured points".into(),
                });
            }
            points.push([vals[0], vals[1], vals[2]]);
            if has_color {
                colors.push([vals[3], vals[4], vals[5]]);
            }
        }
        Self::new(points, colored.unwrap_or(false).then_some(colors))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("# x y z [r g b]\n");
        for (i, p) in self.points.iter().enumerate() {
            let _ = write!(s, "{} {} {}", p[0], p[1], p[2]);
            if let Some(c) = &self.colors {
                let _ = write!(s, " {} {} {}", c[i][0], c[i][1], c[i][2]);
            }
            s.push('\n');
        }
        s
    }
}

/// Largest integer `k` with `k * voxel <= v` under floating-point products,
/// so that re-voxelizing a voxel corner returns the same corner.
fn voxel_index(v: f64, voxel: f64) -> i64 {
    let mut k = (v / voxel).floor() as i64;
    if ((k + 1) as f64) * voxel <= v {
        k += 1;
    } else if (k as f64) * voxel > v {
        k -= 1;
    }
    k
}

/// The anchor grid and every per-anchor learnable array.
///
/// Row `n` of each tensor belongs to anchor `n`; per-offset arrays store the
/// `K` offsets of an anchor side by side (`N × K·c`).
#[derive(Clone, Debug, PartialEq)]
pub struct AnchorSet {
    positions: Tensor,
    levels: Vec<u32>,
    pub features: Tensor,
    pub offset_features: Tensor,
    pub offset_positions: Tensor,
    pub anchor_scales: Tensor,
    pub offset_scales: Tensor,
    pub offset_quats: Tensor,
    pub position_scale: Tensor,
    voxel_size: f64,
    k: usize,
    feature_dim: usize,
}

/// Graph handles of the learnable per-anchor arrays, plus the frozen
/// positions as a constant.
#[derive(Clone, Copy, Debug)]
pub struct AnchorVars {
    pub positions: Value,
    pub features: Value,
    pub offset_features: Value,
    pub offset_positions: Value,
    pub anchor_scales: Value,
    pub offset_scales: Value,
    pub offset_quats: Value,
    pub position_scale: Value,
}

/// One learnable array with its optimizer group.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Features,
    Offsets,
    Scales,
    Heads,
    Mask,
    Deform,
}

fn head_group(head: &str) -> ParamGroup {
    match head {
        "deform" => ParamGroup::Deform,
        "mask" => ParamGroup::Mask,
        _ => ParamGroup::Heads,
    }
}

/// Entry of [`learnable_inventory`].
pub struct ParamRef<'a> {
    pub name: String,
    pub group: ParamGroup,
    /// Rows correspond to anchors (resized on densify/prune).
    pub per_anchor: bool,
    pub tensor: &'a Tensor,
}

pub struct ParamMut<'a> {
    pub name: String,
    pub group: ParamGroup,
    pub per_anchor: bool,
    pub tensor: &'a mut Tensor,
}

/// Fresh learnable state for `n` anchors whose cells have edge `cell`.
pub(crate) struct AnchorInit<'a, R: Rng> {
    pub k: usize,
    pub feature_dim: usize,
    pub rng: &'a mut R,
}

impl<R: Rng> AnchorInit<'_, R> {
    fn uniform(&mut self, rows: usize, cols: usize, half: f64) -> Tensor {
        Tensor::from_fn(rows, cols, |_, _| self.rng.gen_range(-half..half))
    }

    /// State for one anchor. `base_feature` replaces the random feature when given
    /// and offset features are drawn around it.
    fn anchor_rows(&mut self, cell: f64, base_feature: Option<&[f64]>) -> AnchorRows {
        let (k, d) = (self.k, self.feature_dim);
        let features = match base_feature {
            Some(f) => Tensor::row_vector(f),
            None => self.uniform(1, d, 0.1),
        };
        let mut offset_features = self.uniform(1, k * d, 0.1);
        if base_feature.is_some() {
            for (i, v) in offset_features.data_mut().iter_mut().enumerate() {
                *v += features.data()[i % d];
            }
        }
        let offset_positions = self.uniform(1, 3 * k, 0.5);
        let log_scale = (cell / 4.0).ln();
        let mut quats = Tensor::zeros(1, 4 * k);
        for j in 0..k {
            quats.data_mut()[4 * j] = 1.0;
        }
        AnchorRows {
            features,
            offset_features,
            offset_positions,
            anchor_scales: Tensor::full(1, 3, log_scale),
            offset_scales: Tensor::zeros(1, 3 * k),
            offset_quats: quats,
            position_scale: Tensor::full(1, 3, cell),
        }
    }
}

struct AnchorRows {
    features: Tensor,
    offset_features: Tensor,
    offset_positions: Tensor,
    anchor_scales: Tensor,
    offset_scales: Tensor,
    offset_quats: Tensor,
    position_scale: Tensor,
}

/// `A = ⌊P / Δd⌋ · Δd` with duplicate corners collapsed in first-seen order.
pub fn voxelize_points<R: Rng>(
    cloud: &PointCloud,
    voxel_size: f64,
    k: usize,
    feature_dim: usize,
    rng: &mut R,
) -> Result<AnchorSet, SceneError> {
    if !(voxel_size > 0.0 && voxel_size.is_finite()) {
        return Err(SceneError::BadVoxelSize(voxel_size));
    }
    if cloud.points.is_empty() {
        return Err(SceneError::EmptyCloud);
    }
    let mut seen: HashMap<[i64; 3], usize> = HashMap::new();
    let mut corners: Vec<[f64; 3]> = Vec::new();
    for (index, p) in cloud.points.iter().enumerate() {
        if p.iter().any(|v| !v.is_finite()) {
            return Err(SceneError::NonFinitePoint { index });
        }
        let key = [
            voxel_index(p[0], voxel_size),
            voxel_index(p[1], voxel_size),
            voxel_index(p[2], voxel_size),
        ];
        seen.entry(key).or_insert_with(|| {
            corners.push(key.map(|i| i as f64 * voxel_size));
            corners.len() - 1
        });
    }
    let mut init = AnchorInit { k, feature_dim, rng };
    let mut set = AnchorSet::empty(voxel_size, k, feature_dim);
    for c in corners {
        let rows = init.anchor_rows(voxel_size, None);
        set.push_anchor(c, 0, rows);
    }
    Ok(set)
}

impl AnchorSet {
    fn empty(voxel_size: f64, k: usize, feature_dim: usize) -> Self {
        Self {
            positions: Tensor::zeros(0, 3),
            levels: Vec::new(),
            features: Tensor::zeros(0, feature_dim),
            offset_features: Tensor::zeros(0, k * feature_dim),
            offset_positions: Tensor::zeros(0, 3 * k),
            anchor_scales: Tensor::zeros(0, 3),
            offset_scales: Tensor::zeros(0, 3 * k),
            offset_quats: Tensor::zeros(0, 4 * k),
            position_scale: Tensor::zeros(0, 3),
            voxel_size,
            k,
            feature_dim,
        }
    }

    fn push_anchor(&mut self, position: [f64; 3], level: u32, rows: AnchorRows) {
        let append = |t: &mut Tensor, r: &Tensor| t.append_rows(r).expect("row width");
        append(&mut self.positions, &Tensor::row_vector(&position));
        self.levels.push(level);
        append(&mut self.features, &rows.features);
        append(&mut self.offset_features, &rows.offset_features);
        append(&mut self.offset_positions, &rows.offset_positions);
        append(&mut self.anchor_scales, &rows.anchor_scales);
        append(&mut self.offset_scales, &rows.offset_scales);
        append(&mut self.offset_quats, &rows.offset_quats);
        append(&mut self.position_scale, &rows.position_scale);
    }

    /// Adds a densified child anchor at `position` inheriting `feature`.
    pub(crate) fn push_child<R: Rng>(&mut self, position: [f64; 3], level: u32, feature: &[f64], rng: &mut R) {
        let cell = self.voxel_size / f64::from(1u32 << level);
        let mut init = AnchorInit {
            k: self.k,
            feature_dim: self.feature_dim,
            rng,
        };
        let rows = init.anchor_rows(cell, Some(feature));
        self.push_anchor(position, level, rows);
    }

    /// Keeps the listed anchors in the given order.
    pub(crate) fn retain_rows(&mut self, keep: &[usize]) -> Result<(), SceneError> {
        if keep.is_empty() {
            return Err(SceneError::NoAnchorsLeft);
        }
        self.positions = self.positions.select_rows(keep);
        self.levels = keep.iter().map(|&i| self.levels[i]).collect();
        for t in self.per_anchor_tensors_mut() {
            *t = t.select_rows(keep);
        }
        Ok(())
    }

    fn per_anchor_tensors_mut(&mut self) -> [&mut Tensor; 7] {
        [
            &mut self.features,
            &mut self.offset_features,
            &mut self.offset_positions,
            &mut self.anchor_scales,
            &mut self.offset_scales,
            &mut self.offset_quats,
            &mut self.position_scale,
        ]
    }

    /// Rebuilds a set from stored arrays (checkpoint loading).
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        positions: Tensor,
        levels: Vec<u32>,
        features: Tensor,
        offset_features: Tensor,
        offset_positions: Tensor,
        anchor_scales: Tensor,
        offset_scales: Tensor,
        offset_quats: Tensor,
        position_scale: Tensor,
        voxel_size: f64,
        k: usize,
    ) -> Result<Self, String> {
        let n = positions.rows();
        let d = features.cols();
        let checks = [
            ("positions", &positions, 3),
            ("features", &features, d),
            ("offset_features", &offset_features, k * d),
            ("offset_positions", &offset_positions, 3 * k),
            ("anchor_scales", &anchor_scales, 3),
            ("offset_scales", &offset_scales, 3 * k),
            ("offset_quats", &offset_quats, 4 * k),
            ("position_scale", &position_scale, 3),
        ];
        for (name, t, cols) in checks {
            if t.rows() != n || t.cols() != cols {
                return Err(format!("{name}: expected {n}x{cols}, got {}", t.shape()));
            }
        }
        if levels.len() != n {
            return Err(format!("levels: expected {n}, got {}", levels.len()));
        }
        Ok(Self {
            positions,
            levels,
            features,
            offset_features,
            offset_positions,
            anchor_scales,
            offset_scales,
            offset_quats,
            position_scale,
            voxel_size,
            k,
            feature_dim: d,
        })
    }

    pub fn len(&self) -> usize {
        self.positions.rows()
    }

    /// Registers the learnable arrays as parameters; positions enter as a
    /// constant and never receive a gradient.
    pub fn bind(&self, g: &mut Graph) -> AnchorVars {
        AnchorVars {
            positions: g.constant(self.positions.clone()),
            features: g.param(self.features.clone()),
            offset_features: g.param(self.offset_features.clone()),
            offset_positions: g.param(self.offset_positions.clone()),
            anchor_scales: g.param(self.anchor_scales.clone()),
            offset_scales: g.param(self.offset_scales.clone()),
            offset_quats: g.param(self.offset_quats.clone()),
            position_scale: g.param(self.position_scale.clone()),
        }
    }

    /// Handles for externally created learnable values given in
    /// [`AnchorSet::tensors`] order; positions enter as a constant.
    pub fn vars_from(&self, g: &mut Graph, values: &[Value; 7]) -> AnchorVars {
        let [features, offset_features, offset_positions, anchor_scales, offset_scales, offset_quats, position_scale] = *values;
        AnchorVars {
            positions: g.constant(self.positions.clone()),
            features,
            offset_features,
            offset_positions,
            anchor_scales,
            offset_scales,
            offset_quats,
            position_scale,
        }
    }

    /// Handles in [`AnchorSet::tensors`] order.
    pub fn var_list(vars: &AnchorVars) -> [Value; 7] {
        [
            vars.features,
            vars.offset_features,
            vars.offset_positions,
            vars.anchor_scales,
            vars.offset_scales,
            vars.offset_quats,
            vars.position_scale,
        ]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    /// Anchor positions (`N×3`). There is no mutable access.
    pub fn positions(&self) -> &Tensor {
        &self.positions
    }

    pub fn position(&self, n: usize) -> [f64; 3] {
        let r = self.positions.row(n);
        [r[0], r[1], r[2]]
    }

    /// Subdivision level: 0 for voxelized anchors, +1 per densification.
    pub fn levels(&self) -> &[u32] {
        &self.levels
    }

    /// Edge length of anchor `n`'s cell.
    pub fn cell_size(&self, n: usize) -> f64 {
        self.voxel_size / f64::from(1u32 << self.levels[n])
    }

    /// Minimum corner of anchor `n`'s cell. Voxelized anchors sit on their
    /// cell's corner; densified anchors sit at the centre of theirs.
    pub fn cell_origin(&self, n: usize) -> [f64; 3] {
        let p = self.position(n);
        if self.levels[n] == 0 {
            p
        } else {
            let h = self.cell_size(n) / 2.0;
            p.map(|v| v - h)
        }
    }

    /// Canonical position `x_a + x_o^k · position_scale` of offset `k` of anchor `n`.
    pub fn canonical_offset_position(&self, n: usize, k: usize) -> [f64; 3] {
        let p = self.position(n);
        let o = &self.offset_positions.row(n)[3 * k..3 * k + 3];
        let s = self.position_scale.row(n);
        [p[0] + o[0] * s[0], p[1] + o[1] * s[1], p[2] + o[2] * s[2]]
    }

    pub fn is_finite(&self) -> bool {
        self.positions.is_finite() && self.tensors().iter().all(|(_, t)| t.is_finite())
    }

    /// Learnable per-anchor arrays in inventory order.
    pub fn tensors(&self) -> [(&'static str, &Tensor); 7] {
        [
            ("features", &self.features),
            ("offset_features", &self.offset_features),
            ("offset_positions", &self.offset_positions),
            ("anchor_scales", &self.anchor_scales),
            ("offset_scales", &self.offset_scales),
            ("offset_quats", &self.offset_quats),
            ("position_scale", &self.position_scale),
        ]
    }
}

fn anchor_group(name: &str) -> ParamGroup {
    match name {
        "features" | "offset_features" => ParamGroup::Features,
        "offset_positions" => ParamGroup::Offsets,
        _ => ParamGroup::Scales,
    }
}

/// Every array that receives gradients, in a fixed order. Anchor positions
/// are not listed.
pub fn learnable_inventory<'a>(scene: &'a AnchorSet, heads: &'a HeadBank) -> Vec<ParamRef<'a>> {
    let mut out: Vec<ParamRef<'a>> = scene
        .tensors()
        .into_iter()
        .map(|(name, tensor)| ParamRef {
            name: name.to_string(),
            group: anchor_group(name),
            per_anchor: true,
            tensor,
        })
        .collect();
    for (head, mlp) in heads.mlps() {
        let group = head_group(head);
        for (i, tensor) in mlp.tensors().enumerate() {
            let kind = if i % 2 == 0 { "weight" } else { "bias" };
            out.push(ParamRef {
                name: format!("{head}.{}.{kind}", i / 2),
                group,
                per_anchor: false,
                tensor,
            });
        }
    }
    out
}

/// Mutable twin of [`learnable_inventory`], same order.
pub fn learnable_inventory_mut<'a>(scene: &'a mut AnchorSet, heads: &'a mut HeadBank) -> Vec<ParamMut<'a>> {
    let names = scene.tensors().map(|(n, _)| n);
    let mut out: Vec<ParamMut<'a>> = scene
        .per_anchor_tensors_mut()
        .into_iter()
        .zip(names)
        .map(|(tensor, name)| ParamMut {
            name: name.to_string(),
            group: anchor_group(name),
            per_anchor: true,
            tensor,
        })
        .collect();
    for (head, mlp) in heads.mlps_mut() {
        let group = head_group(head);
        for (i, tensor) in mlp.tensors_mut().enumerate() {
            let kind = if i % 2 == 0 { "weight" } else { "bias" };
            out.push(ParamMut {
                name: format!("{head}.{}.{kind}", i / 2),
                group,
                per_anchor: false,
                tensor,
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    fn cloud(points: Vec<[f64; 3]>) -> PointCloud {
        PointCloud::new(points, None).unwrap()
    }

    #[test]
    fn floor_to_voxel_corner() {
        let set = voxelize_points(&cloud(vec![[1.3, -0.7, 0.05]]), 0.6, 10, 8, &mut rng()).unwrap();
        assert_eq!(set.len(), 1);
        let p = set.position(0);
        assert!(
            (p[0] - 1.2).abs() < 1e-12 && (p[1] + 1.2).abs() < 1e-12 && p[2] == 0.0,
            "{p:?}"
        );
    }

    #[test]
    fn same_voxel_collapses() {
        let set = voxelize_points(&cloud(vec![[0.1, 0.1, 0.1], [0.5, 0.2, 0.3]]), 0.6, 10, 8, &mut rng()).unwrap();
        assert_eq!(set.len(), 1);
    }

    #[test]
    fn errors() {
        assert_eq!(PointCloud::new(vec![], None), Err(SceneError::EmptyCloud));
        assert_eq!(
            PointCloud::new(vec![[0.0; 3], [f64::NAN, 0.0, 0.0]], None),
            Err(SceneError::NonFinitePoint { index: 1 })
        );
        let raw = PointCloud {
            points: vec![[0.0; 3], [1.0, f64::INFINITY, 0.0]],
            colors: None,
        };
        assert_eq!(
            voxelize_points(&raw, 0.6, 10, 8, &mut rng()).unwrap_err(),
            SceneError::NonFinitePoint { index: 1 }
        );
        let empty = PointCloud {
            points: vec![],
            colors: None,
        };
        assert_eq!(
            voxelize_points(&empty, 0.6, 10, 8, &mut rng()).unwrap_err(),
            SceneError::EmptyCloud
        );
        assert_eq!(
            voxelize_points(&cloud(vec![[0.0; 3]]), 0.0, 10, 8, &mut rng()).unwrap_err(),
            SceneError::BadVoxelSize(0.0)
        );
    }

    #[test]
    fn default_voxel_size() {
        assert_eq!(DEFAULT_VOXEL_SIZE, 0.6);
        assert_eq!(DEFAULT_OFFSETS, 10);
        assert_eq!(DEFAULT_FEATURE_DIM, 8);
    }

    #[test]
    fn inventory_excludes_positions() {
        let pts: Vec<[f64; 3]> = (0..10).map(|i| [i as f64 * 0.7, 0.0, 0.0]).collect();
        let set = voxelize_points(&cloud(pts), 0.6, 10, 8, &mut rng()).unwrap();
        assert_eq!(set.len(), 10);
        let heads = HeadBank::new(10, 8, true, &mut rng());
        let inv = learnable_inventory(&set, &heads);
        assert!(inv.iter().all(|p| p.name != "positions"));
        assert!(inv.iter().all(|p| !std::ptr::eq(p.tensor, set.positions())));
        let f = inv.iter().find(|p| p.name == "features").unwrap();
        assert_eq!(f.tensor.len(), 80);
        assert!(inv.iter().all(|p| p.tensor.is_finite()));
        // 7 anchor arrays + 2 per layer: 2+2+2+2+2+4 layers.
        assert_eq!(inv.len(), 7 + 2 * (2 + 2 + 2 + 2 + 2 + 4));
        let mut set2 = set.clone();
        let mut heads2 = heads.clone();
        let names: Vec<String> = learnable_inventory_mut(&mut set2, &mut heads2)
            .into_iter()
            .map(|p| p.name)
            .collect();
        assert_eq!(names, inv.iter().map(|p| p.name.clone()).collect::<Vec<_>>());
    }

    #[test]
    fn initialization_contract() {
        let set = voxelize_points(&cloud(vec![[0.0; 3]]), 0.6, 10, 8, &mut rng()).unwrap();
        assert!(set.features.data().iter().all(|v| v.abs() <= 0.1));
        assert!(set.offset_positions.data().iter().all(|v| v.abs() <= 0.5));
        assert!(set.position_scale.data().iter().all(|&v| v == 0.6));
        let world = (set.anchor_scales.get(0, 0) + set.offset_scales.get(0, 0)).exp();
        assert!((world - 0.15).abs() < 1e-12);
        for k in 0..10 {
            assert_eq!(&set.offset_quats.row(0)[4 * k..4 * k + 4], &[1.0, 0.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn cloud_text_round_trip() {
        let text = "# header\n1 2 3 0.1 0.2 0.3\n-1 0.5 2 1 1 1 # trailing\n\n";
        let c = PointCloud::parse(text).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.colors.as_ref().unwrap()[1], [1.0, 1.0, 1.0]);
        assert_eq!(PointCloud::parse(&c.to_text()).unwrap(), c);
        assert!(matches!(PointCloud::parse("1 2\n"), Err(SceneError::Parse { line: 1, .. })));
        assert!(matches!(
            PointCloud::parse("1 2 3\n1 2 3 4 5 6\n"),
            Err(SceneError::Parse { line: 2, .. })
        ));
    }

    proptest! {
        #[test]
        fn voxelization_is_idempotent_and_aligned(
            pts in proptest::collection::vec(proptest::array::uniform3(-5.0f64..5.0), 1..60),
            voxel in 0.05f64..1.5,
        ) {
            let set = voxelize_points(&cloud(pts.clone()), voxel, 2, 4, &mut rng()).unwrap();
            prop_assert!(set.len() <= pts.len());
            let corners: Vec<[f64; 3]> = (0..set.len()).map(|n| set.position(n)).collect();
            for c in &corners {
                for v in c {
                    let k = (v / voxel).round();
                    prop_assert_eq!(k * voxel, *v);
                }
            }
            let again = voxelize_points(&cloud(corners.clone()), voxel, 2, 4, &mut rng()).unwrap();
            prop_assert_eq!(again.positions(), set.positions());
            for i in 0..corners.len() {
                for j in 0..i {
                    prop_assert_ne!(corners[i], corners[j]);
                }
            }
        }
    }
}
