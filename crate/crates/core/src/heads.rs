//! Tiny MLP heads that decode Gaussian attributes from anchor features, the
//! time-mask classifier and the anchor deformation network.
//!
//! Opacity and colour take no time argument, so they are time-invariant by
//! construction. Scale and rotation deltas take `cat(f_a, γ(t))`; the
//! deformation network takes `γ(x_a, t)`.

use rand::Rng;

use crate::autodiff::{positional_encoding, sigmoid, AutodiffError, Graph, Tensor, Value};

pub const HEAD_HIDDEN: usize = 64;
pub const MASK_HIDDEN: usize = 32;
/// Output bias of a fresh mask head: every anchor starts out dynamic so the
/// deformation network sees gradient before the mask can close.
pub const MASK_INIT_LOGIT: f64 = 2.0;
pub const DEFORM_HIDDEN: usize = 128;
/// Frequencies of the spatial positional encoding.
pub const POSITION_FREQUENCIES: usize = 10;
/// Frequencies of the time positional encoding.
pub const TIME_FREQUENCIES: usize = 6;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum HeadError {
    #[error("view direction must be unit length (norm {0})")]
    NonUnitViewDir(f64),
    #[error("feature length {got} does not match head input {expected}")]
    FeatureLength { expected: usize, got: usize },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// `x · W + b`, with `W` stored `in × out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn new<R: Rng>(input: usize, output: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        Self {
            weight: Tensor::from_fn(input, output, |_, _| rng.gen_range(-bound..bound)),
            bias: Tensor::from_fn(1, output, |_, _| rng.gen_range(-bound..bound)),
        }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Tensor::zeros(input, output),
            bias: Tensor::zeros(1, output),
        }
    }

    pub fn input_width(&self) -> usize {
        self.weight.rows()
    }

    pub fn output_width(&self) -> usize {
        self.weight.cols()
    }

    fn forward(&self, x: &Tensor) -> Tensor {
        let mut y = x.matmul(&self.weight).expect("layer width");
        let b = self.bias.data();
        for r in 0..y.rows() {
            for (v, bb) in y.row_mut(r).iter_mut().zip(b) {
                *v += bb;
            }
        }
        y
    }
}

/// Fully connected stack with ReLU between layers and a linear output.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

/// Graph handles of one [`Mlp`]'s weights, `(weight, bias)` per layer.
#[derive(Clone, Debug)]
pub struct MlpVars {
    pub layers: Vec<(Value, Value)>,
}

impl Mlp {
    pub fn new<R: Rng>(widths: &[usize], rng: &mut R) -> Self {
        Self {
            layers: widths.windows(2).map(|w| Linear::new(w[0], w[1], rng)).collect(),
        }
    }

    pub fn zeros(widths: &[usize]) -> Self {
        Self {
            layers: widths.windows(2).map(|w| Linear::zeros(w[0], w[1])).collect(),
        }
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].input_width()
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map_or(0, Linear::output_width)
    }

    pub fn zero_output_layer(&mut self) {
        if let Some(last) = self.layers.last_mut() {
            last.weight.data_mut().fill(0.0);
            last.bias.data_mut().fill(0.0);
        }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        let mut h = x.clone();
        let n = self.layers.len();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(&h);
            if i + 1 < n {
                h.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
            }
        }
        h
    }

    pub fn bind(&self, g: &mut Graph) -> MlpVars {
        MlpVars {
            layers: self
                .layers
                .iter()
                .map(|l| (g.param(l.weight.clone()), g.param(l.bias.clone())))
                .collect(),
        }
    }

    pub fn forward_graph(&self, g: &mut Graph, vars: &MlpVars, x: Value) -> Result<Value, AutodiffError> {
        let mut h = x;
        let n = vars.layers.len();
        for (i, (w, b)) in vars.layers.iter().enumerate() {
            let z = g.matmul(h, *w)?;
            h = g.add(z, *b)?;
            if i + 1 < n {
                h = g.relu(h)?;
            }
        }
        Ok(h)
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias])
    }
}

/// All decoding networks of a scene.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadBank {
    pub k: usize,
    pub feature_dim: usize,
    /// Colour head sees the view direction.
    pub view_dependent: bool,
    /// `f_a -> K` opacity logits.
    pub opacity: Mlp,
    /// `cat(f_a, view_dir) -> 3K` colour logits.
    pub color: Mlp,
    /// `cat(f_a, γ(t)) -> 3K` log-scale deltas.
    pub scale: Mlp,
    /// `cat(f_a, γ(t)) -> 4K` quaternion deltas.
    pub quat: Mlp,
    /// `f_a -> 1` time-mask logit.
    pub mask: Mlp,
    /// `γ(x_a, t) -> 3` anchor displacement.
    pub deform: Mlp,
}

/// Graph handles for every head.
#[derive(Clone, Debug)]
pub struct HeadVars {
    pub opacity: MlpVars,
    pub color: MlpVars,
    pub scale: MlpVars,
    pub quat: MlpVars,
    pub mask: MlpVars,
    pub deform: MlpVars,
}

impl HeadVars {
    /// Weight and bias handles in inventory order.
    pub fn values(&self) -> Vec<Value> {
        [&self.opacity, &self.color, &self.scale, &self.quat, &self.mask, &self.deform]
            .iter()
            .flat_map(|m| m.layers.iter().flat_map(|&(w, b)| [w, b]))
            .collect()
    }
}

pub fn time_encoding_width() -> usize {
    2 * TIME_FREQUENCIES
}

pub fn deform_input_width() -> usize {
    2 * POSITION_FREQUENCIES * 3 + 2 * TIME_FREQUENCIES
}

/// `γ(x_a, t)`: spatial encoding of the anchor followed by the time encoding.
pub fn deform_encoding(position: &[f64], t: f64) -> Vec<f64> {
    let mut e = positional_encoding(position, POSITION_FREQUENCIES);
    e.extend(positional_encoding(&[t], TIME_FREQUENCIES));
    e
}

fn check_unit(view_dir: [f64; 3]) -> Result<(), HeadError> {
    let n = view_dir.iter().map(|v| v * v).sum::<f64>().sqrt();
    if (n - 1.0).abs() > 1e-6 {
        return Err(HeadError::NonUnitViewDir(n));
    }
    Ok(())
}

impl HeadBank {
    /// Randomly initialized heads. Output layers of the time-variant heads
    /// start at zero so a fresh scene is static.
    pub fn new<R: Rng>(k: usize, feature_dim: usize, view_dependent: bool, rng: &mut R) -> Self {
        let d = feature_dim;
        let tv_in = d + time_encoding_width();
        let color_in = if view_dependent { d + 3 } else { d };
        let mut scale = Mlp::new(&[tv_in, HEAD_HIDDEN, 3 * k], rng);
        let mut quat = Mlp::new(&[tv_in, HEAD_HIDDEN, 4 * k], rng);
        let mut deform = Mlp::new(&[deform_input_width(), DEFORM_HIDDEN, DEFORM_HIDDEN, DEFORM_HIDDEN, 3], rng);
        scale.zero_output_layer();
        quat.zero_output_layer();
        deform.zero_output_layer();
        let mut mask = Mlp::new(&[d, MASK_HIDDEN, 1], rng);
        mask.layers.last_mut().expect("two layers").bias.data_mut()[0] = MASK_INIT_LOGIT;
        Self {
            k,
            feature_dim,
            view_dependent,
            opacity: Mlp::new(&[d, HEAD_HIDDEN, k], rng),
            color: Mlp::new(&[color_in, HEAD_HIDDEN, 3 * k], rng),
            scale,
            quat,
            mask,
            deform,
        }
    }

    /// Every weight and bias set to zero.
    pub fn zeros(k: usize, feature_dim: usize, view_dependent: bool) -> Self {
        let d = feature_dim;
        let tv_in = d + time_encoding_width();
        let color_in = if view_dependent { d + 3 } else { d };
        Self {
            k,
            feature_dim,
            view_dependent,
            opacity: Mlp::zeros(&[d, HEAD_HIDDEN, k]),
            color: Mlp::zeros(&[color_in, HEAD_HIDDEN, 3 * k]),
            scale: Mlp::zeros(&[tv_in, HEAD_HIDDEN, 3 * k]),
            quat: Mlp::zeros(&[tv_in, HEAD_HIDDEN, 4 * k]),
            mask: Mlp::zeros(&[d, MASK_HIDDEN, 1]),
            deform: Mlp::zeros(&[deform_input_width(), DEFORM_HIDDEN, DEFORM_HIDDEN, DEFORM_HIDDEN, 3]),
        }
    }

    /// Heads in inventory order.
    pub fn mlps(&self) -> [(&'static str, &Mlp); 6] {
        [
            ("opacity", &self.opacity),
            ("color", &self.color),
            ("scale", &self.scale),
            ("quat", &self.quat),
            ("mask", &self.mask),
            ("deform", &self.deform),
        ]
    }

    pub fn mlps_mut(&mut self) -> [(&'static str, &mut Mlp); 6] {
        [
            ("opacity", &mut self.opacity),
            ("color", &mut self.color),
            ("scale", &mut self.scale),
            ("quat", &mut self.quat),
            ("mask", &mut self.mask),
            ("deform", &mut self.deform),
        ]
    }

    pub fn bind(&self, g: &mut Graph) -> HeadVars {
        HeadVars {
            opacity: self.opacity.bind(g),
            color: self.color.bind(g),
            scale: self.scale.bind(g),
            quat: self.quat.bind(g),
            mask: self.mask.bind(g),
            deform: self.deform.bind(g),
        }
    }

    /// Handles for externally created weight and bias values in
    /// [`HeadVars::values`] order. Panics if the count does not match.
    pub fn vars_from(&self, values: &[Value]) -> HeadVars {
        let mut it = values.iter().copied();
        let mut take = |m: &Mlp| MlpVars {
            layers: m
                .layers
                .iter()
                .map(|_| (it.next().expect("weight value"), it.next().expect("bias value")))
                .collect(),
        };
        let hv = HeadVars {
            opacity: take(&self.opacity),
            color: take(&self.color),
            scale: take(&self.scale),
            quat: take(&self.quat),
            mask: take(&self.mask),
            deform: take(&self.deform),
        };
        assert!(it.next().is_none(), "more values than head weights");
        hv
    }

    pub fn is_finite(&self) -> bool {
        self.mlps().iter().all(|(_, m)| m.tensors().all(Tensor::is_finite))
    }

    fn feature_row(&self, f_a: &[f64]) -> Result<Tensor, HeadError> {
        if f_a.len() != self.feature_dim {
            return Err(HeadError::FeatureLength {
                expected: self.feature_dim,
                got: f_a.len(),
            });
        }
        Ok(Tensor::row_vector(f_a))
    }

    /// Batched `N×K` opacities.
    pub fn opacity_batch(&self, features: &Tensor) -> Tensor {
        self.opacity.forward(features).map(sigmoid)
    }

    /// Batched `N×3K` colours. `view_dirs` is `N×3` and ignored when the
    /// colour head is view-independent.
    pub fn color_batch(&self, features: &Tensor, view_dirs: &Tensor) -> Tensor {
        let input = if self.view_dependent {
            concat_cols(features, view_dirs)
        } else {
            features.clone()
        };
        self.color.forward(&input).map(sigmoid)
    }

    /// `cat(f_a, γ(t))` for every row.
    pub fn time_variant_input(&self, features: &Tensor, t: f64) -> Tensor {
        let enc = Tensor::row_vector(&positional_encoding(&[t], TIME_FREQUENCIES));
        let rep = Tensor::from_fn(features.rows(), enc.cols(), |_, c| enc.data()[c]);
        concat_cols(features, &rep)
    }

    pub fn scale_delta_batch(&self, features: &Tensor, t: f64) -> Tensor {
        self.scale.forward(&self.time_variant_input(features, t))
    }

    pub fn quat_delta_batch(&self, features: &Tensor, t: f64) -> Tensor {
        self.quat.forward(&self.time_variant_input(features, t))
    }

    pub fn mask_batch(&self, features: &Tensor) -> Tensor {
        self.mask.forward(features).map(sigmoid)
    }

    /// `N×3` anchor displacements for `N×3` positions.
    pub fn deform_batch(&self, positions: &Tensor, t: f64) -> Tensor {
        let input = deform_inputs(positions, t);
        self.deform.forward(&input)
    }

    pub fn decode_opacity(&self, f_a: &[f64]) -> Result<Vec<f64>, HeadError> {
        Ok(self.opacity_batch(&self.feature_row(f_a)?).into_data())
    }

    pub fn decode_color(&self, f_a: &[f64], view_dir: [f64; 3]) -> Result<Vec<[f64; 3]>, HeadError> {
        check_unit(view_dir)?;
        let out = self.color_batch(&self.feature_row(f_a)?, &Tensor::row_vector(&view_dir));
        Ok(out.data().chunks(3).map(|c| [c[0], c[1], c[2]]).collect())
    }

    /// Raw (unactivated) log-scale deltas, one per offset.
    pub fn decode_scale_delta(&self, f_a: &[f64], t: f64) -> Result<Vec<[f64; 3]>, HeadError> {
        let out = self.scale_delta_batch(&self.feature_row(f_a)?, t);
        Ok(out.data().chunks(3).map(|c| [c[0], c[1], c[2]]).collect())
    }

    /// Raw additive quaternion deltas, one per offset.
    pub fn decode_quat_delta(&self, f_a: &[f64], t: f64) -> Result<Vec<[f64; 4]>, HeadError> {
        let out = self.quat_delta_batch(&self.feature_row(f_a)?, t);
        Ok(out.data().chunks(4).map(|c| [c[0], c[1], c[2], c[3]]).collect())
    }

    pub fn predict_time_mask(&self, f_a: &[f64]) -> Result<f64, HeadError> {
        Ok(self.mask_batch(&self.feature_row(f_a)?).item())
    }

    pub fn deform_anchor(&self, x_a: [f64; 3], t: f64) -> [f64; 3] {
        let out = self.deform_batch(&Tensor::row_vector(&x_a), t);
        [out.data()[0], out.data()[1], out.data()[2]]
    }
}

/// Stacked `γ(x_a, t)` rows for `N×3` positions.
pub fn deform_inputs(positions: &Tensor, t: f64) -> Tensor {
    let w = deform_input_width();
    let mut data = Vec::with_capacity(positions.rows() * w);
    for r in 0..positions.rows() {
        data.extend(deform_encoding(positions.row(r), t));
    }
    Tensor::new(positions.rows(), w, data).expect("encoding width")
}

pub(crate) fn concat_cols(a: &Tensor, b: &Tensor) -> Tensor {
    let (ca, cb) = (a.cols(), b.cols());
    Tensor::from_fn(a.rows(), ca + cb, |r, c| if c < ca { a.get(r, c) } else { b.get(r, c - ca) })
}
