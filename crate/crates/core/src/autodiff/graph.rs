use super::tensor::{Shape, Tensor};
use super::AutodiffError;
use std::hash::{DefaultHasher, Hash, Hasher};

/// Inputs above this are clamped before `exp` so the forward pass stays finite.
pub const EXP_CLAMP: f64 = 40.0;

/// Handle to a node of a [`Graph`]. Only meaningful for the graph that issued it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Value(usize);

impl Value {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Built-in operation kinds.
///
/// Binary elementwise kinds broadcast `1`-sized dimensions of either operand.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OpKind {
    MatMul,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Scale(f64),
    AddScalar(f64),
    Relu,
    Sigmoid,
    Exp,
    Sqrt,
    Abs,
    /// Sum of all elements, `1×1`.
    Sum,
    /// Mean of all elements, `1×1`.
    Mean,
    /// Sum of squares of all elements, `1×1`.
    SquaredNorm,
    /// Per-row sum, `r×1`.
    RowSum,
    /// Per-row sum of squares, `r×1`.
    RowSquaredNorm,
    /// Horizontal concatenation of any number of inputs with equal row counts.
    ConcatCols,
    /// Expand `1`-sized dimensions to the target shape.
    Broadcast(Shape),
    /// Repeat each row `k` times consecutively (`r×c` -> `rk×c`).
    RepeatRows(usize),
    Reshape(Shape),
}

impl OpKind {
    pub fn name(&self) -> &'static str {
        match self {
            OpKind::MatMul => "matmul",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Div => "div",
            OpKind::Neg => "neg",
            OpKind::Scale(_) => "scale",
            OpKind::AddScalar(_) => "add_scalar",
            OpKind::Relu => "relu",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Exp => "exp",
            OpKind::Sqrt => "sqrt",
            OpKind::Abs => "abs",
            OpKind::Sum => "sum",
            OpKind::Mean => "mean",
            OpKind::SquaredNorm => "squared_norm",
            OpKind::RowSum => "row_sum",
            OpKind::RowSquaredNorm => "row_squared_norm",
            OpKind::ConcatCols => "concat",
            OpKind::Broadcast(_) => "broadcast",
            OpKind::RepeatRows(_) => "repeat_rows",
            OpKind::Reshape(_) => "reshape",
        }
    }
}

/// An operation whose forward pass is computed outside the graph and whose
/// vector-Jacobian product is supplied by the implementor.
pub trait CustomOp {
    fn name(&self) -> &str;

    /// Gradients for each input given the output gradient. `None` means zero.
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad_output: &Tensor) -> Vec<Option<Tensor>>;

    /// Feeds any discrete choices made by the forward pass (clamps, culls,
    /// early exits) into `state`. Ops that are smooth everywhere leave it alone.
    fn hash_branches(&self, _inputs: &[&Tensor], _state: &mut DefaultHasher) {}
}

enum NodeOp {
    Leaf,
    Constant,
    Builtin(OpKind),
    Custom(Box<dyn CustomOp>),
}

struct Node {
    op: NodeOp,
    inputs: Vec<Value>,
    value: Tensor,
    grad: Option<Tensor>,
    requires_grad: bool,
}

/// Append-only tape of operations. Build one per forward pass, call
/// [`Graph::backward`] once, then read gradients off the leaves.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn broadcast_shape(op: &'static str, a: Shape, b: Shape) -> Result<Shape, AutodiffError> {
    let dim = |x: usize, y: usize| {
        if x == y || y == 1 {
            Some(x)
        } else if x == 1 {
            Some(y)
        } else {
            None
        }
    };
    match (dim(a.rows, b.rows), dim(a.cols, b.cols)) {
        (Some(rows), Some(cols)) => Ok(Shape::new(rows, cols)),
        _ => Err(AutodiffError::ShapeMismatch { op, lhs: a, rhs: b }),
    }
}

#[inline]
fn bidx(s: Shape, r: usize, c: usize) -> usize {
    let r = if s.rows == 1 { 0 } else { r };
    let c = if s.cols == 1 { 0 } else { c };
    r * s.cols + c
}

/// Sums `grad` (shaped `out`) down to `target` along broadcast dimensions.
fn reduce_to(grad: &Tensor, target: Shape) -> Tensor {
    if grad.shape() == target {
        return grad.clone();
    }
    let mut out = Tensor::zeros(target.rows, target.cols);
    let s = grad.shape();
    for r in 0..s.rows {
        for c in 0..s.cols {
            out.data_mut()[bidx(target, r, c)] += grad.get(r, c);
        }
    }
    out
}

fn binary_map(a: &Tensor, b: &Tensor, out: Shape, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let (sa, sb) = (a.shape(), b.shape());
    if sa == out && sb == out {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        return Tensor::new(out.rows, out.cols, data).expect("shape");
    }
    Tensor::from_fn(out.rows, out.cols, |r, c| {
        f(a.data()[bidx(sa, r, c)], b.data()[bidx(sb, r, c)])
    })
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: NodeOp, inputs: Vec<Value>, value: Tensor) -> Value {
        let requires_grad = match op {
            NodeOp::Leaf => true,
            NodeOp::Constant => false,
            _ => inputs.iter().any(|v| self.nodes[v.0].requires_grad),
        };
        self.nodes.push(Node {
            op,
            inputs,
            value,
            grad: None,
            requires_grad,
        });
        Value(self.nodes.len() - 1)
    }

    /// A leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor) -> Value {
        self.push(NodeOp::Leaf, Vec::new(), value)
    }

    /// A leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor) -> Value {
        self.push(NodeOp::Constant, Vec::new(), value)
    }

    pub fn value(&self, v: Value) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Value) -> Shape {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of the last backward root w.r.t. `v`, if `v` was reached.
    pub fn grad(&self, v: Value) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    /// Like [`Graph::grad`] but zero-filled when `v` was not reached.
    pub fn grad_or_zero(&self, v: Value) -> Tensor {
        match &self.nodes[v.0].grad {
            Some(g) => g.clone(),
            None => {
                let s = self.shape(v);
                Tensor::zeros(s.rows, s.cols)
            }
        }
    }

    /// Fingerprint of the piecewise branches taken by the forward pass. Two
    /// evaluations with equal fingerprints sit on the same smooth piece of
    /// the function, so a finite difference between them is meaningful.
    pub fn branch_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for (id, node) in self.nodes.iter().enumerate() {
            match &node.op {
                NodeOp::Builtin(OpKind::Relu | OpKind::Abs) => {
                    id.hash(&mut h);
                    for &x in self.nodes[node.inputs[0].0].value.data() {
                        (x > 0.0).hash(&mut h);
                        (x < 0.0).hash(&mut h);
                    }
                }
                NodeOp::Builtin(OpKind::Exp) => {
                    id.hash(&mut h);
                    for &x in self.nodes[node.inputs[0].0].value.data() {
                        (x > EXP_CLAMP).hash(&mut h);
                    }
                }
                NodeOp::Custom(op) => {
                    id.hash(&mut h);
                    let inputs: Vec<&Tensor> = node.inputs.iter().map(|v| &self.nodes[v.0].value).collect();
                    op.hash_branches(&inputs, &mut h);
                }
                _ => {}
            }
        }
        h.finish()
    }

    pub fn inputs(&self, v: Value) -> &[Value] {
        &self.nodes[v.0].inputs
    }

    /// Records a custom operation with a precomputed forward result.
    pub fn custom(&mut self, op: Box<dyn CustomOp>, inputs: &[Value], output: Tensor) -> Value {
        self.push(NodeOp::Custom(op), inputs.to_vec(), output)
    }

    /// Evaluates `kind` on `inputs` and appends the node.
    pub fn apply(&mut self, kind: OpKind, inputs: &[Value]) -> Result<Value, AutodiffError> {
        let arity_ok = match kind {
            OpKind::MatMul | OpKind::Add | OpKind::Sub | OpKind::Mul | OpKind::Div => inputs.len() == 2,
            OpKind::ConcatCols => !inputs.is_empty(),
            _ => inputs.len() == 1,
        };
        if !arity_ok {
            return Err(AutodiffError::Arity {
                op: kind.name(),
                got: inputs.len(),
            });
        }
        let value = self.eval(kind, inputs)?;
        Ok(self.push(NodeOp::Builtin(kind), inputs.to_vec(), value))
    }

    fn eval(&self, kind: OpKind, inputs: &[Value]) -> Result<Tensor, AutodiffError> {
        let a = self.value(inputs[0]);
        let name = kind.name();
        let out = match kind {
            OpKind::MatMul => a.matmul(self.value(inputs[1]))?,
            OpKind::Add | OpKind::Sub | OpKind::Mul | OpKind::Div => {
                let b = self.value(inputs[1]);
                let s = broadcast_shape(name, a.shape(), b.shape())?;
                match kind {
                    OpKind::Add => binary_map(a, b, s, |x, y| x + y),
                    OpKind::Sub => binary_map(a, b, s, |x, y| x - y),
                    OpKind::Mul => binary_map(a, b, s, |x, y| x * y),
                    _ => binary_map(a, b, s, |x, y| x / y),
                }
            }
            OpKind::Neg => a.map(|x| -x),
            OpKind::Scale(k) => a.map(|x| k * x),
            OpKind::AddScalar(k) => a.map(|x| x + k),
            OpKind::Relu => a.map(|x| if x > 0.0 { x } else { 0.0 }),
            OpKind::Sigmoid => a.map(sigmoid),
            OpKind::Exp => a.map(|x| x.min(EXP_CLAMP).exp()),
            OpKind::Sqrt => a.map(f64::sqrt),
            OpKind::Abs => a.map(f64::abs),
            OpKind::Sum => Tensor::scalar(a.sum()),
            OpKind::Mean => Tensor::scalar(if a.is_empty() { 0.0 } else { a.sum() / a.len() as f64 }),
            OpKind::SquaredNorm => Tensor::scalar(a.data().iter().map(|x| x * x).sum()),
            OpKind::RowSum => Tensor::from_fn(a.rows(), 1, |r, _| a.row(r).iter().sum()),
            OpKind::RowSquaredNorm => Tensor::from_fn(a.rows(), 1, |r, _| a.row(r).iter().map(|x| x * x).sum()),
            OpKind::ConcatCols => {
                let rows = a.rows();
                let mut cols = 0;
                for v in inputs {
                    let s = self.shape(*v);
                    if s.rows != rows {
                        return Err(AutodiffError::ShapeMismatch {
                            op: name,
                            lhs: a.shape(),
                            rhs: s,
                        });
                    }
                    cols += s.cols;
                }
                let mut data = Vec::with_capacity(rows * cols);
                for r in 0..rows {
                    for v in inputs {
                        data.extend_from_slice(self.value(*v).row(r));
                    }
                }
                Tensor::new(rows, cols, data)?
            }
            OpKind::Broadcast(target) => {
                let s = broadcast_shape(name, a.shape(), target)?;
                if s != target {
                    return Err(AutodiffError::ShapeMismatch {
                        op: name,
                        lhs: a.shape(),
                        rhs: target,
                    });
                }
                Tensor::from_fn(s.rows, s.cols, |r, c| a.data()[bidx(a.shape(), r, c)])
            }
            OpKind::RepeatRows(k) => {
                let c = a.cols();
                let mut data = Vec::with_capacity(a.len() * k);
                for r in 0..a.rows() {
                    for _ in 0..k {
                        data.extend_from_slice(a.row(r));
                    }
                }
                Tensor::new(a.rows() * k, c, data)?
            }
            OpKind::Reshape(target) => {
                if target.len() != a.len() {
                    return Err(AutodiffError::ShapeMismatch {
                        op: name,
                        lhs: a.shape(),
                        rhs: target,
                    });
                }
                a.clone().reshaped(target.rows, target.cols)?
            }
        };
        Ok(out)
    }

    /// Reverse sweep from a scalar root. Gradients accumulate over fan-out.
    pub fn backward(&mut self, root: Value) -> Result<(), AutodiffError> {
        let s = self.shape(root);
        if s != Shape::SCALAR {
            return Err(AutodiffError::NonScalarRoot(s));
        }
        for n in &mut self.nodes {
            n.grad = None;
        }
        self.nodes[root.0].grad = Some(Tensor::scalar(1.0));
        for id in (0..=root.0).rev() {
            if !self.nodes[id].requires_grad {
                continue;
            }
            let Some(g) = self.nodes[id].grad.take() else {
                continue;
            };
            let input_grads = self.vjp(id, &g);
            self.nodes[id].grad = Some(g);
            for (input, ig) in self.nodes[id].inputs.clone().into_iter().zip(input_grads) {
                let Some(ig) = ig else { continue };
                let node = &mut self.nodes[input.0];
                if !node.requires_grad {
                    continue;
                }
                match &mut node.grad {
                    Some(acc) => {
                        for (a, b) in acc.data_mut().iter_mut().zip(ig.data()) {
                            *a += b;
                        }
                    }
                    None => node.grad = Some(ig),
                }
            }
        }
        Ok(())
    }

    fn vjp(&self, id: usize, g: &Tensor) -> Vec<Option<Tensor>> {
        let node = &self.nodes[id];
        let kind = match &node.op {
            NodeOp::Leaf | NodeOp::Constant => return Vec::new(),
            NodeOp::Custom(op) => {
                let inputs: Vec<&Tensor> = node.inputs.iter().map(|v| self.value(*v)).collect();
                return op.backward(&inputs, &node.value, g);
            }
            NodeOp::Builtin(k) => *k,
        };
        let x = self.value(node.inputs[0]);
        let y = &node.value;
        let wants = |i: usize| self.nodes[node.inputs[i].0].requires_grad;
        let zip = |f: &dyn Fn(f64, f64, f64) -> f64| {
            let data = x
                .data()
                .iter()
                .zip(y.data())
                .zip(g.data())
                .map(|((&xi, &yi), &gi)| f(xi, yi, gi))
                .collect();
            Some(Tensor::new(x.rows(), x.cols(), data).expect("shape"))
        };
        match kind {
            OpKind::MatMul => {
                let b = self.value(node.inputs[1]);
                let ga = wants(0).then(|| g.matmul(&b.transpose()).expect("shape"));
                let gb = wants(1).then(|| x.transpose().matmul(g).expect("shape"));
                vec![ga, gb]
            }
            OpKind::Add | OpKind::Sub | OpKind::Mul | OpKind::Div => {
                let b = self.value(node.inputs[1]);
                let out = y.shape();
                let (sa, sb) = (x.shape(), b.shape());
                let mut ga = None;
                let mut gb = None;
                if wants(0) {
                    let full = match kind {
                        OpKind::Add | OpKind::Sub => g.clone(),
                        OpKind::Mul => binary_map(g, b, out, |gi, bi| gi * bi),
                        _ => binary_map(g, b, out, |gi, bi| gi / bi),
                    };
                    ga = Some(reduce_to(&full, sa));
                }
                if wants(1) {
                    let full = match kind {
                        OpKind::Add => g.clone(),
                        OpKind::Sub => g.map(|v| -v),
                        OpKind::Mul => binary_map(g, x, out, |gi, ai| gi * ai),
                        _ => Tensor::from_fn(out.rows, out.cols, |r, c| {
                            let ai = x.data()[bidx(sa, r, c)];
                            let bi = b.data()[bidx(sb, r, c)];
                            -g.get(r, c) * ai / (bi * bi)
                        }),
                    };
                    gb = Some(reduce_to(&full, sb));
                }
                vec![ga, gb]
            }
            OpKind::Neg => vec![Some(g.map(|v| -v))],
            OpKind::Scale(k) => vec![Some(g.map(|v| k * v))],
            OpKind::AddScalar(_) => vec![Some(g.clone())],
            OpKind::Relu => vec![zip(&|xi, _, gi| if xi > 0.0 { gi } else { 0.0 })],
            OpKind::Sigmoid => vec![zip(&|_, yi, gi| gi * yi * (1.0 - yi))],
            OpKind::Exp => vec![zip(&|xi, yi, gi| if xi < EXP_CLAMP { gi * yi } else { 0.0 })],
            OpKind::Sqrt => vec![zip(&|_, yi, gi| gi / (2.0 * yi))],
            OpKind::Abs => vec![zip(&|xi, _, gi| {
                if xi > 0.0 {
                    gi
                } else if xi < 0.0 {
                    -gi
                } else {
                    0.0
                }
            })],
            OpKind::Sum => vec![Some(Tensor::full(x.rows(), x.cols(), g.item()))],
            OpKind::Mean => {
                let n = x.len().max(1) as f64;
                vec![Some(Tensor::full(x.rows(), x.cols(), g.item() / n))]
            }
            OpKind::SquaredNorm => {
                let gi = g.item();
                vec![Some(x.map(|v| 2.0 * v * gi))]
            }
            OpKind::RowSum => vec![Some(Tensor::from_fn(x.rows(), x.cols(), |r, _| g.get(r, 0)))],
            OpKind::RowSquaredNorm => {
                vec![Some(Tensor::from_fn(x.rows(), x.cols(), |r, c| {
                    2.0 * x.get(r, c) * g.get(r, 0)
                }))]
            }
            OpKind::ConcatCols => {
                let mut offset = 0;
                let mut out = Vec::with_capacity(node.inputs.len());
                for (i, v) in node.inputs.iter().enumerate() {
                    let s = self.shape(*v);
                    if wants(i) {
                        out.push(Some(Tensor::from_fn(s.rows, s.cols, |r, c| g.get(r, offset + c))));
                    } else {
                        out.push(None);
                    }
                    offset += s.cols;
                }
                out
            }
            OpKind::Broadcast(_) => vec![Some(reduce_to(g, x.shape()))],
            OpKind::RepeatRows(k) => {
                let mut out = Tensor::zeros(x.rows(), x.cols());
                for r in 0..x.rows() {
                    let acc = out.row_mut(r);
                    for j in 0..k {
                        for (a, b) in acc.iter_mut().zip(g.row(r * k + j)) {
                            *a += b;
                        }
                    }
                }
                vec![Some(out)]
            }
            OpKind::Reshape(_) => vec![Some(g.clone().reshaped(x.rows(), x.cols()).expect("shape"))],
        }
    }

    // Convenience wrappers.

    pub fn matmul(&mut self, a: Value, b: Value) -> Result<Value, AutodiffError> {
        self.apply(OpKind::MatMul, &[a, b])
    }
    pub fn add(&mut self, a: Value, b: Value) -> Result<Value, AutodiffError> {
        self.apply(OpKind::Add, &[a, b])
    }
    pub fn sub(&mut self, a: Value, b: Value) -> Result<Value, AutodiffError> {
        self.apply(OpKind::Sub, &[a, b])
    }
    pub fn mul(&mut self, a: Value, b: Value) -> Result<Value, AutodiffError> {
        self.apply(OpKind::Mul, &[a, b])
    }
    pub fn div(&mut self, a: Value, b: Value) -> Result<Value, AutodiffError> {
        self.apply(OpKind::Div, &[a, b])
    }
    pub fn neg(&mut self, a: Value) -> Result<Value, AutodiffError> {
        self.apply(OpKind::Neg, &[a])
    }
    pub fn scale(&mut self, a: Value, k: f64) -> Result<Value, AutodiffError> {
        self.apply(OpKind::Scale(k), &[a])
    }
    pub fn add_scalar(&mut self, a: Value, k: f64) -> Result<Value, AutodiffError> {
        self.apply(OpKind::AddScalar(k), &[a])
    }
    pub fn relu(&mut self, a: Value) -> Result<Value, AutodiffError> {
        self.apply(OpKind::Relu, &[a])
    }
    pub fn sigmoid(&mut self, a: Value) -> Result<Value, AutodiffError> {
        self.apply(OpKind::Sigmoid, &[a])
    }
    pub fn exp(&mut self, a: Value) -> Result<Value, AutodiffError> {
        self.apply(OpKind::Exp, &[a])
    }
    pub fn sqrt(&mut self, a: Value) -> Result<Value, AutodiffError> {
        self.apply(OpKind::Sqrt, &[a])
    }
    pub fn abs(&mut self, a: Value) -> Result<Value, AutodiffError> {
        self.apply(OpKind::Abs, &[a])
    }
    pub fn sum(&mut self, a: Value) -> Result<Value, AutodiffError> {
        self.apply(OpKind::Sum, &[a])
    }
    pub fn mean(&mut self, a: Value) -> Result<Value, AutodiffError> {
        self.apply(OpKind::Mean, &[a])
    }
    pub fn squared_norm(&mut self, a: Value) -> Result<Value, AutodiffError> {
        self.apply(OpKind::SquaredNorm, &[a])
    }
    pub fn row_sum(&mut self, a: Value) -> Result<Value, AutodiffError> {
        self.apply(OpKind::RowSum, &[a])
    }
    pub fn row_squared_norm(&mut self, a: Value) -> Result<Value, AutodiffError> {
        self.apply(OpKind::RowSquaredNorm, &[a])
    }
    pub fn concat(&mut self, parts: &[Value]) -> Result<Value, AutodiffError> {
        self.apply(OpKind::ConcatCols, parts)
    }
    pub fn broadcast(&mut self, a: Value, rows: usize, cols: usize) -> Result<Value, AutodiffError> {
        self.apply(OpKind::Broadcast(Shape::new(rows, cols)), &[a])
    }
    pub fn repeat_rows(&mut self, a: Value, k: usize) -> Result<Value, AutodiffError> {
        self.apply(OpKind::RepeatRows(k), &[a])
    }
    pub fn reshape(&mut self, a: Value, rows: usize, cols: usize) -> Result<Value, AutodiffError> {
        self.apply(OpKind::Reshape(Shape::new(rows, cols)), &[a])
    }
}
