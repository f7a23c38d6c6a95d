//! Minimal tape-based reverse-mode differentiation over dense `f64` arrays.
//!
//! A [`Graph`] is built fresh for every forward pass. Leaves created with
//! [`Graph::param`] receive gradients after [`Graph::backward`]; leaves created
//! with [`Graph::constant`] do not. Work that is awkward to express with the
//! built-in kinds (rasterization, SSIM, neighbour interpolation) is attached
//! through [`CustomOp`], which supplies its own vector-Jacobian product.

mod check;
mod graph;
mod tensor;

pub use check::{
    finite_diff_check, finite_diff_check_with, relative_error, GradCheckOptions, GradCheckReport, ParamCheck, REL_ERROR_FLOOR,
};
pub(crate) use graph::sigmoid;
pub use graph::{CustomOp, Graph, OpKind, Value, EXP_CLAMP};
pub use tensor::{Shape, Tensor};

use std::f64::consts::PI;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: incompatible shapes {lhs} and {rhs}")]
    ShapeMismatch { op: &'static str, lhs: Shape, rhs: Shape },
    #[error("{op}: wrong number of inputs ({got})")]
    Arity { op: &'static str, got: usize },
    #[error("backward root must be 1x1, got {0}")]
    NonScalarRoot(Shape),
    #[error("data length {len} does not fill shape {shape}")]
    DataLength { shape: Shape, len: usize },
}

/// `[sin(2^j π u), cos(2^j π u)]` for every coordinate `u` and frequency `j < num_frequencies`.
pub fn positional_encoding(v: &[f64], num_frequencies: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * num_frequencies * v.len());
    for &u in v {
        let mut freq = PI;
        for _ in 0..num_frequencies {
            let (s, c) = (freq * u).sin_cos();
            out.push(s);
            out.push(c);
            freq *= 2.0;
        }
    }
    out
}
