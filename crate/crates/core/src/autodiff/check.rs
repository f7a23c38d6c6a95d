//! Central-difference gradient oracle.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Value};
use super::tensor::Tensor;
use super::AutodiffError;

/// Denominator floor of the relative error.
pub const REL_ERROR_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Check at most this many coordinates per parameter (sampled without
    /// replacement). `None` checks every coordinate.
    pub max_coords_per_param: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-4,
            max_coords_per_param: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamCheck {
    pub param: usize,
    pub coords_checked: usize,
    /// Coordinates whose `±step` probe crossed a branch of the function
    /// (a ReLU kink, a clamp, a cull) and so have no meaningful central
    /// difference. Not counted in `coords_checked`.
    pub coords_skipped: usize,
    pub max_rel_error: f64,
    pub worst_coord: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

struct Evaluation {
    value: f64,
    branches: u64,
    grads: Vec<Tensor>,
}

fn evaluate<F, E>(f: &F, params: &[Tensor], grads: bool) -> Result<Evaluation, E>
where
    F: Fn(&mut Graph, &[Value]) -> Result<Value, E>,
    E: From<AutodiffError>,
{
    let mut g = Graph::new();
    let vars: Vec<Value> = params.iter().map(|p| g.param(p.clone())).collect();
    let root = f(&mut g, &vars)?;
    let value = g.value(root).item();
    let branches = g.branch_signature();
    if !grads {
        return Ok(Evaluation {
            value,
            branches,
            grads: Vec::new(),
        });
    }
    g.backward(root)?;
    Ok(Evaluation {
        value,
        branches,
        grads: vars.iter().map(|v| g.grad_or_zero(*v)).collect(),
    })
}

/// Max relative error between analytic and central-difference gradients of
/// `f` over every coordinate of `params`.
pub fn finite_diff_check<F, E>(f: F, params: &[Tensor], step: f64) -> Result<f64, E>
where
    F: Fn(&mut Graph, &[Value]) -> Result<Value, E>,
    E: From<AutodiffError>,
{
    let opts = GradCheckOptions {
        step,
        ..Default::default()
    };
    Ok(finite_diff_check_with(f, params, &opts)?.max_rel_error())
}

pub fn finite_diff_check_with<F, E>(f: F, params: &[Tensor], opts: &GradCheckOptions) -> Result<GradCheckReport, E>
where
    F: Fn(&mut Graph, &[Value]) -> Result<Value, E>,
    E: From<AutodiffError>,
{
    let base = evaluate(&f, params, true)?;
    let analytic = base.grads;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut work: Vec<Tensor> = params.to_vec();
    let mut report = GradCheckReport::default();
    for (pi, p) in params.iter().enumerate() {
        let coords: Vec<usize> = match opts.max_coords_per_param {
            Some(m) if m < p.len() => {
                let mut c = sample(&mut rng, p.len(), m).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..p.len()).collect(),
        };
        let mut check = ParamCheck {
            param: pi,
            coords_checked: 0,
            coords_skipped: 0,
            max_rel_error: 0.0,
            worst_coord: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for &c in &coords {
            let x0 = p.data()[c];
            work[pi].data_mut()[c] = x0 + opts.step;
            let fp = evaluate(&f, &work, false)?;
            work[pi].data_mut()[c] = x0 - opts.step;
            let fm = evaluate(&f, &work, false)?;
            work[pi].data_mut()[c] = x0;
            if fp.branches != base.branches || fm.branches != base.branches {
                check.coords_skipped += 1;
                continue;
            }
            check.coords_checked += 1;
            let numeric = (fp.value - fm.value) / (2.0 * opts.step);
            let a = analytic[pi].data()[c];
            let e = relative_error(a, numeric);
            let e = if e.is_nan() { f64::INFINITY } else { e };
            if e > check.max_rel_error {
                check.max_rel_error = e;
                check.worst_coord = c;
                check.analytic = a;
                check.numeric = numeric;
            }
        }
        report.params.push(check);
    }
    Ok(report)
}
