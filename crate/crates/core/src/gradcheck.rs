//! Central finite differences and gradient checking against the tape.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Central difference `(f(x+h·eᵢ) − f(x−h·eᵢ)) / 2h` for every coordinate.
pub fn finite_diff_grad<F>(mut f: F, x: &Tensor<f64>, h: f64) -> Result<Tensor<f64>>
where
    F: FnMut(&Tensor<f64>) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(Error::contract("finite_diff_grad", format!("step must be positive, got {h}")));
    }
    let mut probe = x.clone();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe)?;
        probe.data_mut()[i] = orig - h;
        let down = f(&probe)?;
        probe.data_mut()[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite(format!("f evaluated at coordinate {i}")));
        }
        grad.push((up - down) / (2.0 * h));
    }
    Tensor::new(x.shape(), grad)
}

/// Relative error with the `max(|a|, |b|, 1e-8)` denominator.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

#[derive(Debug, Clone)]
pub struct CoordCheck {
    /// Parameter name, or `"input"`.
    pub name: alloc::string::String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
    pub pass: bool,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub tol: f64,
    pub coords: Vec<CoordCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.coords.iter().all(|c| c.pass)
    }

    pub fn worst(&self) -> Option<&CoordCheck> {
        self.coords
            .iter()
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }

    fn from_pairs(tol: f64, pairs: Vec<(alloc::string::String, usize, f64, f64)>) -> Self {
        let coords: Vec<CoordCheck> = pairs
            .into_iter()
            .map(|(name, index, analytic, numeric)| {
                let rel_error = relative_error(analytic, numeric);
                CoordCheck {
                    name,
                    index,
                    analytic,
                    numeric,
                    rel_error,
                    pass: rel_error <= tol,
                }
            })
            .collect();
        let max_rel_error = coords.iter().map(|c| c.rel_error).fold(0.0, f64::max);
        GradCheckReport {
            max_rel_error,
            tol,
            coords,
        }
    }
}

fn eval_scalar<F>(build: &mut F, x: &Tensor<f64>) -> Result<f64>
where
    F: FnMut(&mut Graph<f64>, Var) -> Result<Var>,
{
    let mut g = Graph::inference();
    let v = g.input(x.clone(), false);
    let out = build(&mut g, v)?;
    g.value(out).item()
}

/// Compare the tape gradient of `build(x)` wrt its input against central
/// differences with step `h`.
pub fn grad_check<F>(mut build: F, x: &Tensor<f64>, h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph<f64>, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let v = g.input(x.clone(), true);
    let loss = build(&mut g, v)?;
    let grads = g.backward(loss)?;
    let analytic = grads.leaf(v).cloned().unwrap_or_else(|| Tensor::zeros(x.shape()));
    let numeric = finite_diff_grad(|p| eval_scalar(&mut build, p), x, h)?;
    let pairs = analytic
        .data()
        .iter()
        .zip(numeric.data())
        .enumerate()
        .map(|(i, (&a, &n))| ("input".into(), i, a, n))
        .collect();
    Ok(GradCheckReport::from_pairs(tol, pairs))
}

/// Which coordinates of each parameter to probe.
#[derive(Debug, Clone, Copy)]
pub enum Coverage {
    All,
    /// At most this many evenly spaced coordinates per parameter tensor.
    PerParam(usize),
}

fn probe_indices(len: usize, coverage: Coverage) -> Vec<usize> {
    match coverage {
        Coverage::PerParam(n) if n < len => {
            let step = len as f64 / n as f64;
            (0..n).map(|i| ((i as f64 + 0.5) * step) as usize).collect()
        }
        _ => (0..len).collect(),
    }
}

/// Compare tape gradients of `build` wrt every parameter in `store` against
/// central differences. `only` restricts the check to some parameters.
pub fn grad_check_params<F>(
    store: &ParamStore<f64>,
    mut build: F,
    h: f64,
    tol: f64,
    coverage: Coverage,
    only: Option<&[ParamId]>,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>,
{
    let mut g = Graph::new();
    let loss = build(&mut g, store)?;
    let grads = g.backward(loss)?;

    let mut probe = store.clone();
    let mut pairs = Vec::new();
    let ids: Vec<ParamId> = store.ids().filter(|id| only.map_or(true, |o| o.contains(id))).collect();
    for id in ids {
        let len = store.get(id).len();
        for i in probe_indices(len, coverage) {
            let orig = store.get(id).data()[i];
            let mut eval = |value: f64| -> Result<f64> {
                probe.get_mut(id).data_mut()[i] = value;
                let mut g = Graph::inference();
                let out = build(&mut g, &probe)?;
                g.value(out).item()
            };
            let up = eval(orig + h)?;
            let down = eval(orig - h)?;
            probe.get_mut(id).data_mut()[i] = orig;
            if !up.is_finite() || !down.is_finite() {
                return Err(Error::NonFinite(format!("loss at {}[{i}]", store.name(id))));
            }
            let numeric = (up - down) / (2.0 * h);
            let analytic = grads.param(id).map_or(0.0, |t| t.data()[i]);
            pairs.push((store.name(id).into(), i, analytic, numeric));
        }
    }
    Ok(GradCheckReport::from_pairs(tol, pairs))
}
