//! Central finite-difference verification of analytic gradients.

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

pub const FD_STEP: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct GradReport {
    /// Maximum relative error per input, in input order.
    pub max_rel_error: Vec<f64>,
    /// `|analytic - numeric| / max(|analytic|, |numeric|)` in Euclidean norm
    /// over each whole input, in input order.
    pub tensor_rel_error: Vec<f64>,
    pub tolerance: f64,
    pub passed: bool,
    /// Set when probing could not complete (builder error, non-finite output).
    pub failure: Option<String>,
}

impl GradReport {
    pub fn worst(&self) -> f64 {
        self.max_rel_error.iter().copied().fold(0.0, f64::max)
    }

    pub fn worst_tensor(&self) -> f64 {
        self.tensor_rel_error.iter().copied().fold(0.0, f64::max)
    }

    fn failed(tolerance: f64, msg: String) -> Self {
        Self {
            max_rel_error: Vec::new(),
            tensor_rel_error: Vec::new(),
            tolerance,
            passed: false,
            failure: Some(msg),
        }
    }
}

/// Relative error with the denominator floored at `1e-8`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-8);
    (analytic - numeric).abs() / denom
}

fn evaluate<F>(builder: &F, inputs: &[Tensor<f64>]) -> Result<f64, String>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let root = builder(&mut g, &vars).map_err(|e| e.to_string())?;
    let out = g.value(root);
    if out.len() != 1 {
        return Err(format!("builder output has shape {:?}", out.shape()));
    }
    let v = out.data()[0];
    if !v.is_finite() {
        return Err("non-finite output while probing".into());
    }
    Ok(v)
}

/// Compares the analytic gradient of a scalar-valued `builder` with central
/// differences (step [`FD_STEP`]) for every element of every input.
///
/// Never panics on numerical trouble; failures are reported in the result.
pub fn grad_check<F>(builder: F, inputs: &[Tensor<f64>], tolerance: f64) -> GradReport
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let root = match builder(&mut g, &vars) {
        Ok(r) => r,
        Err(e) => return GradReport::failed(tolerance, e.to_string()),
    };
    if !g.value(root).all_finite() {
        return GradReport::failed(tolerance, "non-finite forward output".into());
    }
    if let Err(e) = g.backward(root) {
        return GradReport::failed(tolerance, e.to_string());
    }
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();

    let mut probe: Vec<Tensor<f64>> = inputs.to_vec();
    let mut max_rel_error = Vec::with_capacity(inputs.len());
    let mut tensor_rel_error = Vec::with_capacity(inputs.len());
    for (i, input) in inputs.iter().enumerate() {
        let mut worst = 0.0f64;
        let (mut diff_sq, mut a_sq, mut n_sq) = (0.0, 0.0, 0.0);
        for e in 0..input.len() {
            let x0 = input.data()[e];
            probe[i].data_mut()[e] = x0 + FD_STEP;
            let plus = evaluate(&builder, &probe);
            probe[i].data_mut()[e] = x0 - FD_STEP;
            let minus = evaluate(&builder, &probe);
            probe[i].data_mut()[e] = x0;
            let (plus, minus) = match (plus, minus) {
                (Ok(p), Ok(m)) => (p, m),
                (Err(msg), _) | (_, Err(msg)) => {
                    return GradReport::failed(tolerance, format!("input {i}[{e}]: {msg}"))
                }
            };
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let a = analytic[i].data()[e];
            worst = worst.max(relative_error(a, numeric));
            diff_sq += (a - numeric) * (a - numeric);
            a_sq += a * a;
            n_sq += numeric * numeric;
        }
        max_rel_error.push(worst);
        tensor_rel_error.push(diff_sq.sqrt() / f64::max(a_sq, n_sq).sqrt().max(1e-8));
    }
    let passed = max_rel_error.iter().all(|&r| r <= tolerance);
    GradReport {
        max_rel_error,
        tensor_rel_error,
        tolerance,
        passed,
        failure: None,
    }
}
