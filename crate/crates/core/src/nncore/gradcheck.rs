//! Central finite-difference gradient checking.

use super::Parameterized;
use crate::error::{dim_err, Result};

/// Default finite-difference step.
pub const FD_EPS: f64 = 1e-5;

/// Tolerance every differentiable component is held to.
pub const GRAD_TOL: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

/// `|a − n| / max(|a|, |n|, 1e-6)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Compares `analytic` gradients against central differences of `loss`,
/// perturbing every entry of every tensor of `model` in turn.
///
/// `analytic` must enumerate tensors of the same shapes, in the same order,
/// as `model`. The model is restored bit-for-bit before returning.
pub fn grad_check<M, A, F>(
    model: &mut M,
    analytic: &A,
    eps: f64,
    mut loss: F,
) -> Result<GradCheckReport>
where
    M: Parameterized<f64>,
    A: Parameterized<f64>,
    F: FnMut(&M) -> f64,
{
    let shapes: Vec<(String, Vec<usize>)> = model
        .params()
        .iter()
        .map(|(n, t)| (n.clone(), t.shape().to_vec()))
        .collect();
    let grads = analytic.params();
    if grads.len() != shapes.len()
        || grads
            .iter()
            .zip(&shapes)
            .any(|((_, g), (_, s))| g.shape() != s.as_slice())
    {
        return dim_err("grad_check: analytic gradients do not mirror the parameters");
    }

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
        checked: 0,
    };
    for (p, (name, shape)) in shapes.iter().enumerate() {
        let n: usize = shape.iter().product();
        for k in 0..n {
            let orig = model.params_mut()[p].1.data()[k];
            set(model, p, k, orig + eps);
            let plus = loss(model);
            set(model, p, k, orig - eps);
            let minus = loss(model);
            set(model, p, k, orig);

            let numeric = (plus - minus) / (2.0 * eps);
            let a = grads[p].1.data()[k];
            let err = relative_error(a, numeric);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err;
                report.worst = Some((name.clone(), k));
                report.analytic_at_worst = a;
                report.numeric_at_worst = numeric;
            }
        }
    }
    Ok(report)
}

fn set<M: Parameterized<f64>>(model: &mut M, p: usize, k: usize, v: f64) {
    model.params_mut()[p].1.data_mut()[k] = v;
}
