use super::param::Parameterized;
use crate::error::{Error, Result};

/// One loss evaluation. `branch` fingerprints every piecewise choice the loss
/// made (active hinges, argmax picks); finite differences whose perturbed
/// evaluation lands on a different branch straddle a kink and are skipped.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub value: f64,
    pub branch: u64,
}

impl Evaluation {
    pub fn smooth(value: f64) -> Self {
        Self { value, branch: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// `(parameter name, flat index)` of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
    pub skipped_at_kink: usize,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tol
    }
}

/// Gradients smaller than this are compared on an absolute scale.
const REL_FLOOR: f64 = 1e-6;

/// Compares analytic gradients with central differences over every parameter
/// coordinate. `loss_fn(model, true)` must accumulate gradients into the
/// model's parameters; `loss_fn(model, false)` only evaluates.
pub fn grad_check<M, F>(model: &mut M, mut loss_fn: F, step: f64, tol: f64) -> Result<GradCheckReport>
where
    M: Parameterized,
    F: FnMut(&mut M, bool) -> Result<Evaluation>,
{
    model.zero_grad();
    let base = loss_fn(model, true)?;
    if !base.value.is_finite() {
        return Err(Error::Numeric(format!("non-finite loss {}", base.value)));
    }
    let analytic: Vec<(String, Vec<f64>)> = model
        .params()
        .iter()
        .map(|p| (p.name().to_owned(), p.grad().as_slice().to_vec()))
        .collect();
    model.zero_grad();

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: None,
        checked: 0,
        skipped_at_kink: 0,
        tol,
    };
    for (pi, (name, grads)) in analytic.iter().enumerate() {
        for (k, &a) in grads.iter().enumerate() {
            let orig = model.params()[pi].values().as_slice()[k];
            model.params_mut()[pi].values_mut().as_mut_slice()[k] = orig + step;
            let plus = loss_fn(model, false)?;
            model.params_mut()[pi].values_mut().as_mut_slice()[k] = orig - step;
            let minus = loss_fn(model, false)?;
            model.params_mut()[pi].values_mut().as_mut_slice()[k] = orig;
            if !plus.value.is_finite() || !minus.value.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss while perturbing {name}[{k}]"
                )));
            }
            if plus.branch != base.branch || minus.branch != base.branch {
                report.skipped_at_kink += 1;
                continue;
            }
            let numeric = (plus.value - minus.value) / (2.0 * step);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            report.checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = Some((name.clone(), k));
            }
        }
    }
    Ok(report)
}
