//! Central finite-difference gradient checks.
//!
//! Uses only forward evaluation, so it stays independent of the reverse pass it
//! is meant to verify.

use super::{Graph, GraphError, Inputs, ParamStore};

/// Worst discrepancy between analytic and numeric gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// Denominator floor for the relative error; components whose true magnitude
/// is below this are compared absolutely. A central difference with step
/// `1e-6` on an O(1) loss resolves about `ε_mach / 1e-6 ≈ 2e-10`, so smaller
/// gradients cannot be checked to `1e-4` relative.
pub const REL_FLOOR: f64 = 1e-5;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compare reverse-mode gradients of the scalar graph output against central
/// differences with step `eps`, over every scalar of every parameter. When
/// `max_per_param` is set, at most that many evenly spaced entries per tensor
/// are probed.
pub fn check_gradients(
    graph: &Graph,
    inputs: &Inputs,
    params: &ParamStore,
    eps: f64,
    max_per_param: Option<usize>,
) -> Result<GradCheckReport, GraphError> {
    let (_, grads) = graph.gradients(inputs, params)?;
    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    for id in params.ids() {
        let base = params.value(id).clone();
        let n = base.len();
        let stride = match max_per_param {
            Some(k) if k > 0 && n > k => n.div_ceil(k),
            _ => 1,
        };
        for idx in (0..n).step_by(stride) {
            let mut plus = base.clone();
            plus.data_mut()[idx] += eps;
            probe.set(id, plus)?;
            let f_plus = scalar(graph.evaluate(inputs, &probe)?)?;
            let mut minus = base.clone();
            minus.data_mut()[idx] -= eps;
            probe.set(id, minus)?;
            let f_minus = scalar(graph.evaluate(inputs, &probe)?)?;
            let numeric = (f_plus - f_minus) / (2.0 * eps);
            let analytic = grads.get(id).map_or(0.0, |g| g.data()[idx]);
            let err = relative_error(analytic, numeric);
            report.checked += 1;
            if err > report.max_rel_error || report.worst_param.is_empty() {
                report.max_rel_error = err;
                report.worst_param = params.name(id).to_string();
                report.worst_index = idx;
                report.analytic = analytic;
                report.numeric = numeric;
            }
        }
        probe.set(id, base)?;
    }
    Ok(report)
}

fn scalar(t: super::Tensor) -> Result<f64, GraphError> {
    t.item().ok_or_else(|| GraphError::NonScalarOutput { shape: t.shape().to_vec() })
}
