use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::LossResult;

/// Gradients smaller than this on both sides are compared absolutely.
const REL_FLOOR: f64 = 1e-7;

#[derive(Clone, Debug)]
pub struct GradcheckReport {
    pub max_rel_err: f64,
    pub checked: usize,
    /// `(flat index, analytic, numeric, relative error)` above tolerance.
    pub failures: Vec<(usize, f64, f64, f64)>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// `|a - n| / max(|a|, |n|, 1e-7)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compare the analytic gradient of `loss` at `z` with central differences
/// `(L(z + h e_i) - L(z - h e_i)) / 2h` on every coordinate.
pub fn gradcheck<F>(loss: F, z: &Tensor, step: f64, tolerance: f64) -> Result<GradcheckReport>
where
    F: Fn(&Tensor) -> Result<LossResult>,
{
    if !(1e-7..=1e-3).contains(&step) {
        return Err(Error::Invalid(format!("step {step} outside [1e-7, 1e-3]")));
    }
    let analytic = loss(z)?.grad;
    let mut probe = z.clone();
    let mut report = GradcheckReport {
        max_rel_err: 0.0,
        checked: 0,
        failures: Vec::new(),
    };
    for i in 0..z.len() {
        let orig = z.data()[i];
        probe.data_mut()[i] = orig + step;
        let plus = loss(&probe)?.loss;
        probe.data_mut()[i] = orig - step;
        let minus = loss(&probe)?.loss;
        probe.data_mut()[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!("loss while probing coordinate {i}")));
        }
        let numeric = (plus - minus) / (2.0 * step);
        let a = analytic.data()[i];
        let rel = relative_error(a, numeric);
        report.max_rel_err = report.max_rel_err.max(rel);
        report.checked += 1;
        if rel >= tolerance {
            report.failures.push((i, a, numeric, rel));
        }
    }
    Ok(report)
}
