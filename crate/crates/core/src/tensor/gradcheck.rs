//! Central finite-difference gradient verification.
//!
//! The tolerance convention used everywhere in this crate: a coordinate
//! passes if the relative error is below `rel_tol`, or, when the analytic
//! value is smaller than 1e-4 in magnitude, if the absolute error is below
//! `abs_tol`.

use crate::error::Result;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub worst_index: usize,
    pub passed: bool,
}

/// Central finite differences of a scalar function at `x` with step `h`.
pub fn central_difference<F>(mut f: F, x: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let mut grad = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe)?;
        probe[i] = x[i] - h;
        let down = f(&probe)?;
        probe[i] = x[i];
        grad[i] = (up - down) / (2.0 * h);
    }
    Ok(grad)
}

/// Compare an analytic gradient against central finite differences of `f`.
pub fn check_gradient<F>(
    f: F,
    x: &[f64],
    analytic: &[f64],
    h: f64,
    rel_tol: f64,
    abs_tol: f64,
) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    assert_eq!(x.len(), analytic.len());
    let numeric = central_difference(f, x, h)?;
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst_index: 0,
        passed: true,
    };
    for i in 0..x.len() {
        let (a, n) = (analytic[i], numeric[i]);
        let abs = (a - n).abs();
        let denom = a.abs().max(n.abs());
        let rel = if denom > 0.0 { abs / denom } else { 0.0 };
        let ok = if a.abs() < 1e-4 { abs < abs_tol } else { rel < rel_tol };
        if !ok {
            report.passed = false;
        }
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_index = i;
        }
        if abs > report.max_abs_error {
            report.max_abs_error = abs;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient() {
        let f = |x: &[f64]| Ok(x[0] * x[0] + 3.0 * x[1]);
        let x = [2.0, -1.0];
        let report = check_gradient(f, &x, &[4.0, 3.0], 1e-6, 1e-4, 1e-7).unwrap();
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn detects_wrong_gradient() {
        let f = |x: &[f64]| Ok(x[0] * x[0]);
        let x = [2.0];
        // sign error in the "analytic" gradient must be flagged
        let report = check_gradient(f, &x, &[-4.0], 1e-6, 1e-4, 1e-7).unwrap();
        assert!(!report.passed);
    }
}
