//! Central finite-difference checks for reverse-mode gradients.

use super::matrix::Matrix;
use super::tape::{Tape, Var};
use crate::error::Result;

/// Relative error with a floor on the denominator, so entries whose true
/// gradient is zero are compared on an absolute scale.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(floor);
    (analytic - numeric).abs() / denom
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// (input index, flat entry index) of the worst entry.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
    /// Analytic and numeric gradient at `worst`.
    pub worst_values: (f64, f64),
}

/// Compares reverse-mode gradients of the scalar built by `f` against central
/// differences with step `eps`, over every entry of every input.
///
/// The denominator floor is `rel_floor` times the largest analytic gradient
/// magnitude, so entries far below the overall gradient scale (where
/// finite differences only resolve rounding noise) are compared on that
/// scale. A non-finite value anywhere counts as an infinite error.
///
/// `f` receives the inputs as tape variables and must return a scalar.
pub fn check_gradients<F>(inputs: &[Matrix], eps: f64, rel_floor: f64, f: F) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|m| tape.param(m.clone())).collect();
    let loss = f(&tape, &vars)?;
    loss.backward()?;
    let analytic: Vec<Matrix> = vars
        .iter()
        .map(|v| {
            v.grad().unwrap_or_else(|| {
                let (r, c) = v.shape();
                Matrix::zeros(r, c)
            })
        })
        .collect();

    let scale = analytic.iter().map(Matrix::max_abs).fold(0.0, f64::max);
    let floor = if scale > 0.0 { rel_floor * scale } else { rel_floor };

    let eval = |values: &[Matrix]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = values.iter().map(|m| tape.constant(m.clone())).collect();
        Ok(f(&tape, &vars)?.value().get(0, 0))
    };

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: None,
        checked: 0,
        worst_values: (0.0, 0.0),
    };
    let mut work = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        for e in 0..input.len() {
            let orig = input.data()[e];
            work[i].data_mut()[e] = orig + eps;
            let plus = eval(&work)?;
            work[i].data_mut()[e] = orig - eps;
            let minus = eval(&work)?;
            work[i].data_mut()[e] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[i].data()[e];
            let err = if a.is_finite() && numeric.is_finite() {
                relative_error(a, numeric, floor)
            } else {
                f64::INFINITY
            };
            report.checked += 1;
            if err > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = err.max(report.max_rel_err);
                report.worst = Some((i, e));
                report.worst_values = (a, numeric);
            }
        }
    }
    Ok(report)
}
