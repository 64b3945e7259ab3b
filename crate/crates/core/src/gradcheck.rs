//! Central finite-difference verification of analytic gradients.

use crate::error::Result;
use crate::tensor::Tensor;

/// Smallest magnitude used as the relative-error denominator, so entries
/// whose true gradient is numerically zero are compared absolutely.
pub const DEFAULT_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct Mismatch {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GradReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst: Option<Mismatch>,
}

impl GradReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares backprop gradients of `loss` against central differences
/// `(L(θ+h) − L(θ−h)) / 2h` for every entry of every named parameter.
pub fn check_gradients<F>(params: &[(String, Tensor)], loss: F, step: f64, floor: f64) -> Result<GradReport>
where
    F: Fn() -> Result<Tensor>,
{
    for (_, p) in params {
        p.zero_grad();
    }
    loss()?.backward()?;
    let analytic: Vec<Vec<f64>> = params
        .iter()
        .map(|(_, p)| p.grad().unwrap_or_else(|| vec![0.0; p.numel()]))
        .collect();
    for (_, p) in params {
        p.zero_grad();
    }

    let mut report = GradReport::default();
    for ((name, p), grads) in params.iter().zip(&analytic) {
        for i in 0..p.numel() {
            let original = p.data()[i];
            p.data_mut()[i] = original + step;
            let plus = loss()?.item();
            p.data_mut()[i] = original - step;
            let minus = loss()?.item();
            p.data_mut()[i] = original;
            let numeric = (plus - minus) / (2.0 * step);
            let rel_err = relative_error(grads[i], numeric, floor);
            report.checked += 1;
            if rel_err > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = report.max_rel_err.max(rel_err);
                report.worst = Some(Mismatch {
                    name: name.clone(),
                    index: i,
                    analytic: grads[i],
                    numeric,
                    rel_err,
                });
            }
        }
    }
    Ok(report)
}
