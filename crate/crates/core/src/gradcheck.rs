//! Central-difference verification of reverse-mode gradients.

use crate::error::{Result, TensorError};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    /// Worst componentwise `|a − b| / max(|a|, |b|, 1e-6)`.
    pub max_rel_error: f64,
    /// Component where the worst error occurred.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Compares the backward-pass gradient of `f` at `point` against central
/// differences with step `h`. `f` must build a single-element result.
pub fn grad_check<F>(f: F, point: &Tensor, h: f64) -> Result<GradCheckReport>
where
    F: for<'g> Fn(&'g Graph, Var<'g>) -> Result<Var<'g>>,
{
    if !(h > 0.0) {
        return Err(TensorError::Invalid {
            op: "grad_check",
            detail: format!("step must be positive, got {h}"),
        });
    }
    let analytic = {
        let g = Graph::new();
        let x = g.param(point.clone());
        let y = f(&g, x)?;
        g.backward(y)?.get_or_zeros(x)
    };
    let eval = |p: Tensor| -> Result<f64> {
        let g = Graph::new();
        let x = g.constant(p);
        f(&g, x)?.value().item()
    };
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    let base = point.data().to_vec();
    for i in 0..base.len() {
        let mut plus = base.clone();
        plus[i] += h;
        let mut minus = base.clone();
        minus[i] -= h;
        let fp = eval(Tensor::new(point.shape().to_vec(), plus)?)?;
        let fm = eval(Tensor::new(point.shape().to_vec(), minus)?)?;
        let numeric = (fp - fm) / (2.0 * h);
        let a = analytic.data()[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
        if i == 0 || rel > report.max_rel_error {
            report = GradCheckReport {
                max_rel_error: rel,
                worst_index: i,
                analytic: a,
                numeric,
            };
        }
    }
    Ok(report)
}
