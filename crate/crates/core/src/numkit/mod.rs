//! Dense tensors, forward primitives with analytic gradients, and a
//! finite-difference gradient checker.

mod gru;
pub mod ops;
mod tape;
mod tensor;

pub use gru::{bigru_layer, bigru_layer_backward, bigru_layer_with_cache, BiGruCache, GruDirection};
pub use ops::{conv2d, glu, max_pool2d};
pub use tape::{GradTape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumError {
    #[error("{op}: shape error: {msg}")]
    Shape { op: &'static str, msg: String },
    #[error("{op}: non-finite value")]
    NonFinite { op: &'static str },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("gradient check unreliable: {0}")]
    UnreliableCheck(String),
}

/// Below this magnitude the relative error is measured against the floor
/// instead, so gradients that are zero up to rounding do not dominate.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(parameter index, flat element index)` of the worst entry.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// Compares the analytic gradient returned by `loss_fn` against central
/// finite differences `(f(p + eps) - f(p - eps)) / (2 eps)` for every
/// element of every parameter.
///
/// `loss_fn` must be deterministic; it is evaluated twice at the base point
/// and a bitwise mismatch is reported as [`NumError::UnreliableCheck`].
pub fn grad_check<F>(loss_fn: F, params: &[Tensor], eps: f64) -> Result<GradCheckReport, NumError>
where
    F: Fn(&[Tensor]) -> Result<(f64, Vec<Tensor>), NumError>,
{
    if !(eps > 0.0) {
        return Err(NumError::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    let (base, analytic) = loss_fn(params)?;
    let (again, _) = loss_fn(params)?;
    if base.to_bits() != again.to_bits() {
        return Err(NumError::UnreliableCheck(format!(
            "loss changed between identical calls ({base} vs {again})"
        )));
    }
    if analytic.len() != params.len()
        || analytic.iter().zip(params).any(|(g, p)| g.shape() != p.shape())
    {
        return Err(NumError::Shape {
            op: "grad_check",
            msg: "analytic gradients do not mirror parameter shapes".into(),
        });
    }

    let mut work: Vec<Tensor> = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    for pi in 0..params.len() {
        for ei in 0..params[pi].len() {
            let orig = params[pi].data()[ei];
            work[pi].data_mut()[ei] = orig + eps;
            let (plus, _) = loss_fn(&work)?;
            work[pi].data_mut()[ei] = orig - eps;
            let (minus, _) = loss_fn(&work)?;
            work[pi].data_mut()[ei] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[pi].data()[ei];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
            if !rel.is_finite() {
                return Err(NumError::NonFinite { op: "grad_check" });
            }
            if rel > report.max_rel_error || report.checked == 0 {
                report.max_rel_error = rel;
                report.worst = (pi, ei);
                report.analytic = a;
                report.numeric = numeric;
            }
            report.checked += 1;
        }
    }
    Ok(report)
}
