//! Central-difference gradient checking.

use super::{NumArray, NumericsError, Result};

/// Compares the analytic gradient of a scalar function against central
/// differences. `f` evaluates the function at a point and returns
/// `(value, gradient)`; the value must be scalar-shaped and the gradient
/// must match the shape of `x`.
///
/// Returns `max_i |analytic_i − fd_i| / max(1, |analytic_i|)`.
pub fn grad_check<F>(mut f: F, x: &NumArray, eps: f64) -> Result<f64>
where
    F: FnMut(&NumArray) -> Result<(NumArray, NumArray)>,
{
    if eps <= 0.0 {
        return Err(NumericsError::Contract("grad_check: eps must be positive".into()));
    }
    let (v0, grad) = f(x)?;
    if !v0.is_scalar() {
        return Err(NumericsError::Contract(format!(
            "grad_check: f must be scalar-valued, got shape {:?}",
            v0.shape()
        )));
    }
    if grad.shape() != x.shape() {
        return Err(NumericsError::Contract(format!(
            "grad_check: gradient shape {:?} does not match input {:?}",
            grad.shape(),
            x.shape()
        )));
    }
    let mut max_err = 0.0f64;
    let base = x.data().to_vec();
    for i in 0..x.numel() {
        let mut plus = base.clone();
        plus[i] += eps;
        let (vp, _) = f(&NumArray::from_vec(x.shape().to_vec(), plus)?)?;
        let mut minus = base.clone();
        minus[i] -= eps;
        let (vm, _) = f(&NumArray::from_vec(x.shape().to_vec(), minus)?)?;
        let fd = (vp.scalar_value()? - vm.scalar_value()?) / (2.0 * eps);
        let analytic = grad.data()[i];
        let err = (analytic - fd).abs() / analytic.abs().max(1.0);
        max_err = max_err.max(err);
    }
    Ok(max_err)
}

/// Default perturbation size for [`grad_check`].
pub const DEFAULT_EPS: f64 = 1e-5;
