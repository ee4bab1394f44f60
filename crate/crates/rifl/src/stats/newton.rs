//! Damped Newton iteration for smooth estimating equations.

use super::linalg::{norm_inf, Matrix};
use super::KernelError;

/// Finds x with ||residual(x)||_inf <= tol, halving the step whenever a full
/// Newton update would increase the residual norm.
pub fn newton_solve<R, J>(
    residual_fn: R,
    jacobian_fn: J,
    init: &[f64],
    max_iter: usize,
    tol: f64,
) -> Result<Vec<f64>, KernelError>
where
    R: Fn(&[f64]) -> Vec<f64>,
    J: Fn(&[f64]) -> Matrix,
{
    let mut x = init.to_vec();
    let mut r = residual_fn(&x);
    if r.iter().any(|v| !v.is_finite()) {
        return Err(KernelError::Domain("residual not finite at init".into()));
    }
    let mut rnorm = norm_inf(&r);
    for _ in 0..max_iter {
        if rnorm <= tol {
            return Ok(x);
        }
        let jac = jacobian_fn(&x);
        let dir = jac.lu_solve(&r)?;
        let mut step = 1.0;
        let mut advanced = false;
        for _ in 0..40 {
            let cand: Vec<f64> = x.iter().zip(&dir).map(|(xi, d)| xi - step * d).collect();
            let cand_r = residual_fn(&cand);
            let cand_norm = norm_inf(&cand_r);
            if cand_norm.is_finite() && cand_norm < rnorm {
                x = cand;
                r = cand_r;
                rnorm = cand_norm;
                advanced = true;
                break;
            }
            step *= 0.5;
        }
        if !advanced {
            return Err(KernelError::MaxIterations(rnorm));
        }
    }
    if rnorm <= tol {
        Ok(x)
    } else {
        Err(KernelError::MaxIterations(rnorm))
    }
}
