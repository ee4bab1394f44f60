//! Parametric (low-dimensional) application: per-site GLM fits, delta-method
//! summaries of a target functional, and the quadratic parameter-distance
//! dissimilarity with its inflated standard error.

use crate::engine::{EngineError, SiteSummary};
use crate::stats::linalg::{dot, sub, Matrix};
use crate::stats::{irls_glm_fit, Family, KernelError};

#[derive(Debug, Clone, thiserror::Error)]
pub enum LowDimError {
    #[error("parameter dimensions differ between sites")]
    DimensionMismatch,
    #[error("functional gradient vanishes at the estimate")]
    DegenerateFunctional,
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// Site-level parametric fit: theta_hat with covariance scaled so that
/// sqrt(n) (theta_hat - theta) -> N(0, C).
#[derive(Debug, Clone)]
pub struct ParametricSiteFit {
    pub theta_hat: Vec<f64>,
    pub c_hat: Matrix,
    pub n: usize,
}

impl ParametricSiteFit {
    /// Restriction to a subset of coordinates (e.g. dropping intercepts
    /// before the parameter-distance comparison).
    pub fn submodel(&self, keep: &[usize]) -> ParametricSiteFit {
        let d = keep.len();
        let mut c = Matrix::zeros(d, d);
        for (a, &i) in keep.iter().enumerate() {
            for (b, &j) in keep.iter().enumerate() {
                c.set(a, b, self.c_hat.get(i, j));
            }
        }
        ParametricSiteFit {
            theta_hat: keep.iter().map(|&i| self.theta_hat[i]).collect(),
            c_hat: c,
            n: self.n,
        }
    }
}

/// GLM front end returning the scaled-covariance convention used here.
pub fn fit_parametric_site(
    x: &Matrix,
    y: &[f64],
    family: Family,
) -> Result<ParametricSiteFit, LowDimError> {
    let fit = irls_glm_fit(x, y, family, None)?;
    Ok(ParametricSiteFit {
        theta_hat: fit.theta,
        c_hat: fit.cov_scaled,
        n: x.rows,
    })
}

/// Target functional g(theta) with gradient rules.
#[derive(Debug, Clone, PartialEq)]
pub enum Functional {
    /// theta_j (0-based index).
    Coordinate(usize),
    /// The subvector theta_G; yields a multivariate summary.
    Subvector(Vec<usize>),
    /// x' theta.
    Linear(Vec<f64>),
    /// ||theta||_2^2.
    QuadraticNorm,
}

impl Functional {
    fn gradient(&self, theta: &[f64]) -> Result<Vec<f64>, LowDimError> {
        let d = theta.len();
        let grad = match self {
            Functional::Coordinate(j) => {
                if *j >= d {
                    return Err(LowDimError::DimensionMismatch);
                }
                let mut g = vec![0.0; d];
                g[*j] = 1.0;
                g
            }
            Functional::Linear(x) => {
                if x.len() != d {
                    return Err(LowDimError::DimensionMismatch);
                }
                x.clone()
            }
            Functional::QuadraticNorm => theta.iter().map(|t| 2.0 * t).collect(),
            Functional::Subvector(_) => unreachable!("subvector handled separately"),
        };
        if grad.iter().all(|g| *g == 0.0) {
            return Err(LowDimError::DegenerateFunctional);
        }
        Ok(grad)
    }

    pub fn value(&self, theta: &[f64]) -> f64 {
        match self {
            Functional::Coordinate(j) => theta[*j],
            Functional::Linear(x) => dot(x, theta),
            Functional::QuadraticNorm => dot(theta, theta),
            Functional::Subvector(_) => f64::NAN,
        }
    }
}

/// Delta-method summary of the functional at a site fit: beta = g(theta),
/// sigma = sqrt(grad' C grad / n). Subvector functionals produce a
/// multivariate summary with covariance C_GG / n.
pub fn delta_method_summary(
    fit: &ParametricSiteFit,
    g: &Functional,
    site_id: usize,
) -> Result<SiteSummary, LowDimError> {
    match g {
        Functional::Subvector(keep) => {
            if keep.iter().any(|&i| i >= fit.theta_hat.len()) || keep.is_empty() {
                return Err(LowDimError::DimensionMismatch);
            }
            let sub = fit.submodel(keep);
            let mut omega = sub.c_hat;
            omega.scale(1.0 / fit.n as f64);
            Ok(SiteSummary::multivariate(site_id, fit.n, sub.theta_hat, omega)?)
        }
        _ => {
            let grad = g.gradient(&fit.theta_hat)?;
            let var = fit.c_hat.quadratic_form(&grad) / fit.n as f64;
            if !(var > 0.0) {
                return Err(LowDimError::DegenerateFunctional);
            }
            Ok(SiteSummary::univariate(
                site_id,
                fit.n,
                g.value(&fit.theta_hat),
                var.sqrt(),
            )?)
        }
    }
}

/// Squared parameter distance between two sites with the standard error
/// inflated by 1/min(n_l, n_k) to absorb the second-order remainder.
pub fn dissimilarity_lowdim(
    fit_l: &ParametricSiteFit,
    fit_k: &ParametricSiteFit,
) -> Result<(f64, f64), LowDimError> {
    if fit_l.theta_hat.len() != fit_k.theta_hat.len() {
        return Err(LowDimError::DimensionMismatch);
    }
    let gamma = sub(&fit_l.theta_hat, &fit_k.theta_hat);
    let d_hat = dot(&gamma, &gamma);
    let var = 4.0 * fit_l.c_hat.quadratic_form(&gamma) / fit_l.n as f64
        + 4.0 * fit_k.c_hat.quadratic_form(&gamma) / fit_k.n as f64
        + 1.0 / fit_l.n.min(fit_k.n) as f64;
    Ok((d_hat, var.sqrt()))
}
