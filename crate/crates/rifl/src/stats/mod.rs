//! Numerical primitives shared by every other module: quantiles, seeded
//! random streams, dense matrices, GLM fitting, and a damped Newton solver.
//!
//! Everything here is deterministic given its inputs; no global state.

pub mod dist;
pub mod glm;
pub mod linalg;
pub mod newton;
pub mod rng;

pub use dist::{chisq_quantile, normal_cdf, normal_quantile};
pub use glm::{irls_glm_fit, irls_glm_fit_from, Family, GlmFit};
pub use linalg::Matrix;
pub use newton::newton_solve;
pub use rng::RandomStream;

/// Errors surfaced by the numerical kernel.
#[derive(Debug, Clone, thiserror::Error)]
pub enum KernelError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("numeric non-convergence: {0}")]
    NonConvergence(String),
    #[error("design matrix is rank deficient")]
    SingularDesign,
    #[error("logistic fit diverged (separation)")]
    Separation,
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("singular Jacobian in Newton step")]
    SingularJacobian,
    #[error("Newton iteration limit reached (residual {0:.3e})")]
    MaxIterations(f64),
}
