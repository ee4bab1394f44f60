//! High-dimensional application: split-sample sparse fits, debiased distance
//! estimation between sites, and debiased coordinate functionals.
//!
//! Each site splits its rows in half; the first half supports the penalized
//! fit, the second half supports the moment corrections (covariance,
//! residuals, projection directions). Pairwise distance estimates combine a
//! plug-in squared parameter distance with one bias correction per site.

pub mod lasso;
pub mod projection;

pub use lasso::{lasso_fit, HighDimFit};
pub use projection::{projection_direction, ProjectionResult};

use crate::engine::SiteSummary;
use crate::stats::glm::expit;
use crate::stats::linalg::{dot, norm2, Matrix};
use crate::stats::{Family, KernelError, RandomStream};

/// Fitted-probability clip used when inverting the logistic variance
/// function, keeping the weights W = 1/h' bounded.
const PROB_CLIP: f64 = 1e-4;

#[derive(Debug, Clone, thiserror::Error)]
pub enum HighDimError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("solver failed to converge: {0}")]
    NonConvergence(String),
    #[error("projection program infeasible after relaxation ladder (final lambda {lambda})")]
    Infeasible { lambda: f64 },
    #[error("degenerate weights on the moment half")]
    DegenerateWeights,
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Engine(#[from] crate::engine::EngineError),
}

/// One site's rows split into a fitting half and a moment half.
#[derive(Debug, Clone)]
pub struct SplitSiteData {
    pub x: Matrix,
    pub y: Vec<f64>,
    pub family: Family,
    s1: Vec<usize>,
    s2: Vec<usize>,
}

impl SplitSiteData {
    /// Seeded random split with |S1| = ceil(n/2).
    pub fn split(
        x: Matrix,
        y: Vec<f64>,
        family: Family,
        rng: &RandomStream,
    ) -> Result<Self, HighDimError> {
        let n = x.rows;
        if y.len() != n || n < 4 {
            return Err(HighDimError::InvalidInput(
                "need at least 4 rows and matching outcome length".into(),
            ));
        }
        let mut perm: Vec<usize> = (0..n).collect();
        let mut shuffler = rng.derive(0x51D);
        for i in (1..n).rev() {
            let j = shuffler.below(i + 1);
            perm.swap(i, j);
        }
        let n1 = n.div_ceil(2);
        let mut s1 = perm[..n1].to_vec();
        let mut s2 = perm[n1..].to_vec();
        s1.sort_unstable();
        s2.sort_unstable();
        Ok(SplitSiteData { x, y, family, s1, s2 })
    }

    /// Explicit split; the two index sets must partition 0..n.
    pub fn with_split(
        x: Matrix,
        y: Vec<f64>,
        family: Family,
        s1: Vec<usize>,
        s2: Vec<usize>,
    ) -> Result<Self, HighDimError> {
        let n = x.rows;
        if y.len() != n {
            return Err(HighDimError::InvalidInput("outcome length mismatch".into()));
        }
        if s1.len() != n.div_ceil(2) || s1.len() + s2.len() != n {
            return Err(HighDimError::InvalidInput(
                "split sizes must be (ceil(n/2), floor(n/2))".into(),
            ));
        }
        let mut seen = vec![false; n];
        for &i in s1.iter().chain(s2.iter()) {
            if i >= n || seen[i] {
                return Err(HighDimError::InvalidInput(
                    "split must partition the row indices".into(),
                ));
            }
            seen[i] = true;
        }
        Ok(SplitSiteData { x, y, family, s1, s2 })
    }

    pub fn n(&self) -> usize {
        self.x.rows
    }

    pub fn s1(&self) -> &[usize] {
        &self.s1
    }

    pub fn s2(&self) -> &[usize] {
        &self.s2
    }
}

/// Projection direction with its estimated bias and variance contributions.
#[derive(Debug, Clone)]
pub struct BiasComponents {
    pub u_hat: Vec<f64>,
    pub delta_hat: f64,
    pub v_hat: f64,
}

/// Constants for the projection program; the defaults follow the usual
/// lambda = kappa * sqrt(log d / m) and tau proportional to sqrt(log m).
#[derive(Debug, Clone)]
pub struct ProjectionTuning {
    pub kappa: f64,
    pub tau_override: Option<f64>,
}

impl Default for ProjectionTuning {
    fn default() -> Self {
        ProjectionTuning { kappa: 1.1, tau_override: None }
    }
}

impl ProjectionTuning {
    pub fn lambda(&self, d: usize, m: usize) -> f64 {
        self.kappa * ((d.max(2) as f64).ln() / m as f64).sqrt()
    }

    pub fn tau(&self, m: usize) -> f64 {
        // The factor keeps the row bound from binding on unit-scale probe
        // directions, so the program resolves near the unconstrained
        // covariance projection; small-norm pair directions still get trimmed.
        self.tau_override
            .unwrap_or_else(|| 3.0 * (2.0 * (m.max(2) as f64).ln()).sqrt())
    }
}

/// Per-site cache for the moment half: augmented design, covariance and its
/// solver state, weighted residual moment, and weighted second-moment matrix.
/// Everything here is reused across all directions probed at this site.
pub struct SiteWorkspace {
    pub n_full: usize,
    pub dim: usize,
    theta_tilde: Vec<f64>,
    lambda0: f64,
    tau: f64,
    solver: projection::SolverContext,
    r_vec: Vec<f64>,
    m_w: Matrix,
}

impl SiteWorkspace {
    pub fn new(
        data: &SplitSiteData,
        fit: &HighDimFit,
        tuning: &ProjectionTuning,
    ) -> Result<Self, HighDimError> {
        let d = data.x.cols;
        let dim = d + 1;
        let m = data.s2.len();
        if m < 2 {
            return Err(HighDimError::InvalidInput("moment half too small".into()));
        }
        // Augmented design over the moment half: leading intercept column.
        let mut x2 = Matrix::zeros(m, dim);
        for (r, &i) in data.s2.iter().enumerate() {
            x2.set(r, 0, 1.0);
            for j in 0..d {
                x2.set(r, j + 1, data.x.get(i, j));
            }
        }
        let mut sigma = Matrix::zeros(dim, dim);
        for r in 0..m {
            let row = x2.row(r).to_vec();
            for a in 0..dim {
                for b in a..dim {
                    let v = sigma.get(a, b) + row[a] * row[b];
                    sigma.set(a, b, v);
                }
            }
        }
        for a in 0..dim {
            for b in a..dim {
                let v = sigma.get(a, b) / m as f64;
                sigma.set(a, b, v);
                sigma.set(b, a, v);
            }
        }

        // Residuals and weights at the fitted index, on the moment half only.
        let mut r_vec = vec![0.0; dim];
        let mut m_w = Matrix::zeros(dim, dim);
        for (r, &i) in data.s2.iter().enumerate() {
            let row = x2.row(r).to_vec();
            let lin = fit.mu_tilde + dot(&fit.theta_tilde, &row[1..]);
            let (w, eps) = match data.family {
                Family::Linear => (1.0, data.y[i] - lin),
                Family::Logistic => {
                    let p = expit(lin).clamp(PROB_CLIP, 1.0 - PROB_CLIP);
                    (1.0 / (p * (1.0 - p)), data.y[i] - p)
                }
            };
            if !w.is_finite() || w <= 0.0 {
                return Err(HighDimError::DegenerateWeights);
            }
            for a in 0..dim {
                r_vec[a] += w * row[a] * eps;
                for b in a..dim {
                    let v = m_w.get(a, b) + w * row[a] * row[b];
                    m_w.set(a, b, v);
                }
            }
        }
        for a in 0..dim {
            r_vec[a] /= m as f64;
            for b in a..dim {
                let v = m_w.get(a, b) / (m as f64 * m as f64);
                m_w.set(a, b, v);
                m_w.set(b, a, v);
            }
        }

        let solver = projection::SolverContext::new(sigma, x2)?;
        Ok(SiteWorkspace {
            n_full: data.n(),
            dim,
            theta_tilde: fit.theta_tilde.clone(),
            lambda0: tuning.lambda(d, m),
            tau: tuning.tau(m),
            solver,
            r_vec,
            m_w,
        })
    }

    /// Read access to the prepared projection solver, for callers that need
    /// solve-level diagnostics (final relaxation level, duality gap).
    pub fn solver_context(&self) -> &projection::SolverContext {
        &self.solver
    }

    /// Regularization level and row bound used for this site's projections.
    pub fn levels(&self) -> (f64, f64) {
        (self.lambda0, self.tau)
    }

    /// Bias and variance components for one probe direction (length d + 1,
    /// leading intercept coordinate). A zero direction needs no correction.
    pub fn bias_for(&self, gamma_tilde: &[f64]) -> Result<BiasComponents, HighDimError> {
        if gamma_tilde.len() != self.dim {
            return Err(HighDimError::InvalidInput(
                "direction length must be d + 1".into(),
            ));
        }
        if norm2(gamma_tilde) == 0.0 {
            return Ok(BiasComponents {
                u_hat: vec![0.0; self.dim],
                delta_hat: 0.0,
                v_hat: 0.0,
            });
        }
        let res =
            projection::solve_with_ladder(&self.solver, gamma_tilde, self.lambda0, self.tau)?;
        let delta_hat = dot(&res.u_hat, &self.r_vec);
        let v_hat = self.m_w.quadratic_form(&res.u_hat).max(0.0);
        Ok(BiasComponents { u_hat: res.u_hat, delta_hat, v_hat })
    }

    /// Debiased coordinate estimate (0-based covariate index) and its SE.
    pub fn debiased(&self, j: usize) -> Result<(f64, f64), HighDimError> {
        if j >= self.dim - 1 {
            return Err(HighDimError::InvalidInput("coordinate out of range".into()));
        }
        let mut e = vec![0.0; self.dim];
        e[j + 1] = 1.0;
        let bc = self.bias_for(&e)?;
        let beta = self.theta_tilde[j] + bc.delta_hat;
        if !(bc.v_hat > 0.0) {
            return Err(HighDimError::DegenerateWeights);
        }
        Ok((beta, bc.v_hat.sqrt()))
    }
}

/// Probe direction for the pair (l, k): zero intercept coordinate followed by
/// the sparse-fit difference.
pub fn pair_direction(fit_l: &HighDimFit, fit_k: &HighDimFit) -> Vec<f64> {
    let d = fit_l.theta_tilde.len();
    let mut g = vec![0.0; d + 1];
    for j in 0..d {
        g[j + 1] = fit_l.theta_tilde[j] - fit_k.theta_tilde[j];
    }
    g
}

/// One-call form of the per-direction correction, for callers that do not
/// keep a workspace alive.
pub fn bias_components(
    data: &SplitSiteData,
    fit: &HighDimFit,
    gamma_tilde: &[f64],
) -> Result<BiasComponents, HighDimError> {
    SiteWorkspace::new(data, fit, &ProjectionTuning::default())?.bias_for(gamma_tilde)
}

/// Debiased squared parameter distance for the pair (l, k), truncated at 0,
/// with its inflated standard error. Both corrections are computed along the
/// same direction (the pair's sparse-fit difference): `bc_lk` at site l and
/// `bc_kl` at site k; the assembly subtracts the k-side term.
pub fn dissimilarity_highdim(
    fit_l: &HighDimFit,
    fit_k: &HighDimFit,
    bc_lk: &BiasComponents,
    bc_kl: &BiasComponents,
    n_l: usize,
    n_k: usize,
) -> Result<(f64, f64), HighDimError> {
    if fit_l.theta_tilde.len() != fit_k.theta_tilde.len() {
        return Err(HighDimError::InvalidInput("fit dimensions differ".into()));
    }
    let plug: f64 = fit_l
        .theta_tilde
        .iter()
        .zip(&fit_k.theta_tilde)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let d_hat = (plug + 2.0 * bc_lk.delta_hat - 2.0 * bc_kl.delta_hat).max(0.0);
    let var = 4.0 * bc_lk.v_hat + 4.0 * bc_kl.v_hat + 1.0 / n_l.min(n_k) as f64;
    Ok((d_hat, var.sqrt()))
}

/// Debiased coordinate functional as a site summary (0-based coordinate).
pub fn debiased_coordinate(
    data: &SplitSiteData,
    fit: &HighDimFit,
    j: usize,
    site_id: usize,
) -> Result<SiteSummary, HighDimError> {
    let ws = SiteWorkspace::new(data, fit, &ProjectionTuning::default())?;
    let (beta, se) = ws.debiased(j)?;
    Ok(SiteSummary::univariate(site_id, data.n(), beta, se)?)
}
