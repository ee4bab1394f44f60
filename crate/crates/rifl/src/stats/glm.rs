//! Generalized linear model fitting by iteratively reweighted least squares.
//!
//! The returned covariance is scaled so that it estimates the limit of
//! n * Var(theta_hat); downstream standard errors divide by n explicitly.

use super::linalg::{dot, norm_inf, Matrix};
use super::KernelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Family {
    Linear,
    Logistic,
}

#[derive(Debug, Clone)]
pub struct GlmFit {
    pub theta: Vec<f64>,
    /// Estimate of lim n * Var(theta_hat).
    pub cov_scaled: Matrix,
    pub iterations: usize,
}

#[inline]
pub fn expit(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

fn neg_log_lik(eta: &[f64], y: &[f64], w: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..y.len() {
        let t = eta[i];
        // log(1 + e^t) computed stably on both sides.
        let softplus = if t > 0.0 { t + (-t).exp().ln_1p() } else { t.exp().ln_1p() };
        s += w[i] * (softplus - y[i] * t);
    }
    s / y.len() as f64
}

/// Maximum-likelihood GLM fit with optional observation weights.
pub fn irls_glm_fit(
    x: &Matrix,
    y: &[f64],
    family: Family,
    weights: Option<&[f64]>,
) -> Result<GlmFit, KernelError> {
    irls_glm_fit_from(x, y, family, weights, None)
}

/// As `irls_glm_fit`, warm-started from a caller-supplied coefficient vector
/// (useful when refitting on perturbations of the same data).
pub fn irls_glm_fit_from(
    x: &Matrix,
    y: &[f64],
    family: Family,
    weights: Option<&[f64]>,
    init: Option<&[f64]>,
) -> Result<GlmFit, KernelError> {
    let n = x.rows;
    let p = x.cols;
    if y.len() != n {
        return Err(KernelError::Domain("response length != design rows".into()));
    }
    if n <= p {
        return Err(KernelError::SingularDesign);
    }
    let ones;
    let w: &[f64] = match weights {
        Some(w) => {
            if w.len() != n || w.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(KernelError::Domain("invalid observation weights".into()));
            }
            w
        }
        None => {
            ones = vec![1.0; n];
            &ones
        }
    };

    match family {
        Family::Linear => {
            let (g, rhs) = weighted_normal_equations(x, y, w, None);
            let chol = g.cholesky().map_err(|_| KernelError::SingularDesign)?;
            let theta = chol.solve(&rhs);
            let mut rss = 0.0;
            for i in 0..n {
                let r = y[i] - dot(x.row(i), &theta);
                rss += w[i] * r * r;
            }
            let sigma2 = rss / (n - p) as f64;
            let mut cov = chol.inverse();
            cov.scale(sigma2);
            Ok(GlmFit {
                theta,
                cov_scaled: cov,
                iterations: 1,
            })
        }
        Family::Logistic => {
            if y.iter().any(|v| *v != 0.0 && *v != 1.0) {
                return Err(KernelError::Domain("logistic response must be 0/1".into()));
            }
            let mut theta = match init {
                Some(t) => {
                    if t.len() != p || t.iter().any(|v| !v.is_finite()) {
                        return Err(KernelError::Domain("invalid warm start".into()));
                    }
                    t.to_vec()
                }
                None => vec![0.0; p],
            };
            let mut eta = x.matvec(&theta);
            let mut nll = neg_log_lik(&eta, y, w);
            for iter in 1..=100 {
                // Mean-scaled gradient and observed information.
                let mut grad = vec![0.0; p];
                let mut probs = vec![0.0; n];
                for i in 0..n {
                    let pi = expit(eta[i]);
                    probs[i] = pi;
                    let s = w[i] * (pi - y[i]) / n as f64;
                    if s != 0.0 {
                        for (gk, xk) in grad.iter_mut().zip(x.row(i)) {
                            *gk += s * xk;
                        }
                    }
                }
                let grad_inf = norm_inf(&grad);
                let wi: Vec<f64> = (0..n).map(|i| probs[i] * (1.0 - probs[i])).collect();
                let (g, _) = weighted_normal_equations(x, y, w, Some(&wi));
                let chol = g.cholesky().map_err(|_| KernelError::SingularDesign)?;
                if grad_inf <= 1e-8 {
                    return Ok(GlmFit {
                        theta,
                        cov_scaled: chol.inverse(),
                        iterations: iter,
                    });
                }
                let dir = chol.solve(&grad);
                // Step halving keeps the likelihood ascending; descent must
                // exceed the rounding floor of the mean log-likelihood, or a
                // micro-step plateau would burn the whole iteration budget.
                let min_gain = 1e-15 * (1.0 + nll.abs());
                let mut step = 1.0;
                let mut accepted = false;
                for _ in 0..40 {
                    let cand: Vec<f64> =
                        theta.iter().zip(&dir).map(|(t, d)| t - step * d).collect();
                    let cand_eta = x.matvec(&cand);
                    let cand_nll = neg_log_lik(&cand_eta, y, w);
                    if cand_nll.is_finite() && cand_nll <= nll - min_gain {
                        theta = cand;
                        eta = cand_eta;
                        nll = cand_nll;
                        accepted = true;
                        break;
                    }
                    step *= 0.5;
                }
                if !accepted {
                    if grad_inf <= 1e-6 {
                        // The likelihood can no longer resolve improvements in
                        // f64; the gradient is already far below statistical
                        // noise, so report convergence at the float floor.
                        return Ok(GlmFit {
                            theta,
                            cov_scaled: chol.inverse(),
                            iterations: iter,
                        });
                    }
                    break;
                }
                let norm: f64 = dot(&theta, &theta).sqrt();
                if norm > 1e3 {
                    return Err(KernelError::Separation);
                }
            }
            Err(KernelError::NonConvergence(
                "IRLS did not reach gradient tolerance in 100 iterations".into(),
            ))
        }
    }
}

/// Returns ((1/n) X^T W X, (1/n) X^T W y) with W = obs_weights * irls_weights.
fn weighted_normal_equations(
    x: &Matrix,
    y: &[f64],
    w: &[f64],
    irls: Option<&[f64]>,
) -> (Matrix, Vec<f64>) {
    let n = x.rows;
    let p = x.cols;
    let mut g = Matrix::zeros(p, p);
    let mut rhs = vec![0.0; p];
    for i in 0..n {
        let wi = w[i] * irls.map_or(1.0, |v| v[i]) / n as f64;
        if wi == 0.0 {
            continue;
        }
        let row = x.row(i);
        for a in 0..p {
            let va = wi * row[a];
            if va == 0.0 {
                continue;
            }
            rhs[a] += va * y[i];
            for b in a..p {
                let add = va * row[b];
                g.set(a, b, g.get(a, b) + add);
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            g.set(a, b, g.get(b, a));
        }
    }
    (g, rhs)
}
