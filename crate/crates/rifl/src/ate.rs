//! Target-population average treatment effect estimation per site: doubly
//! robust point estimate with exponential-tilt density-ratio weighting, and
//! an influence-function variance that accounts for all four fitted nuisance
//! models.
//!
//! All three nuisance bases default to an intercept plus the raw covariates.

use crate::engine::{local_dissimilarity, DissimilarityTable, EngineError, SiteSummary};
use crate::stats::glm::expit;
use crate::stats::linalg::{dot, Matrix};
use crate::stats::{irls_glm_fit_from, newton_solve, Family, KernelError};

/// Fitted propensities are clipped to this range before inverse weighting.
const PROPENSITY_CLIP: (f64, f64) = (0.01, 0.99);
/// Residual tolerance for the exponential-tilt moment-matching equation.
const TILT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, thiserror::Error)]
pub enum AteError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// One site's observational data: covariates, binary treatment, outcome.
#[derive(Debug, Clone)]
pub struct CausalSiteData {
    pub x: Matrix,
    pub a: Vec<f64>,
    pub y: Vec<f64>,
}

impl CausalSiteData {
    pub fn new(x: Matrix, a: Vec<f64>, y: Vec<f64>) -> Result<Self, AteError> {
        let n = x.rows;
        if a.len() != n || y.len() != n {
            return Err(AteError::InvalidInput("treatment/outcome length mismatch".into()));
        }
        if a.iter().any(|v| *v != 0.0 && *v != 1.0) {
            return Err(AteError::InvalidInput("treatment must be binary".into()));
        }
        let n1 = a.iter().filter(|v| **v == 1.0).count();
        if n1 == 0 || n1 == n {
            return Err(AteError::InvalidInput("both treatment arms must be nonempty".into()));
        }
        if !x.is_finite() || y.iter().any(|v| !v.is_finite()) {
            return Err(AteError::InvalidInput("non-finite data".into()));
        }
        Ok(CausalSiteData { x, a, y })
    }

    pub fn n(&self) -> usize {
        self.x.rows
    }
}

/// Covariate sample from the inference-target population.
#[derive(Debug, Clone)]
pub struct TargetSample {
    x: Matrix,
    mean_basis: Vec<f64>,
}

impl TargetSample {
    pub fn new(x: Matrix) -> Result<Self, AteError> {
        if x.rows == 0 {
            return Err(AteError::InvalidInput("target sample is empty".into()));
        }
        if !x.is_finite() {
            return Err(AteError::InvalidInput("non-finite target covariates".into()));
        }
        let n = x.rows;
        let p = x.cols;
        let mut mean_basis = vec![0.0; p + 1];
        mean_basis[0] = 1.0;
        for i in 0..n {
            for (m, v) in mean_basis[1..].iter_mut().zip(x.row(i)) {
                *m += v / n as f64;
            }
        }
        Ok(TargetSample { x, mean_basis })
    }

    pub fn x(&self) -> &Matrix {
        &self.x
    }

    /// Mean of the intercept-augmented basis over the target sample.
    pub fn mean_basis(&self) -> &[f64] {
        &self.mean_basis
    }
}

/// Coefficients of the four nuisance models.
#[derive(Debug, Clone)]
pub struct NuisanceFits {
    pub alpha_hat: Vec<f64>,
    pub gamma0_hat: Vec<f64>,
    pub gamma1_hat: Vec<f64>,
    pub eta_hat: Vec<f64>,
}

/// Intercept-augmented design (1, X).
fn augmented(x: &Matrix) -> Matrix {
    let n = x.rows;
    let p = x.cols;
    let mut out = Matrix::zeros(n, p + 1);
    for i in 0..n {
        out.set(i, 0, 1.0);
        for j in 0..p {
            out.set(i, j + 1, x.get(i, j));
        }
    }
    out
}

fn link(family: Family, t: f64) -> f64 {
    match family {
        Family::Linear => t,
        Family::Logistic => expit(t),
    }
}

fn link_deriv(family: Family, t: f64) -> f64 {
    match family {
        Family::Linear => 1.0,
        Family::Logistic => {
            let p = expit(t);
            p * (1.0 - p)
        }
    }
}

/// All four nuisance fits; propensity is always logistic, outcome follows
/// `outcome_family`, and the tilt weights solve the moment-matching equation
/// against the supplied target basis mean.
pub fn fit_nuisances(
    data: &CausalSiteData,
    target: &TargetSample,
    outcome_family: Family,
) -> Result<NuisanceFits, AteError> {
    fit_nuisances_warm(data, target.mean_basis(), outcome_family, None, None)
}

/// Warm-startable variant used by resampling procedures that refit many
/// perturbations of the same site.
pub fn fit_nuisances_warm(
    data: &CausalSiteData,
    target_mean_basis: &[f64],
    outcome_family: Family,
    alpha_init: Option<&[f64]>,
    eta_init: Option<&[f64]>,
) -> Result<NuisanceFits, AteError> {
    let n = data.n();
    let xa = augmented(&data.x);
    let dim = xa.cols;
    if target_mean_basis.len() != dim {
        return Err(AteError::InvalidInput("target basis dimension mismatch".into()));
    }

    let alpha_hat =
        irls_glm_fit_from(&xa, &data.a, Family::Logistic, None, alpha_init)?.theta;

    // Per-arm outcome regressions.
    let mut fits = [Vec::new(), Vec::new()];
    for arm in 0..2usize {
        let rows: Vec<usize> =
            (0..n).filter(|&i| data.a[i] == arm as f64).collect();
        let mut xs = Matrix::zeros(rows.len(), dim);
        let mut ys = vec![0.0; rows.len()];
        for (r, &i) in rows.iter().enumerate() {
            ys[r] = data.y[i];
            for j in 0..dim {
                xs.set(r, j, xa.get(i, j));
            }
        }
        fits[arm] = irls_glm_fit_from(&xs, &ys, outcome_family, None, None)?.theta;
    }

    // Exponential tilt: average of exp(eta' w) w over the site must match the
    // target basis mean.
    // Overflowing weights produce non-finite residuals, which the damped
    // Newton solver rejects during its line search.
    let residual = |eta: &[f64]| -> Vec<f64> {
        let mut r = vec![0.0; dim];
        for i in 0..n {
            let row = xa.row(i);
            let w = dot(eta, row).exp();
            for (acc, v) in r.iter_mut().zip(row) {
                *acc += w * v / n as f64;
            }
        }
        for (acc, t) in r.iter_mut().zip(target_mean_basis) {
            *acc -= t;
        }
        r
    };
    let jacobian = |eta: &[f64]| -> Matrix {
        let mut j = Matrix::zeros(dim, dim);
        for i in 0..n {
            let row = xa.row(i);
            let w = dot(eta, row).exp() / n as f64;
            for a in 0..dim {
                let va = w * row[a];
                for b in a..dim {
                    j.set(a, b, j.get(a, b) + va * row[b]);
                }
            }
        }
        for a in 0..dim {
            for b in 0..a {
                j.set(a, b, j.get(b, a));
            }
        }
        j
    };
    let init = match eta_init {
        Some(e) if e.len() == dim => e.to_vec(),
        _ => vec![0.0; dim],
    };
    let eta_hat = newton_solve(&residual, &jacobian, &init, 100, TILT_TOL)?;

    let [gamma0_hat, gamma1_hat] = fits;
    Ok(NuisanceFits { alpha_hat, gamma0_hat, gamma1_hat, eta_hat })
}

fn clip_propensity(p: f64) -> f64 {
    p.clamp(PROPENSITY_CLIP.0, PROPENSITY_CLIP.1)
}

/// Target-model mean term: average of m(1,.) - m(0,.) over the target sample.
fn target_mean_effect(target: &TargetSample, fits: &NuisanceFits, family: Family) -> f64 {
    match family {
        Family::Linear => {
            let diff: Vec<f64> = fits
                .gamma1_hat
                .iter()
                .zip(&fits.gamma0_hat)
                .map(|(a, b)| a - b)
                .collect();
            dot(target.mean_basis(), &diff)
        }
        Family::Logistic => {
            let n = target.x.rows;
            let p = target.x.cols;
            let mut acc = 0.0;
            let mut row = vec![0.0; p + 1];
            row[0] = 1.0;
            for i in 0..n {
                row[1..].copy_from_slice(target.x.row(i));
                acc += link(family, dot(&fits.gamma1_hat, &row))
                    - link(family, dot(&fits.gamma0_hat, &row));
            }
            acc / n as f64
        }
    }
}

/// Doubly robust point estimate: target-model mean plus density-ratio- and
/// propensity-weighted residual augmentation averaged over the source rows.
pub fn dr_estimate(
    data: &CausalSiteData,
    target: &TargetSample,
    fits: &NuisanceFits,
    outcome_family: Family,
) -> Result<f64, AteError> {
    let m_hat = target_mean_effect(target, fits, outcome_family);
    let xa = augmented(&data.x);
    let n = data.n();
    let mut delta = 0.0;
    for i in 0..n {
        let row = xa.row(i);
        let omega = dot(&fits.eta_hat, row).exp();
        let p1 = clip_propensity(expit(dot(&fits.alpha_hat, row)));
        let treated = data.a[i] == 1.0;
        let gamma = if treated { &fits.gamma1_hat } else { &fits.gamma0_hat };
        let resid = data.y[i] - link(outcome_family, dot(gamma, row));
        let term = if treated { resid / p1 } else { -resid / (1.0 - p1) };
        delta += omega * term;
    }
    delta /= n as f64;
    let theta = m_hat + delta;
    if !theta.is_finite() {
        return Err(AteError::InvalidInput("non-finite point estimate".into()));
    }
    Ok(theta)
}

/// Empirical variance of the estimated influence function, which combines the
/// residual augmentation term with one correction per fitted nuisance model.
pub fn influence_variance(
    data: &CausalSiteData,
    target: &TargetSample,
    fits: &NuisanceFits,
    outcome_family: Family,
) -> Result<f64, AteError> {
    let xa = augmented(&data.x);
    let n = data.n();
    let dim = xa.cols;
    let nf = n as f64;

    // Target-side components of the outcome-model sensitivities.
    let (t0, t1) = match outcome_family {
        Family::Linear => (target.mean_basis().to_vec(), target.mean_basis().to_vec()),
        Family::Logistic => {
            let mut t0 = vec![0.0; dim];
            let mut t1 = vec![0.0; dim];
            let nt = target.x.rows;
            let mut row = vec![0.0; dim];
            row[0] = 1.0;
            for i in 0..nt {
                row[1..].copy_from_slice(target.x.row(i));
                let d0 = link_deriv(outcome_family, dot(&fits.gamma0_hat, &row));
                let d1 = link_deriv(outcome_family, dot(&fits.gamma1_hat, &row));
                for j in 0..dim {
                    t0[j] += d0 * row[j] / nt as f64;
                    t1[j] += d1 * row[j] / nt as f64;
                }
            }
            (t0, t1)
        }
    };

    // Pass 1: per-row primitives and all moment accumulators.
    let mut omega = vec![0.0; n];
    let mut prop = vec![0.0; n];
    let mut resid = vec![0.0; n];
    let mut xi = vec![0.0; n];
    let mut d_g0 = vec![0.0; dim];
    let mut d_g1 = vec![0.0; dim];
    let mut d_eta = vec![0.0; dim];
    let mut d_alpha = vec![0.0; dim];
    let mut c_g0 = Matrix::zeros(dim, dim);
    let mut c_g1 = Matrix::zeros(dim, dim);
    let mut c_eta = Matrix::zeros(dim, dim);
    let mut c_alpha = Matrix::zeros(dim, dim);
    for i in 0..n {
        let row = xa.row(i);
        let om = dot(&fits.eta_hat, row).exp();
        let p1 = clip_propensity(expit(dot(&fits.alpha_hat, row)));
        let hp = p1 * (1.0 - p1);
        let treated = data.a[i] == 1.0;
        let gamma = if treated { &fits.gamma1_hat } else { &fits.gamma0_hat };
        let lin = dot(gamma, row);
        let r = data.y[i] - link(outcome_family, lin);
        let gprime = link_deriv(outcome_family, lin);
        let inner = if treated { r / p1 } else { -r / (1.0 - p1) };
        omega[i] = om;
        prop[i] = p1;
        resid[i] = r;
        xi[i] = om * inner;

        // Sensitivities of the point estimate to each nuisance model.
        let (s_g, d_g) = if treated {
            (om / p1 * gprime, &mut d_g1)
        } else {
            (om / (1.0 - p1) * gprime, &mut d_g0)
        };
        for (acc, v) in d_g.iter_mut().zip(row) {
            *acc += s_g * v / nf;
        }
        for (acc, v) in d_eta.iter_mut().zip(row) {
            *acc += xi[i] * v / nf;
        }
        let s_a = if treated { -om * hp / (p1 * p1) * r } else { om * hp / ((1.0 - p1) * (1.0 - p1)) * r };
        for (acc, v) in d_alpha.iter_mut().zip(row) {
            *acc += s_a * v / nf;
        }

        // Score-equation curvature matrices (upper triangles).
        let (wa, w0, w1) = (
            hp / nf,
            if treated { 0.0 } else { gprime / nf },
            if treated { gprime / nf } else { 0.0 },
        );
        let we = om / nf;
        for a in 0..dim {
            let va = row[a];
            for b in a..dim {
                let prod = va * row[b];
                c_alpha.set(a, b, c_alpha.get(a, b) + wa * prod);
                c_eta.set(a, b, c_eta.get(a, b) + we * prod);
                if w0 != 0.0 {
                    c_g0.set(a, b, c_g0.get(a, b) + w0 * prod);
                }
                if w1 != 0.0 {
                    c_g1.set(a, b, c_g1.get(a, b) + w1 * prod);
                }
            }
        }
    }
    for m in [&mut c_alpha, &mut c_eta, &mut c_g0, &mut c_g1] {
        for a in 0..dim {
            for b in 0..a {
                m.set(a, b, m.get(b, a));
            }
        }
    }
    // d vectors combine target- and source-side pieces.
    for j in 0..dim {
        d_g0[j] -= t0[j];
        d_g1[j] = t1[j] - d_g1[j];
    }

    let solve = |m: &Matrix, rhs: &[f64]| -> Result<Vec<f64>, KernelError> {
        Ok(m.cholesky_ridged()?.solve(rhs))
    };
    let c0 = solve(&c_g0, &d_g0)?;
    let c1 = solve(&c_g1, &d_g1)?;
    // The tilt curvature is the negated weighted second moment.
    let mut ce = solve(&c_eta, &d_eta)?;
    for v in ce.iter_mut() {
        *v = -*v;
    }
    let ca = solve(&c_alpha, &d_alpha)?;

    // Pass 2: assemble the influence values and take their variance.
    let mut mean = 0.0;
    let mut tau = vec![0.0; n];
    let tmean = target.mean_basis();
    for i in 0..n {
        let row = xa.row(i);
        let treated = data.a[i] == 1.0;
        let mut t = xi[i];
        let cg = if treated { &c1 } else { &c0 };
        t += resid[i] * dot(cg, row);
        let mut eta_term = 0.0;
        for j in 0..dim {
            eta_term += ce[j] * (omega[i] * row[j] - tmean[j]);
        }
        t += eta_term;
        t += (data.a[i] - prop[i]) * dot(&ca, row);
        tau[i] = t;
        mean += t / nf;
    }
    let mut v = 0.0;
    for t in &tau {
        v += (t - mean) * (t - mean) / nf;
    }
    if !v.is_finite() || v < 0.0 {
        return Err(AteError::InvalidInput("non-finite influence variance".into()));
    }
    Ok(v)
}

/// Point estimate, influence variance, and sample size for one site.
#[derive(Debug, Clone)]
pub struct SiteEstimate {
    pub theta_hat: f64,
    pub v_hat: f64,
    pub n: usize,
}

/// Fit nuisances and produce the site's estimate and variance in one call.
pub fn estimate_site(
    data: &CausalSiteData,
    target: &TargetSample,
    outcome_family: Family,
    alpha_init: Option<&[f64]>,
    eta_init: Option<&[f64]>,
) -> Result<(SiteEstimate, NuisanceFits), AteError> {
    let fits =
        fit_nuisances_warm(data, target.mean_basis(), outcome_family, alpha_init, eta_init)?;
    let theta_hat = dr_estimate(data, target, &fits, outcome_family)?;
    let v_hat = influence_variance(data, target, &fits, outcome_family)?;
    Ok((SiteEstimate { theta_hat, v_hat, n: data.n() }, fits))
}

/// Site summaries (sigma = sqrt(V/n)) and the univariate dissimilarity table
/// for the full multi-site problem.
pub fn ate_site_summaries(
    sites: &[CausalSiteData],
    target: &TargetSample,
    outcome_family: Family,
) -> Result<(Vec<SiteSummary>, DissimilarityTable), AteError> {
    if sites.len() < 3 {
        return Err(AteError::InvalidInput("need at least 3 sites".into()));
    }
    let mut summaries = Vec::with_capacity(sites.len());
    for (l, site) in sites.iter().enumerate() {
        let (est, _) = estimate_site(site, target, outcome_family, None, None)?;
        let sigma = (est.v_hat / est.n as f64).sqrt();
        summaries.push(SiteSummary::univariate(l, est.n, est.theta_hat, sigma)?);
    }
    let (l_hat, se_l) = local_dissimilarity(&summaries)?;
    let table = DissimilarityTable::new(sites.len(), None, (l_hat, se_l))?;
    Ok((summaries, table))
}
