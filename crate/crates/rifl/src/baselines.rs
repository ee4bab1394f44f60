//! Comparator confidence intervals: the median estimator with a parametric
//! bootstrap, the m-out-of-n bootstrap over the maximum-clique point
//! estimate, majority voting with maximum clique, and the oracle bias-aware
//! interval.

use crate::engine::{
    build_voting_matrix, default_voting_threshold, ivw_aggregate, local_dissimilarity,
    maximum_clique, naive_ci, statistic_table, DissimilarityTable, EngineError, SiteSummary,
};
use crate::stats::{chisq_quantile, normal_quantile, KernelError, RandomStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMethod {
    Median,
    Mnb,
    Vmc,
    Oba,
}

#[derive(Debug, Clone)]
pub struct BaselineResult {
    pub method: BaselineMethod,
    pub point: f64,
    pub interval: (f64, f64),
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum BaselineError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("too few usable bootstrap replicates ({0})")]
    DegenerateReplicates(usize),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

fn median_of(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Median of the site estimates, with a parametric-bootstrap standard error:
/// every site is redrawn from N(beta_l, sigma_l^2) and the median recomputed.
pub fn median_ci(
    summaries: &[SiteSummary],
    alpha: f64,
    b_reps: usize,
    rng: &RandomStream,
) -> Result<BaselineResult, BaselineError> {
    let l_sites = summaries.len();
    if l_sites < 3 {
        return Err(BaselineError::InvalidInput("need at least 3 sites".into()));
    }
    if b_reps < 100 {
        return Err(BaselineError::InvalidInput("need at least 100 bootstrap draws".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(BaselineError::InvalidInput("alpha must lie in (0,1)".into()));
    }
    let betas: Vec<f64> = summaries.iter().map(|s| s.beta_hat[0]).collect();
    let sigmas: Vec<f64> = summaries
        .iter()
        .map(|s| s.sigma_hat.ok_or_else(|| {
            BaselineError::InvalidInput("median baseline needs scalar summaries".into())
        }))
        .collect::<Result<_, _>>()?;
    let point = median_of(&mut betas.clone());

    let mut medians = Vec::with_capacity(b_reps);
    let mut draw = vec![0.0; l_sites];
    for j in 0..b_reps {
        let mut r = rng.derive(j as u64 + 1);
        for l in 0..l_sites {
            draw[l] = betas[l] + sigmas[l] * r.normal();
        }
        medians.push(median_of(&mut draw.clone()));
    }
    let mean: f64 = medians.iter().sum::<f64>() / b_reps as f64;
    let var: f64 =
        medians.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>() / (b_reps - 1) as f64;
    let se = var.sqrt();
    let z = normal_quantile(alpha / 2.0)?;
    Ok(BaselineResult {
        method: BaselineMethod::Median,
        point,
        interval: (point - z * se, point + z * se),
    })
}

/// Majority voting with maximum clique: aggregate the largest mutually
/// compatible site set at the fixed original-scale threshold.
pub fn vmc_ci(
    summaries: &[SiteSummary],
    table: &DissimilarityTable,
    alpha: f64,
) -> Result<BaselineResult, BaselineError> {
    let stats = statistic_table(table);
    let threshold = default_voting_threshold(table.l_sites);
    let h = build_voting_matrix(&stats, table.l_sites, threshold);
    let clique = maximum_clique(&h);
    let interval = naive_ci(summaries, &clique, alpha)?;
    let (point, _) = ivw_aggregate(summaries, &clique)?;
    Ok(BaselineResult { method: BaselineMethod::Vmc, point, interval })
}

/// Access to one site's raw rows for subsample refitting.
pub trait SiteDataHandle {
    fn n(&self) -> usize;
    /// Recompute (beta_hat, sigma_hat) on the given resampled row multiset;
    /// None marks a failed replicate (dropped upstream).
    fn refit(&self, rows: &[usize]) -> Option<(f64, f64)>;
}

/// Maximum-clique point estimate from univariate summaries.
fn clique_point(summaries: &[SiteSummary]) -> Result<f64, BaselineError> {
    let (l_hat, se_l) = local_dissimilarity(summaries)?;
    let table = DissimilarityTable::new(summaries.len(), None, (l_hat, se_l))?;
    let stats = statistic_table(&table);
    let threshold = default_voting_threshold(summaries.len());
    let h = build_voting_matrix(&stats, summaries.len(), threshold);
    let clique = maximum_clique(&h);
    let (point, _) = ivw_aggregate(summaries, &clique)?;
    Ok(point)
}

/// m-out-of-n bootstrap around the maximum-clique point estimate: replicates
/// of size m = floor(n^upsilon) are drawn with replacement per site, and the
/// percentile roots sqrt(m) (beta_m - beta*) are inverted at rate sqrt(n).
/// With unequal site sizes the root scale uses the smallest n.
pub fn mnb_ci(
    handles: &[&dyn SiteDataHandle],
    alpha: f64,
    upsilon: f64,
    b_reps: usize,
    rng: &RandomStream,
) -> Result<BaselineResult, BaselineError> {
    let l_sites = handles.len();
    if l_sites < 3 {
        return Err(BaselineError::InvalidInput("need at least 3 sites".into()));
    }
    if !(upsilon > 0.0 && upsilon <= 1.0) {
        return Err(BaselineError::InvalidInput("upsilon must lie in (0,1]".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(BaselineError::InvalidInput("alpha must lie in (0,1)".into()));
    }
    if b_reps < 20 {
        return Err(BaselineError::InvalidInput("need at least 20 replicates".into()));
    }

    // Full-data point estimate.
    let mut full = Vec::with_capacity(l_sites);
    for (l, h) in handles.iter().enumerate() {
        let rows: Vec<usize> = (0..h.n()).collect();
        let (beta, sigma) = h.refit(&rows).ok_or_else(|| {
            BaselineError::InvalidInput(format!("full-data refit failed at site {l}"))
        })?;
        full.push(SiteSummary::univariate(l, h.n(), beta, sigma)?);
    }
    let beta_star = clique_point(&full)?;

    let n_ref = handles.iter().map(|h| h.n()).min().unwrap();
    let m_ref = (n_ref as f64).powf(upsilon).floor().max(1.0);

    let mut roots = Vec::with_capacity(b_reps);
    'replicate: for j in 0..b_reps {
        let mut reps = Vec::with_capacity(l_sites);
        for (l, h) in handles.iter().enumerate() {
            let n_l = h.n();
            let m_l = (n_l as f64).powf(upsilon).floor().max(1.0) as usize;
            let mut r = rng.derive(64 * (j as u64 + 1) + l as u64);
            let rows: Vec<usize> =
                (0..m_l).map(|_| r.below(n_l)).collect();
            match h.refit(&rows) {
                Some((beta, sigma)) if sigma > 0.0 && beta.is_finite() => {
                    reps.push(SiteSummary::univariate(l, m_l, beta, sigma)?);
                }
                _ => continue 'replicate,
            }
        }
        match clique_point(&reps) {
            Ok(b) => roots.push(m_ref.sqrt() * (b - beta_star)),
            Err(_) => continue 'replicate,
        }
    }
    if roots.len() < 20 {
        return Err(BaselineError::DegenerateReplicates(roots.len()));
    }
    roots.sort_by(|a, b| a.partial_cmp(b).unwrap());
    // Smallest t with empirical CDF at least p.
    let quantile = |p: f64| -> f64 {
        let k = (p * roots.len() as f64).ceil().max(1.0) as usize;
        roots[k.min(roots.len()) - 1]
    };
    let t_hi = quantile(1.0 - alpha / 2.0);
    let t_lo = quantile(alpha / 2.0);
    let scale = (n_ref as f64).sqrt();
    Ok(BaselineResult {
        method: BaselineMethod::Mnb,
        point: beta_star,
        interval: (beta_star - t_hi / scale, beta_star - t_lo / scale),
    })
}

/// Oracle bias-aware interval: the half-width inflates the critical value to
/// the upper-alpha quantile of chi-square(1) with noncentrality (bias/SE)^2.
pub fn oba_ci(
    point: f64,
    se_hat: f64,
    oracle_bias: f64,
    alpha: f64,
) -> Result<BaselineResult, BaselineError> {
    if !(se_hat > 0.0) || !se_hat.is_finite() {
        return Err(BaselineError::InvalidInput("standard error must be positive".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(BaselineError::InvalidInput("alpha must lie in (0,1)".into()));
    }
    let ratio = oracle_bias / se_hat;
    let cv = chisq_quantile(alpha, 1, ratio * ratio)?;
    let half = se_hat * cv.sqrt();
    Ok(BaselineResult {
        method: BaselineMethod::Oba,
        point,
        interval: (point - half, point + half),
    })
}
