//! Similarity voting and aggregation across sites.
//!
//! Sites arrive as summary statistics only. Pairwise dissimilarity tests
//! fill a voting matrix; the majority-vote and maximum-clique sets estimate
//! which sites share the prevailing parameter; inverse-variance weighting
//! aggregates over a chosen set. The resampling machinery that turns these
//! pieces into an honest confidence region lives in [`resample`] and
//! [`region`].

pub mod clique;
pub mod region;
pub mod resample;

use crate::stats::linalg::{dot, sub, Matrix};
use crate::stats::{normal_quantile, KernelError};

pub use region::{
    default_rho_grid, region_from_stats, rifl_confidence_region, ConfidenceRegion, Ellipsoid,
    TuningConfig,
};
pub use resample::{
    draw_statistics, resample_dissimilarities, sampling_accuracy, select_rho,
    select_rho_from_stats, ResampleDraw, RhoSelection,
};

/// Significance level of the pairwise similarity tests (the Bonferroni
/// numerator of the voting threshold). Fixed by convention, independent of
/// the confidence level requested for the final region.
pub const SIMILARITY_LEVEL: f64 = 0.05;

#[derive(Debug, Clone, thiserror::Error)]
pub enum EngineError {
    #[error("invalid site summary: {0}")]
    InvalidSummary(String),
    #[error("invalid dissimilarity table: {0}")]
    InvalidTable(String),
    #[error("aggregation set is empty")]
    EmptySet,
    #[error(
        "majority rule unverifiable: only {retained_at_rho_one} of {m_resamples} resampled draws \
         reach a majority-size clique even at rho = 1 (wanted {needed}); the prevailing-model \
         assumption is suspect for these sites"
    )]
    MajorityRuleUnverifiable {
        retained_at_rho_one: usize,
        m_resamples: usize,
        needed: usize,
    },
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

/// Per-site estimate of the target functional, univariate or multivariate.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SiteSummary {
    pub site_id: usize,
    pub n: usize,
    pub beta_hat: Vec<f64>,
    /// Standard error (univariate mode).
    pub sigma_hat: Option<f64>,
    /// Covariance of beta_hat (multivariate mode).
    pub omega_hat: Option<Matrix>,
}

impl SiteSummary {
    pub fn univariate(site_id: usize, n: usize, beta: f64, sigma: f64) -> Result<Self, EngineError> {
        if !(sigma > 0.0 && sigma.is_finite() && beta.is_finite()) {
            return Err(EngineError::InvalidSummary(format!(
                "site {site_id}: need finite beta and sigma > 0 (got beta {beta}, sigma {sigma})"
            )));
        }
        if n == 0 {
            return Err(EngineError::InvalidSummary(format!("site {site_id}: n = 0")));
        }
        Ok(SiteSummary {
            site_id,
            n,
            beta_hat: vec![beta],
            sigma_hat: Some(sigma),
            omega_hat: None,
        })
    }

    pub fn multivariate(
        site_id: usize,
        n: usize,
        beta: Vec<f64>,
        omega: Matrix,
    ) -> Result<Self, EngineError> {
        if beta.is_empty() || beta.iter().any(|v| !v.is_finite()) {
            return Err(EngineError::InvalidSummary(format!(
                "site {site_id}: non-finite or empty estimate"
            )));
        }
        if omega.rows != beta.len() || omega.cols != beta.len() || !omega.is_finite() {
            return Err(EngineError::InvalidSummary(format!(
                "site {site_id}: covariance shape mismatch"
            )));
        }
        if omega.cholesky().is_err() {
            return Err(EngineError::InvalidSummary(format!(
                "site {site_id}: covariance not positive definite"
            )));
        }
        if n == 0 {
            return Err(EngineError::InvalidSummary(format!("site {site_id}: n = 0")));
        }
        Ok(SiteSummary {
            site_id,
            n,
            beta_hat: beta,
            sigma_hat: None,
            omega_hat: Some(omega),
        })
    }

    pub fn dim(&self) -> usize {
        self.beta_hat.len()
    }

    fn scalar(&self) -> (f64, f64) {
        (self.beta_hat[0], self.sigma_hat.expect("univariate summary"))
    }
}

/// Index into the packed upper-triangular pair tables, l < k.
#[inline]
pub fn pair_index(l_sites: usize, l: usize, k: usize) -> usize {
    debug_assert!(l < k && k < l_sites);
    l * l_sites - l * (l + 1) / 2 + (k - l - 1)
}

pub fn pair_count(l_sites: usize) -> usize {
    l_sites * (l_sites - 1) / 2
}

/// Symmetric pairwise dissimilarities with standard errors. The global
/// component (squared parameter distance) is absent in applications that
/// test the target functional directly.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct DissimilarityTable {
    pub l_sites: usize,
    d_hat: Option<Vec<f64>>,
    se_d: Option<Vec<f64>>,
    l_hat: Vec<f64>,
    se_l: Vec<f64>,
}

impl DissimilarityTable {
    pub fn new(
        l_sites: usize,
        global: Option<(Vec<f64>, Vec<f64>)>,
        local: (Vec<f64>, Vec<f64>),
    ) -> Result<Self, EngineError> {
        let np = pair_count(l_sites);
        let (l_hat, se_l) = local;
        if l_hat.len() != np || se_l.len() != np {
            return Err(EngineError::InvalidTable("local table length mismatch".into()));
        }
        if se_l.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(EngineError::InvalidTable(
                "local dissimilarity SEs must be positive".into(),
            ));
        }
        if l_hat.iter().any(|v| !v.is_finite()) {
            return Err(EngineError::InvalidTable("non-finite local dissimilarity".into()));
        }
        let (d_hat, se_d) = match global {
            Some((d, s)) => {
                if d.len() != np || s.len() != np {
                    return Err(EngineError::InvalidTable("global table length mismatch".into()));
                }
                if s.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
                    return Err(EngineError::InvalidTable(
                        "global dissimilarity SEs must be positive".into(),
                    ));
                }
                if d.iter().any(|v| !v.is_finite() || *v < 0.0) {
                    return Err(EngineError::InvalidTable(
                        "global dissimilarities must be finite and nonnegative".into(),
                    ));
                }
                (Some(d), Some(s))
            }
            None => (None, None),
        };
        Ok(DissimilarityTable {
            l_sites,
            d_hat,
            se_d,
            l_hat,
            se_l,
        })
    }

    pub fn has_global(&self) -> bool {
        self.d_hat.is_some()
    }

    #[inline]
    fn at(&self, which: &[f64], l: usize, k: usize) -> f64 {
        let (a, b) = if l < k { (l, k) } else { (k, l) };
        which[pair_index(self.l_sites, a, b)]
    }

    pub fn d(&self, l: usize, k: usize) -> Option<f64> {
        self.d_hat.as_ref().map(|t| self.at(t, l, k))
    }

    pub fn se_d(&self, l: usize, k: usize) -> Option<f64> {
        self.se_d.as_ref().map(|t| self.at(t, l, k))
    }

    /// Signed in the (l, k) orientation: stored value for l < k, negated
    /// otherwise (only meaningful for the univariate difference).
    pub fn l_signed(&self, l: usize, k: usize) -> f64 {
        let v = self.at(&self.l_hat, l, k);
        if l < k {
            v
        } else {
            -v
        }
    }

    pub fn se_l(&self, l: usize, k: usize) -> f64 {
        self.at(&self.se_l, l, k)
    }

    pub fn d_hat_slice(&self) -> Option<&[f64]> {
        self.d_hat.as_deref()
    }

    pub fn se_d_slice(&self) -> Option<&[f64]> {
        self.se_d.as_deref()
    }

    pub fn l_hat_slice(&self) -> &[f64] {
        &self.l_hat
    }

    pub fn se_l_slice(&self) -> &[f64] {
        &self.se_l
    }
}

/// Local dissimilarities from summaries alone: the signed difference of
/// univariate estimates, or the squared distance with its inflation term in
/// the multivariate case.
pub fn local_dissimilarity(summaries: &[SiteSummary]) -> Result<(Vec<f64>, Vec<f64>), EngineError> {
    let l_sites = summaries.len();
    if l_sites < 2 {
        return Err(EngineError::InvalidSummary("need at least two sites".into()));
    }
    let q = summaries[0].dim();
    let univariate = summaries[0].sigma_hat.is_some();
    for s in summaries {
        if s.dim() != q || s.sigma_hat.is_some() != univariate {
            return Err(EngineError::InvalidSummary(
                "sites disagree on estimate dimension or mode".into(),
            ));
        }
    }
    let np = pair_count(l_sites);
    let mut l_hat = Vec::with_capacity(np);
    let mut se_l = Vec::with_capacity(np);
    for l in 0..l_sites {
        for k in l + 1..l_sites {
            let (sl, sk) = (&summaries[l], &summaries[k]);
            if univariate {
                let (bl, gl) = sl.scalar();
                let (bk, gk) = sk.scalar();
                l_hat.push(bl - bk);
                se_l.push((gl * gl + gk * gk).sqrt());
            } else {
                let diff = sub(&sl.beta_hat, &sk.beta_hat);
                let mut cov_sum = sl.omega_hat.clone().expect("multivariate summary");
                cov_sum.add_assign(sk.omega_hat.as_ref().expect("multivariate summary"));
                let quad = cov_sum.quadratic_form(&diff);
                let floor = 1.0 / sl.n.min(sk.n) as f64;
                l_hat.push(dot(&diff, &diff));
                se_l.push((4.0 * quad + floor).sqrt());
            }
        }
    }
    Ok((l_hat, se_l))
}

/// Evidence that two sites differ: the larger of the two standardized
/// dissimilarities, or the local one alone when no global component exists.
#[inline]
pub fn test_statistic(global: Option<(f64, f64)>, l_hat: f64, se_l: f64) -> f64 {
    let local = (l_hat / se_l).abs();
    match global {
        Some((d, se)) => (d / se).abs().max(local),
        None => local,
    }
}

/// Per-pair test statistics for a whole table.
pub fn statistic_table(table: &DissimilarityTable) -> Vec<f64> {
    let np = pair_count(table.l_sites);
    let mut out = Vec::with_capacity(np);
    for idx in 0..np {
        let global = table
            .d_hat_slice()
            .map(|d| (d[idx], table.se_d_slice().unwrap()[idx]));
        out.push(test_statistic(global, table.l_hat[idx], table.se_l[idx]));
    }
    out
}

/// Bonferroni-adjusted similarity threshold z_{0.05 / (2 L (L-1))}.
pub fn default_voting_threshold(l_sites: usize) -> f64 {
    let pairs2 = 2.0 * (l_sites * (l_sites - 1)) as f64;
    normal_quantile(SIMILARITY_LEVEL / pairs2).expect("valid probability")
}

/// Symmetric binary similarity decisions with unit diagonal, stored as
/// bitset rows for clique search.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VotingMatrix {
    pub l_sites: usize,
    rows: Vec<u64>,
}

impl VotingMatrix {
    pub fn get(&self, l: usize, k: usize) -> bool {
        self.rows[l] >> k & 1 == 1
    }

    /// Row bitsets including the diagonal bit.
    pub fn rows(&self) -> &[u64] {
        &self.rows
    }

    /// Adjacency masks with the self-bit cleared (for clique search).
    pub fn adjacency(&self) -> Vec<u64> {
        self.rows
            .iter()
            .enumerate()
            .map(|(i, r)| r & !(1u64 << i))
            .collect()
    }
}

/// Thresholds the statistics into a voting matrix (ties accept: S <= t).
pub fn build_voting_matrix(s_table: &[f64], l_sites: usize, threshold: f64) -> VotingMatrix {
    assert_eq!(s_table.len(), pair_count(l_sites));
    assert!(l_sites <= 64, "voting matrix limited to 64 sites");
    let mut rows = vec![0u64; l_sites];
    for l in 0..l_sites {
        rows[l] |= 1 << l;
    }
    let mut idx = 0;
    for l in 0..l_sites {
        for k in l + 1..l_sites {
            if s_table[idx] <= threshold {
                rows[l] |= 1 << k;
                rows[k] |= 1 << l;
            }
            idx += 1;
        }
    }
    VotingMatrix { l_sites, rows }
}

/// Sites whose row carries strictly more than fraction * L votes
/// (diagonal included). The classical majority rule is fraction = 1/2.
pub fn majority_vote_set_frac(h: &VotingMatrix, fraction: f64) -> Vec<usize> {
    let cut = fraction * h.l_sites as f64;
    (0..h.l_sites)
        .filter(|&l| h.rows[l].count_ones() as f64 > cut)
        .collect()
}

/// Sites receiving strictly more than half of the votes.
pub fn majority_vote_set(h: &VotingMatrix) -> Vec<usize> {
    majority_vote_set_frac(h, 0.5)
}

/// Largest fully connected site set; lexicographically smallest on ties.
pub fn maximum_clique(h: &VotingMatrix) -> Vec<usize> {
    clique::maximum_clique_lex(&h.adjacency(), h.l_sites)
}

/// Inverse-variance weighted point and standard error over a site set.
pub fn ivw_aggregate(summaries: &[SiteSummary], set: &[usize]) -> Result<(f64, f64), EngineError> {
    if set.is_empty() {
        return Err(EngineError::EmptySet);
    }
    let mut wsum = 0.0;
    let mut bsum = 0.0;
    for &l in set {
        let (b, s) = summaries[l].scalar();
        let w = 1.0 / (s * s);
        wsum += w;
        bsum += w * b;
    }
    Ok((bsum / wsum, wsum.sqrt().recip()))
}

/// Precision-weighted mean and combined precision over a site set.
pub fn ivw_aggregate_multi(
    summaries: &[SiteSummary],
    set: &[usize],
) -> Result<(Vec<f64>, Matrix), EngineError> {
    if set.is_empty() {
        return Err(EngineError::EmptySet);
    }
    let q = summaries[set[0]].dim();
    let mut precision = Matrix::zeros(q, q);
    let mut rhs = vec![0.0; q];
    for &l in set {
        let omega = summaries[l]
            .omega_hat
            .as_ref()
            .ok_or_else(|| EngineError::InvalidSummary("expected multivariate summary".into()))?;
        let inv = omega.inverse_spd()?;
        for (r, add) in rhs.iter_mut().zip(inv.matvec(&summaries[l].beta_hat)) {
            *r += add;
        }
        precision.add_assign(&inv);
    }
    let center = precision.cholesky_ridged()?.solve(&rhs);
    Ok((center, precision))
}

/// Wald interval for the IVW point over a fixed site set.
pub fn naive_ci(
    summaries: &[SiteSummary],
    set: &[usize],
    alpha: f64,
) -> Result<(f64, f64), EngineError> {
    let (point, se) = ivw_aggregate(summaries, set)?;
    let z = normal_quantile(alpha / 2.0)?;
    Ok((point - z * se, point + z * se))
}

/// The interval an oracle who knows the true prevailing set would report.
/// Simulation-only: identical code path to the naive interval.
pub fn oracle_ci(
    summaries: &[SiteSummary],
    true_set: &[usize],
    alpha: f64,
) -> Result<(f64, f64), EngineError> {
    naive_ci(summaries, true_set, alpha)
}
