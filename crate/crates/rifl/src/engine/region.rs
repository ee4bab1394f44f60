//! The union confidence region.
//!
//! For each retained resampled draw, the majority-vote set defines a
//! candidate prevailing set and contributes its level-(alpha - nu) IVW
//! interval (or ellipsoid); the reported region is the union over retained
//! draws, so the selection uncertainty shows up as extra width instead of
//! silent undercoverage.

use super::resample::{
    draw_statistics, resample_dissimilarities, select_rho_from_stats, RhoSelection,
};
use super::{
    ivw_aggregate_multi, naive_ci, DissimilarityTable, EngineError, SiteSummary, VotingMatrix,
};
use crate::stats::linalg::Matrix;
use crate::stats::{chisq_quantile, normal_quantile, RandomStream};

/// Knobs of the resampling construction.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TuningConfig {
    pub alpha: f64,
    /// Budget spent on the resampling approximation; the per-draw intervals
    /// run at alpha - nu.
    pub nu: f64,
    pub m_resamples: usize,
    /// Target fraction of draws that must reach a majority-size clique.
    pub prop: f64,
    /// Vote share a site must strictly exceed (1/2 is the majority rule).
    pub majority_fraction: f64,
    /// Ascending shrinkage factors in (0, 1]; empty means the default
    /// 40-point geometric grid.
    pub rho_grid: Vec<f64>,
}

impl Default for TuningConfig {
    fn default() -> Self {
        let alpha = 0.05;
        TuningConfig {
            alpha,
            nu: alpha / 20.0,
            m_resamples: 500,
            prop: 0.10,
            majority_fraction: 0.5,
            rho_grid: Vec::new(),
        }
    }
}

impl TuningConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        if !(self.nu > 0.0 && self.nu < self.alpha && self.alpha < 1.0) {
            return Err(EngineError::InvalidTable(format!(
                "need 0 < nu < alpha < 1 (nu {}, alpha {})",
                self.nu, self.alpha
            )));
        }
        if !(self.prop > 0.0 && self.prop < 1.0) {
            return Err(EngineError::InvalidTable(format!(
                "prop must be in (0,1), got {}",
                self.prop
            )));
        }
        if !(self.majority_fraction > 0.0 && self.majority_fraction < 1.0) {
            return Err(EngineError::InvalidTable(format!(
                "majority fraction must be in (0,1), got {}",
                self.majority_fraction
            )));
        }
        if self.m_resamples == 0 {
            return Err(EngineError::InvalidTable("need at least one resample".into()));
        }
        if !self.rho_grid.is_empty()
            && (self.rho_grid.windows(2).any(|w| w[0] >= w[1])
                || self.rho_grid.iter().any(|r| !(*r > 0.0 && *r <= 1.0)))
        {
            return Err(EngineError::InvalidTable(
                "rho grid must be strictly increasing within (0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// Geometric grid of 40 shrinkage factors. The floor comes from the
/// sampling-accuracy constant at its start-small value c* = 1/12, the cap
/// is the unshrunk threshold (rho = 1).
pub fn default_rho_grid(l_sites: usize, n: usize, m_resamples: usize, nu: f64) -> Vec<f64> {
    let pairs = (l_sites * (l_sites - 1)) as f64;
    let t = normal_quantile(nu / (2.0 * pairs)).expect("valid nu");
    let floor = ((1.0 / 12.0) * ((n as f64).ln() / m_resamples as f64).powf(1.0 / pairs) / t)
        .clamp(1e-6, 1.0);
    if floor >= 1.0 {
        return vec![1.0];
    }
    const POINTS: usize = 40;
    let ratio = (1.0 / floor).powf(1.0 / (POINTS - 1) as f64);
    let mut grid: Vec<f64> = (0..POINTS).map(|i| floor * ratio.powi(i as i32)).collect();
    grid[POINTS - 1] = 1.0;
    grid
}

/// One candidate region in the multivariate mode:
/// (b - center)' precision (b - center) <= radius.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct Ellipsoid {
    pub center: Vec<f64>,
    pub precision: Matrix,
    pub radius: f64,
}

impl Ellipsoid {
    pub fn contains(&self, beta: &[f64]) -> bool {
        let diff: Vec<f64> = beta
            .iter()
            .zip(&self.center)
            .map(|(b, c)| b - c)
            .collect();
        self.precision.quadratic_form(&diff) <= self.radius
    }
}

/// Union confidence region with per-site generalizability scores.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ConfidenceRegion {
    /// Merged, sorted, disjoint segments (univariate mode).
    pub intervals: Vec<(f64, f64)>,
    /// Candidate ellipsoids, one per distinct retained vote set
    /// (multivariate mode).
    pub ellipsoids: Vec<Ellipsoid>,
    /// Number of retained draws |M|.
    pub retained_count: usize,
    /// p_hat_l: share of retained draws whose majority-vote set includes l.
    pub generalizability: Vec<f64>,
    /// Average of the union's extreme endpoints (univariate mode).
    pub midpoint: Option<f64>,
    pub selected_rho: f64,
    /// True when no grid value reached the target retention fraction and
    /// the construction fell back to rho = 1.
    pub rule_unmet: bool,
}

impl ConfidenceRegion {
    pub fn covers(&self, beta: f64) -> bool {
        self.intervals.iter().any(|(lo, hi)| *lo <= beta && beta <= *hi)
    }

    pub fn covers_point(&self, beta: &[f64]) -> bool {
        if beta.len() == 1 && !self.intervals.is_empty() {
            return self.covers(beta[0]);
        }
        self.ellipsoids.iter().any(|e| e.contains(beta))
    }

    /// Lebesgue measure of the union (univariate mode).
    pub fn total_length(&self) -> f64 {
        self.intervals.iter().map(|(lo, hi)| hi - lo).sum()
    }
}

fn merge_intervals(mut raw: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    raw.sort_by(|a, b| a.partial_cmp(b).expect("finite endpoints"));
    let mut merged: Vec<(f64, f64)> = Vec::with_capacity(raw.len());
    for (lo, hi) in raw {
        match merged.last_mut() {
            Some((_, cur_hi)) if lo <= *cur_hi => {
                if hi > *cur_hi {
                    *cur_hi = hi;
                }
            }
            _ => merged.push((lo, hi)),
        }
    }
    merged
}

fn is_univariate(summaries: &[SiteSummary]) -> Result<bool, EngineError> {
    let univariate = summaries[0].sigma_hat.is_some();
    for s in summaries {
        if s.sigma_hat.is_some() != univariate || (univariate && s.dim() != 1) {
            return Err(EngineError::InvalidSummary(
                "sites disagree on univariate/multivariate mode".into(),
            ));
        }
    }
    Ok(univariate)
}

/// Full construction: resample, tune rho, screen draws by the majority
/// rule, and take the union of the per-draw intervals.
pub fn rifl_confidence_region(
    summaries: &[SiteSummary],
    table: &DissimilarityTable,
    config: &TuningConfig,
    rng: &RandomStream,
) -> Result<ConfidenceRegion, EngineError> {
    let draws = resample_dissimilarities(table, config.m_resamples, rng);
    let stats: Vec<Vec<f64>> = draws.iter().map(|d| draw_statistics(table, d)).collect();
    region_from_stats(summaries, table, config, &stats)
}

/// Region construction from precomputed per-draw statistics. Exposed so
/// sweeps over (prop, M) can reuse one expensive set of draws: slicing the
/// statistics to a prefix is exactly a smaller-M run.
pub fn region_from_stats(
    summaries: &[SiteSummary],
    table: &DissimilarityTable,
    config: &TuningConfig,
    per_draw_stats: &[Vec<f64>],
) -> Result<ConfidenceRegion, EngineError> {
    config.validate()?;
    let l_sites = summaries.len();
    if l_sites < 3 {
        return Err(EngineError::InvalidSummary(
            "need at least three sites for majority voting".into(),
        ));
    }
    if table.l_sites != l_sites {
        return Err(EngineError::InvalidTable(
            "table size does not match summaries".into(),
        ));
    }
    let univariate = is_univariate(summaries)?;
    let m_resamples = per_draw_stats.len();
    let pairs = (l_sites * (l_sites - 1)) as f64;
    let t_threshold = normal_quantile(config.nu / (2.0 * pairs))?;
    let min_n = summaries.iter().map(|s| s.n).min().expect("nonempty");
    let grid_storage;
    let rho_grid: &[f64] = if config.rho_grid.is_empty() {
        grid_storage = default_rho_grid(l_sites, min_n, m_resamples, config.nu);
        &grid_storage
    } else {
        &config.rho_grid
    };

    let selection: RhoSelection = select_rho_from_stats(
        per_draw_stats,
        l_sites,
        t_threshold,
        config.prop,
        rho_grid,
        config.majority_fraction,
    );

    // A draw is retained iff its clique clears the bar at the selected rho,
    // i.e. its minimal feasible grid index is within the selection.
    let retained: Vec<usize> = selection
        .min_feasible_index
        .iter()
        .enumerate()
        .filter_map(|(m, idx)| match idx {
            Some(g) if *g as usize <= selection.grid_index => Some(m),
            _ => None,
        })
        .collect();
    if retained.is_empty() {
        let needed = ((config.prop * m_resamples as f64 - 1e-9).ceil() as usize).max(1);
        return Err(EngineError::MajorityRuleUnverifiable {
            retained_at_rho_one: selection
                .min_feasible_index
                .iter()
                .filter(|i| i.is_some())
                .count(),
            m_resamples,
            needed,
        });
    }

    let threshold = selection.rho * t_threshold;
    let mut vote_counts = vec![0usize; l_sites];
    let mut vote_masks: Vec<u64> = Vec::with_capacity(retained.len());
    let cut = config.majority_fraction * l_sites as f64;
    for &m in &retained {
        let h = super::build_voting_matrix(&per_draw_stats[m], l_sites, threshold);
        let mask = majority_mask(&h, cut);
        debug_assert!(mask != 0, "majority-size clique implies nonempty vote set");
        for (l, count) in vote_counts.iter_mut().enumerate() {
            if mask >> l & 1 == 1 {
                *count += 1;
            }
        }
        vote_masks.push(mask);
    }
    let generalizability: Vec<f64> = vote_counts
        .iter()
        .map(|c| *c as f64 / retained.len() as f64)
        .collect();

    // The interval depends on the draw only through its vote set.
    vote_masks.sort_unstable();
    vote_masks.dedup();
    let alpha1 = config.alpha - config.nu;
    let mut intervals = Vec::new();
    let mut ellipsoids = Vec::new();
    for mask in vote_masks {
        let set: Vec<usize> = (0..l_sites).filter(|l| mask >> l & 1 == 1).collect();
        if univariate {
            intervals.push(naive_ci(summaries, &set, alpha1)?);
        } else {
            let (center, precision) = ivw_aggregate_multi(summaries, &set)?;
            let radius = chisq_quantile(alpha1, summaries[0].dim() as u32, 0.0)?;
            ellipsoids.push(Ellipsoid {
                center,
                precision,
                radius,
            });
        }
    }
    let intervals = merge_intervals(intervals);
    let midpoint = if univariate {
        let lo = intervals.first().expect("retained nonempty").0;
        let hi = intervals.last().expect("retained nonempty").1;
        Some(0.5 * (lo + hi))
    } else {
        None
    };
    Ok(ConfidenceRegion {
        intervals,
        ellipsoids,
        retained_count: retained.len(),
        generalizability,
        midpoint,
        selected_rho: selection.rho,
        rule_unmet: selection.rule_unmet,
    })
}

fn majority_mask(h: &VotingMatrix, cut: f64) -> u64 {
    let mut mask = 0u64;
    for (l, row) in h.rows().iter().enumerate() {
        if row.count_ones() as f64 > cut {
            mask |= 1 << l;
        }
    }
    mask
}
