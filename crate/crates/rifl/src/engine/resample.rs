//! Resampled copies of the dissimilarity tables and the data-driven choice
//! of the threshold-shrinkage factor rho.
//!
//! Each draw perturbs every dissimilarity by its own standard error; the
//! resampled test statistics divide by the ORIGINAL standard errors, so a
//! draw is one plausible re-realization of the observed evidence. rho is
//! grown along a grid until a target fraction of draws produce a
//! majority-size maximum clique.

use super::clique::max_clique_size;
use super::{pair_count, test_statistic, DissimilarityTable};
use crate::stats::{normal_quantile, KernelError, RandomStream};

/// One perturbed copy of all pairwise dissimilarities (numerators only; the
/// original standard errors stay in force).
#[derive(Debug, Clone)]
pub struct ResampleDraw {
    pub d_hat: Option<Vec<f64>>,
    pub l_hat: Vec<f64>,
}

/// Generates M independent draws. Draw m reads from `rng.derive(m)`, so the
/// set of draws is independent of evaluation order and stable under slicing
/// a longer run to a shorter one.
pub fn resample_dissimilarities(
    table: &DissimilarityTable,
    m_resamples: usize,
    rng: &RandomStream,
) -> Vec<ResampleDraw> {
    let np = pair_count(table.l_sites);
    (0..m_resamples)
        .map(|m| {
            let mut stream = rng.derive(m as u64);
            let mut d_hat = table.d_hat_slice().map(|_| Vec::with_capacity(np));
            let mut l_hat = Vec::with_capacity(np);
            for idx in 0..np {
                // Fixed draw order per pair: global first, then local.
                if let (Some(d), Some(se)) = (table.d_hat_slice(), table.se_d_slice()) {
                    d_hat
                        .as_mut()
                        .expect("global table present")
                        .push(d[idx] + se[idx] * stream.normal());
                }
                l_hat.push(table.l_hat_slice()[idx] + table.se_l_slice()[idx] * stream.normal());
            }
            ResampleDraw { d_hat, l_hat }
        })
        .collect()
}

/// Per-pair test statistics of one draw against the original errors.
pub fn draw_statistics(table: &DissimilarityTable, draw: &ResampleDraw) -> Vec<f64> {
    let np = pair_count(table.l_sites);
    let mut out = Vec::with_capacity(np);
    for idx in 0..np {
        let global = draw
            .d_hat
            .as_ref()
            .map(|d| (d[idx], table.se_d_slice().expect("se present")[idx]));
        out.push(test_statistic(
            global,
            draw.l_hat[idx],
            table.se_l_slice()[idx],
        ));
    }
    out
}

/// How far the best resampled copy can be expected to stray from the truth:
/// err = c*(nu) * (log n / M)^{1/(L(L-1))} with
/// c*(nu) = 2^{1/(L(L-1)) - 1/2} * sqrt(pi) * exp(z^2_{nu/(2L(L-1))} / 2).
pub fn sampling_accuracy(
    m_resamples: usize,
    nu: f64,
    l_sites: usize,
    n: usize,
) -> Result<f64, KernelError> {
    if l_sites < 2 {
        return Err(KernelError::Domain("need at least two sites".into()));
    }
    if !(nu > 0.0 && nu < 0.5) {
        return Err(KernelError::Domain(format!("nu must be in (0, 1/2), got {nu}")));
    }
    if n < 2 {
        return Err(KernelError::Domain("n must be at least 2".into()));
    }
    if m_resamples == 0 {
        return Err(KernelError::Domain("need at least one resample".into()));
    }
    let pairs = (l_sites * (l_sites - 1)) as f64;
    let expo = 1.0 / pairs;
    let z = normal_quantile(nu / (2.0 * pairs))?;
    let c_star = 2f64.powf(expo - 0.5) * std::f64::consts::PI.sqrt() * (z * z / 2.0).exp();
    Ok(c_star * ((n as f64).ln() / m_resamples as f64).powf(expo))
}

/// Outcome of the rho search, with enough per-draw detail for the region
/// construction to reuse.
#[derive(Debug, Clone)]
pub struct RhoSelection {
    pub rho: f64,
    /// Set when no grid value reaches the target retention fraction.
    pub rule_unmet: bool,
    /// Chosen index into the grid (last index when the rule is unmet).
    pub grid_index: usize,
    /// Per draw: smallest grid index whose threshold yields a majority-size
    /// clique, or None if even the largest grid value fails.
    pub min_feasible_index: Vec<Option<u32>>,
}

/// Smallest grid index at which the draw's clique clears the majority bar,
/// by binary search (adding edges never shrinks the maximum clique).
fn min_feasible(
    stats: &[f64],
    l_sites: usize,
    t_threshold: f64,
    grid: &[f64],
    majority_cut: f64,
) -> Option<u32> {
    let clique_ok = |rho: f64| -> bool {
        let threshold = rho * t_threshold;
        let mut adj = [0u64; 64];
        let mut idx = 0;
        for l in 0..l_sites {
            for k in l + 1..l_sites {
                if stats[idx] <= threshold {
                    adj[l] |= 1 << k;
                    adj[k] |= 1 << l;
                }
                idx += 1;
            }
        }
        let vertices = if l_sites == 64 { !0u64 } else { (1u64 << l_sites) - 1 };
        // Clique size counts the sites themselves, matching the vote count
        // convention (diagonal included).
        f64::from(max_clique_size(&adj[..l_sites], vertices)) > majority_cut
    };
    if !clique_ok(*grid.last().expect("nonempty grid")) {
        return None;
    }
    let (mut lo, mut hi) = (0usize, grid.len() - 1);
    while lo < hi {
        let mid = (lo + hi) / 2;
        if clique_ok(grid[mid]) {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    Some(lo as u32)
}

/// Grows rho along the grid until at least prop * M draws reach a
/// majority-size maximum clique.
pub fn select_rho_from_stats(
    per_draw_stats: &[Vec<f64>],
    l_sites: usize,
    t_threshold: f64,
    prop: f64,
    rho_grid: &[f64],
    majority_fraction: f64,
) -> RhoSelection {
    assert!(!rho_grid.is_empty(), "rho grid must be nonempty");
    let m = per_draw_stats.len();
    let cut = majority_fraction * l_sites as f64;
    let min_feasible_index: Vec<Option<u32>> = per_draw_stats
        .iter()
        .map(|stats| min_feasible(stats, l_sites, t_threshold, rho_grid, cut))
        .collect();
    let needed = ((prop * m as f64 - 1e-9).ceil() as usize).max(1);
    let mut hist = vec![0usize; rho_grid.len()];
    for idx in min_feasible_index.iter().flatten() {
        hist[*idx as usize] += 1;
    }
    let mut cum = 0usize;
    for (g, count) in hist.iter().enumerate() {
        cum += count;
        if cum >= needed {
            return RhoSelection {
                rho: rho_grid[g],
                rule_unmet: false,
                grid_index: g,
                min_feasible_index,
            };
        }
    }
    RhoSelection {
        rho: 1.0,
        rule_unmet: true,
        grid_index: rho_grid.len() - 1,
        min_feasible_index,
    }
}

/// Convenience wrapper over [`select_rho_from_stats`] that derives the
/// per-draw statistics from raw draws.
pub fn select_rho(
    draws: &[ResampleDraw],
    table: &DissimilarityTable,
    t_threshold: f64,
    prop: f64,
    rho_grid: &[f64],
    majority_fraction: f64,
) -> (f64, bool) {
    let stats: Vec<Vec<f64>> = draws.iter().map(|d| draw_statistics(table, d)).collect();
    let sel = select_rho_from_stats(
        &stats,
        table.l_sites,
        t_threshold,
        prop,
        rho_grid,
        majority_fraction,
    );
    (sel.rho, sel.rule_unmet)
}
