//! Data-generating processes for the three simulation studies: a
//! ten-site logistic benchmark with a low-dimensional parameter, a
//! high-dimensional sparse linear benchmark, and a target-population
//! treatment-effect benchmark with site-shifted covariates.

use serde::{Deserialize, Serialize};

use crate::ate::{AteError, CausalSiteData, TargetSample};
use crate::stats::glm::expit;
use crate::stats::linalg::Matrix;
use crate::stats::rng::RandomStream;

/// Which study a scenario draws from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioKind {
    LowDim,
    HighDim,
    Ate,
}

impl ScenarioKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ScenarioKind::LowDim => "lowdim",
            ScenarioKind::HighDim => "highdim",
            ScenarioKind::Ate => "ate",
        }
    }

    pub fn parse(s: &str) -> Option<ScenarioKind> {
        match s {
            "lowdim" => Some(ScenarioKind::LowDim),
            "highdim" => Some(ScenarioKind::HighDim),
            "ate" => Some(ScenarioKind::Ate),
            _ => None,
        }
    }
}

/// One simulation configuration. All three studies use ten sites; the
/// majority size selects between the 6-majority design and its 8-majority
/// variant, and `separation` scales how far the non-majority sites drift.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub kind: ScenarioKind,
    pub l_sites: usize,
    pub majority_size: usize,
    /// Per-site sample size.
    pub n: usize,
    /// Covariate dimension (10 for lowdim/ate; configurable for highdim).
    pub dim: usize,
    /// Separation level `a`; experiments use 1..=5.
    pub separation: f64,
    pub replications: usize,
    pub seed: u64,
}

impl Scenario {
    /// Standard scenario with the study's default dimensions.
    pub fn new(
        kind: ScenarioKind,
        n: usize,
        separation: f64,
        replications: usize,
        seed: u64,
    ) -> Scenario {
        let dim = match kind {
            ScenarioKind::LowDim | ScenarioKind::Ate => 10,
            ScenarioKind::HighDim => 200,
        };
        Scenario {
            kind,
            l_sites: 10,
            majority_size: 6,
            n,
            dim,
            separation,
            replications,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.l_sites != 10 {
            return Err("the study designs pin ten sites".into());
        }
        if self.majority_size != 6 && self.majority_size != 8 {
            return Err("majority size must be 6 or 8".into());
        }
        if 2 * self.majority_size <= self.l_sites {
            return Err("majority size must exceed half the sites".into());
        }
        match self.kind {
            ScenarioKind::LowDim | ScenarioKind::Ate => {
                if self.dim != 10 {
                    return Err("lowdim/ate designs use exactly 10 covariates".into());
                }
            }
            ScenarioKind::HighDim => {
                if self.dim < 12 {
                    return Err("highdim design needs at least 12 covariates".into());
                }
            }
        }
        if self.n < 40 {
            return Err("need at least 40 observations per site".into());
        }
        if !(self.separation >= 1.0 && self.separation.is_finite()) {
            return Err("separation level must be at least 1".into());
        }
        if self.replications == 0 {
            return Err("need at least one replication".into());
        }
        Ok(())
    }

    /// Sites carrying the prevailing parameter, in listed order.
    pub fn majority_sites(&self) -> Vec<usize> {
        (0..self.majority_size).collect()
    }
}

/// The target value each study's confidence intervals are judged against.
pub fn true_target_value(scenario: &Scenario) -> f64 {
    match scenario.kind {
        // First slope coordinate of the prevailing logistic model.
        ScenarioKind::LowDim => 0.5,
        // Eleventh coordinate: 0.1 * 11 - 0.6.
        ScenarioKind::HighDim => 0.5,
        // Constant additive treatment effect of the majority sites.
        ScenarioKind::Ate => -1.0,
    }
}

/// Stationary AR(1) row sampler. The correlation matrix rho^{|j-k|} has a
/// lower-bidiagonal Cholesky factor, so one factorization fixed at scenario
/// construction yields O(d) sampling per row:
/// x_1 = z_1, x_j = rho x_{j-1} + sqrt(1 - rho^2) z_j.
#[derive(Debug, Clone, Copy)]
pub struct Ar1Sampler {
    rho: f64,
    innovation: f64,
    scale: f64,
}

impl Ar1Sampler {
    /// `scale` multiplies the whole vector, so the covariance is
    /// scale^2 * rho^{|j-k|}.
    pub fn new(rho: f64, scale: f64) -> Ar1Sampler {
        assert!(rho.abs() < 1.0, "AR(1) needs |rho| < 1");
        Ar1Sampler {
            rho,
            innovation: (1.0 - rho * rho).sqrt(),
            scale,
        }
    }

    pub fn fill(&self, rng: &mut RandomStream, row: &mut [f64]) {
        if row.is_empty() {
            return;
        }
        let mut prev = rng.normal();
        row[0] = self.scale * prev;
        for slot in row.iter_mut().skip(1) {
            prev = self.rho * prev + self.innovation * rng.normal();
            *slot = self.scale * prev;
        }
    }

    pub fn sample_matrix(&self, rng: &mut RandomStream, rows: usize, cols: usize) -> Matrix {
        let mut x = Matrix::zeros(rows, cols);
        let mut buf = vec![0.0; cols];
        for i in 0..rows {
            self.fill(rng, &mut buf);
            for (j, v) in buf.iter().enumerate() {
                x.set(i, j, *v);
            }
        }
        x
    }
}

const AR_RHO: f64 = 0.6;

/// Per-site logistic intercepts, shared by the lowdim and ate studies.
pub const STUDY_INTERCEPTS: [f64; 10] =
    [0.05, -0.05, 0.1, -0.1, 0.05, -0.05, 0.1, -0.1, 0.0, 0.0];

/// Prevailing slope vector of the lowdim study (also the outcome slope of
/// the ate study).
pub const LOWDIM_SLOPES: [f64; 10] = [0.5, 0.5, 0.5, 0.5, 0.5, 0.1, 0.1, 0.1, 0.0, 0.0];

/// Per-site slope vectors for the lowdim study. Non-majority sites replace
/// all of the first five coordinates with a single drifted value.
pub fn lowdim_site_slopes(majority_size: usize, a: f64) -> Vec<Vec<f64>> {
    let base: Vec<f64> = LOWDIM_SLOPES.to_vec();
    let drift = [0.5 - 0.3 * a, 0.5 - 0.2 * a, 0.5 - 0.1 * a, 0.5 + 0.1 * a];
    let mut thetas = vec![base; 10];
    let assign = |theta: &mut Vec<f64>, value: f64| {
        for coord in theta.iter_mut().take(5) {
            *coord = value;
        }
    };
    if majority_size == 6 {
        for (offset, site) in (6..10).enumerate() {
            assign(&mut thetas[site], drift[offset]);
        }
    } else {
        // 8-majority variant: only the last two sites drift.
        assign(&mut thetas[8], drift[0]);
        assign(&mut thetas[9], drift[2]);
    }
    thetas
}

/// Per-site logistic data (covariates without intercept column, binary
/// outcomes). Sites are generated from independent derived streams.
pub fn gen_lowdim(scenario: &Scenario, rng: &RandomStream) -> Vec<(Matrix, Vec<f64>)> {
    let thetas = lowdim_site_slopes(scenario.majority_size, scenario.separation);
    let sampler = Ar1Sampler::new(AR_RHO, 1.0);
    (0..scenario.l_sites)
        .map(|l| {
            let mut r = rng.derive(l as u64 + 1);
            let x = sampler.sample_matrix(&mut r, scenario.n, scenario.dim);
            let mut y = Vec::with_capacity(scenario.n);
            for i in 0..scenario.n {
                let eta = STUDY_INTERCEPTS[l] + crate::stats::linalg::dot(x.row(i), &thetas[l]);
                y.push(if r.bernoulli(expit(eta)) { 1.0 } else { 0.0 });
            }
            (x, y)
        })
        .collect()
}

/// Per-site intercepts of the highdim study.
pub fn highdim_intercepts() -> [f64; 10] {
    let mut mu = [0.0; 10];
    for l in [0usize, 1, 2, 6, 8] {
        mu[l] = 0.05;
    }
    mu
}

/// Per-site slope vectors of the highdim study: the prevailing vector is
/// theta_j = 0.1 j - 0.6 on 1 <= j <= 11 (zero elsewhere), and non-majority
/// sites shift coordinates 6..=11 upward by an amount growing with `a`.
pub fn highdim_site_slopes(majority_size: usize, a: f64, dim: usize) -> Vec<Vec<f64>> {
    let mut base = vec![0.0; dim];
    for j in 1..=11usize {
        base[j - 1] = 0.1 * j as f64 - 0.6;
    }
    let mut thetas = vec![base; 10];
    let shift_a = 0.2 + 0.05 * a;
    let shift_b = 0.15 + 0.05 * a;
    let bump = |theta: &mut Vec<f64>, s: f64| {
        for j in 6..=11usize {
            theta[j - 1] += s;
        }
    };
    if majority_size == 6 {
        bump(&mut thetas[6], shift_a);
        bump(&mut thetas[7], shift_a);
        bump(&mut thetas[8], shift_b);
        bump(&mut thetas[9], shift_b);
    } else {
        bump(&mut thetas[8], shift_a);
        bump(&mut thetas[9], shift_b);
    }
    thetas
}

/// Per-site linear data for the sparse high-dimensional study. Covariates
/// are AR(0.6) with the covariance halved; noise is standard normal.
pub fn gen_highdim(scenario: &Scenario, rng: &RandomStream) -> Vec<(Matrix, Vec<f64>)> {
    let thetas = highdim_site_slopes(scenario.majority_size, scenario.separation, scenario.dim);
    let mu = highdim_intercepts();
    let sampler = Ar1Sampler::new(AR_RHO, 0.5f64.sqrt());
    (0..scenario.l_sites)
        .map(|l| {
            let mut r = rng.derive(l as u64 + 1);
            let x = sampler.sample_matrix(&mut r, scenario.n, scenario.dim);
            let mut y = Vec::with_capacity(scenario.n);
            for i in 0..scenario.n {
                let mean = mu[l] + crate::stats::linalg::dot(x.row(i), &thetas[l]);
                y.push(mean + r.normal());
            }
            (x, y)
        })
        .collect()
}

/// Per-site treatment effects of the ate study.
pub fn ate_site_effects(majority_size: usize, a: f64) -> [f64; 10] {
    let mut beta = [-1.0; 10];
    if majority_size == 6 {
        beta[6] = -1.0 - 0.2 * a;
        beta[7] = -1.0 - 0.2 * a;
        beta[8] = -1.0 - 0.1 * a;
        beta[9] = -1.0 - 0.1 * a;
    } else {
        beta[8] = -1.0 - 0.2 * a;
        beta[9] = -1.0 - 0.1 * a;
    }
    beta
}

/// Size of the fresh target covariate sample drawn each replication.
pub const TARGET_SAMPLE_SIZE: usize = 10_000;

/// Per-site causal data plus the shared target covariate sample. Half the
/// sites shift the covariate mean to (0.5, 0.5, 0, ..., 0); treatment is
/// assigned by a logistic rule with an interaction term, and the linear
/// outcome carries a constant additive effect per site.
pub fn gen_ate(
    scenario: &Scenario,
    rng: &RandomStream,
) -> Result<(Vec<CausalSiteData>, TargetSample), AteError> {
    let betas = ate_site_effects(scenario.majority_size, scenario.separation);
    let zeta = LOWDIM_SLOPES;
    let sampler = Ar1Sampler::new(AR_RHO, 1.0);
    let shifted = [3usize, 4, 5, 7, 9];

    let mut sites = Vec::with_capacity(scenario.l_sites);
    for l in 0..scenario.l_sites {
        let mut r = rng.derive(l as u64 + 1);
        let mut x = sampler.sample_matrix(&mut r, scenario.n, scenario.dim);
        if shifted.contains(&l) {
            for i in 0..scenario.n {
                x.set(i, 0, x.get(i, 0) + 0.5);
                x.set(i, 1, x.get(i, 1) + 0.5);
            }
        }
        let mut a_vec = Vec::with_capacity(scenario.n);
        let mut y = Vec::with_capacity(scenario.n);
        for i in 0..scenario.n {
            let row = x.row(i);
            let p = expit(0.5 * row[0] - 0.5 * row[1] + 0.1 * row[0] * row[1]);
            let a_i = if r.bernoulli(p) { 1.0 } else { 0.0 };
            let mean = STUDY_INTERCEPTS[l]
                + crate::stats::linalg::dot(row, &zeta)
                + betas[l] * a_i;
            a_vec.push(a_i);
            y.push(mean + r.normal());
        }
        sites.push(CausalSiteData::new(x, a_vec, y)?);
    }

    let mut target_rng = rng.derive(0);
    let target_x = sampler.sample_matrix(&mut target_rng, TARGET_SAMPLE_SIZE, scenario.dim);
    let target = TargetSample::new(target_x)?;
    Ok((sites, target))
}
