//! Replication driver: generates study data, funnels it through the
//! matching application pipeline, runs the requested interval methods, and
//! aggregates coverage/length with Monte-Carlo standard errors.

pub mod dgp;

pub use dgp::{
    ate_site_effects, gen_ate, gen_highdim, gen_lowdim, highdim_intercepts, highdim_site_slopes,
    lowdim_site_slopes, true_target_value, Ar1Sampler, Scenario, ScenarioKind, LOWDIM_SLOPES,
    STUDY_INTERCEPTS, TARGET_SAMPLE_SIZE,
};

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ate::{self, CausalSiteData, NuisanceFits, TargetSample};
use crate::baselines::{self, SiteDataHandle};
use crate::engine::{
    self, DissimilarityTable, SiteSummary, TuningConfig,
};
use crate::highdim::{self, ProjectionTuning, SiteWorkspace, SplitSiteData};
use crate::lowdim::{self, Functional};
use crate::stats::glm::Family;
use crate::stats::linalg::Matrix;
use crate::stats::rng::RandomStream;

// Independent seed domains so the data, the resampling draws, the bootstrap
// draws, the subsample draws and the sample splits never share a stream.
const DATA_TAG: u64 = 0xD474_0001;
const RESAMPLE_TAG: u64 = 0x5EED_0002;
const BOOT_TAG: u64 = 0xB007_0003;
const MNB_TAG: u64 = 0x5B00_0004;
const SPLIT_TAG: u64 = 0x5714_0005;

/// Interval methods the driver can run on one replication.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Resampling-based union interval.
    Rifl,
    /// Median of site estimates with a parametric bootstrap SE.
    Median,
    /// m-out-of-n bootstrap percentile-root interval (raw-data scenarios).
    Mnb,
    /// Naive interval over the maximum agreement clique.
    Vmc,
    /// Naive interval over the majority-vote set.
    Vote,
    /// Bias-aware interval around the clique point (two-pass calibration).
    Oba,
    /// Naive interval over the true prevailing set (simulation-only).
    Oracle,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Rifl => "rifl",
            Method::Median => "median",
            Method::Mnb => "mnb",
            Method::Vmc => "vmc",
            Method::Vote => "vote",
            Method::Oba => "oba",
            Method::Oracle => "oracle",
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        match s {
            "rifl" => Some(Method::Rifl),
            "median" => Some(Method::Median),
            "mnb" => Some(Method::Mnb),
            "vmc" => Some(Method::Vmc),
            "vote" => Some(Method::Vote),
            "oba" => Some(Method::Oba),
            "oracle" => Some(Method::Oracle),
            _ => None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("invalid method request: {0}")]
    InvalidMethods(String),
    #[error("{failed} of {total} replications failed (cap {cap}): first failure: {first}")]
    TooManyFailures {
        failed: usize,
        total: usize,
        cap: usize,
        first: String,
    },
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Tuning knobs shared by every replication.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunOptions {
    pub alpha: f64,
    /// Resampling budget split; defaults to alpha / 20.
    pub nu: Option<f64>,
    pub m_resamples: usize,
    /// Target fraction of draws that must reach a majority-size clique.
    pub prop: f64,
    pub majority_fraction: f64,
    /// Parametric bootstrap draws for the median interval.
    pub bootstrap_reps: usize,
    /// Subsample replicates for the m-out-of-n interval.
    pub mnb_reps: usize,
    /// Subsample size exponent m = floor(n^upsilon).
    pub mnb_upsilon: f64,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            alpha: 0.05,
            nu: None,
            m_resamples: 500,
            prop: 0.10,
            majority_fraction: 0.5,
            bootstrap_reps: 500,
            mnb_reps: 500,
            mnb_upsilon: 0.8,
        }
    }
}

impl RunOptions {
    pub fn tuning(&self) -> TuningConfig {
        TuningConfig {
            alpha: self.alpha,
            nu: self.nu.unwrap_or(self.alpha / 20.0),
            m_resamples: self.m_resamples,
            prop: self.prop,
            majority_fraction: self.majority_fraction,
            rho_grid: Vec::new(),
        }
    }
}

/// One method's interval on one replication. `lo`/`hi` are the hull of the
/// (possibly disconnected) region; `length` is its Lebesgue measure.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IntervalRecord {
    pub method: String,
    pub lo: f64,
    pub hi: f64,
    pub length: f64,
    pub covered: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub rho: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RepRecord {
    pub rep: usize,
    pub intervals: Vec<IntervalRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub used_reps: usize,
    pub coverage: f64,
    /// Binomial Monte-Carlo standard error of the coverage estimate.
    pub mc_se: f64,
    pub avg_length: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub scenario: Scenario,
    pub alpha: f64,
    pub truth: f64,
    pub methods: Vec<MethodSummary>,
    pub failed_reps: usize,
    /// Deterministic failure messages, one per dropped replication.
    pub failures: Vec<String>,
    pub records: Vec<RepRecord>,
    /// Wall-clock time; excluded from the serialized report so identical
    /// scenario + seed produce identical bytes.
    #[serde(skip)]
    pub runtime_seconds: f64,
}

impl ExperimentReport {
    /// One row per method; stable column order (see README).
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "method,kind,l_sites,majority_size,n,dim,separation,replications,seed,\
             used_reps,coverage,mc_se,avg_length\n",
        );
        for m in &self.methods {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{:.6},{:.6},{:.6}",
                m.method,
                self.scenario.kind.as_str(),
                self.scenario.l_sites,
                self.scenario.majority_size,
                self.scenario.n,
                self.scenario.dim,
                self.scenario.separation,
                self.scenario.replications,
                self.scenario.seed,
                m.used_reps,
                m.coverage,
                m.mc_se,
                m.avg_length,
            );
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Writes `report.csv` and `report.json` under `dir`.
    pub fn write_files(&self, dir: &Path) -> Result<(PathBuf, PathBuf), std::io::Error> {
        std::fs::create_dir_all(dir)?;
        let csv_path = dir.join("report.csv");
        let json_path = dir.join("report.json");
        std::fs::write(&csv_path, self.to_csv())?;
        std::fs::write(&json_path, self.to_json())?;
        Ok((csv_path, json_path))
    }
}

fn rep_fail<E: std::fmt::Display>(rep: usize, stage: &str) -> impl Fn(E) -> String + '_ {
    move |e| format!("rep {rep}: {stage}: {e}")
}

/// Intercept-augmented design (1, X).
fn prepend_intercept(x: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(x.rows, x.cols + 1);
    for i in 0..x.rows {
        out.set(i, 0, 1.0);
        for j in 0..x.cols {
            out.set(i, j + 1, x.get(i, j));
        }
    }
    out
}

/// Deterministic per-replication summaries and dissimilarity table for the
/// logistic study: site-wise GLM fits, first-slope functional, and the
/// squared-distance global dissimilarity over slope coordinates.
pub fn build_lowdim_rep(
    scenario: &Scenario,
    rep: usize,
) -> Result<(Vec<SiteSummary>, DissimilarityTable), String> {
    let data_rng = RandomStream::substream(scenario.seed ^ DATA_TAG, rep as u64, 0);
    let sites = gen_lowdim(scenario, &data_rng);
    let slopes_keep: Vec<usize> = (1..=scenario.dim).collect();
    let mut summaries = Vec::with_capacity(sites.len());
    let mut slope_fits = Vec::with_capacity(sites.len());
    for (l, (x, y)) in sites.iter().enumerate() {
        let design = prepend_intercept(x);
        let fit = lowdim::fit_parametric_site(&design, y, Family::Logistic)
            .map_err(rep_fail(rep, &format!("site {l} fit")))?;
        summaries.push(
            lowdim::delta_method_summary(&fit, &Functional::Coordinate(1), l)
                .map_err(rep_fail(rep, &format!("site {l} summary")))?,
        );
        slope_fits.push(fit.submodel(&slopes_keep));
    }
    let np = engine::pair_count(scenario.l_sites);
    let mut d_hat = Vec::with_capacity(np);
    let mut se_d = Vec::with_capacity(np);
    for l in 0..scenario.l_sites {
        for k in l + 1..scenario.l_sites {
            let (d, se) = lowdim::dissimilarity_lowdim(&slope_fits[l], &slope_fits[k])
                .map_err(rep_fail(rep, &format!("pair ({l},{k})")))?;
            d_hat.push(d);
            se_d.push(se);
        }
    }
    let (l_hat, se_l) =
        engine::local_dissimilarity(&summaries).map_err(rep_fail(rep, "local table"))?;
    let table = DissimilarityTable::new(scenario.l_sites, Some((d_hat, se_d)), (l_hat, se_l))
        .map_err(rep_fail(rep, "table"))?;
    Ok((summaries, table))
}

/// Deterministic per-replication summaries and dissimilarity table for the
/// sparse linear study: split-and-refit lasso per site, debiased target
/// coordinate, and bias-corrected squared distances per pair.
pub fn build_highdim_rep(
    scenario: &Scenario,
    rep: usize,
) -> Result<(Vec<SiteSummary>, DissimilarityTable), String> {
    let data_rng = RandomStream::substream(scenario.seed ^ DATA_TAG, rep as u64, 0);
    let sites = gen_highdim(scenario, &data_rng);
    let target_coord = 10usize; // eleventh covariate coefficient

    let mut datas = Vec::with_capacity(sites.len());
    let mut fits = Vec::with_capacity(sites.len());
    let mut workspaces = Vec::with_capacity(sites.len());
    let mut summaries = Vec::with_capacity(sites.len());
    for (l, (x, y)) in sites.into_iter().enumerate() {
        let split_rng = RandomStream::substream(scenario.seed ^ SPLIT_TAG, rep as u64, l as u64);
        let data = SplitSiteData::split(x, y, Family::Linear, &split_rng)
            .map_err(rep_fail(rep, &format!("site {l} split")))?;
        let fit = highdim::lasso_fit(&data, None)
            .map_err(rep_fail(rep, &format!("site {l} lasso")))?;
        let ws = SiteWorkspace::new(&data, &fit, &ProjectionTuning::default())
            .map_err(rep_fail(rep, &format!("site {l} workspace")))?;
        let (beta, se) = ws
            .debiased(target_coord)
            .map_err(rep_fail(rep, &format!("site {l} debias")))?;
        summaries.push(
            SiteSummary::univariate(l, data.n(), beta, se)
                .map_err(rep_fail(rep, &format!("site {l} summary")))?,
        );
        datas.push(data);
        fits.push(fit);
        workspaces.push(ws);
    }

    let l_sites = scenario.l_sites;
    let mut d_hat = Vec::with_capacity(engine::pair_count(l_sites));
    let mut se_d = Vec::with_capacity(engine::pair_count(l_sites));
    for l in 0..l_sites {
        for k in l + 1..l_sites {
            let gamma = highdim::pair_direction(&fits[l], &fits[k]);
            let bc_lk = workspaces[l]
                .bias_for(&gamma)
                .map_err(rep_fail(rep, &format!("pair ({l},{k}) left side")))?;
            let bc_kl = workspaces[k]
                .bias_for(&gamma)
                .map_err(rep_fail(rep, &format!("pair ({l},{k}) right side")))?;
            let (d, se) = highdim::dissimilarity_highdim(
                &fits[l],
                &fits[k],
                &bc_lk,
                &bc_kl,
                datas[l].n(),
                datas[k].n(),
            )
            .map_err(rep_fail(rep, &format!("pair ({l},{k}) distance")))?;
            d_hat.push(d);
            se_d.push(se);
        }
    }
    let (l_hat, se_l) =
        engine::local_dissimilarity(&summaries).map_err(rep_fail(rep, "local table"))?;
    let table = DissimilarityTable::new(l_sites, Some((d_hat, se_d)), (l_hat, se_l))
        .map_err(rep_fail(rep, "table"))?;
    Ok((summaries, table))
}

/// Everything one causal replication produces; the raw sites and fitted
/// nuisances stay available for subsample refits with warm starts.
pub struct AteRep {
    pub summaries: Vec<SiteSummary>,
    pub table: DissimilarityTable,
    pub sites: Vec<CausalSiteData>,
    pub target: TargetSample,
    pub fits: Vec<NuisanceFits>,
}

pub fn build_ate_rep(scenario: &Scenario, rep: usize) -> Result<AteRep, String> {
    let data_rng = RandomStream::substream(scenario.seed ^ DATA_TAG, rep as u64, 0);
    let (sites, target) = gen_ate(scenario, &data_rng).map_err(rep_fail(rep, "datagen"))?;
    let mut summaries = Vec::with_capacity(sites.len());
    let mut fits = Vec::with_capacity(sites.len());
    for (l, site) in sites.iter().enumerate() {
        let (est, fit) = ate::estimate_site(site, &target, Family::Linear, None, None)
            .map_err(rep_fail(rep, &format!("site {l} estimate")))?;
        let sigma = (est.v_hat / est.n as f64).sqrt();
        summaries.push(
            SiteSummary::univariate(l, est.n, est.theta_hat, sigma)
                .map_err(rep_fail(rep, &format!("site {l} summary")))?,
        );
        fits.push(fit);
    }
    let (l_hat, se_l) =
        engine::local_dissimilarity(&summaries).map_err(rep_fail(rep, "local table"))?;
    let table = DissimilarityTable::new(scenario.l_sites, None, (l_hat, se_l))
        .map_err(rep_fail(rep, "table"))?;
    Ok(AteRep {
        summaries,
        table,
        sites,
        target,
        fits,
    })
}

/// Raw-data access for one causal site, with warm starts for the refits.
struct AteHandle<'a> {
    data: &'a CausalSiteData,
    target: &'a TargetSample,
    alpha_init: &'a [f64],
    eta_init: &'a [f64],
}

impl SiteDataHandle for AteHandle<'_> {
    fn n(&self) -> usize {
        self.data.n()
    }

    fn refit(&self, rows: &[usize]) -> Option<(f64, f64)> {
        let m = rows.len();
        if m == 0 {
            return None;
        }
        let dim = self.data.x.cols;
        let mut x = Matrix::zeros(m, dim);
        let mut a = Vec::with_capacity(m);
        let mut y = Vec::with_capacity(m);
        for (i, &r) in rows.iter().enumerate() {
            for j in 0..dim {
                x.set(i, j, self.data.x.get(r, j));
            }
            a.push(self.data.a[r]);
            y.push(self.data.y[r]);
        }
        let sub = CausalSiteData::new(x, a, y).ok()?;
        let (est, _) = ate::estimate_site(
            &sub,
            self.target,
            Family::Linear,
            Some(self.alpha_init),
            Some(self.eta_init),
        )
        .ok()?;
        let sigma = (est.v_hat / m as f64).sqrt();
        if !(sigma > 0.0) || !est.theta_hat.is_finite() {
            return None;
        }
        Some((est.theta_hat, sigma))
    }
}

fn finite_record(method: &str, lo: f64, hi: f64, truth: f64) -> IntervalRecord {
    IntervalRecord {
        method: method.to_string(),
        lo,
        hi,
        length: hi - lo,
        covered: lo <= truth && truth <= hi,
        rho: None,
    }
}

/// A degenerate (empty-set) outcome: counts as a miss of length zero.
fn empty_record(method: &str) -> IntervalRecord {
    IntervalRecord {
        method: method.to_string(),
        lo: 0.0,
        hi: 0.0,
        length: 0.0,
        covered: false,
        rho: None,
    }
}

struct RepOutcome {
    rep: usize,
    intervals: Vec<IntervalRecord>,
    /// Clique point and its plug-in SE, kept for the bias-aware second pass.
    oba_parts: Option<(f64, f64)>,
}

/// Runs every summary-level method of the request on one replication.
fn summary_method_records(
    scenario: &Scenario,
    methods: &[Method],
    opts: &RunOptions,
    rep: usize,
    truth: f64,
    summaries: &[SiteSummary],
    table: &DissimilarityTable,
) -> Result<(Vec<IntervalRecord>, Option<(f64, f64)>), String> {
    let mut records = Vec::with_capacity(methods.len());
    let mut oba_parts = None;
    for method in methods {
        match method {
            Method::Rifl => {
                let rng = RandomStream::substream(scenario.seed ^ RESAMPLE_TAG, rep as u64, 0);
                let region = engine::rifl_confidence_region(summaries, table, &opts.tuning(), &rng)
                    .map_err(rep_fail(rep, "rifl"))?;
                if region.intervals.is_empty() {
                    records.push(empty_record("rifl"));
                } else {
                    let lo = region.intervals.first().expect("nonempty").0;
                    let hi = region.intervals.last().expect("nonempty").1;
                    records.push(IntervalRecord {
                        method: "rifl".to_string(),
                        lo,
                        hi,
                        length: region.total_length(),
                        covered: region.covers(truth),
                        rho: Some(region.selected_rho),
                    });
                }
            }
            Method::Median => {
                let rng = RandomStream::substream(scenario.seed ^ BOOT_TAG, rep as u64, 0);
                let res = baselines::median_ci(summaries, opts.alpha, opts.bootstrap_reps, &rng)
                    .map_err(rep_fail(rep, "median"))?;
                records.push(finite_record("median", res.interval.0, res.interval.1, truth));
            }
            Method::Vmc => {
                let res = baselines::vmc_ci(summaries, table, opts.alpha)
                    .map_err(rep_fail(rep, "vmc"))?;
                records.push(finite_record("vmc", res.interval.0, res.interval.1, truth));
            }
            Method::Vote => {
                let stats = engine::statistic_table(table);
                let threshold = engine::default_voting_threshold(scenario.l_sites);
                let h = engine::build_voting_matrix(&stats, scenario.l_sites, threshold);
                let set = engine::majority_vote_set(&h);
                if set.is_empty() {
                    records.push(empty_record("vote"));
                } else {
                    let (lo, hi) = engine::naive_ci(summaries, &set, opts.alpha)
                        .map_err(rep_fail(rep, "vote"))?;
                    records.push(finite_record("vote", lo, hi, truth));
                }
            }
            Method::Oracle => {
                let set = scenario.majority_sites();
                let (lo, hi) = engine::naive_ci(summaries, &set, opts.alpha)
                    .map_err(rep_fail(rep, "oracle"))?;
                records.push(finite_record("oracle", lo, hi, truth));
            }
            Method::Oba => {
                let stats = engine::statistic_table(table);
                let threshold = engine::default_voting_threshold(scenario.l_sites);
                let h = engine::build_voting_matrix(&stats, scenario.l_sites, threshold);
                let clique = engine::maximum_clique(&h);
                let (point, se) = engine::ivw_aggregate(summaries, &clique)
                    .map_err(rep_fail(rep, "oba point"))?;
                oba_parts = Some((point, se));
            }
            // Needs raw rows; handled by the scenario-kind dispatcher.
            Method::Mnb => {}
        }
    }
    Ok((records, oba_parts))
}

fn run_rep(
    scenario: &Scenario,
    methods: &[Method],
    opts: &RunOptions,
    rep: usize,
    truth: f64,
) -> Result<RepOutcome, String> {
    match scenario.kind {
        ScenarioKind::LowDim => {
            let (summaries, table) = build_lowdim_rep(scenario, rep)?;
            let (intervals, oba_parts) =
                summary_method_records(scenario, methods, opts, rep, truth, &summaries, &table)?;
            Ok(RepOutcome { rep, intervals, oba_parts })
        }
        ScenarioKind::HighDim => {
            let (summaries, table) = build_highdim_rep(scenario, rep)?;
            let (intervals, oba_parts) =
                summary_method_records(scenario, methods, opts, rep, truth, &summaries, &table)?;
            Ok(RepOutcome { rep, intervals, oba_parts })
        }
        ScenarioKind::Ate => {
            let rep_data = build_ate_rep(scenario, rep)?;
            let (mut intervals, oba_parts) = summary_method_records(
                scenario,
                methods,
                opts,
                rep,
                truth,
                &rep_data.summaries,
                &rep_data.table,
            )?;
            if methods.contains(&Method::Mnb) {
                let handles: Vec<AteHandle> = rep_data
                    .sites
                    .iter()
                    .zip(&rep_data.fits)
                    .map(|(site, fit)| AteHandle {
                        data: site,
                        target: &rep_data.target,
                        alpha_init: &fit.alpha_hat,
                        eta_init: &fit.eta_hat,
                    })
                    .collect();
                let dyn_handles: Vec<&dyn SiteDataHandle> =
                    handles.iter().map(|h| h as &dyn SiteDataHandle).collect();
                let rng = RandomStream::substream(scenario.seed ^ MNB_TAG, rep as u64, 0);
                let res = baselines::mnb_ci(
                    &dyn_handles,
                    opts.alpha,
                    opts.mnb_upsilon,
                    opts.mnb_reps,
                    &rng,
                )
                .map_err(rep_fail(rep, "mnb"))?;
                intervals.push(finite_record("mnb", res.interval.0, res.interval.1, truth));
            }
            Ok(RepOutcome { rep, intervals, oba_parts })
        }
    }
}

fn failure_cap(replications: usize) -> usize {
    (0.02 * replications as f64).ceil() as usize
}

pub fn run_experiment(
    scenario: &Scenario,
    methods: &[Method],
) -> Result<ExperimentReport, SimError> {
    run_experiment_with(scenario, methods, &RunOptions::default())
}

pub fn run_experiment_with(
    scenario: &Scenario,
    methods: &[Method],
    opts: &RunOptions,
) -> Result<ExperimentReport, SimError> {
    scenario.validate().map_err(SimError::InvalidScenario)?;
    if methods.is_empty() {
        return Err(SimError::InvalidMethods("need at least one method".into()));
    }
    if methods.contains(&Method::Mnb) && scenario.kind != ScenarioKind::Ate {
        return Err(SimError::InvalidMethods(
            "the subsample bootstrap needs raw causal site data".into(),
        ));
    }
    let started = Instant::now();
    let truth = true_target_value(scenario);

    let outcomes: Vec<Result<RepOutcome, String>> = (0..scenario.replications)
        .into_par_iter()
        .map(|rep| run_rep(scenario, methods, opts, rep, truth))
        .collect();

    let mut records: Vec<RepOutcome> = Vec::with_capacity(scenario.replications);
    let mut failures = Vec::new();
    for outcome in outcomes {
        match outcome {
            Ok(o) => records.push(o),
            Err(msg) => failures.push(msg),
        }
    }
    let cap = failure_cap(scenario.replications);
    if failures.len() > cap || records.is_empty() {
        let first = failures.first().cloned().unwrap_or_else(|| "none".into());
        return Err(SimError::TooManyFailures {
            failed: failures.len(),
            total: scenario.replications,
            cap,
            first,
        });
    }

    // Bias-aware intervals calibrate against the run itself: the empirical
    // SD of the clique points rescales the per-rep plug-in SEs, and the
    // average point's distance to the truth supplies the bias input.
    if methods.contains(&Method::Oba) {
        let parts: Vec<(f64, f64)> = records
            .iter()
            .map(|r| r.oba_parts.expect("bias-aware parts recorded"))
            .collect();
        if parts.len() < 2 {
            return Err(SimError::InvalidMethods(
                "bias-aware intervals need at least two successful replications".into(),
            ));
        }
        let used = parts.len() as f64;
        let mean_point = parts.iter().map(|p| p.0).sum::<f64>() / used;
        let mean_se = parts.iter().map(|p| p.1).sum::<f64>() / used;
        let ese = (parts
            .iter()
            .map(|p| (p.0 - mean_point) * (p.0 - mean_point))
            .sum::<f64>()
            / (used - 1.0))
            .sqrt();
        let bias = (mean_point - truth).abs();
        let scale = ese / mean_se;
        for rec in &mut records {
            let (point, se) = rec.oba_parts.expect("bias-aware parts recorded");
            let res = baselines::oba_ci(point, scale * se, bias, opts.alpha)
                .map_err(|e| SimError::InvalidMethods(format!("bias-aware interval: {e}")))?;
            rec.intervals
                .push(finite_record("oba", res.interval.0, res.interval.1, truth));
        }
    }

    let mut summaries = Vec::with_capacity(methods.len());
    for method in methods {
        let name = method.name();
        let mut used = 0usize;
        let mut covered = 0usize;
        let mut total_length = 0.0;
        for rec in &records {
            for iv in rec.intervals.iter().filter(|iv| iv.method == name) {
                used += 1;
                covered += iv.covered as usize;
                total_length += iv.length;
            }
        }
        if used == 0 {
            return Err(SimError::InvalidMethods(format!(
                "method {name} produced no intervals"
            )));
        }
        let coverage = covered as f64 / used as f64;
        summaries.push(MethodSummary {
            method: name.to_string(),
            used_reps: used,
            coverage,
            mc_se: (coverage * (1.0 - coverage) / used as f64).sqrt(),
            avg_length: total_length / used as f64,
        });
    }

    Ok(ExperimentReport {
        scenario: scenario.clone(),
        alpha: opts.alpha,
        truth,
        methods: summaries,
        failed_reps: failures.len(),
        failures,
        records: records
            .into_iter()
            .map(|r| RepRecord { rep: r.rep, intervals: r.intervals })
            .collect(),
        runtime_seconds: started.elapsed().as_secs_f64(),
    })
}

/// One cell of the tuning sweep: a (retention fraction, draw count) pair
/// with the coverage and average union length it produced.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SensitivityCell {
    pub prop: f64,
    pub m_resamples: usize,
    pub used_reps: usize,
    pub coverage: f64,
    pub mc_se: f64,
    pub avg_length: f64,
}

pub fn sensitivity_csv(cells: &[SensitivityCell]) -> String {
    let mut out = String::from("prop,m_resamples,used_reps,coverage,mc_se,avg_length\n");
    for c in cells {
        let _ = writeln!(
            out,
            "{},{},{},{:.6},{:.6},{:.6}",
            c.prop, c.m_resamples, c.used_reps, c.coverage, c.mc_se, c.avg_length
        );
    }
    out
}

/// Sweeps the retention fraction and the draw count on a shared set of
/// resampling draws: each replication draws once at the largest requested
/// count, and every smaller count reuses a prefix of those statistics.
pub fn rho_sensitivity(
    scenario: &Scenario,
    props: &[f64],
    m_grid: &[usize],
    opts: &RunOptions,
) -> Result<Vec<SensitivityCell>, SimError> {
    scenario.validate().map_err(SimError::InvalidScenario)?;
    if props.is_empty() || props.iter().any(|p| !(*p > 0.0 && *p < 1.0)) {
        return Err(SimError::InvalidMethods(
            "retention fractions must lie in (0,1)".into(),
        ));
    }
    if m_grid.is_empty() || m_grid.iter().any(|m| *m == 0) {
        return Err(SimError::InvalidMethods("draw counts must be positive".into()));
    }
    let m_max = *m_grid.iter().max().expect("nonempty");
    let truth = true_target_value(scenario);

    let per_rep: Vec<Result<Vec<(bool, f64)>, String>> = (0..scenario.replications)
        .into_par_iter()
        .map(|rep| -> Result<Vec<(bool, f64)>, String> {
            let (summaries, table) = match scenario.kind {
                ScenarioKind::LowDim => build_lowdim_rep(scenario, rep)?,
                ScenarioKind::HighDim => build_highdim_rep(scenario, rep)?,
                ScenarioKind::Ate => {
                    let rep_data = build_ate_rep(scenario, rep)?;
                    (rep_data.summaries, rep_data.table)
                }
            };
            let rng = RandomStream::substream(scenario.seed ^ RESAMPLE_TAG, rep as u64, 0);
            let draws = engine::resample_dissimilarities(&table, m_max, &rng);
            let stats: Vec<Vec<f64>> = draws
                .iter()
                .map(|d| engine::draw_statistics(&table, d))
                .collect();
            let mut cells = Vec::with_capacity(m_grid.len() * props.len());
            for &m in m_grid {
                for &prop in props {
                    let mut cfg = opts.tuning();
                    cfg.prop = prop;
                    cfg.m_resamples = m;
                    let region =
                        engine::region_from_stats(&summaries, &table, &cfg, &stats[..m])
                            .map_err(rep_fail(rep, "sweep region"))?;
                    cells.push((region.covers(truth), region.total_length()));
                }
            }
            Ok(cells)
        })
        .collect();

    let mut ok_cells: Vec<Vec<(bool, f64)>> = Vec::with_capacity(scenario.replications);
    let mut failures = 0usize;
    let mut first_failure = String::from("none");
    for r in per_rep {
        match r {
            Ok(c) => ok_cells.push(c),
            Err(msg) => {
                if failures == 0 {
                    first_failure = msg;
                }
                failures += 1;
            }
        }
    }
    let cap = failure_cap(scenario.replications);
    if failures > cap || ok_cells.is_empty() {
        return Err(SimError::TooManyFailures {
            failed: failures,
            total: scenario.replications,
            cap,
            first: first_failure,
        });
    }

    let used = ok_cells.len();
    let mut out = Vec::with_capacity(m_grid.len() * props.len());
    let mut idx = 0usize;
    for &m in m_grid {
        for &prop in props {
            let covered = ok_cells.iter().filter(|c| c[idx].0).count();
            let total_length: f64 = ok_cells.iter().map(|c| c[idx].1).sum();
            let coverage = covered as f64 / used as f64;
            out.push(SensitivityCell {
                prop,
                m_resamples: m,
                used_reps: used,
                coverage,
                mc_se: (coverage * (1.0 - coverage) / used as f64).sqrt(),
                avg_length: total_length / used as f64,
            });
            idx += 1;
        }
    }
    Ok(out)
}
