//! Target-population treatment-effect estimation: exponential-tilt weights,
//! the doubly robust point estimate, and the influence-function variance.

use approx::assert_abs_diff_eq;
use rifl::ate::{
    ate_site_summaries, dr_estimate, estimate_site, fit_nuisances, fit_nuisances_warm,
    influence_variance, CausalSiteData, TargetSample,
};
use rifl::stats::glm::expit;
use rifl::stats::{Family, Matrix, RandomStream};

/// Simple synthetic site: linear outcome with slope effects, logistic
/// treatment assignment.
struct SiteSpec {
    n: usize,
    /// Treatment effect as a function of the first covariate.
    effect: fn(f64) -> f64,
    /// True outcome mean under control.
    control: fn(f64, f64) -> f64,
    /// True propensity.
    propensity: fn(f64, f64) -> f64,
}

fn generate_site(spec: &SiteSpec, rng: &mut RandomStream) -> CausalSiteData {
    let mut rows = Vec::with_capacity(spec.n);
    let mut a = Vec::with_capacity(spec.n);
    let mut y = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let x1 = rng.normal();
        let x2 = rng.normal();
        let treated = rng.bernoulli((spec.propensity)(x1, x2));
        let eps = rng.normal();
        let base = (spec.control)(x1, x2);
        let val = base + if treated { (spec.effect)(x1) } else { 0.0 } + eps;
        rows.push(vec![x1, x2]);
        a.push(if treated { 1.0 } else { 0.0 });
        y.push(val);
    }
    CausalSiteData::new(Matrix::from_rows(&rows), a, y).unwrap()
}

fn shifted_target(n: usize, shift: f64, rng: &mut RandomStream) -> TargetSample {
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| vec![shift + rng.normal(), rng.normal()])
        .collect();
    TargetSample::new(Matrix::from_rows(&rows)).unwrap()
}

// ---------------------------------------------------------------------------
// exponential tilt
// ---------------------------------------------------------------------------

#[test]
fn tilt_coefficients_match_reference_solution() {
    // Six fixed covariate values; the target basis mean is (1, 0.55).
    let xs = [-1.3, -0.4, 0.2, 0.7, 1.1, 1.9];
    let rows: Vec<Vec<f64>> = xs.iter().map(|&v| vec![v]).collect();
    let a = vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0];
    let y = vec![0.1, 0.9, -0.3, 1.2, 0.4, 1.8];
    let data = CausalSiteData::new(Matrix::from_rows(&rows), a, y).unwrap();
    let fits = fit_nuisances_warm(&data, &[1.0, 0.55], Family::Linear, None, None).unwrap();
    assert_abs_diff_eq!(fits.eta_hat[0], -0.0805348574475208, epsilon = 1e-8);
    assert_abs_diff_eq!(fits.eta_hat[1], 0.17545269136184297, epsilon = 1e-8);
    // Moment matching holds at the solution.
    let mut m0 = 0.0;
    let mut m1 = 0.0;
    for &v in &xs {
        let w = (fits.eta_hat[0] + fits.eta_hat[1] * v).exp();
        m0 += w / 6.0;
        m1 += w * v / 6.0;
    }
    assert_abs_diff_eq!(m0, 1.0, epsilon = 1e-9);
    assert_abs_diff_eq!(m1, 0.55, epsilon = 1e-9);
}

#[test]
fn matched_target_means_leave_weights_flat() {
    let mut rng = RandomStream::new(0xA7E, 0);
    let spec = SiteSpec {
        n: 2000,
        effect: |_| -1.0,
        control: |x1, x2| 1.0 + 0.5 * x1 - 0.25 * x2,
        propensity: |x1, x2| expit(0.3 * x1 - 0.3 * x2),
    };
    let data = generate_site(&spec, &mut rng);
    // Target basis mean = the site's own empirical basis mean.
    let own_target = TargetSample::new(data.x.clone()).unwrap();
    let fits = fit_nuisances(&data, &own_target, Family::Linear).unwrap();
    // The trivial tilt eta = 0 solves the moment equation exactly.
    for v in &fits.eta_hat {
        assert_abs_diff_eq!(*v, 0.0, epsilon = 1e-6);
    }
}

// ---------------------------------------------------------------------------
// doubly robust estimation
// ---------------------------------------------------------------------------

#[test]
fn recovers_constant_effect_with_all_models_correct() {
    let mut rng = RandomStream::new(0xD4, 1);
    let spec = SiteSpec {
        n: 4000,
        effect: |_| -1.0,
        control: |x1, x2| 1.0 + 0.5 * x1 - 0.25 * x2,
        propensity: |x1, x2| expit(0.3 * x1 - 0.3 * x2),
    };
    let data = generate_site(&spec, &mut rng);
    let target = shifted_target(20_000, 0.4, &mut rng);
    let (est, _) = estimate_site(&data, &target, Family::Linear, None, None).unwrap();
    let se = (est.v_hat / est.n as f64).sqrt();
    assert!(
        (est.theta_hat - (-1.0)).abs() <= 3.0 * se,
        "estimate {} (se {se})",
        est.theta_hat
    );
}

#[test]
fn transports_heterogeneous_effects_to_the_target_population() {
    // Effect -1 + 0.3 x1; target population shifts x1 by 0.4, so the target
    // effect is -1 + 0.12.
    let mut rng = RandomStream::new(0xD5, 2);
    let spec = SiteSpec {
        n: 6000,
        effect: |x1| -1.0 + 0.3 * x1,
        control: |x1, x2| 1.0 + 0.5 * x1 - 0.25 * x2,
        propensity: |x1, x2| expit(0.3 * x1 - 0.3 * x2),
    };
    let data = generate_site(&spec, &mut rng);
    let target = shifted_target(30_000, 0.4, &mut rng);
    let (est, _) = estimate_site(&data, &target, Family::Linear, None, None).unwrap();
    let se = (est.v_hat / est.n as f64).sqrt();
    assert!(
        (est.theta_hat - (-0.88)).abs() <= 4.0 * se,
        "estimate {} (se {se})",
        est.theta_hat
    );
}

#[test]
fn stays_consistent_when_the_outcome_model_is_wrong() {
    // Quadratic control surface fitted with a linear model: the tilt and
    // propensity are both within their model families, so the augmentation
    // removes the outcome-model bias.
    let mut rng = RandomStream::new(0xD6, 3);
    let spec = SiteSpec {
        n: 8000,
        effect: |_| -1.0,
        control: |x1, _| 1.0 + 0.5 * x1 * x1,
        propensity: |x1, x2| expit(0.3 * x1 - 0.3 * x2),
    };
    let data = generate_site(&spec, &mut rng);
    let target = shifted_target(30_000, 0.4, &mut rng);
    let (est, _) = estimate_site(&data, &target, Family::Linear, None, None).unwrap();
    let se = (est.v_hat / est.n as f64).sqrt();
    assert!(
        (est.theta_hat - (-1.0)).abs() <= 4.0 * se,
        "estimate {} (se {se})",
        est.theta_hat
    );
}

#[test]
fn stays_consistent_when_the_propensity_model_is_wrong() {
    // Propensity depends on x1^2 but is fitted on (1, x1, x2); the per-arm
    // outcome regressions are correctly specified, so the target-model mean
    // carries the estimate.
    let mut rng = RandomStream::new(0xD7, 4);
    let spec = SiteSpec {
        n: 8000,
        effect: |_| -1.0,
        control: |x1, x2| 1.0 + 0.5 * x1 - 0.25 * x2,
        propensity: |x1, _| expit(0.6 * x1 * x1 - 0.5),
    };
    let data = generate_site(&spec, &mut rng);
    let target = shifted_target(30_000, 0.4, &mut rng);
    let (est, _) = estimate_site(&data, &target, Family::Linear, None, None).unwrap();
    let se = (est.v_hat / est.n as f64).sqrt();
    assert!(
        (est.theta_hat - (-1.0)).abs() <= 4.0 * se,
        "estimate {} (se {se})",
        est.theta_hat
    );
}

#[test]
fn influence_variance_tracks_the_sampling_distribution() {
    // Ratio of the average influence-function standard error to the
    // empirical standard deviation over replications.
    let reps = 300;
    let n = 600;
    let mut points = Vec::with_capacity(reps);
    let mut se_sum = 0.0;
    let mut target_rng = RandomStream::new(0xF00D, 0);
    let target = shifted_target(20_000, 0.4, &mut target_rng);
    for rep in 0..reps {
        let mut rng = RandomStream::substream(0xF00D + 1, rep as u64, 0);
        let spec = SiteSpec {
            n,
            effect: |x1| -1.0 + 0.3 * x1,
            control: |x1, x2| 1.0 + 0.5 * x1 - 0.25 * x2,
            propensity: |x1, x2| expit(0.3 * x1 - 0.3 * x2),
        };
        let data = generate_site(&spec, &mut rng);
        let (est, _) = estimate_site(&data, &target, Family::Linear, None, None).unwrap();
        points.push(est.theta_hat);
        se_sum += (est.v_hat / est.n as f64).sqrt();
    }
    let mean = points.iter().sum::<f64>() / reps as f64;
    let sd = (points.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (reps - 1) as f64).sqrt();
    let ratio = (se_sum / reps as f64) / sd;
    assert!(
        (0.85..=1.15).contains(&ratio),
        "se/sd ratio {ratio} (sd {sd})"
    );
}

#[test]
fn warm_starts_reproduce_the_cold_solution() {
    let mut rng = RandomStream::new(0xAB, 5);
    let spec = SiteSpec {
        n: 1500,
        effect: |_| -1.0,
        control: |x1, x2| 1.0 + 0.5 * x1 - 0.25 * x2,
        propensity: |x1, x2| expit(0.3 * x1 - 0.3 * x2),
    };
    let data = generate_site(&spec, &mut rng);
    let target = shifted_target(5_000, 0.4, &mut rng);
    let (cold, fits) = estimate_site(&data, &target, Family::Linear, None, None).unwrap();
    let (warm, _) = estimate_site(
        &data,
        &target,
        Family::Linear,
        Some(&fits.alpha_hat),
        Some(&fits.eta_hat),
    )
    .unwrap();
    assert_abs_diff_eq!(cold.theta_hat, warm.theta_hat, epsilon = 1e-8);
    assert_abs_diff_eq!(cold.v_hat, warm.v_hat, epsilon = 1e-6);
}

#[test]
fn logistic_outcomes_stay_in_effect_bounds() {
    // Binary outcome: the treatment effect is a risk difference in [-1, 1].
    let mut rng = RandomStream::new(0xB0, 6);
    let n = 4000;
    let mut rows = Vec::with_capacity(n);
    let mut a = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let x1 = rng.normal();
        let x2 = rng.normal();
        let treated = rng.bernoulli(expit(0.3 * x1 - 0.3 * x2));
        let lift = if treated { 1.0 } else { 0.0 };
        let p = expit(-0.5 + 0.4 * x1 + lift);
        rows.push(vec![x1, x2]);
        a.push(if treated { 1.0 } else { 0.0 });
        y.push(if rng.bernoulli(p) { 1.0 } else { 0.0 });
    }
    let data = CausalSiteData::new(Matrix::from_rows(&rows), a, y).unwrap();
    let target = shifted_target(10_000, 0.2, &mut rng);
    let (est, fits) = estimate_site(&data, &target, Family::Logistic, None, None).unwrap();
    assert!(est.theta_hat > 0.0 && est.theta_hat < 1.0, "risk difference {}", est.theta_hat);
    assert!(est.v_hat > 0.0);
    // The augmentation itself must be a small correction here.
    let plug = dr_estimate(&data, &target, &fits, Family::Logistic).unwrap();
    assert_abs_diff_eq!(plug, est.theta_hat, epsilon = 1e-12);
    let v = influence_variance(&data, &target, &fits, Family::Logistic).unwrap();
    assert_abs_diff_eq!(v, est.v_hat, epsilon = 1e-12);
}

// ---------------------------------------------------------------------------
// multi-site wiring and validation
// ---------------------------------------------------------------------------

#[test]
fn site_summaries_and_table_cover_all_pairs() {
    let mut rng = RandomStream::new(0xC0FFEE, 0);
    let spec = SiteSpec {
        n: 700,
        effect: |_| -1.0,
        control: |x1, x2| 1.0 + 0.5 * x1 - 0.25 * x2,
        propensity: |x1, x2| expit(0.3 * x1 - 0.3 * x2),
    };
    let sites: Vec<CausalSiteData> = (0..4).map(|_| generate_site(&spec, &mut rng)).collect();
    let target = shifted_target(5_000, 0.4, &mut rng);
    let (summaries, table) = ate_site_summaries(&sites, &target, Family::Linear).unwrap();
    assert_eq!(summaries.len(), 4);
    assert!(!table.has_global());
    assert_eq!(table.l_hat_slice().len(), 6);
    for s in &summaries {
        assert!(s.sigma_hat.unwrap() > 0.0);
        assert_eq!(s.n, 700);
    }
    // Same generating law at every site: pairwise statistics stay moderate.
    let stats = rifl::engine::statistic_table(&table);
    assert!(stats.iter().all(|s| *s < 4.0), "stats {stats:?}");
}

#[test]
fn input_validation_rejects_malformed_sites() {
    let x = Matrix::from_rows(&[vec![0.0], vec![1.0], vec![2.0]]);
    // Non-binary treatment.
    assert!(CausalSiteData::new(x.clone(), vec![0.0, 0.5, 1.0], vec![0.0; 3]).is_err());
    // Single-arm data.
    assert!(CausalSiteData::new(x.clone(), vec![1.0, 1.0, 1.0], vec![0.0; 3]).is_err());
    // Length mismatch.
    assert!(CausalSiteData::new(x.clone(), vec![0.0, 1.0], vec![0.0; 3]).is_err());
    // Non-finite outcome.
    assert!(CausalSiteData::new(x, vec![0.0, 1.0, 0.0], vec![0.0, f64::NAN, 0.0]).is_err());
    // Empty target.
    assert!(TargetSample::new(Matrix::zeros(0, 2)).is_err());
    // Basis dimension mismatch.
    let xs = Matrix::from_rows(&[vec![0.0], vec![1.0], vec![2.0], vec![3.0], vec![-1.0], vec![0.5]]);
    let data = CausalSiteData::new(
        xs,
        vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0],
        vec![0.1, 0.9, -0.3, 1.2, 0.4, 1.8],
    )
    .unwrap();
    assert!(fit_nuisances_warm(&data, &[1.0, 0.0, 0.0], Family::Linear, None, None).is_err());
}
