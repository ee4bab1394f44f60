//! Parametric site fits, delta-method functional summaries, and the squared
//! parameter-distance dissimilarity with its inflated standard error.

use approx::{assert_abs_diff_eq, assert_relative_eq};
use rifl::lowdim::{
    delta_method_summary, dissimilarity_lowdim, fit_parametric_site, Functional, LowDimError,
    ParametricSiteFit,
};
use rifl::stats::glm::expit;
use rifl::stats::linalg::dot;
use rifl::stats::{Family, Matrix, RandomStream};

fn fit_with(theta: Vec<f64>, c: Matrix, n: usize) -> ParametricSiteFit {
    ParametricSiteFit {
        theta_hat: theta,
        c_hat: c,
        n,
    }
}

// ---------------------------------------------------------------------------
// delta-method summaries
// ---------------------------------------------------------------------------

#[test]
fn coordinate_functional_reads_one_entry() {
    let fit = fit_with(vec![0.7, -0.3], Matrix::identity(2), 100);
    let s = delta_method_summary(&fit, &Functional::Coordinate(1), 3).unwrap();
    assert_eq!(s.site_id, 3);
    assert_eq!(s.n, 100);
    assert_abs_diff_eq!(s.beta_hat[0], -0.3, epsilon = 1e-15);
    assert_abs_diff_eq!(s.sigma_hat.unwrap(), 0.1, epsilon = 1e-15);
}

#[test]
fn linear_functional_propagates_the_gradient() {
    let fit = fit_with(vec![0.25, 0.5], Matrix::identity(2), 400);
    let s = delta_method_summary(&fit, &Functional::Linear(vec![1.0, 1.0]), 0).unwrap();
    assert_abs_diff_eq!(s.beta_hat[0], 0.75, epsilon = 1e-15);
    // sqrt(2 / 400) = sqrt(2)/20.
    assert_abs_diff_eq!(s.sigma_hat.unwrap(), 2f64.sqrt() / 20.0, epsilon = 1e-15);
}

#[test]
fn squared_norm_functional_doubles_the_gradient() {
    let fit = fit_with(vec![1.0, 0.0], Matrix::identity(2), 100);
    let s = delta_method_summary(&fit, &Functional::QuadraticNorm, 0).unwrap();
    assert_abs_diff_eq!(s.beta_hat[0], 1.0, epsilon = 1e-15);
    // gradient (2, 0): sigma = 2 * 0.1.
    assert_abs_diff_eq!(s.sigma_hat.unwrap(), 0.2, epsilon = 1e-15);
}

#[test]
fn zero_gradient_is_rejected_as_degenerate() {
    let fit = fit_with(vec![0.0, 0.0], Matrix::identity(2), 100);
    assert!(matches!(
        delta_method_summary(&fit, &Functional::QuadraticNorm, 0),
        Err(LowDimError::DegenerateFunctional)
    ));
    let zero_dir = Functional::Linear(vec![0.0, 0.0]);
    assert!(matches!(
        delta_method_summary(&fit, &zero_dir, 0),
        Err(LowDimError::DegenerateFunctional)
    ));
}

#[test]
fn subvector_functional_yields_multivariate_summary() {
    let mut c = Matrix::identity(3);
    c.set(1, 2, 0.3);
    c.set(2, 1, 0.3);
    let fit = fit_with(vec![0.1, 0.5, -0.5], c, 25);
    let s = delta_method_summary(&fit, &Functional::Subvector(vec![1, 2]), 0).unwrap();
    assert_eq!(s.beta_hat, vec![0.5, -0.5]);
    let omega = s.omega_hat.as_ref().unwrap();
    assert_abs_diff_eq!(omega.get(0, 0), 1.0 / 25.0, epsilon = 1e-15);
    assert_abs_diff_eq!(omega.get(0, 1), 0.3 / 25.0, epsilon = 1e-15);
    assert!(s.sigma_hat.is_none());
    // Out-of-range coordinate.
    assert!(matches!(
        delta_method_summary(&fit, &Functional::Subvector(vec![0, 9]), 0),
        Err(LowDimError::DimensionMismatch)
    ));
}

#[test]
fn functional_gradients_match_finite_differences() {
    let mut rng = RandomStream::new(0xF1D, 0);
    let functionals = [
        Functional::Coordinate(2),
        Functional::Linear(vec![0.3, -1.1, 0.8, 0.2]),
        Functional::QuadraticNorm,
    ];
    for _ in 0..20 {
        let theta: Vec<f64> = (0..4).map(|_| rng.normal()).collect();
        if dot(&theta, &theta).sqrt() < 0.2 {
            continue; // keep the quadratic norm's gradient well away from zero
        }
        for g in &functionals {
            // Central finite differences of g.value as the oracle.
            let h = 1e-6;
            let mut fd = vec![0.0; 4];
            for j in 0..4 {
                let mut up = theta.clone();
                up[j] += h;
                let mut dn = theta.clone();
                dn[j] -= h;
                fd[j] = (g.value(&up) - g.value(&dn)) / (2.0 * h);
            }
            // Recover the implied gradient from the delta-method variance
            // against probe covariance matrices: with C = I the variance is
            // |grad|^2 / n; probing with C = I + e_j e_j' adds grad_j^2 / n.
            let n = 100usize;
            let fit = fit_with(theta.clone(), Matrix::identity(4), n);
            let base = delta_method_summary(&fit, g, 0).unwrap();
            let base_var = base.sigma_hat.unwrap().powi(2) * n as f64;
            for j in 0..4 {
                let mut c = Matrix::identity(4);
                c.set(j, j, 2.0);
                let probe = fit_with(theta.clone(), c, n);
                let var = delta_method_summary(&probe, g, 0)
                    .unwrap()
                    .sigma_hat
                    .unwrap()
                    .powi(2)
                    * n as f64;
                let grad_sq = var - base_var;
                assert_relative_eq!(grad_sq, fd[j] * fd[j], max_relative = 1e-5, epsilon = 1e-9);
            }
            assert_relative_eq!(
                base_var,
                dot(&fd, &fd),
                max_relative = 1e-5,
                epsilon = 1e-9
            );
        }
    }
}

// ---------------------------------------------------------------------------
// parameter-distance dissimilarity
// ---------------------------------------------------------------------------

#[test]
fn identical_fits_leave_only_the_sample_size_floor() {
    let fit_l = fit_with(vec![0.4, -0.2], Matrix::identity(2), 100);
    let fit_k = fit_with(vec![0.4, -0.2], Matrix::identity(2), 400);
    let (d, se) = dissimilarity_lowdim(&fit_l, &fit_k).unwrap();
    assert_abs_diff_eq!(d, 0.0, epsilon = 1e-15);
    assert_abs_diff_eq!(se, 0.1, epsilon = 1e-15); // sqrt(1/min(100, 400))
}

#[test]
fn unit_difference_hand_case() {
    let fit_l = fit_with(vec![1.0, 0.0], Matrix::identity(2), 100);
    let fit_k = fit_with(vec![0.0, 0.0], Matrix::identity(2), 100);
    let (d, se) = dissimilarity_lowdim(&fit_l, &fit_k).unwrap();
    assert_abs_diff_eq!(d, 1.0, epsilon = 1e-15);
    // sqrt(4/100 + 4/100 + 1/100) = 0.3.
    assert_abs_diff_eq!(se, 0.3, epsilon = 1e-15);
}

#[test]
fn dissimilarity_is_symmetric_and_nonnegative() {
    let mut rng = RandomStream::new(0xD15, 1);
    for _ in 0..50 {
        let ta: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
        let tb: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
        let mut ca = Matrix::identity(3);
        let mut cb = Matrix::identity(3);
        for j in 0..3 {
            ca.set(j, j, 0.5 + rng.uniform());
            cb.set(j, j, 0.5 + rng.uniform());
        }
        let na = 50 + rng.below(200);
        let nb = 50 + rng.below(200);
        let fa = fit_with(ta, ca, na);
        let fb = fit_with(tb, cb, nb);
        let (d_ab, se_ab) = dissimilarity_lowdim(&fa, &fb).unwrap();
        let (d_ba, se_ba) = dissimilarity_lowdim(&fb, &fa).unwrap();
        assert_eq!(d_ab, d_ba);
        assert_eq!(se_ab, se_ba);
        assert!(d_ab >= 0.0);
        assert!(se_ab >= (1.0 / na.min(nb) as f64).sqrt());
    }
}

#[test]
fn dimension_mismatch_is_rejected() {
    let fa = fit_with(vec![0.0, 0.0], Matrix::identity(2), 10);
    let fb = fit_with(vec![0.0, 0.0, 0.0], Matrix::identity(3), 10);
    assert!(matches!(
        dissimilarity_lowdim(&fa, &fb),
        Err(LowDimError::DimensionMismatch)
    ));
}

#[test]
fn submodel_projects_estimate_and_covariance_together() {
    let mut c = Matrix::identity(4);
    c.set(0, 2, 0.7);
    c.set(2, 0, 0.7);
    c.set(1, 3, -0.2);
    c.set(3, 1, -0.2);
    let fit = fit_with(vec![1.0, 2.0, 3.0, 4.0], c, 60);
    let sub = fit.submodel(&[0, 2]);
    assert_eq!(sub.theta_hat, vec![1.0, 3.0]);
    assert_eq!(sub.n, 60);
    assert_abs_diff_eq!(sub.c_hat.get(0, 1), 0.7, epsilon = 1e-15);
    assert_abs_diff_eq!(sub.c_hat.get(1, 0), 0.7, epsilon = 1e-15);
    assert_abs_diff_eq!(sub.c_hat.get(0, 0), 1.0, epsilon = 1e-15);
}

// ---------------------------------------------------------------------------
// statistical behavior of the fitted pipeline
// ---------------------------------------------------------------------------

#[test]
fn logistic_pipeline_recovers_slope_within_sampling_error() {
    // One site: fit, summarize the first slope, check the estimate and that
    // the delta-method error bars are honest for the known truth.
    let mut rng = RandomStream::new(0x10D, 2);
    let n = 20_000;
    let theta_star = [0.2, 0.5, -0.4];
    let mut rows = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let row = vec![1.0, rng.normal(), rng.normal()];
        let p = expit(dot(&row, &theta_star));
        y.push(if rng.bernoulli(p) { 1.0 } else { 0.0 });
        rows.push(row);
    }
    let x = Matrix::from_rows(&rows);
    let fit = fit_parametric_site(&x, &y, Family::Logistic).unwrap();
    assert_eq!(fit.n, n);
    let s = delta_method_summary(&fit, &Functional::Coordinate(1), 0).unwrap();
    let se = s.sigma_hat.unwrap();
    assert!(
        (s.beta_hat[0] - 0.5).abs() <= 3.0 * se,
        "slope {} too far from truth (se {se})",
        s.beta_hat[0]
    );
}

#[test]
fn equal_sites_produce_calibrated_distance_tests() {
    // Two sites drawn from one logistic model: the standardized distance
    // |D - 0| / SE must exceed the upper-0.05 normal quantile in at most
    // 0.05 + 0.02 of replications (the distance is biased downward, so the
    // one-sided exceedance is conservative by construction).
    let reps = 2000;
    let z_alpha = 1.6448536269514727149;
    let n = 300;
    let theta_star = [0.1, 0.6, -0.3];
    let mut exceed = 0;
    for rep in 0..reps {
        let mut rng = RandomStream::substream(0xCA1B, rep, 0);
        let mut fits = Vec::with_capacity(2);
        for _ in 0..2 {
            let mut rows = Vec::with_capacity(n);
            let mut y = Vec::with_capacity(n);
            for _ in 0..n {
                let row = vec![1.0, rng.normal(), rng.normal()];
                let p = expit(dot(&row, &theta_star));
                y.push(if rng.bernoulli(p) { 1.0 } else { 0.0 });
                rows.push(row);
            }
            let x = Matrix::from_rows(&rows);
            fits.push(fit_parametric_site(&x, &y, Family::Logistic).unwrap());
        }
        // Compare slope coordinates only, dropping the intercept.
        let (d, se) = dissimilarity_lowdim(&fits[0].submodel(&[1, 2]), &fits[1].submodel(&[1, 2]))
            .unwrap();
        if d / se >= z_alpha {
            exceed += 1;
        }
    }
    let rate = exceed as f64 / reps as f64;
    assert!(rate <= 0.07, "exceedance rate {rate} too high");
}
