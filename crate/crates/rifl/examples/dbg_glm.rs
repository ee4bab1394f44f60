use rifl::stats::glm::expit;
use rifl::stats::linalg::dot;
use rifl::stats::{irls_glm_fit, irls_glm_fit_from, Family, Matrix, RandomStream};

fn main() {
    let mut rng = RandomStream::new(60_2026, 0);
    let n = 2000;
    let theta_star = [0.2, 0.7, -0.5];
    let mut rows = Vec::with_capacity(n);
    let mut yv = Vec::with_capacity(n);
    for _ in 0..n {
        let z1 = rng.normal();
        let z2 = rng.normal();
        let x1 = 0.5 + z1;
        let x2 = -0.4 + 0.6 * z1 + 0.8 * z2;
        let row = vec![1.0, x1, x2];
        let p = expit(dot(&row, &theta_star));
        yv.push(if rng.bernoulli(p) { 1.0 } else { 0.0 });
        rows.push(row);
    }
    let x = Matrix::from_rows(&rows);
    let fit = irls_glm_fit(&x, &yv, Family::Logistic, None).unwrap();
    let b_reps = 500;
    let mut thetas = Vec::new();
    let mut boot_rng = RandomStream::new(60_2026, 1);
    for _ in 0..b_reps {
        let mut brows = Vec::with_capacity(n);
        let mut by = Vec::with_capacity(n);
        for _ in 0..n {
            let i = boot_rng.below(n);
            brows.push(rows[i].clone());
            by.push(yv[i]);
        }
        let bx = Matrix::from_rows(&brows);
        thetas.push(irls_glm_fit_from(&bx, &by, Family::Logistic, None, Some(&fit.theta)).unwrap().theta);
    }
    let mut mean = [0.0f64; 3];
    for t in &thetas { for j in 0..3 { mean[j] += t[j]; } }
    for m in &mut mean { *m /= b_reps as f64; }
    for i in 0..3 {
        for j in 0..3 {
            let mut c = 0.0;
            for t in &thetas { c += (t[i] - mean[i]) * (t[j] - mean[j]); }
            c *= n as f64 / (b_reps - 1) as f64;
            println!("({i},{j}) model {:+.5} boot {:+.5} ratio {:.4}", fit.cov_scaled.get(i, j), c, fit.cov_scaled.get(i, j) / c);
        }
    }
}
