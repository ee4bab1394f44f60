//! Rough per-replication cost and calibration probe for the simulation suites.

use std::time::Instant;

use rifl::engine::{self, TuningConfig};
use rifl::highdim::{
    self, dissimilarity_highdim, lasso_fit, pair_direction, projection, ProjectionTuning,
    SiteWorkspace, SplitSiteData,
};
use rifl::sim::{self, Scenario, ScenarioKind};
use rifl::stats::glm::Family;
use rifl::stats::linalg::norm2;
use rifl::stats::rng::RandomStream;

fn main() {
    let scenario = Scenario::new(ScenarioKind::HighDim, 1000, 1.0, 4, 7);
    let data_rng = RandomStream::substream(7 ^ 0xD474_0001, 0, 0);
    let sites = sim::gen_highdim(&scenario, &data_rng);

    let t_lasso = Instant::now();
    let mut splits = Vec::new();
    let mut fits = Vec::new();
    for (l, (x, y)) in sites.into_iter().enumerate() {
        let rng = RandomStream::substream(7 ^ 0x5714_0005, 0, l as u64);
        let split = SplitSiteData::split(x, y, Family::Linear, &rng).expect("split");
        let fit = lasso_fit(&split, None).expect("lasso");
        splits.push(split);
        fits.push(fit);
    }
    println!("lasso total: {:.2}s", t_lasso.elapsed().as_secs_f64());

    let tuning = ProjectionTuning::default();
    let t_ws = Instant::now();
    let workspaces: Vec<SiteWorkspace> = splits
        .iter()
        .zip(&fits)
        .map(|(s, f)| SiteWorkspace::new(s, f, &tuning).expect("workspace"))
        .collect();
    println!("workspaces: {:.2}s", t_ws.elapsed().as_secs_f64());

    let t_coord = Instant::now();
    let mut summaries = Vec::new();
    for (l, ws) in workspaces.iter().enumerate() {
        let (beta, se) = ws.debiased(10).expect("debias");
        println!("site {l}: beta {beta:.4} se {se:.4}");
        summaries.push(
            rifl::engine::SiteSummary::univariate(l, splits[l].n(), beta, se).expect("summary"),
        );
    }
    println!("coordinate debias total: {:.2}s", t_coord.elapsed().as_secs_f64());

    // Direct ladder diagnostics for a same-parameter pair and an outlier pair.
    for (l, k) in [(0usize, 1usize), (0, 6)] {
        let g = pair_direction(&fits[l], &fits[k]);
        let lam0 = tuning.lambda(200, splits[l].s2().len());
        let tau = tuning.tau(splits[l].s2().len());
        let t = Instant::now();
        let res = projection::solve_with_ladder(workspaces[l].solver_context(), &g, lam0, tau);
        let dt = t.elapsed().as_secs_f64();
        match res {
            Ok(r) => println!(
                "pair ({l},{k}): |g| {:.4} lambda0 {lam0:.4} -> used {:.4} (tau {tau:.2}) obj {:.5} in {dt:.2}s",
                norm2(&g),
                r.lambda_used,
                r.objective
            ),
            Err(e) => println!("pair ({l},{k}): |g| {:.4} -> error {e} in {dt:.2}s", norm2(&g)),
        }
    }

    let t_pairs = Instant::now();
    let l_sites = 10usize;
    let mut d_hat = Vec::new();
    let mut se_d = Vec::new();
    for l in 0..l_sites {
        for k in (l + 1)..l_sites {
            let g = pair_direction(&fits[l], &fits[k]);
            let bc_lk = workspaces[l].bias_for(&g).expect("bias lk");
            let bc_kl = workspaces[k].bias_for(&g).expect("bias kl");
            let (d, s) = dissimilarity_highdim(
                &fits[l],
                &fits[k],
                &bc_lk,
                &bc_kl,
                splits[l].n(),
                splits[k].n(),
            )
            .expect("dissimilarity");
            if k < 6 {
                println!(
                    "pair ({l},{k}): |g| {:.3} plug {:.4} delta_lk {:.4} delta_kl {:.4} v {:.5}/{:.5} d {:.4} se {:.4} stat {:.2}",
                    norm2(&g),
                    g.iter().map(|v| v * v).sum::<f64>(),
                    bc_lk.delta_hat,
                    bc_kl.delta_hat,
                    bc_lk.v_hat,
                    bc_kl.v_hat,
                    d,
                    s,
                    d / s
                );
            }
            d_hat.push(d);
            se_d.push(s);
        }
    }
    println!("all pair QPs: {:.2}s", t_pairs.elapsed().as_secs_f64());

    let (l_hat, se_l) = engine::local_dissimilarity(&summaries).expect("local");
    let table = engine::DissimilarityTable::new(l_sites, Some((d_hat, se_d)), (l_hat, se_l))
        .expect("table");
    let stats = engine::statistic_table(&table);
    let thr = engine::default_voting_threshold(l_sites);
    println!("threshold {thr:.3}");
    let mut idx = 0;
    for l in 0..l_sites {
        for k in (l + 1)..l_sites {
            if k < 6 || l >= 6 {
                print!("S({l},{k})={:.2} ", stats[idx]);
            }
            idx += 1;
        }
        if l < 6 {
            println!();
        }
    }
    println!();
    let h = engine::build_voting_matrix(&stats, l_sites, thr);
    println!("clique: {:?}", engine::maximum_clique(&h));
    println!("vote:   {:?}", engine::majority_vote_set(&h));

    let rng = RandomStream::substream(7 ^ 0x5EED_0002, 0, 0);
    let region = engine::rifl_confidence_region(&summaries, &table, &TuningConfig::default(), &rng)
        .expect("region");
    println!(
        "region: rho {:.3} retained {} unmet {} intervals {:?} len {:.3}",
        region.selected_rho,
        region.retained_count,
        region.rule_unmet,
        region.intervals,
        region.total_length()
    );
}
