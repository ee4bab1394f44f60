//! Voting-matrix construction, majority rule, exact maximum clique (checked
//! against an exhaustive search oracle), and inverse-variance aggregation.

use approx::assert_abs_diff_eq;
use rifl::engine::{
    build_voting_matrix, default_voting_threshold, ivw_aggregate, ivw_aggregate_multi,
    local_dissimilarity, majority_vote_set, majority_vote_set_frac, maximum_clique, naive_ci,
    pair_count, pair_index, statistic_table, test_statistic, DissimilarityTable, EngineError,
    SiteSummary, VotingMatrix,
};
use rifl::stats::{Matrix, RandomStream};

/// Builds a voting matrix straight from a 1-based edge list.
fn matrix_from_edges(l_sites: usize, edges: &[(usize, usize)]) -> VotingMatrix {
    let threshold = 1.0;
    let mut stats = vec![10.0; pair_count(l_sites)];
    for &(a, b) in edges {
        let (l, k) = (a.min(b) - 1, a.max(b) - 1);
        stats[pair_index(l_sites, l, k)] = 0.0;
    }
    build_voting_matrix(&stats, l_sites, threshold)
}

#[test]
fn voting_threshold_matches_bonferroni_quantile_for_ten_sites() {
    assert_abs_diff_eq!(
        default_voting_threshold(10),
        3.4524329373875770074,
        epsilon = 1e-10
    );
    // Two sites: z_{0.05/4}.
    assert_abs_diff_eq!(
        default_voting_threshold(2),
        rifl::stats::normal_quantile(0.05 / 4.0).unwrap(),
        epsilon = 1e-14
    );
}

#[test]
fn six_site_example_graph_votes_and_clique() {
    // Sites 1..6 with similarity edges 12,13,23,34,45,46,15,25,35: the
    // majority rule keeps 1-5, but only {1,2,3,5} is mutually similar.
    let h = matrix_from_edges(6, &[(1, 2), (1, 3), (2, 3), (3, 4), (4, 5), (4, 6), (1, 5), (2, 5), (3, 5)]);
    assert_eq!(majority_vote_set(&h), vec![0, 1, 2, 3, 4]);
    assert_eq!(maximum_clique(&h), vec![0, 1, 2, 4]);
}

#[test]
fn voting_matrix_is_symmetric_with_unit_diagonal() {
    let stats: Vec<f64> = (0..pair_count(7)).map(|i| i as f64 * 0.3).collect();
    let h = build_voting_matrix(&stats, 7, 1.0);
    for l in 0..7 {
        assert!(h.get(l, l), "diagonal bit missing at {l}");
        for k in 0..7 {
            assert_eq!(h.get(l, k), h.get(k, l), "asymmetric at ({l},{k})");
        }
    }
}

#[test]
fn threshold_ties_count_as_similar() {
    // Statistic exactly at the threshold keeps the edge.
    let h = build_voting_matrix(&[2.0, 2.0001, 1.0], 3, 2.0);
    assert!(h.get(0, 1));
    assert!(!h.get(0, 2));
    assert!(h.get(1, 2));
}

#[test]
fn isolated_sites_produce_empty_majority_set() {
    // No off-diagonal edges: every row holds exactly one vote, and 1 > 2 is
    // false, so nobody wins a majority of four sites.
    let stats = vec![99.0; pair_count(4)];
    let h = build_voting_matrix(&stats, 4, 1.0);
    assert!(majority_vote_set(&h).is_empty());
    // The clique of a fully disconnected graph is a single vertex.
    assert_eq!(maximum_clique(&h).len(), 1);
}

#[test]
fn majority_fraction_is_strict() {
    // Complete graph on sites 1-4: each of those rows holds 4 votes counting
    // the diagonal; sites 5 and 6 hold a single self-vote.
    let h = matrix_from_edges(6, &[(1, 2), (1, 3), (1, 4), (2, 3), (2, 4), (3, 4)]);
    // cut = 0.5 * 6 = 3: four votes clear it.
    assert_eq!(majority_vote_set_frac(&h, 0.5), vec![0, 1, 2, 3]);
    // cut = 4 exactly: four votes fail a strict comparison.
    assert!(majority_vote_set_frac(&h, 4.0 / 6.0).is_empty());
}

// ---------------------------------------------------------------------------
// maximum clique vs exhaustive enumeration
// ---------------------------------------------------------------------------

/// Exhaustive oracle: scan all vertex subsets, keep the largest clique,
/// breaking size ties toward the lexicographically smallest vertex list.
fn exhaustive_maximum_clique(h: &VotingMatrix) -> Vec<usize> {
    let n = h.l_sites;
    let mut best: Vec<usize> = Vec::new();
    for mask in 1u64..(1u64 << n) {
        let members: Vec<usize> = (0..n).filter(|&v| mask >> v & 1 == 1).collect();
        let mut is_clique = true;
        'outer: for (i, &a) in members.iter().enumerate() {
            for &b in &members[i + 1..] {
                if !h.get(a, b) {
                    is_clique = false;
                    break 'outer;
                }
            }
        }
        if !is_clique {
            continue;
        }
        if members.len() > best.len() || (members.len() == best.len() && members < best) {
            best = members;
        }
    }
    best
}

#[test]
fn maximum_clique_matches_exhaustive_search_on_random_graphs() {
    let mut rng = RandomStream::new(0xC11_9E, 0);
    for case in 0..200 {
        let n = 3 + rng.below(10); // 3..=12 vertices
        let density = 0.15 + 0.7 * rng.uniform();
        let mut stats = vec![0.0; pair_count(n)];
        for s in stats.iter_mut() {
            *s = if rng.bernoulli(density) { 0.5 } else { 2.0 };
        }
        let h = build_voting_matrix(&stats, n, 1.0);
        let got = maximum_clique(&h);
        let want = exhaustive_maximum_clique(&h);
        assert_eq!(got, want, "case {case}: graph on {n} vertices");
        // Returned set must itself be a clique.
        for (i, &a) in got.iter().enumerate() {
            for &b in &got[i + 1..] {
                assert!(h.get(a, b), "case {case}: ({a},{b}) not an edge");
            }
        }
    }
}

#[test]
fn clique_is_subset_of_majority_vote_set_when_majority_sized() {
    let mut rng = RandomStream::new(0xC11_9F, 1);
    let mut checked = 0;
    for _ in 0..400 {
        let n = 4 + rng.below(9);
        let density = 0.4 + 0.5 * rng.uniform();
        let mut stats = vec![0.0; pair_count(n)];
        for s in stats.iter_mut() {
            *s = if rng.bernoulli(density) { 0.5 } else { 2.0 };
        }
        let h = build_voting_matrix(&stats, n, 1.0);
        let clique = maximum_clique(&h);
        if 2 * clique.len() <= n {
            continue;
        }
        checked += 1;
        let vote = majority_vote_set(&h);
        for v in &clique {
            assert!(
                vote.contains(v),
                "clique member {v} missing from vote set {vote:?}"
            );
        }
    }
    assert!(checked > 50, "too few majority-sized cliques ({checked})");
}

// ---------------------------------------------------------------------------
// statistics, aggregation, intervals
// ---------------------------------------------------------------------------

#[test]
fn test_statistic_takes_the_larger_of_both_scales() {
    assert_abs_diff_eq!(test_statistic(None, -1.2, 0.4), 3.0, epsilon = 1e-15);
    assert_abs_diff_eq!(
        test_statistic(Some((2.0, 0.5)), -1.2, 0.4),
        4.0,
        epsilon = 1e-15
    );
    assert_abs_diff_eq!(
        test_statistic(Some((0.5, 0.5)), -1.2, 0.4),
        3.0,
        epsilon = 1e-15
    );
}

#[test]
fn statistic_table_applies_max_rule_per_pair() {
    let l_sites = 3;
    let table = DissimilarityTable::new(
        l_sites,
        Some((vec![1.0, 0.2, 3.0], vec![0.5, 0.4, 1.0])),
        (vec![0.3, -0.8, 0.1], vec![0.1, 0.2, 0.1]),
    )
    .unwrap();
    let stats = statistic_table(&table);
    assert_abs_diff_eq!(stats[0], 3.0, epsilon = 1e-15); // local 3 vs global 2
    assert_abs_diff_eq!(stats[1], 4.0, epsilon = 1e-15); // local 4 vs global 0.5
    assert_abs_diff_eq!(stats[2], 3.0, epsilon = 1e-15); // global 3 vs local 1
}

#[test]
fn inverse_variance_weights_hand_example() {
    let summaries = vec![
        SiteSummary::univariate(0, 50, 0.0, 1.0).unwrap(),
        SiteSummary::univariate(1, 50, 2.0, 1.0 / 3.0f64.sqrt()).unwrap(),
    ];
    let (point, se) = ivw_aggregate(&summaries, &[0, 1]).unwrap();
    assert_abs_diff_eq!(point, 1.5, epsilon = 1e-12);
    assert_abs_diff_eq!(se, 0.5, epsilon = 1e-12);
    // Restricting to one site reproduces it.
    let (p0, s0) = ivw_aggregate(&summaries, &[0]).unwrap();
    assert_abs_diff_eq!(p0, 0.0, epsilon = 1e-15);
    assert_abs_diff_eq!(s0, 1.0, epsilon = 1e-15);
    assert!(matches!(
        ivw_aggregate(&summaries, &[]),
        Err(EngineError::EmptySet)
    ));
}

#[test]
fn wald_interval_uses_two_sided_quantile() {
    let summaries = vec![SiteSummary::univariate(0, 10, 0.0, 1.0).unwrap()];
    let (lo, hi) = naive_ci(&summaries, &[0], 0.05).unwrap();
    assert_abs_diff_eq!(lo, -1.9599639845400542355, epsilon = 1e-10);
    assert_abs_diff_eq!(hi, 1.9599639845400542355, epsilon = 1e-10);
}

#[test]
fn multivariate_distance_summary_matches_hand_formula() {
    let omega = {
        let mut m = Matrix::identity(2);
        m.scale(0.01);
        m
    };
    let summaries = vec![
        SiteSummary::multivariate(0, 100, vec![1.0, 0.0], omega.clone()).unwrap(),
        SiteSummary::multivariate(1, 100, vec![0.0, 0.0], omega).unwrap(),
    ];
    let (l_hat, se_l) = local_dissimilarity(&summaries).unwrap();
    assert_abs_diff_eq!(l_hat[0], 1.0, epsilon = 1e-12);
    // sqrt(4 * diff' (O_l + O_k) diff + 1 / min(n)) = sqrt(0.08 + 0.01).
    assert_abs_diff_eq!(se_l[0], 0.3, epsilon = 1e-12);
}

#[test]
fn univariate_distance_summary_signs_and_scale() {
    let summaries = vec![
        SiteSummary::univariate(0, 100, 2.0, 0.3).unwrap(),
        SiteSummary::univariate(1, 400, 1.0, 0.4).unwrap(),
    ];
    let (l_hat, se_l) = local_dissimilarity(&summaries).unwrap();
    assert_abs_diff_eq!(l_hat[0], 1.0, epsilon = 1e-15);
    assert_abs_diff_eq!(se_l[0], 0.5, epsilon = 1e-15);
}

#[test]
fn precision_weighted_center_combines_multivariate_sites() {
    let omega_tight = {
        let mut m = Matrix::identity(2);
        m.scale(0.25);
        m
    };
    let omega_loose = Matrix::identity(2);
    let summaries = vec![
        SiteSummary::multivariate(0, 100, vec![2.0, 0.0], omega_tight).unwrap(),
        SiteSummary::multivariate(1, 100, vec![0.0, 2.0], omega_loose).unwrap(),
    ];
    let (center, precision) = ivw_aggregate_multi(&summaries, &[0, 1]).unwrap();
    // Weights 4 and 1 per coordinate.
    assert_abs_diff_eq!(center[0], 8.0 / 5.0, epsilon = 1e-12);
    assert_abs_diff_eq!(center[1], 2.0 / 5.0, epsilon = 1e-12);
    assert_abs_diff_eq!(precision.get(0, 0), 5.0, epsilon = 1e-12);
    assert_abs_diff_eq!(precision.get(0, 1), 0.0, epsilon = 1e-12);
}

#[test]
fn pair_indexing_is_dense_and_ordered() {
    let l = 5;
    let mut seen = vec![false; pair_count(l)];
    for a in 0..l {
        for b in (a + 1)..l {
            let idx = pair_index(l, a, b);
            assert!(!seen[idx], "duplicate index {idx}");
            seen[idx] = true;
        }
    }
    assert!(seen.iter().all(|s| *s));
    assert_eq!(pair_index(5, 0, 1), 0);
    assert_eq!(pair_index(5, 3, 4), 9);
}

#[test]
fn summary_constructors_reject_invalid_inputs() {
    assert!(SiteSummary::univariate(0, 10, f64::NAN, 1.0).is_err());
    assert!(SiteSummary::univariate(0, 10, 0.0, 0.0).is_err());
    assert!(SiteSummary::univariate(0, 0, 0.0, 1.0).is_err());
    let not_pd = Matrix::from_vec(2, 2, vec![1.0, 2.0, 2.0, 1.0]);
    assert!(SiteSummary::multivariate(0, 10, vec![0.0, 0.0], not_pd).is_err());
    let wrong_shape = Matrix::identity(3);
    assert!(SiteSummary::multivariate(0, 10, vec![0.0, 0.0], wrong_shape).is_err());
}

#[test]
fn dissimilarity_table_validates_entries() {
    // Negative distance estimate.
    assert!(DissimilarityTable::new(2, Some((vec![-0.1], vec![1.0])), (vec![0.0], vec![1.0])).is_err());
    // Zero standard error.
    assert!(DissimilarityTable::new(2, None, (vec![0.0], vec![0.0])).is_err());
    // Length mismatch.
    assert!(DissimilarityTable::new(3, None, (vec![0.0, 0.0], vec![1.0, 1.0])).is_err());
    // Signed local difference flips orientation.
    let t = DissimilarityTable::new(2, None, (vec![0.7], vec![1.0])).unwrap();
    assert_abs_diff_eq!(t.l_signed(0, 1), 0.7, epsilon = 1e-15);
    assert_abs_diff_eq!(t.l_signed(1, 0), -0.7, epsilon = 1e-15);
}
