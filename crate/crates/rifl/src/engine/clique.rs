//! Exact maximum clique on bitset graphs (at most 64 vertices).
//!
//! Branch and bound with a greedy-coloring upper bound; a second pass
//! rebuilds the lexicographically smallest maximum clique so ties are
//! deterministic across platforms.

/// Greedy coloring of the candidate set; fills (vertex, color) pairs in the
/// branching order (colors ascending, so iterating from the back gives the
/// tightest bound first). Returns the number of entries written.
fn color_order(adj: &[u64], mut p: u64, order: &mut [(u32, u32); 64]) -> usize {
    let mut len = 0;
    let mut color = 0u32;
    while p != 0 {
        color += 1;
        let mut class = p;
        while class != 0 {
            let v = class.trailing_zeros();
            class &= !(1u64 << v);
            // v joins this color class; exclude its neighbors from the class.
            class &= !adj[v as usize];
            p &= !(1u64 << v);
            order[len] = (v, color);
            len += 1;
        }
    }
    len
}

fn expand(adj: &[u64], r: u64, rsize: u32, p: u64, best: &mut (u32, u64)) {
    let mut order = [(0u32, 0u32); 64];
    let len = color_order(adj, p, &mut order);
    let mut p = p;
    for &(v, color) in order[..len].iter().rev() {
        if rsize + color <= best.0 {
            return;
        }
        let bit = 1u64 << v;
        let r2 = r | bit;
        let p2 = p & adj[v as usize];
        if rsize + 1 > best.0 {
            *best = (rsize + 1, r2);
        }
        if p2 != 0 {
            expand(adj, r2, rsize + 1, p2, best);
        }
        p &= !bit;
    }
}

/// Size of the largest clique; `adj[v]` must exclude the self-bit.
pub fn max_clique_size(adj: &[u64], vertices: u64) -> u32 {
    let mut best = (0u32, 0u64);
    if vertices != 0 {
        expand(adj, 0, 0, vertices, &mut best);
    }
    best.0
}

/// True when `p` contains a clique of at least `need` vertices.
fn has_clique(adj: &[u64], p: u64, need: u32) -> bool {
    if need == 0 {
        return true;
    }
    if (p.count_ones()) < need {
        return false;
    }
    max_clique_size(adj, p) >= need
}

/// Lexicographically smallest maximum clique, as a sorted vertex list.
pub fn maximum_clique_lex(adj: &[u64], n: usize) -> Vec<usize> {
    assert!(n <= 64, "exact search limited to 64 vertices");
    let full: u64 = if n == 64 { !0 } else { (1u64 << n) - 1 };
    let target = max_clique_size(adj, full);
    let mut chosen = Vec::with_capacity(target as usize);
    let mut pool = full;
    let mut need = target;
    while need > 0 {
        let mut cand = pool;
        while cand != 0 {
            let v = cand.trailing_zeros();
            cand &= !(1u64 << v);
            // Smallest vertex that still admits a completion wins.
            if has_clique(adj, pool & adj[v as usize], need - 1) {
                chosen.push(v as usize);
                pool &= adj[v as usize];
                need -= 1;
                break;
            }
        }
    }
    chosen
}
