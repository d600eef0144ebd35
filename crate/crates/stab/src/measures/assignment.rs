//! Exact minimum-cost assignment via shortest augmenting paths with dual
//! potentials, plus a lexicographic refinement over the tight-edge graph so
//! that cost ties always resolve to the smallest (source, target) pairing.

pub(crate) struct Assignment {
    pub row_to_col: Vec<usize>,
    pub row_duals: Vec<f64>,
    pub col_duals: Vec<f64>,
}

/// Solves the n-by-n assignment problem for a row-major cost matrix.
/// O(n^3); the returned duals certify optimality (matched edges are tight,
/// reduced costs nonnegative up to rounding).
pub(crate) fn solve_assignment(cost: &[f64], n: usize) -> Assignment {
    assert!(n >= 1 && cost.len() == n * n);
    const FREE: usize = usize::MAX;
    let virt = n; // virtual column used to seed each augmentation
    let mut u = vec![0.0_f64; n];
    let mut v = vec![0.0_f64; n + 1];
    let mut col_row = vec![FREE; n + 1];

    let mut min_to = vec![0.0_f64; n + 1];
    let mut prev = vec![FREE; n + 1];
    let mut used = vec![false; n + 1];

    for row in 0..n {
        col_row[virt] = row;
        let mut j0 = virt;
        min_to.iter_mut().for_each(|x| *x = f64::INFINITY);
        prev.iter_mut().for_each(|x| *x = FREE);
        used.iter_mut().for_each(|x| *x = false);

        loop {
            used[j0] = true;
            let i0 = col_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = FREE;
            for j in 0..n {
                if !used[j] {
                    let reduced = cost[i0 * n + j] - u[i0] - v[j];
                    if reduced < min_to[j] {
                        min_to[j] = reduced;
                        prev[j] = j0;
                    }
                    if min_to[j] < delta {
                        delta = min_to[j];
                        j1 = j;
                    }
                }
            }
            debug_assert!(j1 != FREE, "cost matrix must be finite");
            for j in 0..=n {
                if used[j] {
                    u[col_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_to[j] -= delta;
                }
            }
            j0 = j1;
            if col_row[j0] == FREE {
                break;
            }
        }
        // Augment along the stored predecessor chain.
        while j0 != virt {
            let j1 = prev[j0];
            col_row[j0] = col_row[j1];
            j0 = j1;
        }
    }

    let mut row_to_col = vec![FREE; n];
    for j in 0..n {
        row_to_col[col_row[j]] = j;
    }
    Assignment {
        row_to_col,
        row_duals: u,
        col_duals: v[..n].to_vec(),
    }
}

/// Rewrites an optimal matching into the lexicographically smallest one among
/// all matchings of (near-)equal cost. Edges within `tie_tol` of tightness
/// w.r.t. the optimal duals are treated as interchangeable.
///
/// Rows are fixed in order; for each row we try smaller tight columns and keep
/// one exactly when the remaining rows can still be perfectly matched in the
/// tight graph, which a single alternating-path search decides.
pub(crate) fn lexicographic_refine(cost: &[f64], n: usize, asg: &mut Assignment, tie_tol: f64) {
    const FREE: usize = usize::MAX;
    let tight = |i: usize, j: usize, asg: &Assignment| -> bool {
        cost[i * n + j] - asg.row_duals[i] - asg.col_duals[j] <= tie_tol
    };

    let mut col_row = vec![FREE; n];
    for (i, &j) in asg.row_to_col.iter().enumerate() {
        col_row[j] = i;
    }
    let mut fixed = vec![false; n];

    for i in 0..n {
        let current = asg.row_to_col[i];
        for j in 0..current {
            if fixed[j] || !tight(i, j, asg) {
                continue;
            }
            let displaced = col_row[j];
            // Tentatively give column j to row i; the displaced row must be
            // re-routed through tight edges, with row i's old column freed.
            col_row[current] = FREE;
            let mut visited = vec![false; n];
            visited[j] = true;
            if reroute(displaced, cost, n, asg, &fixed, &mut visited, &mut col_row, tie_tol) {
                col_row[j] = i;
                asg.row_to_col[i] = j;
                break;
            }
            col_row[current] = i;
        }
        fixed[asg.row_to_col[i]] = true;
    }

    #[allow(clippy::too_many_arguments)]
    fn reroute(
        row: usize,
        cost: &[f64],
        n: usize,
        asg: &mut Assignment,
        fixed: &[bool],
        visited: &mut [bool],
        col_row: &mut [usize],
        tie_tol: f64,
    ) -> bool {
        for j in 0..n {
            if fixed[j] || visited[j] {
                continue;
            }
            if cost[row * n + j] - asg.row_duals[row] - asg.col_duals[j] > tie_tol {
                continue;
            }
            visited[j] = true;
            let owner = col_row[j];
            if owner == usize::MAX
                || reroute(owner, cost, n, asg, fixed, visited, col_row, tie_tol)
            {
                col_row[j] = row;
                asg.row_to_col[row] = j;
                return true;
            }
        }
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_force(cost: &[f64], n: usize) -> f64 {
        let mut perm: Vec<usize> = (0..n).collect();
        let mut best = f64::INFINITY;
        permute(&mut perm, 0, cost, n, &mut best);
        best
    }

    fn permute(perm: &mut Vec<usize>, k: usize, cost: &[f64], n: usize, best: &mut f64) {
        if k == n {
            let total: f64 = (0..n).map(|i| cost[i * n + perm[i]]).sum();
            if total < *best {
                *best = total;
            }
            return;
        }
        for i in k..n {
            perm.swap(k, i);
            permute(perm, k + 1, cost, n, best);
            perm.swap(k, i);
        }
    }

    #[test]
    fn matches_brute_force_on_small_matrices() {
        let mut state = 0x2545_f491_4f6c_dd1d_u64;
        let mut next = || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for n in 1..=6 {
            for _ in 0..20 {
                let cost: Vec<f64> = (0..n * n).map(|_| next() * 10.0).collect();
                let asg = solve_assignment(&cost, n);
                let total: f64 = (0..n).map(|i| cost[i * n + asg.row_to_col[i]]).sum();
                let oracle = brute_force(&cost, n);
                assert!(
                    (total - oracle).abs() <= 1e-9 * oracle.abs().max(1.0),
                    "n={n}: {total} vs oracle {oracle}"
                );
            }
        }
    }

    #[test]
    fn refinement_prefers_identity_under_full_ties() {
        // All costs equal: every matching is optimal, identity is smallest.
        let n = 5;
        let cost = vec![3.0; n * n];
        let mut asg = solve_assignment(&cost, n);
        lexicographic_refine(&cost, n, &mut asg, 1e-12 * 3.0);
        assert_eq!(asg.row_to_col, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn refinement_keeps_unique_optimum() {
        // Strictly dominant diagonal: the unique optimum must survive.
        let n = 4;
        let mut cost = vec![10.0; n * n];
        for i in 0..n {
            cost[i * n + i] = 1.0;
        }
        let mut asg = solve_assignment(&cost, n);
        lexicographic_refine(&cost, n, &mut asg, 1e-11);
        assert_eq!(asg.row_to_col, vec![0, 1, 2, 3]);
    }
}
