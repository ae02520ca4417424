//! Minimum-cost bipartite assignment via shortest augmenting paths with
//! potentials, O(n²·m). Rectangular Nq×Ngt matrices are handled directly:
//! assigning every ground-truth column injectively into the query rows is
//! equivalent to padding the matrix square with zero-cost dummy columns.

use crate::numerics::NumArray;

use super::{LossError, Result};

/// Optimal injective map from ground-truth entries to queries.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// `assignment[gt] = query`.
    pub assignment: Vec<usize>,
    /// Sum of the assigned cost entries, accumulated in gt order.
    pub total_cost: f64,
}

/// Solves the assignment over a `[Nq, Ngt]` cost matrix with `Nq ≥ Ngt ≥ 1`.
pub fn hungarian(cost: &NumArray) -> Result<MatchResult> {
    let (nq, ngt) = match cost.shape() {
        [q, g] => (*q, *g),
        s => return Err(LossError::Contract(format!("cost matrix must be rank 2, got {s:?}"))),
    };
    if ngt == 0 {
        return Ok(MatchResult { assignment: Vec::new(), total_cost: 0.0 });
    }
    if nq < ngt {
        return Err(LossError::Contract(format!(
            "need at least as many queries ({nq}) as ground truths ({ngt})"
        )));
    }
    // rows = ground truths (n), columns = queries (m), n <= m
    let n = ngt;
    let m = nq;
    let a = |i: usize, j: usize| cost.at2(j - 1, i - 1); // 1-indexed, transposed

    const INF: f64 = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut matched_row = vec![0usize; m + 1]; // row assigned to column j
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        matched_row[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![INF; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let mut delta = INF;
            let mut j1 = 0usize;
            for j in 1..=m {
                if !used[j] {
                    let cur = a(i0, j) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[matched_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            matched_row[j0] = matched_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![usize::MAX; n];
    for j in 1..=m {
        if matched_row[j] != 0 {
            assignment[matched_row[j] - 1] = j - 1;
        }
    }
    let total_cost = assignment.iter().enumerate().map(|(g, &q)| cost.at2(q, g)).sum();
    Ok(MatchResult { assignment, total_cost })
}

#[cfg(test)]
pub(crate) fn brute_force(cost: &NumArray) -> MatchResult {
    let (nq, ngt) = (cost.shape()[0], cost.shape()[1]);
    let mut best_cost = f64::INFINITY;
    let mut best = Vec::new();
    let mut used = vec![false; nq];
    let mut current = vec![0usize; ngt];
    fn recurse(
        cost: &NumArray,
        gt: usize,
        ngt: usize,
        nq: usize,
        used: &mut [bool],
        current: &mut [usize],
        acc: f64,
        best_cost: &mut f64,
        best: &mut Vec<usize>,
    ) {
        if gt == ngt {
            if acc < *best_cost {
                *best_cost = acc;
                best.clear();
                best.extend_from_slice(current);
            }
            return;
        }
        for q in 0..nq {
            if !used[q] {
                used[q] = true;
                current[gt] = q;
                recurse(cost, gt + 1, ngt, nq, used, current, acc + cost.at2(q, gt), best_cost, best);
                used[q] = false;
            }
        }
    }
    recurse(cost, 0, ngt, nq, &mut used, &mut current, 0.0, &mut best_cost, &mut best);
    // recompute the sum in gt order so float accumulation matches hungarian()
    let total_cost = best.iter().enumerate().map(|(g, &q)| cost.at2(q, g)).sum();
    MatchResult { assignment: best, total_cost }
}
