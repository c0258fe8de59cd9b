//! Matching estimated components to planted ones for evaluation.

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::metrics::rel_fro_error;

/// Exhaustive search is used up to this many components.
const BRUTE_FORCE_MAX: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    /// `perm[k]` is the estimate matched to truth `k`.
    pub perm: Vec<usize>,
    pub total_cost: f64,
}

impl Alignment {
    /// Inverse map: truth index of each estimate.
    pub fn truth_of(&self) -> Vec<usize> {
        let mut inv = vec![0; self.perm.len()];
        for (k, &j) in self.perm.iter().enumerate() {
            inv[j] = k;
        }
        inv
    }
}

/// Permutation minimising `Σ_k rel_fro_error(estimates[π(k)], truths[k])`.
pub fn align_components(estimates: &[Mat], truths: &[Mat]) -> Result<Alignment> {
    if estimates.len() != truths.len() || truths.is_empty() {
        return Err(Error::invalid(format!(
            "{} estimates vs {} truths",
            estimates.len(),
            truths.len()
        )));
    }
    let k = truths.len();
    let mut cost = Mat::zeros(k, k);
    for (t, truth) in truths.iter().enumerate() {
        for (e, est) in estimates.iter().enumerate() {
            cost[(t, e)] = rel_fro_error(est, truth)?;
        }
    }
    Ok(min_cost_assignment(&cost))
}

/// Minimum-cost perfect matching of rows to columns of a square cost matrix.
///
/// Up to eight rows this enumerates permutations in lexicographic order and
/// keeps the first minimiser, so ties resolve to the lexicographically
/// smallest permutation; larger problems use the Hungarian algorithm.
pub fn min_cost_assignment(cost: &Mat) -> Alignment {
    assert_eq!(cost.nrows(), cost.ncols(), "cost matrix must be square");
    if cost.nrows() <= BRUTE_FORCE_MAX {
        brute_force(cost)
    } else {
        hungarian(cost)
    }
}

fn total(cost: &Mat, perm: &[usize]) -> f64 {
    perm.iter().enumerate().map(|(k, &j)| cost[(k, j)]).sum()
}

fn next_permutation(p: &mut [usize]) -> bool {
    let n = p.len();
    let Some(i) = (1..n).rev().find(|&i| p[i - 1] < p[i]) else {
        return false;
    };
    let j = (i..n).rev().find(|&j| p[j] > p[i - 1]).expect("pivot exists");
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

pub(crate) fn brute_force(cost: &Mat) -> Alignment {
    let mut p: Vec<usize> = (0..cost.nrows()).collect();
    let mut best = Alignment {
        total_cost: total(cost, &p),
        perm: p.clone(),
    };
    while next_permutation(&mut p) {
        let c = total(cost, &p);
        if c < best.total_cost {
            best = Alignment {
                total_cost: c,
                perm: p.clone(),
            };
        }
    }
    best
}

/// Shortest augmenting path with potentials, `O(n³)`.
pub(crate) fn hungarian(cost: &Mat) -> Alignment {
    let n = cost.nrows();
    let inf = f64::INFINITY;
    // 1-based rows/columns, column 0 is the virtual source.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
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
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut perm = vec![0; n];
    for j in 1..=n {
        perm[row_of[j] - 1] = j - 1;
    }
    Alignment {
        total_cost: total(cost, &perm),
        perm,
    }
}
