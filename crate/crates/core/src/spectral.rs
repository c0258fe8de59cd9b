//! Stage 1: joint column/row subspace estimation from the data matrix
//! `Y = (1/N) Σ y_i A_i`.

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{axpy, svd, Mat};
use crate::reduce::{map_chunks, tree_reduce};

pub const DEFAULT_GAP_FLOOR: f64 = 1e-8;

/// Spectra whose top value is below this are treated as zero.
const DEGENERATE_FLOOR: f64 = 1e-14;

#[derive(Debug, Clone)]
pub struct SubspaceEstimate {
    pub u: Mat,
    pub v: Mat,
    pub r_joint: usize,
    /// Full spectrum of `Y`, kept for diagnostics.
    pub singular_values: Vec<f64>,
}

pub fn data_matrix(d: &Dataset) -> Result<Mat> {
    if d.is_empty() {
        return Err(Error::invalid("data matrix of an empty dataset"));
    }
    let e = d.n1() * d.n2();
    let parts = map_chunks(d.len(), |range| {
        let mut acc = vec![0.0; e];
        d.visit(range, |_, a, y| axpy(y, a, &mut acc));
        acc
    });
    let mut sum = tree_reduce(parts, |mut a, b| {
        axpy(1.0, &b, &mut a);
        a
    })
    .expect("non-empty");
    let scale = 1.0 / d.len() as f64;
    sum.iter_mut().for_each(|v| *v *= scale);
    Ok(Mat::from_vec(d.n1(), d.n2(), sum))
}

/// Top-`r_joint` left and right singular vectors of `y`.
pub fn subspace_estimate(y: &Mat, r_joint: usize) -> Result<SubspaceEstimate> {
    let max = y.nrows().min(y.ncols());
    if r_joint == 0 || r_joint > max {
        return Err(Error::invalid(format!("joint rank {r_joint} outside [1, {max}]")));
    }
    let full = svd(y, None)?;
    Ok(SubspaceEstimate {
        u: full.u.columns(0, r_joint).into_owned(),
        v: full.v.columns(0, r_joint).into_owned(),
        r_joint,
        singular_values: full.s,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RankEstimate {
    pub rank: usize,
    /// Set when the whole spectrum is numerically zero; `rank` is then 0.
    pub degenerate: bool,
}

/// Spectral-gap ratio rule: the `i ≤ max_rank` maximising `s_i / s_{i+1}`,
/// where the denominator is floored at `gap_floor·s_1` (a missing `s_{i+1}`
/// counts as zero). Ties resolve to the smallest `i`.
pub fn estimate_rank(singular_values: &[f64], max_rank: usize, gap_floor: f64) -> Result<RankEstimate> {
    if singular_values.is_empty() {
        return Err(Error::invalid("empty spectrum"));
    }
    if max_rank == 0 || max_rank > singular_values.len() {
        return Err(Error::invalid(format!(
            "max_rank {max_rank} outside [1, {}]",
            singular_values.len()
        )));
    }
    if singular_values.windows(2).any(|w| w[0] < w[1]) {
        return Err(Error::invalid("spectrum must be sorted descending"));
    }
    let s1 = singular_values[0];
    if !s1.is_finite() || s1 < DEGENERATE_FLOOR {
        return Ok(RankEstimate {
            rank: 0,
            degenerate: true,
        });
    }
    let floor = gap_floor * s1;
    let mut best = (1, f64::NEG_INFINITY);
    for i in 1..=max_rank {
        let next = singular_values.get(i).copied().unwrap_or(0.0);
        let ratio = singular_values[i - 1] / next.max(floor);
        if ratio > best.1 {
            best = (i, ratio);
        }
    }
    Ok(RankEstimate {
        rank: best.0,
        degenerate: false,
    })
}
