//! Dense matrix primitives.
//!
//! Matrices are `nalgebra::DMatrix<f64>`, which stores entries column-major.
//! That storage order doubles as the project-wide `vec` convention: `vec(S)`
//! stacks the columns of `S`, so `S.as_slice()` is `vec(S)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Compact (or truncated) singular value decomposition `m ≈ u·diag(s)·vᵀ`.
#[derive(Debug, Clone)]
pub struct SvdResult {
    pub u: Mat,
    pub s: Vec<f64>,
    pub v: Mat,
}

impl SvdResult {
    /// Rebuilds `u·diag(s)·vᵀ`.
    pub fn reconstruct(&self) -> Mat {
        let mut us = self.u.clone();
        for (j, sj) in self.s.iter().enumerate() {
            us.column_mut(j).scale_mut(*sj);
        }
        us * self.v.transpose()
    }
}

/// Singular value decomposition with deterministic conventions.
///
/// `k = None` returns the compact SVD (`min(rows, cols)` triplets), `Some(k)`
/// keeps the top `k`. Singular values are sorted descending with ties kept in
/// the backend's original order, and each pair `(u_j, v_j)` is sign-flipped
/// so that the largest-magnitude entry of `u_j` is positive.
pub fn svd(m: &Mat, k: Option<usize>) -> Result<SvdResult> {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return Err(Error::invalid("svd of an empty matrix"));
    }
    if !all_finite(m) {
        return Err(Error::invalid("svd input has non-finite entries"));
    }
    let full = rows.min(cols);
    let keep = match k {
        None => full,
        Some(k) if k >= 1 && k <= full => k,
        Some(k) => {
            return Err(Error::invalid(format!(
                "svd rank {k} out of range for a {rows}x{cols} matrix"
            )))
        }
    };

    let (u_all, s_all, v_all) = jacobi_svd(m);

    let mut order: Vec<usize> = (0..full).collect();
    // Stable sort keeps the backend order among exact ties.
    order.sort_by(|&a, &b| s_all[b].total_cmp(&s_all[a]));

    let mut u = Mat::zeros(rows, keep);
    let mut v = Mat::zeros(cols, keep);
    let mut s = Vec::with_capacity(keep);
    for (j, &src) in order.iter().take(keep).enumerate() {
        let mut uj = u_all.column(src).into_owned();
        let mut vj = v_all.column(src).into_owned();
        if leading_sign(uj.as_slice()) < 0.0 {
            uj.neg_mut();
            vj.neg_mut();
        }
        u.set_column(j, &uj);
        v.set_column(j, &vj);
        s.push(s_all[src].max(0.0));
    }
    Ok(SvdResult { u, s, v })
}

/// Singular values only, descending.
pub fn singular_values(m: &Mat) -> Result<Vec<f64>> {
    if !all_finite(m) {
        return Err(Error::invalid("non-finite entries"));
    }
    let mut s = jacobi_svd(m).1;
    s.sort_by(|a, b| b.total_cmp(a));
    Ok(s)
}

const JACOBI_MAX_SWEEPS: usize = 100;

/// One-sided (Hestenes) Jacobi SVD, unsorted: `m = u·diag(s)·vᵀ` with
/// `min(rows, cols)` triplets.
///
/// Plane rotations are applied to the columns of a working copy until every
/// column pair is orthogonal to working precision; the column norms are then
/// the singular values. This is slower than bidiagonalisation but accurate
/// to relative precision, including for exactly rank-deficient inputs.
fn jacobi_svd(m: &Mat) -> (Mat, Vec<f64>, Mat) {
    if m.nrows() < m.ncols() {
        let (u, s, v) = jacobi_svd(&m.transpose());
        return (v, s, u);
    }
    let (rows, n) = m.shape();
    let mut a = m.clone();
    let mut v = Mat::identity(n, n);
    let tol = f64::EPSILON;
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for i in 0..n {
            for j in i + 1..n {
                let (alpha, beta, gamma) = {
                    let (ci, cj) = (a.column(i), a.column(j));
                    (ci.norm_squared(), cj.norm_squared(), ci.dot(&cj))
                };
                if gamma == 0.0 || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut a, i, j, c, s);
                rotate(&mut v, i, j, c, s);
            }
        }
        if !rotated {
            break;
        }
    }
    let s: Vec<f64> = (0..n).map(|j| a.column(j).norm()).collect();
    let smax = s.iter().copied().fold(0.0, f64::max);
    let null = (rows as f64) * f64::EPSILON * smax;
    let mut u = Mat::zeros(rows, n);
    let mut missing = Vec::new();
    for j in 0..n {
        if s[j] > null && s[j] > 0.0 {
            u.set_column(j, &(a.column(j) / s[j]));
        } else {
            missing.push(j);
        }
    }
    // Columns belonging to (numerically) zero singular values carry no
    // direction; complete them to an orthonormal set from the standard basis.
    for j in missing {
        let mut best: Option<(f64, crate::Vector)> = None;
        for e in 0..rows {
            let mut x = crate::Vector::zeros(rows);
            x[e] = 1.0;
            for _ in 0..2 {
                for k in (0..n).filter(|&k| k != j) {
                    let proj = u.column(k).dot(&x);
                    x.axpy(-proj, &u.column(k), 1.0);
                }
            }
            let nx = x.norm();
            if best.as_ref().is_none_or(|(b, _)| nx > *b) {
                best = Some((nx, x));
            }
        }
        let (nx, x) = best.expect("rows >= 1");
        u.set_column(j, &(x / nx));
    }
    (u, s, v)
}

#[inline]
fn rotate(m: &mut Mat, i: usize, j: usize, c: f64, s: f64) {
    let rows = m.nrows();
    let data = m.as_mut_slice();
    let (lo, hi) = data.split_at_mut(j * rows);
    let ci = &mut lo[i * rows..(i + 1) * rows];
    let cj = &mut hi[..rows];
    for (x, y) in ci.iter_mut().zip(cj.iter_mut()) {
        let (xi, yj) = (*x, *y);
        *x = c * xi - s * yj;
        *y = s * xi + c * yj;
    }
}

fn leading_sign(x: &[f64]) -> f64 {
    let mut best = 0.0f64;
    for &v in x {
        if v.abs() > best.abs() {
            best = v;
        }
    }
    if best < 0.0 {
        -1.0
    } else {
        1.0
    }
}

pub fn all_finite(m: &Mat) -> bool {
    m.iter().all(|x| x.is_finite())
}

/// `‖QᵀQ − I‖_F`.
pub fn orthonormality_residual(q: &Mat) -> f64 {
    let g = q.tr_mul(q);
    (g - Mat::identity(q.ncols(), q.ncols())).norm()
}

/// Frobenius inner product `⟨a, b⟩ = Σ a_ij b_ij`.
pub fn inner(a: &Mat, b: &Mat) -> f64 {
    dot(a.as_slice(), b.as_slice())
}

/// Dot product with four independent accumulators (vectorises without
/// reassociation flags, and the summation order is fixed).
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `y += alpha·x`.
#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Inverse of a symmetric positive semidefinite gram matrix through its SVD.
///
/// Returns `None` when the smallest singular value is at or below
/// `rel_tol` times the largest.
pub fn gram_inverse(g: &Mat, rel_tol: f64) -> Option<Mat> {
    if !all_finite(g) || g.nrows() != g.ncols() {
        return None;
    }
    let (u, s, v) = jacobi_svd(g);
    let max = s.iter().copied().fold(0.0, f64::max);
    let min = s.iter().copied().fold(f64::INFINITY, f64::min);
    if !(max > 0.0) || min <= rel_tol * max {
        return None;
    }
    let mut v_scaled = v;
    for (j, sj) in s.iter().enumerate() {
        v_scaled.column_mut(j).scale_mut(1.0 / sj);
    }
    Some(v_scaled * u.transpose())
}
