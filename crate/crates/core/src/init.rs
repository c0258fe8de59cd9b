//! Stage 2: compress the designs onto the estimated joint subspaces, solve the
//! resulting `R²`-dimensional mixed linear regression, and lift each
//! regression vector back to a balanced factor pair.

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{svd, Mat, Vector};
use crate::mlr::{solve_mlr, MlrEstimate, TensorParams, VecSample};
use crate::spectral::{estimate_rank, SubspaceEstimate};

/// Balanced factorisation `M = L Rᵀ` with `L = UΣ^{1/2}`, `R = VΣ^{1/2}`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorPair {
    pub l: Mat,
    pub r: Mat,
}

impl FactorPair {
    pub fn rank(&self) -> usize {
        self.l.ncols()
    }

    pub fn product(&self) -> Mat {
        &self.l * self.r.transpose()
    }
}

/// `vec(S)`: columns stacked.
pub fn vec(s: &Mat) -> Vector {
    Vector::from_column_slice(s.as_slice())
}

/// Inverse of [`vec`] for an `r×r` matrix.
pub fn mat(v: &Vector, r: usize) -> Result<Mat> {
    if v.len() != r * r {
        return Err(Error::invalid(format!(
            "vector of length {} is not {r}x{r}",
            v.len()
        )));
    }
    Ok(Mat::from_column_slice(r, r, v.as_slice()))
}

/// `a_i = vec(Ûᵀ A_i V̂)` paired with `y_i`.
pub fn compress_samples(d: &Dataset, sub: &SubspaceEstimate) -> Result<Vec<VecSample>> {
    if sub.u.nrows() != d.n1() || sub.v.nrows() != d.n2() {
        return Err(Error::invalid("subspace dimensions do not match the designs"));
    }
    let ut = sub.u.transpose();
    let parts = crate::reduce::map_chunks(d.len(), |range| {
        let mut out = Vec::with_capacity(range.len());
        d.visit(range, |_, a, y| {
            let a = Mat::from_column_slice(d.n1(), d.n2(), a);
            out.push(VecSample {
                a: vec(&(&ut * a * &sub.v)),
                y,
            });
        });
        out
    });
    Ok(parts.into_iter().flatten().collect())
}

/// Best rank-`r` approximation of `Û mat(β) V̂ᵀ`, as a balanced factor pair.
pub fn lift_and_factor(beta: &Vector, sub: &SubspaceEstimate, r: usize) -> Result<FactorPair> {
    let small = mat(beta, sub.r_joint)?;
    if r == 0 || r > sub.r_joint {
        return Err(Error::invalid(format!(
            "component rank {r} outside [1, {}]",
            sub.r_joint
        )));
    }
    // Û and V̂ have orthonormal columns, so the SVD of the small core lifts
    // directly: Û·(P S Qᵀ)·V̂ᵀ = (ÛP) S (V̂Q)ᵀ.
    let dec = svd(&small, Some(r))?;
    let s_r = dec.s[r - 1];
    if !(s_r > 1e-14 * dec.s[0].max(f64::MIN_POSITIVE)) {
        return Err(Error::RankDeficientInit { rank: r, value: s_r });
    }
    let mut l = &sub.u * dec.u;
    let mut rr = &sub.v * dec.v;
    for (j, s) in dec.s.iter().enumerate() {
        let h = s.sqrt();
        l.column_mut(j).scale_mut(h);
        rr.column_mut(j).scale_mut(h);
    }
    Ok(FactorPair { l, r: rr })
}

/// Per-component rank guesses from the spectra of `mat(β̂_k)`.
pub fn estimate_component_ranks(betas: &[Vector], r_joint: usize, gap_floor: f64) -> Result<Vec<usize>> {
    let max_rank = (r_joint + 1).saturating_sub(betas.len()).max(1);
    betas
        .iter()
        .map(|b| {
            let s = crate::linalg::singular_values(&mat(b, r_joint)?)?;
            let est = estimate_rank(&s, max_rank.min(s.len()), gap_floor)?;
            if est.degenerate {
                Err(Error::RankDeficientInit { rank: 1, value: s[0] })
            } else {
                Ok(est.rank)
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct Initialization {
    pub mlr: MlrEstimate,
    pub ranks: Vec<usize>,
    pub factors: Vec<FactorPair>,
}

/// Compression, tensor-method regression and lifting for all `k` components.
/// `ranks = None` estimates each component rank from its recovered core.
pub fn initialize_all(
    d: &Dataset,
    sub: &SubspaceEstimate,
    k: usize,
    ranks: Option<&[usize]>,
    gap_floor: f64,
    seed: u64,
    params: TensorParams,
) -> Result<Initialization> {
    if let Some(r) = ranks {
        if r.len() != k {
            return Err(Error::invalid(format!(
                "{} ranks given for {k} components",
                r.len()
            )));
        }
    }
    let samples = compress_samples(d, sub)?;
    let mlr = solve_mlr(&samples, k, seed, params)?;
    let ranks = match ranks {
        Some(r) => r.to_vec(),
        None => estimate_component_ranks(&mlr.betas, sub.r_joint, gap_floor)?,
    };
    let factors = mlr
        .betas
        .iter()
        .zip(&ranks)
        .map(|(b, r)| lift_and_factor(b, sub, *r))
        .collect::<Result<_>>()?;
    Ok(Initialization { mlr, ranks, factors })
}
