//! Mixed linear regression by the method of moments.
//!
//! Given samples `y_i = ⟨a_i, β_k⟩` from an unlabeled mixture with Gaussian
//! `a_i`, the empirical moments
//!
//! ```text
//! M2 = (1/2N₁) Σ y_i² a_i a_iᵀ − ½ m0 I          E[M2] = Σ p_k β_k β_kᵀ
//! M3 = (1/6N₂) Σ y_i³ a_i⊗a_i⊗a_i − T(m1)        E[M3] = Σ p_k β_k⊗β_k⊗β_k
//! ```
//!
//! are whitened by `W = U₂Σ₂^{-1/2}` from the rank-K SVD of `M2`, which turns
//! `M3(W,W,W)` into an orthogonally decomposable `K×K×K` tensor with
//! eigenvalues `1/√p_k`. Tensor power iteration with deflation recovers those
//! pairs, and unwhitening maps them back to `(p_k, β_k)`.
//!
//! `m0, M2` come from one random half of the samples and `m1, M3` from the
//! other, so the whitening matrix is independent of the third moment.

mod tensor;

pub use tensor::{tensor_apply, SymTensor3, TensorApply};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{gram_inverse, svd, Mat, Vector};
use crate::reduce::{map_chunks, tree_reduce};
use crate::synth::derive_seed;

const SPLIT_ATTEMPTS: u64 = 8;
const COLLAPSE_FLOOR: f64 = 1e-12;
const WHITEN_REL_FLOOR: f64 = 1e-10;
const WEIGHT_WARN_ABOVE: f64 = 1.5;

/// One regression sample `(a, y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct VecSample {
    pub a: Vector,
    pub y: f64,
}

/// Power-iteration budget. `restarts = None` means `10 + 2K`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TensorParams {
    pub restarts: Option<usize>,
    pub iters: usize,
}

impl Default for TensorParams {
    fn default() -> Self {
        TensorParams {
            restarts: None,
            iters: 100,
        }
    }
}

impl TensorParams {
    pub fn restarts_for(&self, k: usize) -> usize {
        self.restarts.unwrap_or(10 + 2 * k)
    }
}

/// Estimated regression vectors and mixing weights, in extraction order
/// (decreasing whitened eigenvalue, i.e. increasing weight). The order is
/// only meaningful up to a permutation of the true components.
#[derive(Debug, Clone)]
pub struct MlrEstimate {
    pub betas: Vec<Vector>,
    pub weights: Vec<f64>,
    /// Whitened eigenvalues `ω̃_k`.
    pub eigenvalues: Vec<f64>,
    /// Components whose weight falls outside `(0, 1.5]`.
    pub weight_warnings: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Moments {
    pub m0: f64,
    pub m1: Vector,
    pub m2: Mat,
    pub m3: SymTensor3,
}

/// Bernoulli(½) assignment of sample indices to two halves. Retries with a
/// fresh sub-seed (up to 8 attempts) while either half is empty.
pub fn split_indices(n: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(Error::invalid("need at least two samples to split"));
    }
    for attempt in 0..SPLIT_ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, attempt));
        let (mut first, mut second) = (Vec::new(), Vec::new());
        for i in 0..n {
            if rng.random_bool(0.5) {
                first.push(i);
            } else {
                second.push(i);
            }
        }
        if !first.is_empty() && !second.is_empty() {
            return Ok((first, second));
        }
    }
    Err(Error::invalid(format!(
        "random split left a half empty after {SPLIT_ATTEMPTS} attempts"
    )))
}

pub fn split_samples(samples: &[VecSample], seed: u64) -> Result<(Vec<VecSample>, Vec<VecSample>)> {
    let (a, b) = split_indices(samples.len(), seed)?;
    Ok((
        a.into_iter().map(|i| samples[i].clone()).collect(),
        b.into_iter().map(|i| samples[i].clone()).collect(),
    ))
}

fn common_dim(set1: &[VecSample], set2: &[VecSample]) -> Result<usize> {
    let d = set1
        .first()
        .map(|s| s.a.len())
        .ok_or_else(|| Error::invalid("first moment set is empty"))?;
    if set2.is_empty() {
        return Err(Error::invalid("second moment set is empty"));
    }
    if d == 0 || set1.iter().chain(set2).any(|s| s.a.len() != d) {
        return Err(Error::invalid("samples disagree in dimension"));
    }
    Ok(d)
}

/// Second- and third-order moment estimates from two sample sets.
pub fn moments(set1: &[VecSample], set2: &[VecSample]) -> Result<Moments> {
    let d = common_dim(set1, set2)?;
    let (n1, n2) = (set1.len() as f64, set2.len() as f64);

    let m0 = set1.iter().map(|s| s.y * s.y).sum::<f64>() / n1;

    let parts = map_chunks(set1.len(), |range| {
        let mut acc = Mat::zeros(d, d);
        for s in &set1[range] {
            let w = s.y * s.y;
            let a = s.a.as_slice();
            for j in 0..d {
                let waj = w * a[j];
                for (c, ai) in acc.column_mut(j).iter_mut().zip(a) {
                    *c += waj * ai;
                }
            }
        }
        acc
    });
    let mut m2 = tree_reduce(parts, |a, b| a + b).expect("non-empty");
    m2 /= 2.0 * n1;
    for i in 0..d {
        m2[(i, i)] -= 0.5 * m0;
    }

    let mut m1 = Vector::zeros(d);
    for s in set2 {
        m1.axpy(s.y.powi(3), &s.a, 1.0);
    }
    m1 /= 6.0 * n2;

    let parts = map_chunks(set2.len(), |range| {
        let mut acc = SymTensor3::zeros(d);
        for s in &set2[range] {
            acc.add_rank1(s.y.powi(3), s.a.as_slice());
        }
        acc
    });
    let mut m3 = tree_reduce(parts, |mut a, b| {
        a.add_assign(&b);
        a
    })
    .expect("non-empty");
    m3.scale(1.0 / (6.0 * n2));
    let mut correction = SymTensor3::t_operator(m1.as_slice());
    correction.scale(-1.0);
    m3.add_assign(&correction);

    Ok(Moments { m0, m1, m2, m3 })
}

/// Whitening matrix `W = U₂Σ₂^{-1/2}` from the rank-K SVD of `M2`.
pub fn whiten(m2: &Mat, k: usize) -> Result<Mat> {
    let d = m2.nrows();
    if m2.ncols() != d {
        return Err(Error::invalid("second moment must be square"));
    }
    if k == 0 || k > d {
        return Err(Error::invalid(format!(
            "cannot whiten {k} components in dimension {d}"
        )));
    }
    let dec = svd(m2, Some(k))?;
    let largest = dec.s[0];
    let kth = dec.s[k - 1];
    if !(kth > WHITEN_REL_FLOOR * largest) {
        return Err(Error::DegenerateMoment {
            k,
            value: kth,
            largest,
        });
    }
    let mut w = dec.u;
    for (j, s) in dec.s.iter().enumerate() {
        w.column_mut(j).scale_mut(1.0 / s.sqrt());
    }
    Ok(w)
}

/// `M3(W, W, W)`.
pub fn whitened_tensor(m3: &SymTensor3, w: &Mat) -> Result<SymTensor3> {
    m3.contract(w)
}

fn unit_start(dim: usize, seed: u64) -> Vector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let v = Vector::from_fn(dim, |_, _| rng.sample(StandardNormal));
        let n = v.norm();
        if n > 0.0 {
            return v / n;
        }
    }
}

/// Power iteration `u ← T(I,u,u)/‖T(I,u,u)‖`; returns `(λ, u)` with the sign
/// chosen so that `λ = T(u,u,u) ≥ 0`.
fn power_candidate(t: &SymTensor3, start: Vector, iters: usize) -> (f64, Vector) {
    let mut u = start;
    for _ in 0..iters {
        let map = tensor_apply(t, u.as_slice()).expect("dimension checked").map;
        let n = map.norm();
        if !(n > 0.0) || !n.is_finite() {
            break;
        }
        u = map / n;
    }
    let value = tensor_apply(t, u.as_slice()).expect("dimension checked").value;
    if value < 0.0 {
        (-value, -u)
    } else {
        (value, u)
    }
}

/// Extracts `k` eigenpairs of a symmetric tensor by power iteration with
/// random restarts and deflation `T ← T − λ u⊗u⊗u`.
///
/// In round `j`, restart `s` starts from a Gaussian direction seeded by
/// `(seed, j·restarts + s)`; the kept candidate maximises `λ`, ties going to
/// the lowest restart index.
pub fn robust_tensor_power(
    t: &SymTensor3,
    k: usize,
    restarts: usize,
    iters: usize,
    seed: u64,
) -> Result<Vec<(f64, Vector)>> {
    if restarts == 0 || iters == 0 {
        return Err(Error::invalid("restarts and iterations must be positive"));
    }
    if k == 0 {
        return Err(Error::invalid("need at least one component"));
    }
    let dim = t.dim();
    let mut residual = t.clone();
    let mut pairs = Vec::with_capacity(k);
    for round in 0..k {
        let candidates: Vec<(f64, Vector)> = (0..restarts)
            .into_par_iter()
            .map(|s| {
                let start = unit_start(dim, derive_seed(seed, (round * restarts + s) as u64));
                power_candidate(&residual, start, iters)
            })
            .collect();
        let mut best = 0;
        for (s, c) in candidates.iter().enumerate() {
            if c.0 > candidates[best].0 {
                best = s;
            }
        }
        let (lambda, u) = candidates.into_iter().nth(best).expect("restarts >= 1");
        if !(lambda >= COLLAPSE_FLOOR) {
            return Err(Error::RankCollapse(lambda));
        }
        residual.add_rank1(-lambda, u.as_slice());
        pairs.push((lambda, u));
    }
    Ok(pairs)
}

/// `ω_k = 1/ω̃_k²`, `β_k = ω̃_k W(WᵀW)^{-1} β̃_k`.
pub fn unwhiten(pairs: &[(f64, Vector)], w: &Mat) -> Result<MlrEstimate> {
    let gram = w.tr_mul(w);
    let inv = gram_inverse(&gram, 1e-12).ok_or(Error::DegenerateWhitening)?;
    let lift = w * inv;
    let mut est = MlrEstimate {
        betas: Vec::with_capacity(pairs.len()),
        weights: Vec::with_capacity(pairs.len()),
        eigenvalues: Vec::with_capacity(pairs.len()),
        weight_warnings: Vec::new(),
    };
    for (k, (lambda, b)) in pairs.iter().enumerate() {
        if b.len() != w.ncols() {
            return Err(Error::invalid("whitened eigenvector has the wrong dimension"));
        }
        let weight = 1.0 / (lambda * lambda);
        if !(weight > 0.0 && weight <= WEIGHT_WARN_ABOVE) {
            est.weight_warnings.push(k);
        }
        est.betas.push(*lambda * (&lift * b));
        est.weights.push(weight);
        est.eigenvalues.push(*lambda);
    }
    Ok(est)
}

/// Split → moments → whitening → tensor power iteration → unwhitening.
pub fn solve_mlr(samples: &[VecSample], k: usize, seed: u64, params: TensorParams) -> Result<MlrEstimate> {
    if samples.iter().all(|s| s.y == 0.0) {
        return Err(Error::RankCollapse(0.0));
    }
    let (first, second) = split_indices(samples.len(), derive_seed(seed, 0x5117))?;
    let pick = |idx: Vec<usize>| -> Vec<VecSample> { idx.into_iter().map(|i| samples[i].clone()).collect() };
    let mom = moments(&pick(first), &pick(second))?;
    let w = whiten(&mom.m2, k)?;
    let tw = whitened_tensor(&mom.m3, &w)?;
    let pairs = robust_tensor_power(
        &tw,
        k,
        params.restarts_for(k),
        params.iters,
        derive_seed(seed, 0x7e45),
    )?;
    unwhiten(&pairs, &w)
}
