//! Planted ground truths for the mixed sensing model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{orthonormality_residual, Mat};

/// SplitMix64 finaliser; used to derive independent child seeds.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `n×r` matrix with orthonormal columns: the Q factor of an i.i.d. Gaussian
/// matrix, with columns signed so that R has a positive diagonal.
pub fn random_orthonormal(n: usize, r: usize, seed: u64) -> Result<Mat> {
    if r == 0 || r > n {
        return Err(Error::invalid(format!(
            "cannot draw {r} orthonormal columns in R^{n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = Mat::from_fn(n, r, |_, _| rng.sample(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let rr = qr.r();
    for j in 0..r {
        if rr[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    Ok(q)
}

/// One planted component `M* = U* diag(σ*) V*ᵀ` with its mixing proportion.
#[derive(Debug, Clone)]
pub struct Component {
    pub u_star: Mat,
    pub sigma_star: Vec<f64>,
    pub v_star: Mat,
    pub p: f64,
}

impl Component {
    pub fn rank(&self) -> usize {
        self.sigma_star.len()
    }

    pub fn matrix(&self) -> Mat {
        let mut us = self.u_star.clone();
        for (j, s) in self.sigma_star.iter().enumerate() {
            us.column_mut(j).scale_mut(*s);
        }
        us * self.v_star.transpose()
    }

    /// `σ_1 / σ_r`.
    pub fn condition_number(&self) -> f64 {
        self.sigma_star[0] / self.sigma_star[self.rank() - 1]
    }
}

#[derive(Debug, Clone)]
pub struct GroundTruth {
    n1: usize,
    n2: usize,
    components: Vec<Component>,
    matrices: Vec<Mat>,
}

impl GroundTruth {
    /// Validates the component invariants; proportions within 1e-9 of summing
    /// to one are renormalised.
    pub fn new(n1: usize, n2: usize, mut components: Vec<Component>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::invalid("ground truth needs at least one component"));
        }
        for (k, c) in components.iter().enumerate() {
            let r = c.rank();
            if r == 0 || r > n1.min(n2) {
                return Err(Error::invalid(format!("component {k}: rank {r} out of range")));
            }
            if c.u_star.shape() != (n1, r) || c.v_star.shape() != (n2, r) {
                return Err(Error::invalid(format!("component {k}: factor shapes mismatch")));
            }
            if orthonormality_residual(&c.u_star) > 1e-8 || orthonormality_residual(&c.v_star) > 1e-8 {
                return Err(Error::invalid(format!("component {k}: factors not orthonormal")));
            }
            if c.sigma_star.iter().any(|s| !(*s > 0.0) || !s.is_finite())
                || c.sigma_star.windows(2).any(|w| w[0] < w[1])
            {
                return Err(Error::invalid(format!(
                    "component {k}: spectrum must be positive and descending"
                )));
            }
            if !(c.p > 0.0 && c.p < 1.0) && !(components.len() == 1 && c.p == 1.0) {
                return Err(Error::invalid(format!(
                    "component {k}: proportion {} outside (0,1)",
                    c.p
                )));
            }
        }
        let total: f64 = components.iter().map(|c| c.p).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("proportions sum to {total}, not 1")));
        }
        for c in &mut components {
            c.p /= total;
        }
        let matrices = components.iter().map(Component::matrix).collect();
        Ok(GroundTruth {
            n1,
            n2,
            components,
            matrices,
        })
    }

    pub fn n1(&self) -> usize {
        self.n1
    }

    pub fn n2(&self) -> usize {
        self.n2
    }

    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    /// The planted matrices `M_k*`.
    pub fn matrices(&self) -> &[Mat] {
        &self.matrices
    }

    pub fn proportions(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.p).collect()
    }

    pub fn ranks(&self) -> Vec<usize> {
        self.components.iter().map(Component::rank).collect()
    }

    pub fn max_rank(&self) -> usize {
        self.components.iter().map(Component::rank).max().unwrap_or(0)
    }

    /// `Σ_k p_k M_k*`, the expectation of the data matrix.
    pub fn mean_matrix(&self) -> Mat {
        let mut acc = Mat::zeros(self.n1, self.n2);
        for (c, m) in self.components.iter().zip(&self.matrices) {
            acc += c.p * m;
        }
        acc
    }

    /// `max ‖M_k*‖_F / min ‖M_k*‖_F`.
    pub fn balance(&self) -> f64 {
        let norms: Vec<f64> = self.matrices.iter().map(|m| m.norm()).collect();
        let max = norms.iter().cloned().fold(f64::MIN, f64::max);
        let min = norms.iter().cloned().fold(f64::MAX, f64::min);
        max / min
    }

    /// Worst per-component condition number.
    pub fn kappa(&self) -> f64 {
        self.components
            .iter()
            .map(Component::condition_number)
            .fold(1.0, f64::max)
    }

    /// Orthonormal bases of the joint column and row spaces.
    pub fn joint_subspaces(&self) -> Result<(Mat, Mat)> {
        let stack = |pick: fn(&Component) -> &Mat, rows: usize| -> Result<Mat> {
            let total: usize = self.components.iter().map(Component::rank).sum();
            let mut all = Mat::zeros(rows, total);
            let mut col = 0;
            for c in &self.components {
                let f = pick(c);
                all.columns_mut(col, f.ncols()).copy_from(f);
                col += f.ncols();
            }
            let d = crate::linalg::svd(&all, None)?;
            let tol = d.s[0] * 1e-10;
            let rank = d.s.iter().filter(|s| **s > tol).count();
            Ok(d.u.columns(0, rank).into_owned())
        };
        Ok((stack(|c| &c.u_star, self.n1)?, stack(|c| &c.v_star, self.n2)?))
    }
}

/// Builds `K` components from independent random subspaces.
///
/// Component `k` draws `U_k*` and `V_k*` from seeds derived from `(seed, k)`.
pub fn make_ground_truth(
    n1: usize,
    n2: usize,
    ranks: &[usize],
    proportions: &[f64],
    spectra: &[Vec<f64>],
    seed: u64,
) -> Result<GroundTruth> {
    let k = ranks.len();
    if k == 0 || proportions.len() != k || spectra.len() != k {
        return Err(Error::invalid(
            "ranks, proportions and spectra must be non-empty and of equal length",
        ));
    }
    let mut comps = Vec::with_capacity(k);
    for i in 0..k {
        if spectra[i].len() != ranks[i] {
            return Err(Error::invalid(format!(
                "component {i}: spectrum length {} != rank {}",
                spectra[i].len(),
                ranks[i]
            )));
        }
        comps.push(Component {
            u_star: random_orthonormal(n1, ranks[i], derive_seed(seed, 2 * i as u64))?,
            sigma_star: spectra[i].clone(),
            v_star: random_orthonormal(n2, ranks[i], derive_seed(seed, 2 * i as u64 + 1))?,
            p: proportions[i],
        });
    }
    GroundTruth::new(n1, n2, comps)
}

/// The setting used throughout the experiments: equal proportions, rank `r`,
/// identity spectra.
pub fn equal_ground_truth(n: usize, r: usize, k: usize, seed: u64) -> Result<GroundTruth> {
    make_ground_truth(
        n,
        n,
        &vec![r; k],
        &vec![1.0 / k as f64; k],
        &vec![vec![1.0; r]; k],
        seed,
    )
}

/// Smallest `μ` with `‖U_i*ᵀU_j*‖_F ≤ μr/√n1` and `‖V_i*ᵀV_j*‖_F ≤ μr/√n2`
/// for all pairs, `r = max_k r_k`. Zero when `K = 1`.
pub fn incoherence(gt: &GroundTruth) -> f64 {
    let r = gt.max_rank() as f64;
    let (s1, s2) = ((gt.n1 as f64).sqrt(), (gt.n2 as f64).sqrt());
    let c = &gt.components;
    let mut mu = 0.0f64;
    for i in 0..c.len() {
        for j in i + 1..c.len() {
            let cu = c[i].u_star.tr_mul(&c[j].u_star).norm() * s1 / r;
            let cv = c[i].v_star.tr_mul(&c[j].v_star).norm() * s2 / r;
            mu = mu.max(cu).max(cv);
        }
    }
    mu
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Assumption1 {
    pub holds: bool,
    pub mu: f64,
    pub bound: f64,
    pub gamma: f64,
}

/// Weak-correlation check: `μ ≤ √min(n1,n2) / (2r·max{K, √K·Γ})`.
pub fn check_assumption1(gt: &GroundTruth) -> Assumption1 {
    let mu = incoherence(gt);
    let gamma = gt.balance();
    let k = gt.k() as f64;
    let r = gt.max_rank() as f64;
    let bound = (gt.n1.min(gt.n2) as f64).sqrt() / (2.0 * r * k.max(k.sqrt() * gamma));
    Assumption1 {
        holds: mu <= bound,
        mu,
        bound,
        gamma,
    }
}

/// Proportions are considered badly balanced when some `p_k < 1/(4K)`.
pub fn is_well_balanced(proportions: &[f64]) -> bool {
    let k = proportions.len() as f64;
    proportions.iter().all(|p| *p >= 1.0 / (4.0 * k))
}
