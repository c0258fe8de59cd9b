use crate::error::{Error, Result};
use crate::linalg::{Mat, Vector};

/// Dense symmetric third-order tensor, `d³` entries with `T[i,j,k]` at
/// `(i·d + j)·d + k`.
///
/// Constructors only ever write symmetric combinations, so the storage is
/// symmetric without an explicit symmetrisation pass.
#[derive(Debug, Clone, PartialEq)]
pub struct SymTensor3 {
    dim: usize,
    data: Vec<f64>,
}

impl SymTensor3 {
    pub fn zeros(dim: usize) -> Self {
        SymTensor3 {
            dim,
            data: vec![0.0; dim * dim * dim],
        }
    }

    /// `Σ_k λ_k u_k⊗u_k⊗u_k`.
    pub fn from_cp(weights: &[f64], vectors: &[Vector]) -> Result<Self> {
        let dim = vectors
            .first()
            .map(|v| v.len())
            .ok_or_else(|| Error::invalid("no CP factors"))?;
        if weights.len() != vectors.len() || vectors.iter().any(|v| v.len() != dim) {
            return Err(Error::invalid("CP factors disagree in count or dimension"));
        }
        let mut t = SymTensor3::zeros(dim);
        for (w, v) in weights.iter().zip(vectors) {
            t.add_rank1(*w, v.as_slice());
        }
        Ok(t)
    }

    /// Symmetrises an arbitrary dense `d×d×d` array by averaging over the six
    /// index permutations.
    pub fn symmetrize(dim: usize, raw: &[f64]) -> Result<Self> {
        if raw.len() != dim * dim * dim {
            return Err(Error::invalid("raw tensor has the wrong number of entries"));
        }
        let at = |i: usize, j: usize, k: usize| raw[(i * dim + j) * dim + k];
        let mut t = SymTensor3::zeros(dim);
        for i in 0..dim {
            for j in 0..dim {
                for k in 0..dim {
                    t.data[(i * dim + j) * dim + k] =
                        (at(i, j, k) + at(i, k, j) + at(j, i, k) + at(j, k, i) + at(k, i, j) + at(k, j, i))
                            / 6.0;
                }
            }
        }
        Ok(t)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[(i * self.dim + j) * self.dim + k]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// `self += w·a⊗a⊗a`.
    pub fn add_rank1(&mut self, w: f64, a: &[f64]) {
        let d = self.dim;
        for i in 0..d {
            let wi = w * a[i];
            for j in 0..d {
                let wij = wi * a[j];
                let row = &mut self.data[(i * d + j) * d..(i * d + j + 1) * d];
                for (t, ak) in row.iter_mut().zip(a) {
                    *t += wij * ak;
                }
            }
        }
    }

    pub(crate) fn add_assign(&mut self, other: &SymTensor3) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub(crate) fn scale(&mut self, c: f64) {
        self.data.iter_mut().for_each(|x| *x *= c);
    }

    /// `T(m) = Σ_i (m⊗e_i⊗e_i + e_i⊗m⊗e_i + e_i⊗e_i⊗m)`.
    pub fn t_operator(m: &[f64]) -> Self {
        let d = m.len();
        let mut t = SymTensor3::zeros(d);
        for i in 0..d {
            for a in 0..d {
                // m⊗e_i⊗e_i contributes m_a at (a, i, i), and likewise for the
                // other two slots.
                t.data[(a * d + i) * d + i] += m[a];
                t.data[(i * d + a) * d + i] += m[a];
                t.data[(i * d + i) * d + a] += m[a];
            }
        }
        t
    }

    /// Multilinear contraction `T(W, W, W)`:
    /// `[T(W,W,W)]_{m,n,p} = Σ T_{ijk} W_{im} W_{jn} W_{kp}`.
    pub fn contract(&self, w: &Mat) -> Result<SymTensor3> {
        let d = self.dim;
        if w.nrows() != d {
            return Err(Error::invalid(format!(
                "contraction matrix has {} rows, tensor dimension is {d}",
                w.nrows()
            )));
        }
        let k = w.ncols();
        // Contract one slot at a time: d³ → d²k → dk² → k³.
        let mut t1 = vec![0.0; d * d * k];
        for ij in 0..d * d {
            let row = &self.data[ij * d..(ij + 1) * d];
            for p in 0..k {
                t1[ij * k + p] = crate::linalg::dot(row, w.column(p).as_slice());
            }
        }
        let mut t2 = vec![0.0; d * k * k];
        for i in 0..d {
            for j in 0..d {
                for n in 0..k {
                    let wjn = w[(j, n)];
                    for p in 0..k {
                        t2[(i * k + n) * k + p] += wjn * t1[(i * d + j) * k + p];
                    }
                }
            }
        }
        let mut out = SymTensor3::zeros(k);
        for i in 0..d {
            for m in 0..k {
                let wim = w[(i, m)];
                for np in 0..k * k {
                    out.data[m * k * k + np] += wim * t2[i * k * k + np];
                }
            }
        }
        Ok(out)
    }
}

/// `T(u,u,u)` together with the map `T(I,u,u)`.
#[derive(Debug, Clone)]
pub struct TensorApply {
    pub value: f64,
    pub map: Vector,
}

pub fn tensor_apply(t: &SymTensor3, u: &[f64]) -> Result<TensorApply> {
    let d = t.dim;
    if u.len() != d {
        return Err(Error::invalid("vector dimension does not match tensor"));
    }
    let mut map = Vector::zeros(d);
    for m in 0..d {
        let mut acc = 0.0;
        for j in 0..d {
            let row = &t.data[(m * d + j) * d..(m * d + j + 1) * d];
            acc += u[j] * crate::linalg::dot(row, u);
        }
        map[m] = acc;
    }
    let value = crate::linalg::dot(map.as_slice(), u);
    Ok(TensorApply { value, map })
}
