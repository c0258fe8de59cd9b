//! Evaluation metrics.

use crate::error::{Error, Result};
use crate::linalg::{inner, orthonormality_residual, singular_values, Mat};

/// `‖m − m*‖_F / ‖m*‖_F`.
pub fn rel_fro_error(m: &Mat, mstar: &Mat) -> Result<f64> {
    if m.shape() != mstar.shape() {
        return Err(Error::invalid(format!(
            "shape mismatch {:?} vs {:?}",
            m.shape(),
            mstar.shape()
        )));
    }
    let denom = mstar.norm();
    if denom == 0.0 {
        return Err(Error::invalid("reference matrix has zero norm"));
    }
    Ok((m - mstar).norm() / denom)
}

/// Spectral norm of the projector difference `ÛÛᵀ − U*U*ᵀ`.
pub fn subspace_distance(u_hat: &Mat, u_star: &Mat) -> Result<f64> {
    if u_hat.nrows() != u_star.nrows() {
        return Err(Error::invalid(
            "subspace bases live in different ambient dimensions",
        ));
    }
    for q in [u_hat, u_star] {
        if orthonormality_residual(q) > 1e-8 {
            return Err(Error::invalid("subspace basis is not orthonormal"));
        }
    }
    let diff = u_hat * u_hat.transpose() - u_star * u_star.transpose();
    let s = singular_values(&diff)?;
    Ok(s[0].min(1.0))
}

/// `‖M*‖_F² / σ²`; `+∞` when `σ = 0`.
pub fn snr(mstar: &Mat, sigma: f64) -> Result<f64> {
    if !(sigma >= 0.0) {
        return Err(Error::invalid(format!("noise level must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(mstar.norm_squared() / (sigma * sigma))
}

/// Restricted-isometry deficit of a design family on one pair `(x, z)`:
/// `|(1/m)Σ⟨A_i,x⟩⟨A_i,z⟩ − ⟨x,z⟩| / (‖x‖_F‖z‖_F)`.
pub fn rip_deficit(designs: &[Mat], x: &Mat, z: &Mat) -> Result<f64> {
    if designs.is_empty() {
        return Err(Error::invalid("empty design list"));
    }
    let shape = x.shape();
    if z.shape() != shape || designs.iter().any(|a| a.shape() != shape) {
        return Err(Error::invalid("designs and test matrices differ in shape"));
    }
    let (nx, nz) = (x.norm(), z.norm());
    if nx == 0.0 || nz == 0.0 {
        return Err(Error::invalid("test matrices must be nonzero"));
    }
    let m = designs.len() as f64;
    let empirical: f64 = designs.iter().map(|a| inner(a, x) * inner(a, z)).sum::<f64>() / m;
    Ok((empirical - inner(x, z)).abs() / (nx * nz))
}
