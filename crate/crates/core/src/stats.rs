//! Order statistics and Gaussian helpers.

use statrs::function::erf::erf;

use crate::error::{Error, Result};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal density.
pub fn normal_pdf(t: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * t * t).exp()
}

/// Rank (1-based) of the α-quantile among `m` values: the smallest `k` with
/// `k/m ≥ α`.
pub(crate) fn quantile_rank(m: usize, alpha: f64) -> usize {
    let mf = m as f64;
    let mut k = ((alpha * mf).ceil() as usize).clamp(1, m);
    while k > 1 && (k - 1) as f64 / mf >= alpha {
        k -= 1;
    }
    while k < m && (k as f64) / mf < alpha {
        k += 1;
    }
    k
}

/// α-quantile of a finite set: `inf{t : #{x ≤ t}/m ≥ α}`, which is the
/// `⌈α·m⌉`-th smallest element. No interpolation.
pub fn finite_quantile(values: &[f64], alpha: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::invalid("quantile of an empty list"));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::invalid(format!("quantile level {alpha} outside (0, 1]")));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::invalid("quantile input contains NaN"));
    }
    let k = quantile_rank(values.len(), alpha);
    let mut scratch = values.to_vec();
    let (_, kth, _) = scratch.select_nth_unstable_by(k - 1, f64::total_cmp);
    Ok(*kth)
}

/// `w(x) = ∫_{−x}^{x} t² φ(t) dt = 2Φ(x) − 1 − 2xφ(x)`: the share of a
/// standard Gaussian's variance carried by `|t| ≤ x`.
pub fn w_value(x: f64) -> Result<f64> {
    if !(x >= 0.0) || !x.is_finite() {
        return Err(Error::invalid(format!("w(x) needs finite x >= 0, got {x}")));
    }
    // 2Φ(x) − 1 = erf(x/√2)
    let v = erf(x / std::f64::consts::SQRT_2) - 2.0 * x * normal_pdf(x);
    Ok(v.max(0.0))
}
