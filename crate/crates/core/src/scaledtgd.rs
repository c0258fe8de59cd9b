//! Stage 3: scaled truncated gradient descent on a factor pair.
//!
//! Each iteration keeps the samples whose absolute residual is at most the
//! α-quantile `τ`, and moves both factors along the preconditioned gradient
//! of that truncated loss:
//!
//! ```text
//! L⁺ = L − (η/N) Σ_{i∈Ω} r_i A_i R (RᵀR)⁻¹
//! R⁺ = R − (η/N) Σ_{i∈Ω} r_i A_iᵀ L (LᵀL)⁻¹
//! ```
//!
//! Both updates read the old `(L, R)`. The normalisation is by the full
//! sample count `N`, which is what the default step size `η = 1.3/p`
//! assumes.

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::init::FactorPair;
use crate::linalg::{axpy, dot, gram_inverse, Mat};
use crate::metrics::rel_fro_error;
use crate::reduce::{map_chunks, tree_reduce};
use crate::stats::finite_quantile;

const GRAM_REL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TgdConfig {
    pub eta: f64,
    pub alpha: f64,
    pub t0: usize,
    /// Stop once `‖M⁺ − M‖_F / ‖M‖_F` falls below this; `0` disables.
    pub early_stop_tol: f64,
}

impl TgdConfig {
    pub fn new(eta: f64, alpha: f64, t0: usize) -> Self {
        TgdConfig {
            eta,
            alpha,
            t0,
            early_stop_tol: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return Err(Error::Config(format!(
                "step size must be positive, got {}",
                self.eta
            )));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::Config(format!(
                "truncation fraction {} outside (0, 1]",
                self.alpha
            )));
        }
        if !(self.early_stop_tol >= 0.0) {
            return Err(Error::Config("early-stop tolerance must be >= 0".into()));
        }
        Ok(())
    }
}

/// State at the start of iteration `iter`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TgdRecord {
    pub iter: usize,
    pub tau: f64,
    pub kept: usize,
    pub rel_error: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TgdTrace {
    pub records: Vec<TgdRecord>,
    /// Iteration at which the relative-change test fired, if it did.
    pub stopped_early_at: Option<usize>,
}

impl TgdTrace {
    pub fn last_error(&self) -> Option<f64> {
        self.records.last().and_then(|r| r.rel_error)
    }

    /// First iteration whose error is at or below `target`.
    pub fn first_below(&self, target: f64) -> Option<usize> {
        self.records
            .iter()
            .find(|r| r.rel_error.is_some_and(|e| e <= target))
            .map(|r| r.iter)
    }
}

/// `r_i = ⟨A_i, L Rᵀ⟩ − y_i`, in sample order.
pub fn residuals(d: &Dataset, f: &FactorPair) -> Result<Vec<f64>> {
    let m = f.product();
    if m.shape() != (d.n1(), d.n2()) {
        return Err(Error::invalid(format!(
            "factor product is {:?}, designs are {}x{}",
            m.shape(),
            d.n1(),
            d.n2()
        )));
    }
    Ok(residuals_of(d, &m))
}

fn residuals_of(d: &Dataset, m: &Mat) -> Vec<f64> {
    let parts = map_chunks(d.len(), |range| {
        let mut out = Vec::with_capacity(range.len());
        d.visit(range, |_, a, y| out.push(dot(a, m.as_slice()) - y));
        out
    });
    parts.concat()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Truncation {
    pub tau: f64,
    /// Kept indices, increasing.
    pub indices: Vec<usize>,
}

/// `τ = Q_α(|r|)` and `Ω = {i : |r_i| ≤ τ}`; ties at `τ` are all kept.
pub fn truncation_set(abs_residuals: &[f64], alpha: f64) -> Result<Truncation> {
    let tau = finite_quantile(abs_residuals, alpha)?;
    let indices = abs_residuals
        .iter()
        .enumerate()
        .filter(|(_, r)| **r <= tau)
        .map(|(i, _)| i)
        .collect();
    Ok(Truncation { tau, indices })
}

#[derive(Debug, Clone)]
pub struct Step {
    pub next: FactorPair,
    pub tau: f64,
    pub kept: usize,
}

struct Evaluated {
    res: Vec<f64>,
    tau: f64,
    kept: usize,
}

fn evaluate(d: &Dataset, m: &Mat, alpha: f64) -> Result<Evaluated> {
    let res = residuals_of(d, m);
    if res.iter().any(|r| !r.is_finite()) {
        return Err(Error::NonFinite("residuals diverged".into()));
    }
    let abs: Vec<f64> = res.iter().map(|r| r.abs()).collect();
    let tau = finite_quantile(&abs, alpha)?;
    let kept = abs.iter().filter(|r| **r <= tau).count();
    Ok(Evaluated { res, tau, kept })
}

/// `G = Σ_{|r_i| ≤ τ} r_i A_i`.
fn truncated_gradient(d: &Dataset, ev: &Evaluated) -> Mat {
    let e = d.n1() * d.n2();
    let parts = map_chunks(d.len(), |range| {
        let mut acc = vec![0.0; e];
        d.visit(range, |i, a, _| {
            let r = ev.res[i];
            if r.abs() <= ev.tau && r != 0.0 {
                axpy(r, a, &mut acc);
            }
        });
        acc
    });
    let g = tree_reduce(parts, |mut a, b| {
        axpy(1.0, &b, &mut a);
        a
    })
    .unwrap_or_else(|| vec![0.0; e]);
    Mat::from_vec(d.n1(), d.n2(), g)
}

fn singular_at(iter: usize, trace: TgdTrace) -> Error {
    Error::PreconditionerSingular { iter, trace }
}

fn update(f: &FactorPair, g: &Mat, scale: f64) -> Option<FactorPair> {
    let rinv = gram_inverse(&f.r.tr_mul(&f.r), GRAM_REL_TOL)?;
    let linv = gram_inverse(&f.l.tr_mul(&f.l), GRAM_REL_TOL)?;
    let l = &f.l - scale * (g * &f.r * rinv);
    let r = &f.r - scale * (g.tr_mul(&f.l) * linv);
    Some(FactorPair { l, r })
}

/// One simultaneous update of both factors.
pub fn scaledtgd_step(d: &Dataset, f: &FactorPair, eta: f64, alpha: f64) -> Result<Step> {
    TgdConfig::new(eta, alpha, 1).validate()?;
    let m = f.product();
    if m.shape() != (d.n1(), d.n2()) || f.l.ncols() != f.r.ncols() {
        return Err(Error::invalid("factor shapes do not match the designs"));
    }
    let ev = evaluate(d, &m, alpha)?;
    let g = truncated_gradient(d, &ev);
    let next = update(f, &g, eta / d.len() as f64).ok_or_else(|| singular_at(0, TgdTrace::default()))?;
    Ok(Step {
        next,
        tau: ev.tau,
        kept: ev.kept,
    })
}

#[derive(Debug, Clone)]
pub struct TgdOutcome {
    pub last: FactorPair,
    pub trace: TgdTrace,
}

/// Runs up to `cfg.t0` steps from `f0`.
///
/// The trace has one row per visited iterate `t = 0..=T`, each holding `τ`
/// and `|Ω|` evaluated at that iterate and, when `truth` is given, its
/// relative error.
pub fn run_scaledtgd(
    d: &Dataset,
    f0: FactorPair,
    cfg: &TgdConfig,
    truth: Option<&Mat>,
) -> Result<TgdOutcome> {
    cfg.validate()?;
    if f0.l.nrows() != d.n1() || f0.r.nrows() != d.n2() || f0.l.ncols() != f0.r.ncols() {
        return Err(Error::invalid("initial factors do not match the designs"));
    }
    let scale = cfg.eta / d.len() as f64;
    let mut f = f0;
    let mut trace = TgdTrace::default();
    let mut m = f.product();
    for t in 0..=cfg.t0 {
        let ev = evaluate(d, &m, cfg.alpha)?;
        let rel_error = truth.map(|x| rel_fro_error(&m, x)).transpose()?;
        trace.records.push(TgdRecord {
            iter: t,
            tau: ev.tau,
            kept: ev.kept,
            rel_error,
        });
        if t == cfg.t0 {
            break;
        }
        let g = truncated_gradient(d, &ev);
        let next = match update(&f, &g, scale) {
            Some(n) => n,
            None => return Err(singular_at(t, trace)),
        };
        let m_next = next.product();
        let change = (&m_next - &m).norm() / m.norm();
        f = next;
        m = m_next;
        if cfg.early_stop_tol > 0.0 && change < cfg.early_stop_tol {
            trace.stopped_early_at = Some(t + 1);
            let ev = evaluate(d, &m, cfg.alpha)?;
            trace.records.push(TgdRecord {
                iter: t + 1,
                tau: ev.tau,
                kept: ev.kept,
                rel_error: truth.map(|x| rel_fro_error(&m, x)).transpose()?,
            });
            break;
        }
    }
    Ok(TgdOutcome { last: f, trace })
}
