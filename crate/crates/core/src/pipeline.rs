//! The three stages end to end, with the default parameter policy and
//! permutation-aligned evaluation against a planted truth.

use rayon::prelude::*;
use serde::{Deserialize, Serialize, Serializer};

use crate::align::{align_components, Alignment};
use crate::dataset::Dataset;
use crate::error::{Error, Result, Stage};
use crate::init::{initialize_all, Initialization};
use crate::linalg::Mat;
use crate::metrics::{rel_fro_error, subspace_distance};
use crate::mlr::TensorParams;
use crate::scaledtgd::{run_scaledtgd, TgdConfig, TgdTrace};
use crate::spectral::{data_matrix, estimate_rank, subspace_estimate, DEFAULT_GAP_FLOOR};
use crate::synth::{derive_seed, GroundTruth};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Number of mixture components.
    pub k: usize,
    /// Joint rank `R`; estimated from the data-matrix spectrum when absent.
    pub supplied_r: Option<usize>,
    /// Component ranks in extraction order; estimated when absent.
    pub supplied_ranks: Option<Vec<usize>>,
    /// Mixing proportions used by the step-size policy, in extraction order.
    pub supplied_p: Option<Vec<f64>>,
    /// `η_k = eta_scale / p_k`.
    pub eta_scale: f64,
    /// `α_k = alpha_scale · p_k`.
    pub alpha_scale: f64,
    pub t0: usize,
    pub early_stop_tol: f64,
    /// Run stage 2 on the main sample set instead of a separate one.
    pub reuse_samples: bool,
    /// Enforces the conservative parameter ranges, sample splitting, and
    /// takes `p_k` from the planted truth when one is supplied.
    pub theory_mode: bool,
    pub gap_floor: f64,
    pub seed: u64,
    pub tensor: TensorParams,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            k: 1,
            supplied_r: None,
            supplied_ranks: None,
            supplied_p: None,
            eta_scale: 1.3,
            alpha_scale: 0.8,
            t0: 200,
            early_stop_tol: 1e-12,
            reuse_samples: true,
            theory_mode: false,
            gap_floor: DEFAULT_GAP_FLOOR,
            seed: 0,
            tensor: TensorParams::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.check(1)
    }

    fn check(&self, min_t0: usize) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if !(self.eta_scale > 0.0 && self.eta_scale <= 1.3) {
            return bad(format!("eta_scale {} outside (0, 1.3]", self.eta_scale));
        }
        let (lo, hi) = if self.theory_mode { (0.6, 0.8) } else { (0.0, 1.0) };
        let alpha_ok = if self.theory_mode {
            self.alpha_scale >= lo && self.alpha_scale <= hi
        } else {
            self.alpha_scale > lo && self.alpha_scale <= hi
        };
        if !alpha_ok {
            return bad(format!(
                "alpha_scale {} outside the allowed range ({lo}, {hi}]{}",
                self.alpha_scale,
                if self.theory_mode { " for theory mode" } else { "" }
            ));
        }
        if self.t0 < min_t0 {
            return bad(format!("t0 must be at least {min_t0}"));
        }
        if !(self.early_stop_tol >= 0.0) {
            return bad("early_stop_tol must be >= 0".into());
        }
        if !(self.gap_floor > 0.0 && self.gap_floor < 1.0) {
            return bad(format!("gap_floor {} outside (0, 1)", self.gap_floor));
        }
        if self.supplied_r == Some(0) {
            return bad("supplied_r must be positive".into());
        }
        if let Some(r) = &self.supplied_ranks {
            if r.len() != self.k || r.contains(&0) {
                return bad(format!("supplied_ranks must list {} positive ranks", self.k));
            }
        }
        if let Some(p) = &self.supplied_p {
            if p.len() != self.k || p.iter().any(|x| !(*x > 0.0 && *x <= 1.0)) {
                return bad(format!("supplied_p must list {} proportions in (0, 1]", self.k));
            }
        }
        if self.tensor.iters == 0 || self.tensor.restarts == Some(0) {
            return bad("tensor restarts and iterations must be positive".into());
        }
        Ok(())
    }

    /// Sample splitting is on in theory mode or when reuse is switched off.
    pub fn splits_samples(&self) -> bool {
        self.theory_mode || !self.reuse_samples
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepParams {
    pub eta: f64,
    pub alpha: f64,
}

/// `η_k = eta_scale/p_k`, `α_k = alpha_scale·p_k`.
pub fn default_params(p: &[f64], cfg: &PipelineConfig) -> Result<Vec<StepParams>> {
    cfg.validate()?;
    step_params(p, cfg)
}

fn step_params(p: &[f64], cfg: &PipelineConfig) -> Result<Vec<StepParams>> {
    p.iter()
        .map(|&pk| {
            if !(pk > 0.0 && pk <= 1.0) {
                return Err(Error::Config(format!("proportion {pk} outside (0, 1]")));
            }
            Ok(StepParams {
                eta: cfg.eta_scale / pk,
                alpha: cfg.alpha_scale * pk,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProportionSource {
    Supplied,
    Truth,
    Estimated,
}

#[derive(Debug, Clone, Serialize)]
pub struct Stage1Report {
    #[serde(rename = "R_used")]
    pub r_used: usize,
    pub r_estimated: bool,
    pub singular_values: Vec<f64>,
    pub dist_u: Option<f64>,
    pub dist_v: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ComponentReport {
    pub rank: usize,
    pub weight: f64,
    pub p_used: f64,
    pub eta: f64,
    pub alpha: f64,
    /// Planted component this estimate was matched to.
    pub truth_index: Option<usize>,
    pub init_error: Option<f64>,
    pub rel_error: Option<f64>,
    pub trace: TgdTrace,
}

#[derive(Debug, Clone, Serialize)]
pub struct RecoveryReport {
    pub k: usize,
    pub seed: u64,
    pub stage1: Stage1Report,
    pub proportion_source: ProportionSource,
    pub weights: Vec<f64>,
    /// `permutation[k]` is the estimate matched to planted component `k`.
    pub permutation: Option<Vec<usize>>,
    pub per_component: Vec<ComponentReport>,
    pub warnings: Vec<String>,
    #[serde(serialize_with = "rows")]
    pub estimates: Vec<Mat>,
}

fn rows<S: Serializer>(mats: &[Mat], s: S) -> std::result::Result<S::Ok, S::Error> {
    let nested: Vec<Vec<Vec<f64>>> = mats
        .iter()
        .map(|m| m.row_iter().map(|r| r.iter().copied().collect()).collect())
        .collect();
    nested.serialize(s)
}

impl RecoveryReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::invalid(format!("report serialisation: {e}")))
    }

    pub fn max_rel_error(&self) -> Option<f64> {
        self.per_component
            .iter()
            .map(|c| c.rel_error)
            .collect::<Option<Vec<_>>>()
            .map(|v| v.into_iter().fold(0.0, f64::max))
    }
}

/// Stage 1 → stage 2 → `K` concurrent stage-3 runs.
///
/// `d_mlr` feeds stage 2 when samples are split; `truth` is used for
/// evaluation and, in theory mode, for the mixing proportions.
pub fn run_pipeline(
    d_main: &Dataset,
    d_mlr: Option<&Dataset>,
    cfg: &PipelineConfig,
    truth: Option<&GroundTruth>,
) -> Result<RecoveryReport> {
    cfg.validate()?;
    execute(d_main, d_mlr, cfg, truth)
}

/// [`run_pipeline`] that also accepts `t0 = 0`, stopping right after
/// initialisation; used to inspect the starting point of the refinement.
pub fn inspect_pipeline(
    d_main: &Dataset,
    d_mlr: Option<&Dataset>,
    cfg: &PipelineConfig,
    truth: Option<&GroundTruth>,
) -> Result<RecoveryReport> {
    cfg.check(0)?;
    execute(d_main, d_mlr, cfg, truth)
}

fn execute(
    d_main: &Dataset,
    d_mlr: Option<&Dataset>,
    cfg: &PipelineConfig,
    truth: Option<&GroundTruth>,
) -> Result<RecoveryReport> {
    let k = cfg.k;
    let mut warnings = Vec::new();
    let d_init = if cfg.splits_samples() {
        d_mlr.ok_or_else(|| Error::Config("sample splitting needs a separate stage-2 dataset".into()))?
    } else {
        d_main
    };
    if d_init.n1() != d_main.n1() || d_init.n2() != d_main.n2() {
        return Err(Error::invalid("stage-2 dataset has a different matrix shape"));
    }
    if let Some(gt) = truth {
        if gt.k() != k || gt.n1() != d_main.n1() || gt.n2() != d_main.n2() {
            return Err(Error::invalid("ground truth does not match the data or k"));
        }
    }

    // Stage 1.
    let tag1 = |e: Error| e.at(Stage::Subspace, None);
    let y = data_matrix(d_main).map_err(tag1)?;
    let spectrum = crate::linalg::singular_values(&y).map_err(tag1)?;
    let (r_used, r_estimated) = match cfg.supplied_r {
        Some(r) => (r, false),
        None => {
            let max_rank = (spectrum.len() / 2).max(1);
            let est = estimate_rank(&spectrum, max_rank, cfg.gap_floor).map_err(tag1)?;
            if est.degenerate {
                return Err(tag1(Error::invalid("data matrix is numerically zero")));
            }
            (est.rank, true)
        }
    };
    let sub = subspace_estimate(&y, r_used).map_err(tag1)?;
    let (dist_u, dist_v) = match truth {
        Some(gt) => {
            let (u, v) = gt.joint_subspaces().map_err(tag1)?;
            (
                Some(subspace_distance(&sub.u, &u).map_err(tag1)?),
                Some(subspace_distance(&sub.v, &v).map_err(tag1)?),
            )
        }
        None => (None, None),
    };
    if let Some(gt) = truth {
        let r_true = gt.joint_subspaces().map(|(u, _)| u.ncols()).unwrap_or(0);
        if r_true != r_used {
            warnings.push(format!(
                "joint rank {r_used} differs from the planted joint rank {r_true}"
            ));
        }
    }
    let stage1 = Stage1Report {
        r_used,
        r_estimated,
        singular_values: spectrum,
        dist_u,
        dist_v,
    };

    // Stage 2.
    let Initialization { mlr, ranks, factors } = initialize_all(
        d_init,
        &sub,
        k,
        cfg.supplied_ranks.as_deref(),
        cfg.gap_floor,
        derive_seed(cfg.seed, 2),
        cfg.tensor,
    )
    .map_err(|e| e.at(Stage::Initialization, None))?;
    for &j in &mlr.weight_warnings {
        warnings.push(format!(
            "component {j}: estimated weight {:.4} outside (0, 1.5]",
            mlr.weights[j]
        ));
    }
    let init_mats: Vec<Mat> = factors.iter().map(|f| f.product()).collect();
    let init_align = match truth {
        Some(gt) => Some(align_components(&init_mats, gt.matrices())?),
        None => None,
    };

    let (p, source) = if let Some(p) = &cfg.supplied_p {
        (p.clone(), ProportionSource::Supplied)
    } else if let (true, Some(gt), Some(al)) = (cfg.theory_mode, truth, &init_align) {
        let props = gt.proportions();
        (
            al.truth_of().iter().map(|&t| props[t]).collect(),
            ProportionSource::Truth,
        )
    } else {
        let p = mlr
            .weights
            .iter()
            .enumerate()
            .map(|(j, &w)| {
                if w > 1.0 {
                    warnings.push(format!(
                        "component {j}: weight {w:.4} clamped to 1 for the step-size policy"
                    ));
                }
                w.min(1.0)
            })
            .collect();
        (p, ProportionSource::Estimated)
    };
    let params = step_params(&p, cfg)?;

    // Stage 3.
    let truth_for = |j: usize| -> Option<&Mat> {
        let (gt, al) = (truth?, init_align.as_ref()?);
        Some(&gt.matrices()[al.truth_of()[j]])
    };
    let runs: Vec<Result<_>> = factors
        .into_par_iter()
        .enumerate()
        .map(|(j, f0)| {
            let tgd = TgdConfig {
                eta: params[j].eta,
                alpha: params[j].alpha,
                t0: cfg.t0,
                early_stop_tol: cfg.early_stop_tol,
            };
            run_scaledtgd(d_main, f0, &tgd, truth_for(j)).map_err(|e| e.at(Stage::Refinement, Some(j)))
        })
        .collect();
    let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
    let estimates: Vec<Mat> = runs.iter().map(|r| r.last.product()).collect();

    let final_align: Option<Alignment> = match truth {
        Some(gt) => Some(align_components(&estimates, gt.matrices())?),
        None => None,
    };
    if let (Some(a), Some(b)) = (&init_align, &final_align) {
        if a.perm != b.perm {
            warnings.push(
                "component matching changed during refinement; traces follow the initial matching".into(),
            );
        }
    }

    let truth_idx: Option<Vec<usize>> = final_align.as_ref().map(Alignment::truth_of);
    let mut per_component = Vec::with_capacity(k);
    for (j, run) in runs.into_iter().enumerate() {
        let t = truth_idx.as_ref().map(|v| v[j]);
        let target = t.and_then(|t| truth.map(|gt| &gt.matrices()[t]));
        per_component.push(ComponentReport {
            rank: ranks[j],
            weight: mlr.weights[j],
            p_used: p[j],
            eta: params[j].eta,
            alpha: params[j].alpha,
            truth_index: t,
            init_error: target.map(|m| rel_fro_error(&init_mats[j], m)).transpose()?,
            rel_error: target.map(|m| rel_fro_error(&estimates[j], m)).transpose()?,
            trace: run.trace,
        });
    }

    Ok(RecoveryReport {
        k,
        seed: cfg.seed,
        stage1,
        proportion_source: source,
        weights: mlr.weights,
        permutation: final_align.map(|a| a.perm),
        per_component,
        warnings,
        estimates,
    })
}
