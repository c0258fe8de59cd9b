//! Recovery of several low-rank matrices from unlabeled mixed linear
//! measurements `y_i = ⟨A_i, M_{k_i}⟩ + σζ_i` with Gaussian designs `A_i`.
//!
//! The estimator runs in three stages:
//!
//! 1. [`spectral`] — the top singular subspaces of `Y = (1/N)Σ y_i A_i`
//!    estimate the joint column and row spaces of all components;
//! 2. [`init`] — designs are compressed onto those subspaces and a
//!    tensor-method mixed linear regression ([`mlr`]) yields one rough
//!    estimate per component;
//! 3. [`scaledtgd`] — each estimate is refined by scaled truncated gradient
//!    descent, which only follows the samples that currently fit best.
//!
//! [`pipeline::run_pipeline`] chains the stages; [`synth`] and [`dataset`]
//! generate planted problems and [`metrics`] scores the result.
//!
//! ```
//! use mixsense::dataset::{sample_dataset, StorageMode};
//! use mixsense::pipeline::{run_pipeline, PipelineConfig};
//! use mixsense::synth::equal_ground_truth;
//!
//! let truth = equal_ground_truth(10, 1, 1, 7)?;
//! let data = sample_dataset(&truth, 1000, 0.0, 1, StorageMode::Stored)?;
//! let cfg = PipelineConfig { eta_scale: 0.5, alpha_scale: 1.0, supplied_p: Some(vec![1.0]), ..Default::default() };
//! let report = run_pipeline(&data, None, &cfg, Some(&truth))?;
//! assert!(report.max_rel_error().unwrap() < 1e-8);
//! # Ok::<(), mixsense::Error>(())
//! ```

// Negated comparisons are deliberate: `!(x > 0.0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Dense kernels read more clearly with explicit indices.
#![allow(clippy::needless_range_loop)]

pub mod align;
pub mod dataset;
pub mod error;
pub mod init;
pub mod linalg;
pub mod metrics;
pub mod mlr;
pub mod pipeline;
pub mod scaledtgd;
pub mod spectral;
pub mod stats;
pub mod synth;

mod reduce;

pub use error::{Error, Result, Stage};
pub use linalg::{Mat, Vector};

#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    struct Introduction;
    #[doc = include_str!("../../../book/src/model.md")]
    struct Model;
    #[doc = include_str!("../../../book/src/spectral.md")]
    struct Spectral;
    #[doc = include_str!("../../../book/src/tensor.md")]
    struct Tensor;
    #[doc = include_str!("../../../book/src/scaledtgd.md")]
    struct ScaledTgd;
    #[doc = include_str!("../../../book/src/pipeline.md")]
    struct Pipeline;
    #[doc = include_str!("../../../book/src/limits.md")]
    struct Limits;
}
