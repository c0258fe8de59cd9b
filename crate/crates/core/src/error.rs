use std::fmt;

use thiserror::Error;

use crate::scaledtgd::TgdTrace;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Pipeline stage an error originated from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Subspace,
    Initialization,
    Refinement,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Subspace => "stage 1 (subspace estimation)",
            Stage::Initialization => "stage 2 (initialization)",
            Stage::Refinement => "stage 3 (refinement)",
        })
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate second moment: singular value {k} is {value:e} (largest {largest:e})")]
    DegenerateMoment { k: usize, value: f64, largest: f64 },

    #[error("tensor power iteration collapsed: best eigenvalue {0:e}")]
    RankCollapse(f64),

    #[error("whitening matrix has singular gram matrix")]
    DegenerateWhitening,

    #[error("rank-{rank} initialization is rank deficient (sigma_{rank} = {value:e})")]
    RankDeficientInit { rank: usize, value: f64 },

    #[error("preconditioner singular at iteration {iter}")]
    PreconditionerSingular { iter: usize, trace: TgdTrace },

    #[error("non-finite values: {0}")]
    NonFinite(String),

    #[error("config invariant violated: {0}")]
    Config(String),

    #[error("{stage} failed{}: {source}", component.map(|c| format!(" for component {c}")).unwrap_or_default())]
    Stage {
        stage: Stage,
        component: Option<usize>,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn at(self, stage: Stage, component: Option<usize>) -> Self {
        Error::Stage {
            stage,
            component,
            source: Box::new(self),
        }
    }

    /// Strips any stage tags.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}
