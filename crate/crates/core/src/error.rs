use std::fmt;

use crate::core_model::ImagePlane;
use crate::integrator::IntegratorModel;

/// Pipeline stage a failure is attributed to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Validate,
    Resize,
    Blend,
    Features,
    Integrate,
    Invert,
    Reconstruct,
    Decode,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Validate => "validate",
            Stage::Resize => "resize",
            Stage::Blend => "blend",
            Stage::Features => "features",
            Stage::Integrate => "integrate",
            Stage::Invert => "invert",
            Stage::Reconstruct => "reconstruct",
            Stage::Decode => "decode",
        };
        f.write_str(s)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("rejected input: {0}")]
    RejectedInput(String),

    #[error("numerical error at {context}: {detail}")]
    Numerical { context: String, detail: String },

    #[error("capability unavailable: {0}")]
    Capability(String),

    #[error("backbone unavailable: {0}")]
    BackboneUnavailable(String),

    #[error("backbone {op} failed: {detail}")]
    Backbone { op: &'static str, detail: String },

    #[error("training diverged at epoch {epoch} (non-finite loss)")]
    TrainingDiverged {
        epoch: usize,
        last_stable: Box<IntegratorModel>,
    },

    #[error("{phase} step {step}: {source}")]
    Step {
        phase: &'static str,
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{stage} stage: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<Error>,
        /// Decoded initial blend, when the failure happened after blending.
        preview: Option<Box<ImagePlane>>,
    },

    #[error("undefined region: {0}")]
    UndefinedRegion(String),

    #[error("malformed model file: {0}")]
    ModelFormat(String),

    #[error("job cancelled")]
    Cancelled,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn at_stage(self, stage: Stage) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e @ Error::Cancelled => e,
            other => Error::Stage {
                stage,
                source: Box::new(other),
                preview: None,
            },
        }
    }

    pub(crate) fn at_step(self, phase: &'static str, step: usize) -> Self {
        match self {
            e @ Error::Cancelled => e,
            other => Error::Step {
                phase,
                step,
                source: Box::new(other),
            },
        }
    }

    /// Innermost error, skipping stage and step wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } | Error::Step { source, .. } => source.root(),
            other => other,
        }
    }

    /// Stage tag, if the error was raised inside the composition pipeline.
    pub fn stage(&self) -> Option<Stage> {
        match self {
            Error::Stage { stage, .. } => Some(*stage),
            _ => None,
        }
    }
}
