use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Pipeline stage tag attached to aborts that propagate out of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Data,
    Pretrain,
    Transform,
    Sample,
    Evaluate,
    Report,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Stage::Data => "data",
            Stage::Pretrain => "pretrain",
            Stage::Transform => "transform",
            Stage::Sample => "sample",
            Stage::Evaluate => "evaluate",
            Stage::Report => "report",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema mismatch in column `{column}`: {reason}")]
    SchemaMismatch { column: String, reason: String },

    #[error("invalid schema: {0}")]
    InvalidSchema(String),

    #[error("row {row}: cannot parse `{value}` in continuous column `{column}`")]
    UnparseableCell {
        row: usize,
        column: String,
        value: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("infeasible bias-injection spec: {0}")]
    InfeasibleSpec(String),

    #[error("cannot decode row {row}: {reason}")]
    Decode { row: usize, reason: String },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite {loss} loss at epoch {epoch}")]
    Divergence { epoch: usize, loss: String },

    #[error("rejection sampling aborted after {attempts} attempts: accepted {accepted}/{target} (acceptance rate {rate:.5})")]
    DrsAbort {
        attempts: usize,
        accepted: usize,
        target: usize,
        rate: f64,
    },

    #[error("model not ready: {0}")]
    NotReady(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("checkpoint schema hash mismatch: expected {expected}, found {found}")]
    CheckpointMismatch { expected: String, found: String },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("missing artifact {0}")]
    MissingArtifact(PathBuf),

    #[error("stage `{stage}` failed: {source}")]
    StageFailed {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn in_stage(self, stage: Stage) -> Self {
        match self {
            e @ Error::StageFailed { .. } => e,
            other => Error::StageFailed {
                stage,
                source: Box::new(other),
            },
        }
    }

    /// The innermost error, looking through stage tags.
    pub fn root(&self) -> &Error {
        match self {
            Error::StageFailed { source, .. } => source.root(),
            other => other,
        }
    }
}
