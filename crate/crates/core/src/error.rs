use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad magic in {path}: expected {expected:#010x}, found {found:#010x}")]
    BadMagic {
        path: PathBuf,
        expected: u32,
        found: u32,
    },

    #[error("truncated payload in {path}: header declares {expected} bytes, file holds {actual}")]
    Truncated {
        path: PathBuf,
        expected: usize,
        actual: usize,
    },

    #[error("count mismatch: {images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("round gap: expected round {expected}, got {got}")]
    RoundGap { expected: usize, got: usize },

    #[error("incomplete row for round {round}: missing task {task}")]
    IncompleteRow { round: usize, task: usize },

    #[error("unexpected task {task} in round {round}")]
    UnexpectedTask { round: usize, task: usize },

    #[error("infeasible quota for task {task}: {reason}")]
    InfeasibleQuota { task: usize, reason: String },

    #[error("duplicate grid point: lambda = {0}")]
    DuplicateGridPoint(f64),

    #[error("checkpoint format: {0}")]
    Checkpoint(String),

    #[error("config: {0}")]
    Config(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("round {round}: {source}")]
    InRound {
        round: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_round(self, round: usize) -> Self {
        Error::InRound {
            round,
            source: Box::new(self),
        }
    }

    /// Short stable identifier for machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::BadMagic { .. } => "bad_magic",
            Error::Truncated { .. } => "truncated",
            Error::CountMismatch { .. } => "count_mismatch",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Shape(_) => "shape",
            Error::Diverged { .. } => "diverged",
            Error::RoundGap { .. } => "round_gap",
            Error::IncompleteRow { .. } => "incomplete_row",
            Error::UnexpectedTask { .. } => "unexpected_task",
            Error::InfeasibleQuota { .. } => "infeasible_quota",
            Error::DuplicateGridPoint(_) => "duplicate_grid_point",
            Error::Checkpoint(_) => "checkpoint",
            Error::Config(_) => "config",
            Error::Json(_) => "json",
            Error::InRound { source, .. } => source.kind(),
        }
    }
}
