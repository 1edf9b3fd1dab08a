use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: line {line}, column {column}: {message}")]
    Parse {
        context: String,
        line: usize,
        column: usize,
        message: String,
    },

    /// A data invariant does not hold. The first field names the invariant.
    #[error("invariant `{0}` violated: {1}")]
    Invalid(&'static str, String),

    #[error("unknown room {0:?}")]
    UnknownRoom(String),

    #[error("unknown name {0:?}")]
    UnknownName(String),

    #[error("cannot generate a solvable task: {0}")]
    Unsolvable(String),

    #[error("task {task} does not belong to scene {scene}")]
    SceneMismatch { task: String, scene: String },

    #[error("episode already finished at t={0}")]
    EpisodeFinished(u32),

    #[error("no reachable cell next to the target")]
    Unreachable,

    #[error("no high-level action could be parsed ({skipped} fragments skipped)")]
    EmptyPlan { skipped: usize },

    #[error("decision infeasible in context: {0}")]
    InfeasibleDecision(String),

    #[error("loss became non-finite at epoch {epoch} (last finite loss {last})")]
    NonFiniteLoss { epoch: usize, last: f64 },

    #[error("{0} must not be empty")]
    Empty(&'static str),

    #[error("plan moved {0} objects; a single-decision plan moves at most one")]
    AmbiguousPlan(usize),

    #[error("endpoint: {0}")]
    Endpoint(String),

    #[error("success rate undefined: no misplaced objects at the start")]
    NoMisplaced,

    #[error("standard error needs at least 2 values, got {0}")]
    TooFewValues(usize),

    #[error("{0}")]
    Precondition(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(context: impl Into<String>, err: &serde_json::Error) -> Self {
        Error::Parse {
            context: context.into(),
            line: err.line(),
            column: err.column(),
            message: err.to_string(),
        }
    }

    /// True for errors caused by bad inputs rather than runtime failures.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::Invalid(..)
                | Error::UnknownRoom(_)
                | Error::UnknownName(_)
                | Error::Unsolvable(_)
                | Error::SceneMismatch { .. }
                | Error::Empty(_)
                | Error::Precondition(_)
        )
    }
}
