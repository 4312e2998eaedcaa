use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The request exceeds what the dense solvers are allowed to handle.
    #[error("capability exceeded: {0}")]
    Capability(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("local energy undefined at state {state:#b}: trial amplitude estimate is zero")]
    UndefinedLocalEnergy { state: u64 },

    #[error("projector shift {shift} too small: normalization b(x) = {norm} at state {state:#b}")]
    ShiftTooSmall { shift: f64, norm: f64, state: u64 },

    #[error("negative transition weight {weight} from state {from:#b} to {to:#b}: trial estimates are not sign-free")]
    SignProblem { from: u64, to: u64, weight: f64 },

    #[error("walker population collapsed: total weight is zero")]
    PopulationCollapse,

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }
}
