use std::path::PathBuf;

use crate::engine::TrainingReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("numerical blow-up in variable `{variable}`")]
    BlowUp { variable: String },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("all {0} sampled state pairs were degenerate")]
    DegenerateSamples(usize),

    #[error("step {step} is outside the stored range 0..={last}")]
    OutOfRange { step: usize, last: usize },

    /// Training diverged. The report holds everything recorded up to the
    /// last valid step; the remedy is usually a different ensemble or a
    /// smaller time step.
    #[error("training blow-up at epoch {epoch}, step {step} (variable `{variable}`)")]
    TrainingBlowUp {
        epoch: usize,
        step: usize,
        variable: String,
        report: Box<TrainingReport>,
    },

    #[error("parameter draw budget of {0} attempts exhausted")]
    DrawBudgetExhausted(usize),

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            location: location.into(),
            message: message.into(),
        }
    }
}
