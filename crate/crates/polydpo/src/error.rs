//! Crate-wide error type.

/// Convenience alias used by every fallible operation in this crate.
pub type Result<T> = std::result::Result<T, Error>;

/// All error conditions surfaced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A numeric argument is outside the mathematical domain of the operation
    /// (non-finite logit, probability outside (0, 1], timestep outside [0, 1], ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// A structural precondition was violated (empty batch, mismatched
    /// dimensions, invalid condition id, ...).
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// Dataset generation could not satisfy its constraints (rejection budget
    /// exhausted, unreachable consistency target, ...).
    #[error("generation error: {0}")]
    Generation(String),

    /// A training run hit a non-finite loss or logit and was aborted. Carries
    /// the step index and a diagnostic snapshot of the step.
    #[error("training aborted at step {step}: {detail}")]
    TrainingAborted { step: usize, detail: String },

    /// An internal consistency guard failed. This always indicates a bug.
    #[error("internal invariant violated: {0}")]
    Internal(String),

    /// A persisted artifact (checkpoint, dataset, metrics file) is malformed.
    /// `line` is populated for line-oriented text formats.
    #[error("parse error{}: {msg}", fmt_line(*.line))]
    Parse { line: Option<usize>, msg: String },

    /// A persisted artifact declares a format version this build does not know.
    #[error("unsupported format version {found} (this build reads version {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },

    /// Invalid run configuration.
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn fmt_line(line: Option<usize>) -> String {
    match line {
        Some(n) => format!(" at line {n}"),
        None => String::new(),
    }
}

impl Error {
    /// Shorthand for a [`Error::Parse`] with a line number.
    pub fn parse_at(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line: Some(line),
            msg: msg.into(),
        }
    }

    /// Shorthand for a [`Error::Parse`] without line information.
    pub fn parse(msg: impl Into<String>) -> Self {
        Error::Parse {
            line: None,
            msg: msg.into(),
        }
    }
}
