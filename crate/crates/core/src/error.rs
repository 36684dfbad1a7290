use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate scale: {0}")]
    DegenerateScale(String),

    #[error("degenerate graph: {0}")]
    DegenerateGraph(String),

    #[error("degenerate target: {0}")]
    DegenerateTarget(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("empty data: {0}")]
    EmptyData(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("training diverged at epoch {epoch}, batch {batch} (lr {lr}): loss = {loss}")]
    Divergence {
        epoch: usize,
        batch: usize,
        lr: f64,
        loss: f64,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Coarse error classes, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Validation,
    Io,
    Numerical,
}

impl Error {
    pub fn with_context(self, context: impl Into<String>) -> Error {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// The innermost error, with all context layers peeled off.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self.root() {
            Error::Dimension(_)
            | Error::InvalidArgument(_)
            | Error::Schema(_)
            | Error::EmptyData(_)
            | Error::InsufficientData(_)
            | Error::Config(_) => ErrorClass::Validation,
            Error::Parse { .. } | Error::Format(_) | Error::Io(_) => ErrorClass::Io,
            Error::DegenerateScale(_)
            | Error::DegenerateGraph(_)
            | Error::DegenerateTarget(_)
            | Error::Numerical(_)
            | Error::Divergence { .. } => ErrorClass::Numerical,
            Error::Context { .. } => unreachable!("root() strips context"),
        }
    }
}

pub(crate) trait ResultExt<T> {
    fn context(self, context: impl FnOnce() -> String) -> Result<T>;
}

impl<T> ResultExt<T> for Result<T> {
    fn context(self, context: impl FnOnce() -> String) -> Result<T> {
        self.map_err(|e| e.with_context(context()))
    }
}
