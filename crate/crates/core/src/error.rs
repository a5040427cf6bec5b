use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("invalid coefficients: {0}")]
    Coefficients(String),

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("matrix assembly failed: {0}")]
    Assembly(String),

    #[error("linear solver stagnated after {iterations} iterations (relative residual {residual:.3e})")]
    Stagnation { iterations: usize, residual: f64 },

    #[error("non-finite value in solution at step {step} (t = {time})")]
    NonFinite { step: usize, time: f64 },

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{0}")]
    Invalid(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// Innermost error, skipping context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            e => e,
        }
    }

    pub fn is_config(&self) -> bool {
        matches!(
            self.root(),
            Error::Config { .. } | Error::Geometry(_) | Error::Coefficients(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
