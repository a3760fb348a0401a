use thiserror::Error;

/// Errors raised by the engine and the experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    /// Inputs violate a precondition (sizes, parameter ranges, dimensions).
    #[error("configuration error: {0}")]
    Config(String),

    /// The operation is well defined but not supported for this instance.
    #[error("unsupported instance: {0}")]
    Unsupported(String),

    /// A particle state became non-finite.
    #[error("numerical blowup at step {step}: {detail}")]
    Numerical { step: usize, detail: String },

    /// Input data cannot be fitted or summarized.
    #[error("data error: {0}")]
    Data(String),

    /// Failure inside one simulated cloud, tagged with its address.
    #[error("level {level}, cloud {cloud}: {source}")]
    Cloud {
        level: u32,
        cloud: u32,
        #[source]
        source: Box<Error>,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("config parse error: {0}")]
    Parse(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn unsupported(msg: impl Into<String>) -> Self {
        Error::Unsupported(msg.into())
    }

    pub(crate) fn in_cloud(self, level: u32, cloud: u32) -> Self {
        Error::Cloud {
            level,
            cloud,
            source: Box::new(self),
        }
    }

    /// The innermost error, with cloud tags stripped.
    pub fn root(&self) -> &Error {
        match self {
            Error::Cloud { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
