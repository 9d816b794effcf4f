use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A Dirichlet density evaluated on the boundary where some `alpha_i < 1`.
    #[error("density unbounded: {0}")]
    DensityUnbounded(String),

    #[error("numerical failure at iteration {iteration}: {what}")]
    Numerical { what: String, iteration: usize },

    #[error("format error at byte offset {offset}: {msg}")]
    Format { offset: u64, msg: String },

    #[error("csv format error at line {line}: {msg}")]
    Csv { line: u64, msg: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn numerical(what: impl Into<String>, iteration: usize) -> Self {
        Error::Numerical {
            what: what.into(),
            iteration,
        }
    }

    pub fn format(offset: u64, msg: impl Into<String>) -> Self {
        Error::Format {
            offset,
            msg: msg.into(),
        }
    }

    /// Short stable identifier, used in machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid-input",
            Error::DensityUnbounded(_) => "density-unbounded",
            Error::Numerical { .. } => "numerical-failure",
            Error::Format { .. } => "format",
            Error::Csv { .. } => "csv-format",
            Error::Io(_) => "io",
        }
    }
}
