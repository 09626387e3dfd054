use thiserror::Error;

/// Crate-wide error type. Variants map onto the CLI exit-code contract:
/// config/usage problems exit 2, I/O problems exit 3, estimator and
/// numerical failures exit 4.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("rank deficiency: {0}")]
    RankDeficient(String),

    #[error("degenerate instrument: {0}")]
    DegenerateInstrument(String),

    #[error("fold-size error: {0}")]
    FoldSize(String),

    #[error("divergence at iteration {iteration}: {message}")]
    Divergence { iteration: usize, message: String },

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    #[error("estimator error: {0}")]
    Estimator(String),
}

impl Error {
    /// Exit code the CLI uses for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Input(_) => 2,
            Error::Io(_) => 3,
            _ => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
