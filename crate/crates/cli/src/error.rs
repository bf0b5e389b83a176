use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("writing CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("config: {0}")]
    Config(String),
    #[error("solver: {0}")]
    Solver(causal_pm::Error),
    #[error("model violation: {0}")]
    Model(causal_pm::Error),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| Self::Io { path, source }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Io { .. } | Self::Csv(_) => 1,
            Self::Config(_) => 2,
            Self::Solver(_) => 3,
            Self::Model(_) => 4,
        }
    }
}

impl From<causal_pm::Error> for CliError {
    fn from(e: causal_pm::Error) -> Self {
        use causal_pm::Error as E;
        match e {
            E::InvalidParameter(msg) => Self::Config(msg),
            E::ModelViolation(_) | E::Protocol(_) => Self::Model(e),
            E::Domain(_) | E::NonNormalizingTilt { .. } | E::DegenerateRandomization | E::NoPositiveExponent { .. } => {
                Self::Solver(e)
            }
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
