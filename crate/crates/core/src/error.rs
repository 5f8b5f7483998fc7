use thiserror::Error;

/// Failure classes shared by every module.
///
/// `Structural` covers malformed inputs (wrong lengths, too-short series),
/// `Domain` covers inputs outside the admissible parameter set and
/// `Numerical` covers breakdowns of a linear solve or a simulation.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ArhmcError {
    #[error("structural error: {0}")]
    Structural(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("io error: {0}")]
    Io(String),
}

impl ArhmcError {
    /// Short machine-readable code used in error JSON.
    pub fn code(&self) -> &'static str {
        match self {
            ArhmcError::Structural(_) => "structural",
            ArhmcError::Domain(_) => "domain",
            ArhmcError::Numerical(_) => "numerical",
            ArhmcError::Io(_) => "io",
        }
    }
}

impl From<std::io::Error> for ArhmcError {
    fn from(e: std::io::Error) -> Self {
        ArhmcError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for ArhmcError {
    fn from(e: serde_json::Error) -> Self {
        ArhmcError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, ArhmcError>;
