use thiserror::Error;

/// Errors raised by the simulation and prediction routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid specification: {0}")]
    Spec(String),
    #[error("threshold search failed: {0}")]
    Search(String),
    #[error("outside the domain of validity: {0}")]
    Domain(String),
    #[error("fit failed: {0}")]
    Fit(String),
    #[error("estimation failed: {0}")]
    Estimation(String),
    #[error("invalid data: {0}")]
    Data(String),
    #[error("epsilon {eps} is outside the table range [{lo}, {hi}]")]
    Range { eps: f64, lo: f64, hi: f64 },
    #[error("numerical instability: {0}")]
    Stability(String),
    #[error("params schema version {found} is newer than supported version {supported}")]
    Schema { found: u32, supported: u32 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
