use thiserror::Error;

pub type Result<T, E = SkpdError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum SkpdError {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("non-finite objective at outer iteration {iteration}")]
    NonFiniteObjective { iteration: usize },

    #[error("preprocessing error: {0}")]
    Preprocess(String),

    #[error("generation error: {0}")]
    Generation(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl SkpdError {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        SkpdError::Dimension(msg.into())
    }
}
