use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("non-finite loss for model `{model}` on a batch of {batch_len} samples")]
    NonFiniteLoss { model: String, batch_len: usize },

    #[error("non-finite update at step {step}: S_k = {s_k}, |v_k| = {v_norm}, loss = {loss}")]
    NonFiniteStep {
        step: u64,
        s_k: f64,
        v_norm: f64,
        loss: f64,
    },

    #[error("gradient has zero norm; {context} is undefined")]
    ZeroGradient { context: &'static str },

    #[error("discriminant {value:e} is negative beyond rounding tolerance")]
    NegativeDiscriminant { value: f64 },

    #[error("singular KKT system (n = {n})")]
    SingularKkt { n: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}: line {line}, column `{column}`: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        column: String,
        message: String,
    },

    #[error("{path}: empty dataset")]
    EmptyDataset { path: PathBuf },

    #[error("config error: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn non_finite(context: impl Into<String>) -> Self {
        Error::NonFinite {
            context: context.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub(crate) fn ensure_len(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            got,
        })
    }
}

pub(crate) fn ensure_finite(context: &str, values: &[f64]) -> Result<()> {
    if values.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::non_finite(context))
    }
}
