use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected:?}, found {found:?}")]
    Dimension {
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("non-finite value in population {population} at cell ({i}, {j})")]
    NonFinite {
        population: usize,
        i: usize,
        j: usize,
    },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("time {requested} outside trajectory span [0, {end}]")]
    Range { requested: f64, end: f64 },

    #[error("operation requires the {0} model family")]
    UnsupportedModel(&'static str),

    #[error("estimation failed: {0}")]
    Estimation(String),

    #[error(
        "maximum principle violated in population {population} at t = {t}: \
         range [{min}, {max}] leaves [0, {bound}]"
    )]
    InvariantViolation {
        population: usize,
        t: f64,
        min: f64,
        max: f64,
        bound: f64,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
