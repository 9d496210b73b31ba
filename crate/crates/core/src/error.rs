use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed input file. `location` names the offending line or frame.
    #[error("parse error in {path} at {location}: {message}")]
    Parse {
        path: PathBuf,
        location: String,
        message: String,
    },

    /// Input parsed but violates a domain invariant (non-orthonormal rotation, zero feature...).
    #[error("invalid frame {frame}: {message}")]
    Validation { frame: usize, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(
        "view {view} has no feature vector; semantic distance needs features for every view \
         (set gamma = 0 and rebalance alpha/beta, or supply a features file)"
    )]
    MissingFeatures { view: usize },

    /// Misuse of a utility state, e.g. committing an index twice.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Every remaining candidate would make the selected principal minor singular.
    #[error(
        "log-determinant selection became numerically singular at step {step} \
         ({selected} views selected, {remaining} candidates left, all with Schur complement <= {threshold:e})"
    )]
    NumericalSingularity {
        step: usize,
        selected: usize,
        remaining: usize,
        threshold: f64,
    },

    #[error("enumeration budget exceeded: C({n}, {k}) = {count} subsets > {budget}")]
    BudgetExceeded {
        n: usize,
        k: usize,
        count: u128,
        budget: u128,
    },
}

impl Error {
    pub(crate) fn parse(
        path: &std::path::Path,
        location: impl Into<String>,
        message: impl ToString,
    ) -> Self {
        Error::Parse {
            path: path.to_path_buf(),
            location: location.into(),
            message: message.to_string(),
        }
    }

    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}
