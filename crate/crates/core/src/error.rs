use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// An argument was outside its documented domain.
    Argument(String),
    /// Input data does not match the expected columns or invariants.
    Schema(String),
    /// A feature column was requested that the matrix does not carry.
    UnknownColumn(String),
    /// Row width does not match the model's feature count.
    Dimension { expected: usize, found: usize },
    /// Training produced a non-finite loss.
    Divergence { epoch: usize },
    /// Scores are missing for some (srch_id, prop_id) pairs.
    MissingScores(Vec<(u64, u64)>),
    /// A stacker would be trained on rows its base models were fit on.
    Leakage { overlapping_queries: usize },
    /// A transform or model was used before it was fitted.
    NotFitted(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Argument(msg) => write!(f, "invalid argument: {msg}"),
            Error::Schema(msg) => write!(f, "schema error: {msg}"),
            Error::UnknownColumn(name) => write!(f, "unknown column `{name}`"),
            Error::Dimension { expected, found } => {
                write!(f, "dimension mismatch: expected {expected} features, found {found}")
            }
            Error::Divergence { epoch } => write!(f, "training diverged at epoch {epoch}"),
            Error::MissingScores(pairs) => {
                write!(f, "missing scores for {} impressions:", pairs.len())?;
                for (q, p) in pairs.iter().take(20) {
                    write!(f, " ({q},{p})")?;
                }
                if pairs.len() > 20 {
                    write!(f, " ...")?;
                }
                Ok(())
            }
            Error::Leakage { overlapping_queries } => write!(
                f,
                "stacking data shares {overlapping_queries} queries with the base models' training split"
            ),
            Error::NotFitted(what) => write!(f, "{what} used before fit"),
        }
    }
}

impl core::error::Error for Error {}
