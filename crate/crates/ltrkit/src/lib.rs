//! File formats and the `ltrkit` command-line front end.

pub mod blend;
pub mod commands;
pub mod config;
pub mod data;
pub mod export;
pub mod model_file;

use thiserror::Error;

/// Failures that map to a dedicated process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad arguments or configuration; exit code 2.
    #[error("{0}")]
    Usage(String),
    /// A model does not fit the data or file format it meets; exit code 3.
    #[error("schema mismatch: model schema {expected}, found {found}{detail}")]
    Schema { expected: String, found: String, detail: String },
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> anyhow::Error {
        CliError::Usage(msg.into()).into()
    }
}

/// Process exit code for an error chain: 2 usage, 3 schema mismatch, 1 otherwise.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        match cause.downcast_ref::<CliError>() {
            Some(CliError::Usage(_)) => return 2,
            Some(CliError::Schema { .. }) => return 3,
            None => {}
        }
        if let Some(ltrkit_core::Error::Argument(_)) = cause.downcast_ref::<ltrkit_core::Error>() {
            return 2;
        }
    }
    1
}
