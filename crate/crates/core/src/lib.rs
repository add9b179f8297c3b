//! Lautum-information regularized semi-supervised transfer learning.
//!
//! The crate has three layers:
//!
//! - [`info_measures`]: exact mutual/Lautum information and entropy on finite
//!   joints and jointly Gaussian blocks, plus a brute-force verifier for the
//!   cross-entropy test-loss decomposition.
//! - [`cov_stream`] and [`lautum_reg`]: mini-batch covariance estimation with
//!   an exponentially decaying moving average, and the Gaussian Lautum term
//!   evaluated on that state together with its gradient w.r.t. the logits.
//! - [`nn_core`] and [`pipeline`]: a small deterministic training engine and
//!   the two-stage pre-transfer / post-transfer procedure built on it.
//!
//! [`data`], [`config`], [`plot`] and [`cli`] provide dataset I/O, experiment
//! configuration and the command-line front end.

#![forbid(unsafe_code)]
// `!(x > 0.0)` guards deliberately reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod cov_stream;
pub mod data;
pub mod info_measures;
pub mod lautum_reg;
pub mod linalg;
pub mod nn_core;
pub mod par;
pub mod pipeline;
pub mod plot;
pub mod verify;

use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid distribution: {0}")]
    Distribution(String),

    #[error("degenerate support: {0}")]
    DegenerateSupport(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("batch size error: {0}")]
    BatchSize(String),

    #[error("non-finite data: {0}")]
    Data(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("domain error: {message} ({diagnostics})")]
    Domain {
        message: String,
        diagnostics: lautum_reg::Diagnostics,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("label error: {0}")]
    Label(String),

    #[error("stale cache: {0}")]
    Cache(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("format error at byte offset {offset}: {message}")]
    Format { offset: usize, message: String },

    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// Process exit code: 1 validation/config, 2 numerical, 3 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Context { source, .. } => source.exit_code(),
            Error::Io { .. } => 3,
            Error::Singular(_) | Error::Domain { .. } | Error::Numerical(_) | Error::Data(_) => 2,
            _ => 1,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_the_error_class() {
        let io = Error::io("x", std::io::Error::from(std::io::ErrorKind::NotFound));
        assert_eq!(io.exit_code(), 3);
        assert_eq!(Error::Numerical("nan".into()).exit_code(), 2);
        assert_eq!(Error::Singular("m".into()).exit_code(), 2);
        assert_eq!(Error::Config("k".into()).exit_code(), 1);
        assert_eq!(
            Error::Parse {
                row: 2,
                message: "m".into()
            }
            .exit_code(),
            1
        );
        let wrapped = Error::Numerical("nan".into()).context("stage").context("run");
        assert_eq!(wrapped.exit_code(), 2);
        assert_eq!(wrapped.to_string(), "run: stage: numerical failure: nan");
    }
}
