use thiserror::Error;

use crate::lattice::IndexRange;

#[derive(Debug, Error)]
pub enum Error {
    #[error("pair potential evaluated outside its domain at r = {r}")]
    Domain { r: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("index range mismatch: expected {expected}, found {found}")]
    RangeMismatch {
        expected: IndexRange,
        found: IndexRange,
    },

    #[error("length mismatch: range {range} needs {expected} values, got {found}")]
    Length {
        range: IndexRange,
        expected: usize,
        found: usize,
    },

    #[error("stencil needs indices {needed} but the field only covers {available}")]
    Stencil {
        needed: IndexRange,
        available: IndexRange,
    },

    #[error("field is not in V0: boundary values are {left} and {right}")]
    NotHomogeneous { left: f64, right: f64 },

    #[error("singular system (condition estimate {condition:.3e})")]
    Singular { condition: f64 },

    #[error(
        "solve residual {residual:.3e} exceeds tolerance {tolerance:.3e} \
         (condition estimate {condition:.3e})"
    )]
    IllConditioned {
        residual: f64,
        tolerance: f64,
        condition: f64,
    },

    #[error("eigensolver did not converge (residual {residual:.3e})")]
    Eigen { residual: f64 },

    #[error("{0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
