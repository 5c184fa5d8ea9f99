// `!(x > 0.0)` style checks are kept so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod cms;
pub mod cpi;
pub mod dense;
pub mod eigen;
pub mod error;
pub mod fem;
pub mod io;
pub mod pencil;
pub mod planner;
pub mod skyline;
pub mod sparse;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{CpiError, Result};
