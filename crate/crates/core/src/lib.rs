//! Cascade Wiener-Hammerstein pre-distortion models and the optimizers used
//! to fit them.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod diff;
pub mod error;
pub mod linalg;
pub mod model;
pub mod optim;
pub mod pa;
pub mod problem;
pub mod signal;
pub mod trace;

pub use error::{Error, Result};
