//! Bag-level hypothesis testing with a mean-pooled network on analytic
//! synthetic families.

// `!(x > 0.0)` is used on purpose so NaN is rejected along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bagnet;
pub mod error;
pub mod experiments;
pub mod inference;
pub mod matrix;
pub mod persistence;
pub mod rng;
pub mod stats;
pub mod synthdata;

pub use error::{Error, Result};
pub use matrix::Matrix;
