//! Anchored inversion of spatial random fields.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod engine;
pub mod error;
pub mod field;
pub mod forward;
pub mod mixture;
pub mod mvn;
pub mod prior;
pub mod rng;
pub mod transform;

pub use error::{Error, Result};
