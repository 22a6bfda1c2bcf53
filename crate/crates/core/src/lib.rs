//! Event-camera pose tracking by aligning a semi-dense 3D map onto
//! time surfaces and event maps.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod evaluation;
pub mod events;
pub mod geometry;
pub mod representations;
pub mod simulator;
pub mod tracker;

pub use error::{Error, Result};
