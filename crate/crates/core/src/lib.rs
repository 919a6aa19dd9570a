//! Noise-aware PatchTST classifier for windowed accelerometer data.
//!
//! Pipeline: [`dataset`] windows, [`normalize`], optional [`augment`]ation,
//! the transformer encoder in [`model`], [`train`]ing, temperature
//! [`calibrate`]ion and probability fusion in [`ensemble`].

// `!(x > 0.0)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod augment;
pub mod calibrate;
pub mod checkpoint;
pub mod dataset;
pub mod ensemble;
pub mod error;
pub mod model;
pub mod normalize;
mod parallel;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
