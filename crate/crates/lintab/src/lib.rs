//! Tabular in-context learning with linear-attention transformers.
//!
//! The crate trains small prior-fitted transformers on streams of synthetic
//! tabular tasks and classifies new tables in a single forward pass, with
//! no per-dataset fitting. Attention is pluggable: a quadratic softmax
//! reference and a family of linear-attention kernels whose slow-memory
//! traffic and arithmetic are counted exactly by a software cost model.
//!
//! Module map:
//!
//! - [`num`]: dense `f64` matrices, activations, reverse-mode tape.
//! - [`attention`]: attention kernels plus exact cost accounting.
//! - [`model`]: the two-segment tabular transformer and its checkpoint
//!   format.
//! - [`prior`]: synthetic task generators (random-MLP prior, blob tasks).
//! - [`train`]: Adam training loop over freshly sampled prior tasks.
//! - [`pipeline`]: preprocessing, size-based model routing, classification
//!   and regression-by-binning, metrics.
//! - [`reduce`]: dimensionality reducers and training-row samplers for
//!   data-efficiency studies.

pub mod attention;
pub mod error;
pub mod model;
pub mod num;
pub mod pipeline;
pub mod prior;
pub mod reduce;
pub mod train;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book;
