//! Spatio-temporal hypergraph convolutional soft sensing.
//!
//! The crate is layered bottom-up:
//!
//! - [`tensor`], [`tape`], [`optim`]: dense `f64` tensors, reverse-mode
//!   differentiation and Adam.
//! - [`hypergraph`]: KNN hypergraph construction over sensors and the
//!   normalized propagation operator.
//! - [`model`]: multi-view mixer, gated temporal convolution and hypergraph
//!   convolution blocks with an MLP readout.
//! - [`data`]: CSV ingestion, splits, standardization, windows and a
//!   synthetic process generator.
//! - [`train`]: loss, metrics, the training loop, a ridge baseline and
//!   hyperparameter sweeps.
//! - [`pipeline`], [`checkpoint`]: end-to-end runs and model persistence.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod hypergraph;
pub mod linalg;
pub mod model;
pub mod optim;
pub mod pipeline;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, ErrorClass, Result};
pub use tensor::Tensor;
