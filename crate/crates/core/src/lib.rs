//! Reference-based image super-resolution with a hierarchical windowed
//! transformer whose blocks mix self-attention over the low-resolution stream
//! with cross-attention driven by reference-image queries.
//!
//! The crate is self-contained: [`tensor`] provides a small reverse-mode
//! autodiff engine, on top of which [`attention`], [`blocks`] and [`model`]
//! build the network, [`losses`] the objectives and metrics, and
//! [`pipeline`] the data, training and evaluation loop.

pub mod attention;
pub mod blocks;
pub mod error;
pub mod losses;
pub mod model;
pub mod pipeline;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{DType, Scalar, SeededRng, Tape, Tensor, Var};
