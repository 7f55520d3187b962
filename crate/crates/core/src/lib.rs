//! Core numerics and models for multi-airport delay forecasting.
//!
//! The crate is `no_std` and only needs an allocator. It contains:
//!
//! - [`tensor`]: dense `f64` tensors with a recorded computation graph and
//!   reverse-mode differentiation.
//! - [`nn`]: parameter storage and the gated building blocks (GLU, GRN, LSTM,
//!   variable selection, interpretable multi-head attention).
//! - [`wx`]: the convolutional weather-grid autoencoder.
//! - [`formulation`]: airport records, target smoothing, windowing and
//!   normalization.
//! - [`tft`]: the temporal fusion transformer producing quantile forecasts.
//! - [`scenario`]: a mechanistic synthetic data generator.
//! - [`training`]: losses, metrics, Adam and the training loops.
//! - [`interpret`]: attention and variable-importance summaries.
//!
//! File formats, the CLI and plotting live in the `delaycast` crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod error;
pub mod formulation;
pub mod interpret;
mod math;
pub mod nn;
pub mod scenario;
pub mod seed;
pub mod tensor;
pub mod tft;
pub mod training;
pub mod wx;

pub use error::{Error, Result};
pub use tensor::{Graph, Tensor, Var};
