//! A joint constituency and dependency parser built around a label
//! attention layer: one learned query vector per head, head-to-word
//! attention, per-head residual connections and concatenated head outputs.
//!
//! Everything runs on a small reverse-mode autodiff tape in `f64`
//! ([`tensor`]), so models train on a CPU at toy scale and every gradient
//! can be checked against finite differences.

pub mod attention;
pub mod constituency;
pub mod dependency;
pub mod encoder;
pub mod error;
pub mod harness;
pub mod interpret;
pub mod model;
pub mod tensor;

pub use error::{Error, Result};
pub use model::{ModelConfig, Parser, Prediction};
