//! Spelling-error correction toolkit for left-to-right scripts:
//! synthetic parallel-corpus generation (14 error types), a three-stage
//! detector-purificator-corrector transformer cascade trained with a
//! built-in reverse-mode autodiff engine, and correction metrics.
//!
//! The numeric core is generic over the scalar type; `f32` is the training
//! default and `f64` backs the high-precision gradient checks.

pub mod autodiff;
pub mod baseline;
pub mod charlex;
pub mod error;
pub mod errorgen;
pub mod metrics;
pub mod scalar;
pub mod transformer;

pub use error::{Error, Result};
pub use scalar::Scalar;
