//! Codeword-mimic knowledge distillation for lightweight CSI feedback
//! autoencoders.

pub mod autodiff;
pub mod data;
pub mod distill;
pub mod metrics;
pub mod error;
pub mod nn;
pub mod scalar;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;
