//! Differentiable boundary-F1 loss for binary segmentation, with exact
//! evaluation metrics, a synthetic shape generator and a small trainer.

pub mod error;
pub mod gradcheck;
pub mod grid;
pub mod losses;
pub mod metrics;
pub mod morphgrad;
pub mod nnet;
pub mod synthgen;
pub mod trainer;

pub use error::{Error, Result};
