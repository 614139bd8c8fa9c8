//! Deep Q-learning with transferable convolutional encoders, trained on a
//! small catalog of deterministic pixel games.

pub mod envs;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod preprocess;
pub mod replay;
pub mod agent;
pub mod cli;
pub mod transfer;
pub mod vecenv;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
