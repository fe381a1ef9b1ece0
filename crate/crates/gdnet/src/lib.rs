//! Trainable Gaussian derivative network layers: kernel construction,
//! convolution, normalization, a small training engine and IDX data loading.

pub mod batchnorm;
pub mod cli;
pub mod config;
pub mod conv;
pub mod data;
pub mod error;
pub mod export;
pub mod gradcheck;
pub mod head;
pub mod kernel;
pub mod layer;
pub mod model_io;
pub mod network;
pub mod rng;
pub mod tensor;
pub mod train;

pub use cli::run;
pub use error::{Error, Result};
