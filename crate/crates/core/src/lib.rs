//! Fusion of co-registered Lidar/SAR/optical rasters into multi-channel
//! training data, a small fully convolutional network for pixel-wise
//! urban-feature segmentation, and a particle swarm optimizer for tuning
//! its hyperparameters.
//!
//! Everything is deterministic: given the same seeds and inputs, every
//! operation in this crate reproduces its outputs bit for bit.

mod bytes;

pub mod dataset;
pub mod error;
pub mod fcn;
pub mod fusion;
pub mod label;
pub mod metrics;
pub mod pso;
pub mod raster;
pub mod rng;
pub mod synthgen;
pub mod tensor;
pub mod train;
pub mod tune;

pub use error::{Error, Result};
