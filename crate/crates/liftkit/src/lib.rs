//! Lifting toolkit: predicts root-relative 3D human poses from temporal
//! windows of 2D keypoints with a Transformer-encoder model.
//!
//! The crate is organized around the stages of the pipeline:
//!
//! - [`skeleton`]: joint topologies, coordinate conventions, flip augmentation
//! - [`linalg`]: 3x3 SVD and closed-form similarity (Procrustes) alignment
//! - [`metrics`]: the three evaluation protocols (MPJPE, P-MPJPE, MPJVE) plus N-MPJPE
//! - [`nn`]: reverse-mode autodiff tensor core and the encoder building blocks
//! - [`model`]: the assembled lifting model, parameter accounting, checkpoints
//! - [`data`]: pose sequences, sliding windows, synthetic motion, file I/O
//! - [`training`]: loss, Adam/AMSGrad, Noam schedule, training loop, inference
//! - [`cli`]: the command surface (`train`, `eval`, `lift`, `count-params`, `synth`)

pub mod cli;
pub mod data;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod skeleton;
pub mod training;

mod error;

pub use error::{Error, Result};
