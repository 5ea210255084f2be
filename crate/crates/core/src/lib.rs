//! Semantic region relation modelling for indoor scene recognition, with a
//! confidence filter for segmentation score tensors, a channel-attention
//! backbone, and depth-wise fusion of semantic and RGB global features.

pub mod error;
pub mod filter;
pub mod fusion;
pub mod gradcheck;
pub mod harness;
pub mod nn;
pub mod optim;
pub mod score;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
