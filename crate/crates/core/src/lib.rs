//! Desk-scale benchmark for object recognition under extreme occlusion.
//!
//! The crate generates part-composed synthetic vehicles with controlled
//! occlusion, trains a two-stage part-voting recognizer, a CNN baseline, a
//! CNN+Hopfield hybrid and two ablations, and evaluates them with accuracy,
//! confusion matrices and representational dissimilarity matrices.

pub mod baselines;
pub mod compstage;
pub mod error;
pub mod evalkit;
pub mod hopfield;
pub mod netpbm;
pub mod partstage;
pub mod rng;
pub mod synthgen;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;

/// Number of object categories.
pub const NUM_CATEGORIES: usize = 5;
