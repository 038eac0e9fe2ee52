//! Few-shot single-view voxel reconstruction with learned class priors.
//!
//! A 2D image encoder and a 3D transposed-convolution decoder are
//! conditioned on a per-class shape embedding. Three conditioning
//! mechanisms are provided: a global class embedding table, a compositional
//! embedding built from shared codebooks with sparsemax attention, and
//! class-conditional batch normalization in every decoder layer. Novel
//! classes are added by optimizing only their class-specific parameters on
//! a handful of support examples while the backbone stays frozen.

pub mod baselines;
pub mod cli;
pub mod config;
pub mod binvox;
pub mod error;
pub mod eval;
pub mod fewshot;
pub mod model;
pub mod nn;
pub mod seeds;
pub mod shapegen;
pub mod voxel;

pub use error::{Error, Result};
