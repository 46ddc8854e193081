//! Open-vocabulary affordance detection on 3D point clouds.
//!
//! A permutation-equivariant point encoder produces one feature vector per
//! point. Those features are compared against an arbitrary, swappable table
//! of text-label embeddings with cosine similarity, turned into per-point
//! label distributions with a learnable logit scale, and trained with a
//! class-balanced negative log-likelihood. Because labels enter only through
//! their embeddings, a trained model can be queried with labels it never
//! saw during training.
//!
//! Module map:
//!
//! - [`geometry`]: point clouds, normalization, farthest point sampling.
//! - [`nn`]: the small set of differentiable kernels, the parameter store,
//!   Adam, and a finite-difference gradient checker.
//! - [`encoder`]: the point feature network.
//! - [`head`]: embedding tables (OADE files), cosine correlation, scaled
//!   softmax, class weights, weighted NLL and detection.
//! - [`trainer`]: the training loop and OADC checkpoints.
//! - [`data`]: dataset manifests, shape files and synthetic data.
//! - [`eval`]: confusion matrices, metrics and evaluation protocols.
//! - [`ply`]: colored ASCII PLY export.
//! - [`cli`]: the command-line front end used by the `openaff` binary.

pub mod cli;
pub mod data;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod head;
pub mod nn;
pub mod ply;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
