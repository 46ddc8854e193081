//! Differentiable kernels and optimizer used by the encoder and head.
//!
//! Everything runs in `f64`. Each kernel is a pair of free functions: a
//! forward pass returning its output (plus whatever the backward pass needs)
//! and a backward pass mapping an upstream gradient to input and parameter
//! gradients. There is no tape; the encoder wires the kernels by hand.

mod adam;
mod gradcheck;
mod kernels;
mod params;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{finite_difference_check, GradCheckConfig, GradCheckReport, Probe};
pub use kernels::{
    batch_norm_backward, batch_norm_eval, batch_norm_points, batch_norm_train, linear_backward, log_softmax_backward,
    log_softmax_rows, max_pool_backward, max_pool_points, pointwise_linear, relu, relu_backward, BatchNormCache,
    BatchNormConfig, LinearGrads, Mode, RunningStats,
};
pub use params::{Gradients, ParamId, Parameter, ParameterStore};

/// Row `i` holds the features of point `i`.
pub type FeatureMatrix = ndarray::Array2<f64>;
