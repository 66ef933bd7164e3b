//! Differentiable numerical kernels, parameter storage and the Adam optimizer.

pub mod attention;
pub mod gradcheck;
pub mod matrix;
pub mod ops;
pub mod params;

pub use attention::{self_attention, self_attention_backward, AttentionCache, AttentionGrads};
pub use gradcheck::{grad_check, relative_error, Coords, GradCheckReport};
pub use matrix::{Matrix, Real, Seq};
pub use ops::{
    conv1d_backward, conv1d_forward, dense_backward, dense_forward, dropout, gate_backward, gate_forward, maxpool1d,
    maxpool1d_backward, relu, sigmoid, softmax_rows, GateGrads,
};
pub use params::{AdamConfig, Param, ParamId, ParamStore};
