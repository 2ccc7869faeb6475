//! Minimal deterministic neural-network engine: dense and convolutional
//! layers, activations, batch normalization, pooling, residual blocks,
//! softmax, losses, SGD with step decay, and finite-difference gradient checks.

pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod network;
pub mod optim;
pub mod tensor;

pub use gradcheck::{grad_check, grad_check_with, GradCheckOptions, GradCheckReport, Trainable};
pub use layers::{
    batch_norm, conv2d_forward, dense_forward, leaky_relu, pool, relu, residual_block_forward, softmax, Layer,
    LayerSpec, Mode, Param, PoolKind,
};
pub use loss::{argmax_rows, cross_entropy_loss, mse_loss, one_hot, Loss};
pub use network::{Network, NetworkSpec};
pub use optim::{scheduler_rate, sgd_step, SchedulerConfig};
pub use tensor::{concat_features, split_features, Tensor};
