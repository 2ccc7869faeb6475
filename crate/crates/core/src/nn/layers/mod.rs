//! Layer kinds. Every layer caches what its backward pass needs during
//! `forward` and accumulates parameter gradients during `backward`.

mod activation;
mod batch_norm;
mod conv;
mod dense;
mod pool;
mod residual;
mod softmax;

pub use activation::{leaky_relu, relu, Activation};
pub use batch_norm::{batch_norm, BatchNorm};
pub use conv::{conv2d_forward, Conv2d};
pub use dense::{dense_forward, Dense};
pub use pool::{pool, GlobalAvgPool, Pool, PoolKind};
pub use residual::{residual_block_forward, ResidualBlock};
pub use softmax::{softmax, softmax_backward, Softmax};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;

pub const DEFAULT_BN_EPS: f64 = 1e-5;
pub const DEFAULT_BN_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batch norm; running statistics are updated.
    Train,
    /// Running statistics; nothing is mutated except caches.
    Eval,
}

/// A trainable tensor and its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

impl<T: Scalar> Param<T> {
    pub fn new(value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self { value, grad }
    }
}

/// Architecture description of one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense {
        inputs: usize,
        outputs: usize,
    },
    LeakyRelu {
        leak: f64,
    },
    Relu,
    BatchNorm {
        features: usize,
        eps: f64,
        momentum: f64,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        stride: usize,
        padding: usize,
    },
    MaxPool {
        window: usize,
        stride: usize,
        padding: usize,
    },
    AvgPool {
        window: usize,
        stride: usize,
    },
    GlobalAvgPool,
    ResidualBlock {
        in_channels: usize,
        out_channels: usize,
        stride: usize,
        batch_norm: bool,
    },
    Flatten,
    Softmax,
}

impl LayerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::LeakyRelu { .. } => "leaky_relu",
            LayerSpec::Relu => "relu",
            LayerSpec::BatchNorm { .. } => "batch_norm",
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::MaxPool { .. } => "max_pool",
            LayerSpec::AvgPool { .. } => "avg_pool",
            LayerSpec::GlobalAvgPool => "global_avg_pool",
            LayerSpec::ResidualBlock { .. } => "residual_block",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Softmax => "softmax",
        }
    }

    pub fn batch_norm(features: usize) -> Self {
        LayerSpec::BatchNorm {
            features,
            eps: DEFAULT_BN_EPS,
            momentum: DEFAULT_BN_MOMENTUM,
        }
    }

    fn bad(&self, why: impl std::fmt::Display) -> Error {
        Error::config(format!("{} layer: {why}", self.kind()))
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match *self {
            LayerSpec::Dense { inputs, outputs } => {
                if inputs == 0 || outputs == 0 {
                    return Err(self.bad("widths must be positive"));
                }
                if input != [inputs] {
                    return Err(self.bad(format!("expects [{inputs}], got {input:?}")));
                }
                Ok(vec![outputs])
            }
            LayerSpec::LeakyRelu { leak } => {
                if !(leak > 0.0 && leak < 1.0) {
                    return Err(self.bad(format!("leak must lie in (0, 1), got {leak}")));
                }
                Ok(input.to_vec())
            }
            LayerSpec::Relu | LayerSpec::Softmax => Ok(input.to_vec()),
            LayerSpec::BatchNorm {
                features,
                eps,
                momentum,
            } => {
                if !(eps > 0.0) || !(0.0..1.0).contains(&momentum) {
                    return Err(self.bad("eps must be positive and momentum in [0, 1)"));
                }
                if input.first() != Some(&features) || !(input.len() == 1 || input.len() == 3) {
                    return Err(self.bad(format!("expects {features} features/channels, got {input:?}")));
                }
                Ok(input.to_vec())
            }
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                if in_channels == 0 || out_channels == 0 || kernel.0 == 0 || kernel.1 == 0 || stride == 0 {
                    return Err(self.bad("channels, kernel and stride must be positive"));
                }
                let [c, h, w] = three(input).ok_or_else(|| self.bad(format!("expects [C,H,W], got {input:?}")))?;
                if c != in_channels {
                    return Err(self.bad(format!("expects {in_channels} channels, got {c}")));
                }
                let ho = conv_out(h, kernel.0, stride, padding).ok_or_else(|| self.bad("filter larger than input"))?;
                let wo = conv_out(w, kernel.1, stride, padding).ok_or_else(|| self.bad("filter larger than input"))?;
                Ok(vec![out_channels, ho, wo])
            }
            LayerSpec::MaxPool {
                window,
                stride,
                padding,
            } => {
                if window == 0 || stride == 0 || padding >= window {
                    return Err(self.bad("window and stride must be positive, padding < window"));
                }
                let [c, h, w] = three(input).ok_or_else(|| self.bad(format!("expects [C,H,W], got {input:?}")))?;
                let ho = conv_out(h, window, stride, padding).ok_or_else(|| self.bad("window larger than input"))?;
                let wo = conv_out(w, window, stride, padding).ok_or_else(|| self.bad("window larger than input"))?;
                Ok(vec![c, ho, wo])
            }
            LayerSpec::AvgPool { window, stride } => {
                if window == 0 || stride == 0 {
                    return Err(self.bad("window and stride must be positive"));
                }
                let [c, h, w] = three(input).ok_or_else(|| self.bad(format!("expects [C,H,W], got {input:?}")))?;
                let ho = conv_out(h, window, stride, 0).ok_or_else(|| self.bad("window larger than input"))?;
                let wo = conv_out(w, window, stride, 0).ok_or_else(|| self.bad("window larger than input"))?;
                Ok(vec![c, ho, wo])
            }
            LayerSpec::GlobalAvgPool => {
                let [c, _, _] = three(input).ok_or_else(|| self.bad(format!("expects [C,H,W], got {input:?}")))?;
                Ok(vec![c])
            }
            LayerSpec::ResidualBlock {
                in_channels,
                out_channels,
                stride,
                ..
            } => {
                if in_channels == 0 || out_channels == 0 || stride == 0 {
                    return Err(self.bad("channels and stride must be positive"));
                }
                let [c, h, w] = three(input).ok_or_else(|| self.bad(format!("expects [C,H,W], got {input:?}")))?;
                if c != in_channels {
                    return Err(self.bad(format!("expects {in_channels} channels, got {c}")));
                }
                let ho = conv_out(h, 3, stride, 1).ok_or_else(|| self.bad("input too small"))?;
                let wo = conv_out(w, 3, stride, 1).ok_or_else(|| self.bad("input too small"))?;
                Ok(vec![out_channels, ho, wo])
            }
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
        }
    }
}

fn three(s: &[usize]) -> Option<[usize; 3]> {
    match *s {
        [c, h, w] => Some([c, h, w]),
        _ => None,
    }
}

/// Output extent of a sliding window: `floor((n + 2p − k) / s) + 1`.
pub fn conv_out(n: usize, k: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = n + 2 * padding;
    (padded >= k).then(|| (padded - k) / stride + 1)
}

/// Scaled-uniform initialization in `±sqrt(6 / (fan_in + fan_out))`.
pub(crate) fn scaled_uniform<T: Scalar>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut Rng) -> Tensor<T> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::of(rng.random_range(-bound..bound))).collect();
    Tensor::new(shape.to_vec(), data).expect("length matches shape")
}

/// A constructed layer with its parameters and caches.
#[derive(Debug, Clone)]
pub enum Layer<T: Scalar> {
    Dense(Dense<T>),
    Activation(Activation<T>),
    BatchNorm(BatchNorm<T>),
    Conv2d(Conv2d<T>),
    Pool(Pool<T>),
    GlobalAvgPool(GlobalAvgPool),
    Residual(Box<ResidualBlock<T>>),
    Flatten(Option<Vec<usize>>),
    Softmax(Softmax<T>),
}

impl<T: Scalar> Layer<T> {
    pub fn build(spec: &LayerSpec, rng: &mut Rng) -> Self {
        match *spec {
            LayerSpec::Dense { inputs, outputs } => Layer::Dense(Dense::new(inputs, outputs, rng)),
            LayerSpec::LeakyRelu { leak } => Layer::Activation(Activation::new(T::of(leak))),
            LayerSpec::Relu => Layer::Activation(Activation::new(T::zero())),
            LayerSpec::BatchNorm {
                features,
                eps,
                momentum,
            } => Layer::BatchNorm(BatchNorm::new(features, T::of(eps), T::of(momentum))),
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => Layer::Conv2d(Conv2d::new(in_channels, out_channels, kernel, stride, padding, rng)),
            LayerSpec::MaxPool {
                window,
                stride,
                padding,
            } => Layer::Pool(Pool::new(PoolKind::Max, window, stride, padding)),
            LayerSpec::AvgPool { window, stride } => Layer::Pool(Pool::new(PoolKind::Avg, window, stride, 0)),
            LayerSpec::GlobalAvgPool => Layer::GlobalAvgPool(GlobalAvgPool::default()),
            LayerSpec::ResidualBlock {
                in_channels,
                out_channels,
                stride,
                batch_norm,
            } => Layer::Residual(Box::new(ResidualBlock::new(
                in_channels,
                out_channels,
                stride,
                batch_norm,
                rng,
            ))),
            LayerSpec::Flatten => Layer::Flatten(None),
            LayerSpec::Softmax => Layer::Softmax(Softmax::default()),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Dense(_) => "dense",
            Layer::Activation(a) if a.leak() == T::zero() => "relu",
            Layer::Activation(_) => "leaky_relu",
            Layer::BatchNorm(_) => "batch_norm",
            Layer::Conv2d(_) => "conv2d",
            Layer::Pool(p) if p.kind() == PoolKind::Max => "max_pool",
            Layer::Pool(_) => "avg_pool",
            Layer::GlobalAvgPool(_) => "global_avg_pool",
            Layer::Residual(_) => "residual_block",
            Layer::Flatten(_) => "flatten",
            Layer::Softmax(_) => "softmax",
        }
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        match self {
            Layer::Dense(l) => l.forward(x),
            Layer::Activation(l) => Ok(l.forward(x)),
            Layer::BatchNorm(l) => l.forward(x, mode),
            Layer::Conv2d(l) => l.forward(x),
            Layer::Pool(l) => l.forward(x),
            Layer::GlobalAvgPool(l) => l.forward(x),
            Layer::Residual(l) => l.forward(x, mode),
            Layer::Flatten(cache) => {
                let n = x.batch();
                *cache = Some(x.shape().to_vec());
                let per = x.len().checked_div(n).unwrap_or(0);
                x.clone().reshape(&[n, per])
            }
            Layer::Softmax(l) => l.forward(x),
        }
    }

    pub fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Layer::Dense(l) => l.backward(grad),
            Layer::Activation(l) => l.backward(grad),
            Layer::BatchNorm(l) => l.backward(grad),
            Layer::Conv2d(l) => l.backward(grad),
            Layer::Pool(l) => l.backward(grad),
            Layer::GlobalAvgPool(l) => l.backward(grad),
            Layer::Residual(l) => l.backward(grad),
            Layer::Flatten(cache) => {
                let shape = cache.as_ref().ok_or_else(|| Error::config("flatten: backward before forward"))?;
                grad.clone().reshape(shape)
            }
            Layer::Softmax(l) => l.backward(grad),
        }
    }

    /// Visits trainable parameters in a fixed order with stable names.
    pub fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        match self {
            Layer::Dense(l) => {
                f(&format!("{prefix}.w"), &mut l.w);
                f(&format!("{prefix}.b"), &mut l.b);
            }
            Layer::BatchNorm(l) => l.visit_params(prefix, f),
            Layer::Conv2d(l) => {
                f(&format!("{prefix}.w"), &mut l.w);
                f(&format!("{prefix}.b"), &mut l.b);
            }
            Layer::Residual(l) => l.visit_params(prefix, f),
            _ => {}
        }
    }

    /// Visits non-trainable persistent state (batch-norm running statistics).
    pub fn visit_buffers(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        match self {
            Layer::BatchNorm(l) => l.visit_buffers(prefix, f),
            Layer::Residual(l) => l.visit_buffers(prefix, f),
            _ => {}
        }
    }
}
