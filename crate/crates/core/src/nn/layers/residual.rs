use super::{Activation, BatchNorm, Conv2d, Mode, Param, DEFAULT_BN_EPS, DEFAULT_BN_MOMENTUM};
use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;
use crate::rng::Rng;
use crate::scalar::Scalar;

/// Basic residual block: `out = ReLU(F(x) + skip(x))` with
/// `F = conv3×3(stride) → BN → ReLU → conv3×3 → BN`.
///
/// The skip is the identity when channels and stride are unchanged, otherwise
/// a strided 1×1 projection convolution (followed by BN when the block uses BN).
#[derive(Debug, Clone)]
pub struct ResidualBlock<T: Scalar> {
    pub conv1: Conv2d<T>,
    pub bn1: Option<BatchNorm<T>>,
    relu1: Activation<T>,
    pub conv2: Conv2d<T>,
    pub bn2: Option<BatchNorm<T>>,
    pub projection: Option<(Conv2d<T>, Option<BatchNorm<T>>)>,
    relu_out: Activation<T>,
}

impl<T: Scalar> ResidualBlock<T> {
    pub fn new(in_channels: usize, out_channels: usize, stride: usize, batch_norm: bool, rng: &mut Rng) -> Self {
        let bn = |c: usize| batch_norm.then(|| BatchNorm::new(c, T::of(DEFAULT_BN_EPS), T::of(DEFAULT_BN_MOMENTUM)));
        let conv1 = Conv2d::new(in_channels, out_channels, (3, 3), stride, 1, rng);
        let conv2 = Conv2d::new(out_channels, out_channels, (3, 3), 1, 1, rng);
        let projection = (in_channels != out_channels || stride != 1)
            .then(|| (Conv2d::new(in_channels, out_channels, (1, 1), stride, 0, rng), bn(out_channels)));
        Self {
            conv1,
            bn1: bn(out_channels),
            relu1: Activation::new(T::zero()),
            conv2,
            bn2: bn(out_channels),
            projection,
            relu_out: Activation::new(T::zero()),
        }
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let mut h = self.conv1.forward(x)?;
        if let Some(bn) = &mut self.bn1 {
            h = bn.forward(&h, mode)?;
        }
        h = self.relu1.forward(&h);
        h = self.conv2.forward(&h)?;
        if let Some(bn) = &mut self.bn2 {
            h = bn.forward(&h, mode)?;
        }
        let skip = match &mut self.projection {
            Some((conv, bn)) => {
                let s = conv.forward(x)?;
                match bn {
                    Some(bn) => bn.forward(&s, mode)?,
                    None => s,
                }
            }
            None => x.clone(),
        };
        if skip.shape() != h.shape() {
            return Err(Error::Shape {
                op: "residual skip",
                left: h.shape().to_vec(),
                right: skip.shape().to_vec(),
            });
        }
        h.add_assign(&skip)?;
        Ok(self.relu_out.forward(&h))
    }

    pub fn backward(&mut self, g: &Tensor<T>) -> Result<Tensor<T>> {
        let g = self.relu_out.backward(g)?;
        let mut gf = g.clone();
        if let Some(bn) = &mut self.bn2 {
            gf = bn.backward(&gf)?;
        }
        gf = self.conv2.backward(&gf)?;
        gf = self.relu1.backward(&gf)?;
        if let Some(bn) = &mut self.bn1 {
            gf = bn.backward(&gf)?;
        }
        let mut dx = self.conv1.backward(&gf)?;
        let dskip = match &mut self.projection {
            Some((conv, bn)) => {
                let gs = match bn {
                    Some(bn) => bn.backward(&g)?,
                    None => g,
                };
                conv.backward(&gs)?
            }
            None => g,
        };
        dx.add_assign(&dskip)?;
        Ok(dx)
    }

    pub fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&format!("{prefix}.conv1.w"), &mut self.conv1.w);
        f(&format!("{prefix}.conv1.b"), &mut self.conv1.b);
        if let Some(bn) = &mut self.bn1 {
            bn.visit_params(&format!("{prefix}.bn1"), f);
        }
        f(&format!("{prefix}.conv2.w"), &mut self.conv2.w);
        f(&format!("{prefix}.conv2.b"), &mut self.conv2.b);
        if let Some(bn) = &mut self.bn2 {
            bn.visit_params(&format!("{prefix}.bn2"), f);
        }
        if let Some((conv, bn)) = &mut self.projection {
            f(&format!("{prefix}.proj.w"), &mut conv.w);
            f(&format!("{prefix}.proj.b"), &mut conv.b);
            if let Some(bn) = bn {
                bn.visit_params(&format!("{prefix}.proj_bn"), f);
            }
        }
    }

    pub fn visit_buffers(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        if let Some(bn) = &mut self.bn1 {
            bn.visit_buffers(&format!("{prefix}.bn1"), f);
        }
        if let Some(bn) = &mut self.bn2 {
            bn.visit_buffers(&format!("{prefix}.bn2"), f);
        }
        if let Some((_, Some(bn))) = &mut self.projection {
            bn.visit_buffers(&format!("{prefix}.proj_bn"), f);
        }
    }

    /// Sets every weight and bias of the residual branch `F` to zero.
    pub fn zero_branch(&mut self) {
        for p in [&mut self.conv1.w, &mut self.conv1.b, &mut self.conv2.w, &mut self.conv2.b] {
            p.value.fill(T::zero());
        }
        for bn in [&mut self.bn1, &mut self.bn2].into_iter().flatten() {
            bn.alpha.value.fill(T::zero());
            bn.beta.value.fill(T::zero());
        }
    }
}

/// Forward pass of a residual block; same as [`ResidualBlock::forward`].
pub fn residual_block_forward<T: Scalar>(block: &mut ResidualBlock<T>, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
    block.forward(x, mode)
}
