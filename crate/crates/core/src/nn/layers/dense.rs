use super::{scaled_uniform, Param};
use crate::error::{Error, Result};
use crate::nn::tensor::{matmul, matmul_nt, matmul_tn, Tensor};
use crate::rng::Rng;
use crate::scalar::Scalar;

/// Fully connected layer `y = x·w + b` with `w: [in, out]`.
#[derive(Debug, Clone)]
pub struct Dense<T: Scalar> {
    pub w: Param<T>,
    pub b: Param<T>,
    input: Option<Tensor<T>>,
}

impl<T: Scalar> Dense<T> {
    pub fn new(inputs: usize, outputs: usize, rng: &mut Rng) -> Self {
        Self {
            w: Param::new(scaled_uniform(&[inputs, outputs], inputs, outputs, rng)),
            b: Param::new(Tensor::zeros(&[outputs])),
            input: None,
        }
    }

    pub fn from_params(w: Tensor<T>, b: Tensor<T>) -> Result<Self> {
        if w.shape().len() != 2 || b.shape() != [w.shape()[1]] {
            return Err(Error::Shape {
                op: "dense",
                left: w.shape().to_vec(),
                right: b.shape().to_vec(),
            });
        }
        Ok(Self {
            w: Param::new(w),
            b: Param::new(b),
            input: None,
        })
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let y = dense_forward(x, &self.w.value, &self.b.value)?;
        self.input = Some(x.clone());
        Ok(y)
    }

    pub fn backward(&mut self, g: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self
            .input
            .as_ref()
            .ok_or_else(|| Error::config("dense: backward before forward"))?;
        let (n, i) = (x.shape()[0], x.shape()[1]);
        let o = self.w.value.shape()[1];
        g.expect_shape("dense backward", &[n, o])?;
        matmul_tn(x.data(), g.data(), self.w.grad.data_mut(), i, n, o, true);
        for r in 0..n {
            for (db, &gv) in self.b.grad.data_mut().iter_mut().zip(g.row_slice(r)) {
                *db += gv;
            }
        }
        let mut dx = Tensor::zeros(&[n, i]);
        matmul_nt(g.data(), self.w.value.data(), dx.data_mut(), n, o, i, false);
        Ok(dx)
    }
}

/// `x[batch, in] · w[in, out] + b[out]`.
pub fn dense_forward<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if x.shape().len() != 2 || w.shape().len() != 2 || x.shape()[1] != w.shape()[0] {
        return Err(Error::Shape {
            op: "dense",
            left: x.shape().to_vec(),
            right: w.shape().to_vec(),
        });
    }
    let (n, i, o) = (x.shape()[0], w.shape()[0], w.shape()[1]);
    b.expect_shape("dense bias", &[o])?;
    let mut y = Tensor::zeros(&[n, o]);
    matmul(x.data(), w.data(), y.data_mut(), n, i, o, false);
    for r in 0..n {
        for (yv, &bv) in y.data_mut()[r * o..(r + 1) * o].iter_mut().zip(b.data()) {
            *yv += bv;
        }
    }
    Ok(y)
}
