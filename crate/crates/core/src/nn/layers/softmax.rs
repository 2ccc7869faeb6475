use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;
use crate::scalar::Scalar;

/// Row-wise softmax of `[batch, classes]` with max subtraction.
pub fn softmax<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let &[n, c] = x.shape() else {
        return Err(Error::Shape {
            op: "softmax",
            left: x.shape().to_vec(),
            right: vec![],
        });
    };
    if c == 0 {
        return Err(Error::validation("softmax needs at least one class"));
    }
    let mut out = Vec::with_capacity(n * c);
    for r in 0..n {
        let row = x.row_slice(r);
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let start = out.len();
        out.extend(row.iter().map(|&v| (v - m).exp()));
        let z: T = out[start..].iter().copied().sum();
        out[start..].iter_mut().for_each(|v| *v /= z);
    }
    Tensor::new(vec![n, c], out)
}

/// Vector-Jacobian product of softmax: `dx = p ⊙ (g − Σ g⊙p)` per row.
pub fn softmax_backward<T: Scalar>(p: &Tensor<T>, g: &Tensor<T>) -> Result<Tensor<T>> {
    g.expect_shape("softmax backward", p.shape())?;
    let c = p.shape()[1];
    let mut dx = Vec::with_capacity(p.len());
    for (pr, gr) in p.data().chunks(c).zip(g.data().chunks(c)) {
        let dot: T = pr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
        dx.extend(pr.iter().zip(gr).map(|(&a, &b)| a * (b - dot)));
    }
    Tensor::new(p.shape().to_vec(), dx)
}

#[derive(Debug, Clone, Default)]
pub struct Softmax<T: Scalar> {
    output: Option<Tensor<T>>,
}

impl<T: Scalar> Softmax<T> {
    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let p = softmax(x)?;
        self.output = Some(p.clone());
        Ok(p)
    }

    pub fn backward(&mut self, g: &Tensor<T>) -> Result<Tensor<T>> {
        let p = self
            .output
            .as_ref()
            .ok_or_else(|| Error::config("softmax: backward before forward"))?;
        softmax_backward(p, g)
    }
}
