use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;
use crate::scalar::Scalar;

/// Leaky ReLU `y = x` for `x ≥ 0`, `a·x` otherwise. `a = 0` gives plain ReLU.
#[derive(Debug, Clone)]
pub struct Activation<T: Scalar> {
    leak: T,
    input: Option<Tensor<T>>,
}

impl<T: Scalar> Activation<T> {
    pub fn new(leak: T) -> Self {
        Self { leak, input: None }
    }

    pub fn leak(&self) -> T {
        self.leak
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        self.input = Some(x.clone());
        leaky_relu(x, self.leak)
    }

    pub fn backward(&mut self, g: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self
            .input
            .as_ref()
            .ok_or_else(|| Error::config("activation: backward before forward"))?;
        g.expect_shape("activation backward", x.shape())?;
        let a = self.leak;
        let data = x
            .data()
            .iter()
            .zip(g.data())
            .map(|(&xv, &gv)| if xv >= T::zero() { gv } else { a * gv })
            .collect();
        Tensor::new(x.shape().to_vec(), data)
    }
}

pub fn leaky_relu<T: Scalar>(x: &Tensor<T>, a: T) -> Tensor<T> {
    x.map(|v| if v >= T::zero() { v } else { a * v })
}

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    leaky_relu(x, T::zero())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn leaky_relu_values() {
        let x = Tensor::<f64>::from_f64(&[3], &[3.0, -2.0, 0.0]).unwrap();
        let y = leaky_relu(&x, 0.01);
        assert_eq!(y.data()[0], 3.0);
        assert!((y.data()[1] + 0.02).abs() < 1e-15);
        assert_eq!(y.data()[2], 0.0);
    }

    #[test]
    fn relu_clips_negatives() {
        let x = Tensor::<f32>::from_f64(&[2], &[-1.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 2.0]);
    }
}
