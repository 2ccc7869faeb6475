use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Probabilities are clamped into `[CLAMP, 1 − CLAMP]` before taking logs.
pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    /// Categorical cross-entropy on probability rows.
    CrossEntropy,
    MeanSquared,
}

impl Loss {
    pub fn value<T: Scalar>(self, pred: &Tensor<T>, target: &Tensor<T>) -> Result<T> {
        match self {
            Loss::CrossEntropy => cross_entropy_loss(pred, target),
            Loss::MeanSquared => mse_loss(pred, target),
        }
    }

    pub fn grad<T: Scalar>(self, pred: &Tensor<T>, target: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Loss::CrossEntropy => cross_entropy_grad(pred, target),
            Loss::MeanSquared => mse_grad(pred, target),
        }
    }
}

fn check_pair<T: Scalar>(op: &'static str, p: &Tensor<T>, y: &Tensor<T>) -> Result<()> {
    if p.shape() != y.shape() || p.shape().len() != 2 || p.batch() == 0 {
        return Err(Error::Shape {
            op,
            left: p.shape().to_vec(),
            right: y.shape().to_vec(),
        });
    }
    Ok(())
}

/// Mean over rows of `−Σ_c y_c · ln p_c`. For two classes with one-hot targets
/// this is the binary cross-entropy.
pub fn cross_entropy_loss<T: Scalar>(probs: &Tensor<T>, targets: &Tensor<T>) -> Result<T> {
    check_pair("cross_entropy", probs, targets)?;
    let (lo, hi) = (T::of(PROB_CLAMP), T::one() - T::of(PROB_CLAMP));
    let total: T = probs
        .data()
        .iter()
        .zip(targets.data())
        .filter(|(_, &y)| y != T::zero())
        .map(|(&p, &y)| -y * p.max(lo).min(hi).ln())
        .sum();
    Ok(total / T::of_usize(probs.batch()))
}

/// Gradient of [`cross_entropy_loss`] with respect to the probabilities;
/// zero where the clamp is active.
pub fn cross_entropy_grad<T: Scalar>(probs: &Tensor<T>, targets: &Tensor<T>) -> Result<Tensor<T>> {
    check_pair("cross_entropy", probs, targets)?;
    let (lo, hi) = (T::of(PROB_CLAMP), T::one() - T::of(PROB_CLAMP));
    let n = T::of_usize(probs.batch());
    let data = probs
        .data()
        .iter()
        .zip(targets.data())
        .map(|(&p, &y)| {
            if y == T::zero() || p < lo || p > hi {
                T::zero()
            } else {
                -y / (p * n)
            }
        })
        .collect();
    Tensor::new(probs.shape().to_vec(), data)
}

/// Mean of squared differences over all elements.
pub fn mse_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<T> {
    if pred.shape() != target.shape() || pred.is_empty() {
        return Err(Error::Shape {
            op: "mse",
            left: pred.shape().to_vec(),
            right: target.shape().to_vec(),
        });
    }
    let s: T = pred.data().iter().zip(target.data()).map(|(&a, &b)| (a - b) * (a - b)).sum();
    Ok(s / T::of_usize(pred.len()))
}

pub fn mse_grad<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<Tensor<T>> {
    mse_loss(pred, target)?;
    let scale = T::of(2.0) / T::of_usize(pred.len());
    let data = pred.data().iter().zip(target.data()).map(|(&a, &b)| scale * (a - b)).collect();
    Tensor::new(pred.shape().to_vec(), data)
}

/// `[batch, classes]` one-hot rows.
pub fn one_hot<T: Scalar>(labels: &[usize], classes: usize) -> Result<Tensor<T>> {
    let mut t = Tensor::zeros(&[labels.len(), classes]);
    for (r, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(Error::validation(format!("label {l} out of range for {classes} classes")));
        }
        t.data_mut()[r * classes + l] = T::one();
    }
    Ok(t)
}

/// Index of the largest entry of each row; ties go to the smallest index.
pub fn argmax_rows<T: Scalar>(x: &Tensor<T>) -> Vec<usize> {
    let c = x.shape().get(1).copied().unwrap_or(0);
    x.data()
        .chunks(c.max(1))
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}
