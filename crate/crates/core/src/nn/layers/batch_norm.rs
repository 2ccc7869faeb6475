use super::{Mode, Param};
use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;
use crate::scalar::Scalar;

/// Batch normalization over `[N, F]` (per feature) or `[N, C, H, W]` (per
/// channel, statistics over batch and spatial positions).
///
/// Training mode normalizes with the population mean/variance of the batch and
/// folds them into exponential running averages; eval mode uses the running
/// averages.
#[derive(Debug, Clone)]
pub struct BatchNorm<T: Scalar> {
    pub alpha: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    eps: T,
    momentum: T,
    cache: Option<Cache<T>>,
}

#[derive(Debug, Clone)]
struct Cache<T> {
    xhat: Tensor<T>,
    inv_std: Vec<T>,
    mode: Mode,
}

/// `(outer, channels, inner)` decomposition of a batch-norm input.
fn layout(shape: &[usize]) -> Option<(usize, usize, usize)> {
    match *shape {
        [n, f] => Some((n, f, 1)),
        [n, c, h, w] => Some((n, c, h * w)),
        _ => None,
    }
}

/// Per-channel population mean and variance.
fn moments<T: Scalar>(x: &Tensor<T>, (n, c, inner): (usize, usize, usize)) -> (Vec<T>, Vec<T>) {
    let m = T::of_usize(n * inner);
    let d = x.data();
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    for (ch, (mu, v)) in mean.iter_mut().zip(var.iter_mut()).enumerate() {
        let mut s = T::zero();
        for b in 0..n {
            let base = (b * c + ch) * inner;
            s += d[base..base + inner].iter().copied().sum::<T>();
        }
        *mu = s / m;
        let mut sq = T::zero();
        for b in 0..n {
            let base = (b * c + ch) * inner;
            for &xv in &d[base..base + inner] {
                sq += (xv - *mu) * (xv - *mu);
            }
        }
        *v = sq / m;
    }
    (mean, var)
}

fn check_input<T: Scalar>(x: &Tensor<T>, channels: usize) -> Result<(usize, usize, usize)> {
    let lay = layout(x.shape()).filter(|l| l.1 == channels).ok_or_else(|| Error::Shape {
        op: "batch_norm",
        left: x.shape().to_vec(),
        right: vec![channels],
    })?;
    if lay.0 == 0 {
        return Err(Error::data("batch norm on an empty batch"));
    }
    Ok(lay)
}

/// `y = α·(x − μ)/sqrt(σ² + ε) + β` with per-feature batch statistics
/// (population variance). `eps` may be zero here for exact hand checks.
pub fn batch_norm<T: Scalar>(x: &Tensor<T>, alpha: &[T], beta: &[T], eps: T) -> Result<Tensor<T>> {
    if alpha.len() != beta.len() {
        return Err(Error::Shape {
            op: "batch_norm",
            left: vec![alpha.len()],
            right: vec![beta.len()],
        });
    }
    let lay = check_input(x, alpha.len())?;
    let (mean, var) = moments(x, lay);
    let inv: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    Ok(normalize(x, lay, &mean, &inv, alpha, beta).1)
}

fn normalize<T: Scalar>(
    x: &Tensor<T>,
    (n, c, inner): (usize, usize, usize),
    mean: &[T],
    inv_std: &[T],
    alpha: &[T],
    beta: &[T],
) -> (Tensor<T>, Tensor<T>) {
    let mut xhat = Tensor::zeros(x.shape());
    let mut y = Tensor::zeros(x.shape());
    for b in 0..n {
        for ch in 0..c {
            let base = (b * c + ch) * inner;
            for s in base..base + inner {
                let h = (x.data()[s] - mean[ch]) * inv_std[ch];
                xhat.data_mut()[s] = h;
                y.data_mut()[s] = alpha[ch] * h + beta[ch];
            }
        }
    }
    (xhat, y)
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(features: usize, eps: T, momentum: T) -> Self {
        Self {
            alpha: Param::new(Tensor::full(&[features], T::one())),
            beta: Param::new(Tensor::zeros(&[features])),
            running_mean: Tensor::zeros(&[features]),
            running_var: Tensor::full(&[features], T::one()),
            eps,
            momentum,
            cache: None,
        }
    }

    pub fn features(&self) -> usize {
        self.alpha.value.len()
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let lay = check_input(x, self.features())?;
        let (mean, inv_std) = match mode {
            Mode::Train => {
                let (mean, var) = moments(x, lay);
                let keep = self.momentum;
                for (ch, (mu, v)) in mean.iter().zip(&var).enumerate() {
                    let rm = &mut self.running_mean.data_mut()[ch];
                    *rm = keep * *rm + (T::one() - keep) * *mu;
                    let rv = &mut self.running_var.data_mut()[ch];
                    *rv = keep * *rv + (T::one() - keep) * *v;
                }
                let inv = var.iter().map(|&v| T::one() / (v + self.eps).sqrt()).collect::<Vec<_>>();
                (mean, inv)
            }
            Mode::Eval => (
                self.running_mean.data().to_vec(),
                self.running_var
                    .data()
                    .iter()
                    .map(|&v| T::one() / (v + self.eps).sqrt())
                    .collect(),
            ),
        };
        let (xhat, y) = normalize(x, lay, &mean, &inv_std, self.alpha.value.data(), self.beta.value.data());
        self.cache = Some(Cache { xhat, inv_std, mode });
        Ok(y)
    }

    pub fn backward(&mut self, g: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::config("batch_norm: backward before forward"))?;
        g.expect_shape("batch_norm backward", cache.xhat.shape())?;
        let (n, c, inner) = layout(g.shape()).expect("validated in forward");
        let m = T::of_usize(n * inner);
        let (gd, xh) = (g.data(), cache.xhat.data());
        let mut dx = Tensor::zeros(g.shape());
        for ch in 0..c {
            let alpha = self.alpha.value.data()[ch];
            let (mut sum_g, mut sum_gx) = (T::zero(), T::zero());
            for b in 0..n {
                let base = (b * c + ch) * inner;
                for s in base..base + inner {
                    sum_g += gd[s];
                    sum_gx += gd[s] * xh[s];
                }
            }
            self.alpha.grad.data_mut()[ch] += sum_gx;
            self.beta.grad.data_mut()[ch] += sum_g;
            let inv = cache.inv_std[ch];
            for b in 0..n {
                let base = (b * c + ch) * inner;
                for s in base..base + inner {
                    dx.data_mut()[s] = match cache.mode {
                        // dxhat = α·g; dx = inv/M · (M·dxhat − Σdxhat − xhat·Σ(dxhat·xhat))
                        Mode::Train => alpha * inv / m * (m * gd[s] - sum_g - xh[s] * sum_gx),
                        Mode::Eval => alpha * inv * gd[s],
                    };
                }
            }
        }
        Ok(dx)
    }

    pub fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&format!("{prefix}.alpha"), &mut self.alpha);
        f(&format!("{prefix}.beta"), &mut self.beta);
    }

    pub fn visit_buffers(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f(&format!("{prefix}.running_mean"), &mut self.running_mean);
        f(&format!("{prefix}.running_var"), &mut self.running_var);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(&[v.len(), 1], v).unwrap()
    }

    #[test]
    fn three_values_exact() {
        let y = batch_norm(&col(&[1.0, 2.0, 3.0]), &[1.0], &[0.0], 0.0).unwrap();
        let e = (1.5f64).sqrt(); // 1/sqrt(2/3)
        assert!((y.data()[0] + e).abs() < 1e-12);
        assert_eq!(y.data()[1], 0.0);
        assert!((y.data()[2] - e).abs() < 1e-12);
        assert!((e - 1.22474).abs() < 1e-5);
    }

    #[test]
    fn constant_batch_centres_to_zero() {
        let y = batch_norm(&col(&[5.0, 5.0]), &[1.0], &[0.0], 1e-5).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0]);
    }

    #[test]
    fn affine_step() {
        // [-1, 1] already has mean 0, variance 1.
        let y = batch_norm(&col(&[-1.0, 1.0]), &[2.0], &[1.0], 0.0).unwrap();
        assert_eq!(y.data(), &[-1.0, 3.0]);
    }

    #[test]
    fn empty_batch_is_an_error() {
        let x = Tensor::<f64>::zeros(&[0, 3]);
        assert!(batch_norm(&x, &[1.0; 3], &[0.0; 3], 1e-5).is_err());
    }

    #[test]
    fn running_stats_only_move_in_training() {
        let mut bn = BatchNorm::<f64>::new(1, 1e-5, 0.9);
        let x = col(&[1.0, 3.0]);
        bn.forward(&x, Mode::Eval).unwrap();
        assert_eq!(bn.running_mean.data(), &[0.0]);
        bn.forward(&x, Mode::Train).unwrap();
        assert!((bn.running_mean.data()[0] - 0.2).abs() < 1e-15);
        assert!((bn.running_var.data()[0] - (0.9 + 0.1)).abs() < 1e-15);
    }

    #[test]
    fn channel_statistics_span_spatial_positions() {
        // [N=1, C=2, H=1, W=2]
        let x = Tensor::<f64>::from_f64(&[1, 2, 1, 2], &[0.0, 2.0, 10.0, 12.0]).unwrap();
        let y = batch_norm(&x, &[1.0, 1.0], &[0.0, 0.0], 0.0).unwrap();
        assert_eq!(y.data(), &[-1.0, 1.0, -1.0, 1.0]);
    }
}
