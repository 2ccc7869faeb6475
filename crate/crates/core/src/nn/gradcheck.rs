//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;

use super::layers::Param;
use super::loss::Loss;
use super::network::Network;
use super::tensor::Tensor;
use crate::error::Result;
use crate::rng::seeded;

/// Anything exposing named trainable parameters.
pub trait Trainable<T> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param<T>));
}

impl Trainable<f64> for Network<f64> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param<f64>)) {
        Network::visit_params(self, f)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub h: f64,
    /// Check at most this many coordinates per tensor (sampled); 0 = all.
    pub max_per_tensor: usize,
    /// Denominator floor for the relative error.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            h: 1e-5,
            max_per_tensor: 0,
            floor: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `name[index]` of the worst coordinate.
    pub worst: String,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares analytic gradients against `(J(θ+h) − J(θ−h)) / 2h` coordinate by
/// coordinate.
///
/// `objective(model, with_grad)` returns the loss; when `with_grad` is true it
/// must also leave fresh gradients in the parameters.
pub fn grad_check_with<M: Trainable<f64>>(
    model: &mut M,
    mut objective: impl FnMut(&mut M, bool) -> Result<f64>,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    objective(model, true)?;
    let mut analytic: Vec<(String, Tensor<f64>)> = Vec::new();
    model.visit_params(&mut |name, p| analytic.push((name.to_string(), p.grad.clone())));

    let mut rng = seeded(opts.seed);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: String::new(),
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    for (name, grad) in &analytic {
        let n = grad.len();
        let coords: Vec<usize> = if opts.max_per_tensor == 0 || n <= opts.max_per_tensor {
            (0..n).collect()
        } else {
            let mut v = sample(&mut rng, n, opts.max_per_tensor).into_vec();
            v.sort_unstable();
            v
        };
        for i in coords {
            let shift = |model: &mut M, delta: f64| {
                model.visit_params(&mut |pn, p| {
                    if pn == name {
                        p.value.data_mut()[i] += delta;
                    }
                })
            };
            let orig = {
                let mut v = 0.0;
                model.visit_params(&mut |pn, p| {
                    if pn == name {
                        v = p.value.data()[i];
                    }
                });
                v
            };
            shift(model, opts.h);
            let plus = objective(model, false)?;
            shift(model, -2.0 * opts.h);
            let minus = objective(model, false)?;
            model.visit_params(&mut |pn, p| {
                if pn == name {
                    p.value.data_mut()[i] = orig;
                }
            });
            let numeric = (plus - minus) / (2.0 * opts.h);
            let a = grad.data()[i];
            let err = relative_error(a, numeric, opts.floor);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_empty() {
                report.max_rel_error = err;
                report.worst = format!("{name}[{i}]");
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}

/// Gradient check of a sequential network under `loss` in training mode.
pub fn grad_check(
    network: &mut Network<f64>,
    input: &Tensor<f64>,
    targets: &Tensor<f64>,
    loss: Loss,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    grad_check_with(
        network,
        |net, with_grad| {
            if with_grad {
                net.loss_and_grad(input, targets, loss)
            } else {
                let out = net.forward(input, super::layers::Mode::Train)?;
                loss.value(&out, targets)
            }
        },
        opts,
    )
}

/// Checks d loss / d input of a network by finite differences on the input.
pub fn input_grad_check(
    network: &mut Network<f64>,
    input: &Tensor<f64>,
    targets: &Tensor<f64>,
    loss: Loss,
    opts: &GradCheckOptions,
) -> Result<f64> {
    network.zero_grad();
    let out = network.forward(input, super::layers::Mode::Train)?;
    let g = loss.grad(&out, targets)?;
    let dx = network.backward(&g)?;
    let mut worst = 0.0f64;
    for i in 0..input.len() {
        let mut xp = input.clone();
        xp.data_mut()[i] += opts.h;
        let plus = loss.value(&network.forward(&xp, super::layers::Mode::Train)?, targets)?;
        xp.data_mut()[i] -= 2.0 * opts.h;
        let minus = loss.value(&network.forward(&xp, super::layers::Mode::Train)?, targets)?;
        let numeric = (plus - minus) / (2.0 * opts.h);
        worst = worst.max(relative_error(dx.data()[i], numeric, opts.floor));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layers::LayerSpec;
    use crate::nn::loss::one_hot;
    use crate::nn::network::NetworkSpec;
    use rand::Rng as _;

    fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = seeded(seed);
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn check(spec: NetworkSpec, x: Tensor<f64>, y: Tensor<f64>, loss: Loss) -> GradCheckReport {
        let mut net = Network::<f64>::build(&spec, 3).unwrap();
        let r = grad_check(&mut net, &x, &y, loss, &GradCheckOptions::default()).unwrap();
        let dx = input_grad_check(&mut net, &x, &y, loss, &GradCheckOptions::default()).unwrap();
        assert!(dx < 1e-4, "input gradient error {dx}");
        r
    }

    #[test]
    fn dense_mse() {
        let spec = NetworkSpec {
            input_shape: vec![3],
            layers: vec![LayerSpec::Dense { inputs: 3, outputs: 2 }],
        };
        let r = check(spec, random(&[4, 3], 1), random(&[4, 2], 2), Loss::MeanSquared);
        assert!(r.max_rel_error < 1e-6, "{r:?}");
        assert_eq!(r.checked, 8);
    }

    #[test]
    fn dense_batch_norm_leaky() {
        let spec = NetworkSpec {
            input_shape: vec![3],
            layers: vec![
                LayerSpec::Dense { inputs: 3, outputs: 5 },
                LayerSpec::LeakyRelu { leak: 0.01 },
                LayerSpec::batch_norm(5),
                LayerSpec::Dense { inputs: 5, outputs: 3 },
                LayerSpec::Softmax,
            ],
        };
        let y = one_hot(&[0, 2, 1, 1, 0, 2], 3).unwrap();
        let r = check(spec, random(&[6, 3], 4), y, Loss::CrossEntropy);
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    #[test]
    fn conv_pool_residual_softmax() {
        let spec = NetworkSpec {
            input_shape: vec![1, 6, 6],
            layers: vec![
                LayerSpec::Conv2d {
                    in_channels: 1,
                    out_channels: 2,
                    kernel: (3, 3),
                    stride: 1,
                    padding: 1,
                },
                LayerSpec::MaxPool {
                    window: 2,
                    stride: 2,
                    padding: 0,
                },
                LayerSpec::ResidualBlock {
                    in_channels: 2,
                    out_channels: 3,
                    stride: 1,
                    batch_norm: true,
                },
                LayerSpec::GlobalAvgPool,
                LayerSpec::Dense { inputs: 3, outputs: 2 },
                LayerSpec::Softmax,
            ],
        };
        let y = one_hot(&[0, 1, 1], 2).unwrap();
        let r = check(spec, random(&[3, 1, 6, 6], 5), y, Loss::CrossEntropy);
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0, 1e-8), 0.0);
        assert_eq!(relative_error(1.0, 0.5, 1e-8), 0.5);
        assert!(relative_error(1e-12, 0.0, 1e-8) <= 1e-4);
    }
}
