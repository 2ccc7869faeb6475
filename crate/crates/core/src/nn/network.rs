use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::layers::{Layer, LayerSpec, Mode, Param};
use super::loss::Loss;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::rng::seeded;
use crate::scalar::Scalar;

/// Layer-by-layer architecture with the per-sample input shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    /// Per-sample output shape; fails on the first inconsistent layer.
    pub fn output_shape(&self) -> Result<Vec<usize>> {
        if self.input_shape.is_empty() || self.input_shape.contains(&0) {
            return Err(Error::config(format!("invalid input shape {:?}", self.input_shape)));
        }
        let mut shape = self.input_shape.clone();
        for (i, l) in self.layers.iter().enumerate() {
            shape = l
                .output_shape(&shape)
                .map_err(|e| Error::config(format!("layer {i}: {e}")))?;
        }
        Ok(shape)
    }

    /// Per-sample shapes after every layer, starting with the input.
    pub fn shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut out = vec![self.input_shape.clone()];
        for l in &self.layers {
            let next = l.output_shape(out.last().expect("non-empty"))?;
            out.push(next);
        }
        Ok(out)
    }
}

/// Sequential network owning its parameters.
#[derive(Debug, Clone)]
pub struct Network<T: Scalar> {
    spec: NetworkSpec,
    layers: Vec<Layer<T>>,
    /// Reject NaN/Inf after every layer.
    pub checked: bool,
}

impl<T: Scalar> Network<T> {
    /// Builds and initializes all layers from a single seeded stream.
    pub fn build(spec: &NetworkSpec, seed: u64) -> Result<Self> {
        spec.output_shape()?;
        let mut rng = seeded(seed);
        let layers = spec.layers.iter().map(|l| Layer::build(l, &mut rng)).collect();
        Ok(Self {
            spec: spec.clone(),
            layers,
            checked: true,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        if x.shape().len() != self.spec.input_shape.len() + 1 || x.shape()[1..] != self.spec.input_shape[..] {
            return Err(Error::Shape {
                op: "network input",
                left: x.shape().to_vec(),
                right: self.spec.input_shape.clone(),
            });
        }
        let mut h = x.clone();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            h = layer.forward(&h, mode)?;
            if self.checked && !h.is_finite() {
                return Err(Error::NonFinite {
                    layer: i,
                    kind: layer.kind(),
                });
            }
        }
        Ok(h)
    }

    /// Eval-mode forward on a scratch copy, leaving `self` untouched; safe to
    /// call from several threads on a shared network.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.clone().forward(x, Mode::Eval)
    }

    /// Backpropagates `grad` (d loss / d output); returns d loss / d input and
    /// accumulates parameter gradients.
    pub fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = grad.clone();
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(&g)?;
        }
        Ok(g)
    }

    pub fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            let prefix = format!("{i:02}.{}", layer.kind());
            layer.visit_params(&prefix, f);
        }
    }

    pub fn visit_buffers(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            let prefix = format!("{i:02}.{}", layer.kind());
            layer.visit_buffers(&prefix, f);
        }
    }

    pub fn zero_grad(&mut self) {
        self.visit_params(&mut |_, p| p.grad.fill(T::zero()));
    }

    pub fn param_count(&mut self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_, p| n += p.value.len());
        n
    }

    /// Plain SGD on every parameter with the accumulated gradients.
    pub fn sgd_step(&mut self, lr: T) {
        self.visit_params(&mut |_, p| {
            super::optim::sgd_step(p.value.data_mut(), p.grad.data(), lr).expect("grad shape matches param");
        });
    }

    /// Forward in training mode, loss, backward. Gradients are reset first.
    pub fn loss_and_grad(&mut self, x: &Tensor<T>, target: &Tensor<T>, loss: Loss) -> Result<T> {
        self.zero_grad();
        let out = self.forward(x, Mode::Train)?;
        let value = loss.value(&out, target)?;
        let g = loss.grad(&out, target)?;
        self.backward(&g)?;
        Ok(value)
    }

    /// One SGD step on a batch; returns the loss before the update.
    pub fn train_step(&mut self, x: &Tensor<T>, target: &Tensor<T>, loss: Loss, lr: T) -> Result<T> {
        let value = self.loss_and_grad(x, target, loss)?;
        self.sgd_step(lr);
        Ok(value)
    }

    /// Parameters and buffers by stable name, for persistence.
    pub fn named_tensors(&mut self) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::new();
        self.visit_params(&mut |name, p| out.push((name.to_string(), p.value.clone())));
        self.visit_buffers(&mut |name, t| out.push((name.to_string(), t.clone())));
        out
    }

    /// Overwrites parameters and buffers from `tensors`; every name must be
    /// present with the matching shape.
    pub fn load_named(&mut self, tensors: &BTreeMap<String, Tensor<T>>) -> Result<()> {
        let mut err: Option<Error> = None;
        let mut take = |name: &str, dst: &mut Tensor<T>| {
            if err.is_some() {
                return;
            }
            match tensors.get(name) {
                Some(t) if t.shape() == dst.shape() => *dst = t.clone(),
                Some(t) => {
                    err = Some(Error::Shape {
                        op: "load parameter",
                        left: t.shape().to_vec(),
                        right: dst.shape().to_vec(),
                    })
                }
                None => err = Some(Error::Corrupt(format!("missing tensor {name}"))),
            }
        };
        self.visit_params(&mut |name, p| take(name, &mut p.value));
        self.visit_buffers(&mut |name, t| take(name, t));
        match err {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mlp() -> NetworkSpec {
        NetworkSpec {
            input_shape: vec![3],
            layers: vec![
                LayerSpec::Dense { inputs: 3, outputs: 4 },
                LayerSpec::LeakyRelu { leak: 0.01 },
                LayerSpec::batch_norm(4),
                LayerSpec::Dense { inputs: 4, outputs: 2 },
                LayerSpec::Softmax,
            ],
        }
    }

    #[test]
    fn shape_inference() {
        assert_eq!(mlp().output_shape().unwrap(), vec![2]);
        let mut bad = mlp();
        bad.layers[3] = LayerSpec::Dense { inputs: 5, outputs: 2 };
        assert!(bad.output_shape().is_err());
        let mut leak = mlp();
        leak.layers[1] = LayerSpec::LeakyRelu { leak: 1.5 };
        assert!(Network::<f64>::build(&leak, 0).is_err());
    }

    #[test]
    fn same_seed_same_weights() {
        let mut a = Network::<f64>::build(&mlp(), 9).unwrap();
        let mut b = Network::<f64>::build(&mlp(), 9).unwrap();
        assert_eq!(a.named_tensors(), b.named_tensors());
        let mut c = Network::<f64>::build(&mlp(), 10).unwrap();
        assert_ne!(a.named_tensors(), c.named_tensors());
    }

    #[test]
    fn named_round_trip() {
        let mut a = Network::<f64>::build(&mlp(), 1).unwrap();
        let mut b = Network::<f64>::build(&mlp(), 2).unwrap();
        let map: BTreeMap<_, _> = a.named_tensors().into_iter().collect();
        b.load_named(&map).unwrap();
        assert_eq!(a.named_tensors(), b.named_tensors());
        let mut partial = map.clone();
        partial.remove("00.dense.w");
        assert!(b.load_named(&partial).is_err());
    }

    #[test]
    fn checked_mode_rejects_non_finite() {
        let mut net = Network::<f64>::build(&mlp(), 1).unwrap();
        let x = Tensor::from_f64(&[2, 3], &[f64::NAN, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
        assert!(matches!(net.forward(&x, Mode::Train), Err(Error::NonFinite { layer: 0, .. })));
        net.checked = false;
        assert!(net.forward(&x, Mode::Train).is_ok());
    }

    #[test]
    fn small_step_decreases_loss() {
        let mut net = Network::<f64>::build(&mlp(), 4).unwrap();
        let x = Tensor::from_f64(&[4, 3], &[0.1, 0.2, -0.3, 1.0, -1.0, 0.5, 0.3, 0.3, 0.3, -0.7, 0.2, 0.9]).unwrap();
        let y = super::super::loss::one_hot(&[0, 1, 1, 0], 2).unwrap();
        let before = net.train_step(&x, &y, Loss::CrossEntropy, 1e-4).unwrap();
        let after = net.loss_and_grad(&x, &y, Loss::CrossEntropy).unwrap();
        assert!(after < before, "{after} !< {before}");
    }
}
