//! Stage 2: dual-pathway residual network over (GASF, GADF) image pairs that
//! predicts the 2^γ-class multi-step presence label.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::gradcheck::Trainable;
use crate::nn::layers::{LayerSpec, Mode, Param};
use crate::nn::loss::{one_hot, Loss};
use crate::nn::optim::{scheduler_rate, SchedulerConfig};
use crate::nn::tensor::{concat_features, split_features};
use crate::nn::{Network, NetworkSpec, Tensor};
use crate::rng::{permutation, seeded, sub_seed};
use crate::scalar::{Precision, Scalar};
use crate::series_gaf::{balance_classes, AugmentConfig, GafImagePair, LabeledPair, MultiStepLabel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Stage2Config {
    /// Steps ahead; the head has 2^γ classes.
    pub gamma: usize,
    /// Image side length T.
    pub input_size: usize,
    /// Channels per residual stage before width scaling.
    pub channels: Vec<usize>,
    pub blocks_per_stage: usize,
    /// Multiplies every channel count (rounded, at least 1).
    pub width_factor: f64,
    pub batch_norm: bool,
    /// Leak of the head's activation.
    pub leak: f64,
    pub scheduler: SchedulerConfig,
    pub batch_size: usize,
    /// Clamp every gradient entry to `[−grad_clip, grad_clip]` before the
    /// update; 0 disables clipping.
    pub grad_clip: f64,
    pub max_epochs: usize,
    /// Epochs without a new best validation loss before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Oversample minority classes of the training set before training.
    pub balance: bool,
    pub augment: AugmentConfig,
    pub precision: Precision,
}

impl Default for Stage2Config {
    fn default() -> Self {
        Self {
            gamma: 3,
            input_size: 32,
            channels: vec![64, 128, 256, 512],
            blocks_per_stage: 2,
            width_factor: 1.0,
            batch_norm: true,
            leak: 0.01,
            scheduler: SchedulerConfig {
                alpha0: 0.1,
                delta: 0.5,
                drop: 10,
            },
            batch_size: 32,
            grad_clip: 5.0,
            max_epochs: 100,
            patience: 10,
            seed: 0,
            balance: true,
            augment: AugmentConfig::default(),
            precision: Precision::F32,
        }
    }
}

impl Stage2Config {
    pub fn num_classes(&self) -> usize {
        1 << self.gamma
    }

    /// Channel schedule after width scaling.
    pub fn scaled_channels(&self) -> Vec<usize> {
        self.channels
            .iter()
            .map(|&c| ((c as f64 * self.width_factor).round() as usize).max(1))
            .collect()
    }

    /// Smallest T for which every stride-2 step sees at least two positions:
    /// `2^(stages + 1)` (stem convolution, max pool, and one per later stage).
    pub fn min_input_size(&self) -> usize {
        1 << (self.channels.len() + 1)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=16).contains(&self.gamma) {
            return Err(Error::config(format!("gamma must lie in 1..=16, got {}", self.gamma)));
        }
        if self.channels.is_empty() || self.channels.contains(&0) || self.blocks_per_stage == 0 {
            return Err(Error::config("channel schedule needs positive counts and at least one block per stage"));
        }
        if !(self.width_factor > 0.0 && self.width_factor.is_finite()) {
            return Err(Error::config(format!("width_factor must be positive, got {}", self.width_factor)));
        }
        if !(self.leak > 0.0 && self.leak < 1.0) {
            return Err(Error::config(format!("leak must lie in (0, 1), got {}", self.leak)));
        }
        if !(self.grad_clip >= 0.0 && self.grad_clip.is_finite()) {
            return Err(Error::config(format!("grad_clip must be finite and >= 0, got {}", self.grad_clip)));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::config("batch_size, max_epochs and patience must be positive"));
        }
        self.scheduler.validate()?;
        let min = self.min_input_size();
        if self.input_size < min {
            return Err(Error::config(format!(
                "input size {} is too small for {} downsampling stages; minimum T is {min}",
                self.input_size,
                self.channels.len()
            )));
        }
        Ok(())
    }
}

/// One image pathway: 7×7/2 convolution (→ BN) → ReLU → 3×3/2 max pool →
/// residual stages → global average pool. The first block of every stage
/// after the first halves the spatial size.
pub fn build_pathway(cfg: &Stage2Config) -> Result<NetworkSpec> {
    cfg.validate()?;
    let ch = cfg.scaled_channels();
    let mut layers = vec![LayerSpec::Conv2d {
        in_channels: 1,
        out_channels: ch[0],
        kernel: (7, 7),
        stride: 2,
        padding: 3,
    }];
    if cfg.batch_norm {
        layers.push(LayerSpec::batch_norm(ch[0]));
    }
    layers.push(LayerSpec::Relu);
    layers.push(LayerSpec::MaxPool {
        window: 3,
        stride: 2,
        padding: 1,
    });
    let mut prev = ch[0];
    for (s, &c) in ch.iter().enumerate() {
        for b in 0..cfg.blocks_per_stage {
            layers.push(LayerSpec::ResidualBlock {
                in_channels: prev,
                out_channels: c,
                stride: if s > 0 && b == 0 { 2 } else { 1 },
                batch_norm: cfg.batch_norm,
            });
            prev = c;
        }
    }
    layers.push(LayerSpec::GlobalAvgPool);
    let spec = NetworkSpec {
        input_shape: vec![1, cfg.input_size, cfg.input_size],
        layers,
    };
    spec.output_shape()?;
    Ok(spec)
}

/// Fusion head: concatenated pathway features → dense(2^γ) → LeakyReLU →
/// softmax.
pub fn build_head(cfg: &Stage2Config, pathway_width: usize) -> Result<NetworkSpec> {
    let spec = NetworkSpec {
        input_shape: vec![2 * pathway_width],
        layers: vec![
            LayerSpec::Dense {
                inputs: 2 * pathway_width,
                outputs: cfg.num_classes(),
            },
            LayerSpec::LeakyRelu { leak: cfg.leak },
            LayerSpec::Softmax,
        ],
    };
    spec.output_shape()?;
    Ok(spec)
}

/// Two pathways with separate weights and the fusion head.
#[derive(Debug, Clone)]
pub struct Stage2Model<T: Scalar> {
    pub config: Stage2Config,
    pub gasf_path: Network<T>,
    pub gadf_path: Network<T>,
    pub head: Network<T>,
}

pub fn build_dual_model<T: Scalar>(cfg: &Stage2Config) -> Result<Stage2Model<T>> {
    let path = build_pathway(cfg)?;
    let width = path.output_shape()?[0];
    let head = build_head(cfg, width)?;
    Ok(Stage2Model {
        config: cfg.clone(),
        gasf_path: Network::build(&path, sub_seed(cfg.seed, 10))?,
        gadf_path: Network::build(&path, sub_seed(cfg.seed, 11))?,
        head: Network::build(&head, sub_seed(cfg.seed, 12))?,
    })
}

/// `[N, 1, T, T]` GASF and GADF batches.
pub fn pair_batch<T: Scalar>(pairs: &[&GafImagePair], size: usize) -> Result<(Tensor<T>, Tensor<T>)> {
    let plane = size * size;
    let mut a = Vec::with_capacity(pairs.len() * plane);
    let mut b = Vec::with_capacity(pairs.len() * plane);
    for p in pairs {
        if p.gasf.size() != size || p.gadf.size() != size {
            return Err(Error::Shape {
                op: "stage 2 input",
                left: vec![p.gasf.size(), p.gadf.size()],
                right: vec![size, size],
            });
        }
        a.extend(p.gasf.data().iter().map(|&v| T::of(v)));
        b.extend(p.gadf.data().iter().map(|&v| T::of(v)));
    }
    let shape = vec![pairs.len(), 1, size, size];
    Ok((Tensor::new(shape.clone(), a)?, Tensor::new(shape, b)?))
}

impl<T: Scalar> Stage2Model<T> {
    pub fn pathway_width(&self) -> usize {
        self.head.spec().input_shape[0] / 2
    }

    /// Class probabilities `[N, 2^γ]`.
    pub fn forward(&mut self, gasf: &Tensor<T>, gadf: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let fa = self.gasf_path.forward(gasf, mode)?;
        let fb = self.gadf_path.forward(gadf, mode)?;
        self.head.forward(&concat_features(&fa, &fb)?, mode)
    }

    pub fn backward(&mut self, grad: &Tensor<T>) -> Result<()> {
        let g = self.head.backward(grad)?;
        let (ga, gb) = split_features(&g, self.pathway_width())?;
        self.gasf_path.backward(&ga)?;
        self.gadf_path.backward(&gb)?;
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.gasf_path.zero_grad();
        self.gadf_path.zero_grad();
        self.head.zero_grad();
    }

    pub fn loss_and_grad(&mut self, gasf: &Tensor<T>, gadf: &Tensor<T>, target: &Tensor<T>) -> Result<T> {
        self.zero_grad();
        let p = self.forward(gasf, gadf, Mode::Train)?;
        let loss = Loss::CrossEntropy.value(&p, target)?;
        self.backward(&Loss::CrossEntropy.grad(&p, target)?)?;
        Ok(loss)
    }

    pub fn sgd_step(&mut self, lr: T) {
        self.gasf_path.sgd_step(lr);
        self.gadf_path.sgd_step(lr);
        self.head.sgd_step(lr);
    }

    /// Clamps every gradient entry to `[−limit, limit]`.
    pub fn clip_grads(&mut self, limit: T) {
        self.visit_params(&mut |_, p| {
            for g in p.grad.data_mut() {
                *g = g.max(-limit).min(limit);
            }
        });
    }

    pub fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        for (prefix, net) in [
            ("gasf", &mut self.gasf_path),
            ("gadf", &mut self.gadf_path),
            ("head", &mut self.head),
        ] {
            net.visit_params(&mut |name, p| f(&format!("{prefix}.{name}"), p));
        }
    }

    pub fn param_count(&mut self) -> usize {
        self.gasf_path.param_count() + self.gadf_path.param_count() + self.head.param_count()
    }

    pub fn named_tensors(&mut self) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::new();
        for (prefix, net) in [
            ("gasf", &mut self.gasf_path),
            ("gadf", &mut self.gadf_path),
            ("head", &mut self.head),
        ] {
            out.extend(net.named_tensors().into_iter().map(|(n, t)| (format!("{prefix}.{n}"), t)));
        }
        out
    }

    pub fn load_named(&mut self, tensors: &BTreeMap<String, Tensor<T>>) -> Result<()> {
        for (prefix, net) in [
            ("gasf", &mut self.gasf_path),
            ("gadf", &mut self.gadf_path),
            ("head", &mut self.head),
        ] {
            let dot = format!("{prefix}.");
            let part: BTreeMap<String, Tensor<T>> = tensors
                .iter()
                .filter_map(|(k, v)| k.strip_prefix(&dot).map(|s| (s.to_string(), v.clone())))
                .collect();
            net.load_named(&part)?;
        }
        Ok(())
    }

    fn probabilities(&mut self, pairs: &[&GafImagePair]) -> Result<Vec<Vec<f64>>> {
        let size = self.config.input_size;
        let mut out = Vec::with_capacity(pairs.len());
        for chunk in pairs.chunks(self.config.batch_size.max(1)) {
            let (a, b) = pair_batch::<T>(chunk, size)?;
            let p = self.forward(&a, &b, Mode::Eval)?;
            out.extend(p.to_f64().chunks(self.config.num_classes()).map(<[f64]>::to_vec));
        }
        Ok(out)
    }
}

impl Trainable<f64> for Stage2Model<f64> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param<f64>)) {
        Stage2Model::visit_params(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stage2Epoch {
    /// 0-based; the learning rate of the epoch is `scheduler_rate(epoch)`.
    pub epoch: usize,
    pub learning_rate: f64,
    pub train_loss: f64,
    pub train_error: f64,
    pub val_loss: Option<f64>,
    pub val_error: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Stage2Training<T: Scalar> {
    pub model: Stage2Model<T>,
    pub history: Vec<Stage2Epoch>,
    /// Synthetic samples added per class by balancing.
    pub augmented: BTreeMap<usize, usize>,
    pub warnings: Vec<String>,
}

fn score<T: Scalar>(model: &mut Stage2Model<T>, pairs: &[LabeledPair]) -> Result<(f64, f64)> {
    let refs: Vec<&GafImagePair> = pairs.iter().map(|p| &p.pair).collect();
    let probs = model.probabilities(&refs)?;
    let mut loss = 0.0;
    let mut wrong = 0;
    for (p, s) in probs.iter().zip(pairs) {
        let c = s.label.class_index();
        loss -= p[c].clamp(crate::nn::loss::PROB_CLAMP, 1.0 - crate::nn::loss::PROB_CLAMP).ln();
        wrong += usize::from(argmax(p) != c);
    }
    let n = pairs.len() as f64;
    Ok((loss / n, wrong as f64 / n))
}

fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

/// SGD with cross-entropy; the learning rate follows the step-decay schedule
/// per epoch. Stops after `patience` epochs without a new best validation
/// loss (training loss when `val` is empty) or after `max_epochs`.
pub fn train_stage2<T: Scalar>(
    train: &[LabeledPair],
    val: &[LabeledPair],
    cfg: &Stage2Config,
) -> Result<Stage2Training<T>> {
    cfg.validate()?;
    if let Some(bad) = train.iter().chain(val).find(|p| p.label.gamma() != cfg.gamma) {
        return Err(Error::data(format!(
            "label with {} steps does not match gamma = {}",
            bad.label.gamma(),
            cfg.gamma
        )));
    }
    let (train, augmented, warnings) = if cfg.balance {
        let r = balance_classes(train.to_vec(), &AugmentConfig {
            seed: sub_seed(cfg.seed, 20),
            ..cfg.augment
        })?;
        (r.samples, r.added, r.warnings)
    } else {
        (train.to_vec(), BTreeMap::new(), Vec::new())
    };
    let mut present: Vec<usize> = train.iter().map(|p| p.label.class_index()).collect();
    present.sort_unstable();
    present.dedup();
    if present.len() < 2 {
        return Err(Error::data("stage 2 training needs at least two classes"));
    }

    // A pathway whose training images are all zero (the GADF of binary
    // windows without PAA) has a constant output and zero-variance BN
    // channels; it is kept frozen.
    let live = [
        train.iter().any(|p| p.pair.gasf.data().iter().any(|&v| v != 0.0)),
        train.iter().any(|p| p.pair.gadf.data().iter().any(|&v| v != 0.0)),
    ];
    let mut warnings = warnings;
    for (name, ok) in ["GASF", "GADF"].iter().zip(live) {
        if !ok {
            warnings.push(format!("all {name} training images are zero; that pathway is not trained"));
        }
    }

    let mut model = build_dual_model::<T>(cfg)?;
    let mut shuffle = seeded(sub_seed(cfg.seed, 21));
    let classes = cfg.num_classes();
    let mut best = f64::INFINITY;
    let mut stalled = 0;
    let mut history = Vec::new();
    for epoch in 0..cfg.max_epochs {
        let rate = scheduler_rate(&cfg.scheduler, epoch);
        let lr = T::of(rate);
        let order = permutation(train.len(), &mut shuffle);
        for batch in order.chunks(cfg.batch_size) {
            if batch.len() < 2 && cfg.batch_norm {
                continue;
            }
            let pairs: Vec<&GafImagePair> = batch.iter().map(|&i| &train[i].pair).collect();
            let labels: Vec<usize> = batch.iter().map(|&i| train[i].label.class_index()).collect();
            let (a, b) = pair_batch::<T>(&pairs, cfg.input_size)?;
            model.loss_and_grad(&a, &b, &one_hot(&labels, classes)?)?;
            if cfg.grad_clip > 0.0 {
                model.clip_grads(T::of(cfg.grad_clip));
            }
            if live[0] {
                model.gasf_path.sgd_step(lr);
            }
            if live[1] {
                model.gadf_path.sgd_step(lr);
            }
            model.head.sgd_step(lr);
        }
        let (train_loss, train_error) = score(&mut model, &train)?;
        let (val_loss, val_error) = if val.is_empty() {
            (None, None)
        } else {
            let (l, e) = score(&mut model, val)?;
            (Some(l), Some(e))
        };
        history.push(Stage2Epoch {
            epoch,
            learning_rate: rate,
            train_loss,
            train_error,
            val_loss,
            val_error,
        });
        let monitored = val_loss.unwrap_or(train_loss);
        if monitored < best {
            best = monitored;
            stalled = 0;
        } else {
            stalled += 1;
            if stalled >= cfg.patience {
                break;
            }
        }
    }
    Ok(Stage2Training {
        model,
        history,
        augmented,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forecast {
    pub label: MultiStepLabel,
    pub probabilities: Vec<f64>,
}

/// Most probable label (ties → smallest class) and the full distribution.
pub fn forecast<T: Scalar>(model: &Stage2Model<T>, pair: &GafImagePair) -> Result<Forecast> {
    let mut scratch = model.clone();
    let mut p = scratch.probabilities(&[pair])?.remove(0);
    let total: f64 = p.iter().sum();
    if !(total.is_finite() && total > 0.0) {
        return Err(Error::NonFinite {
            layer: scratch.head.layers().len(),
            kind: "softmax",
        });
    }
    p.iter_mut().for_each(|v| *v /= total);
    Ok(Forecast {
        label: MultiStepLabel::from_class(argmax(&p), model.config.gamma)?,
        probabilities: p,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage2Evaluation {
    /// Fraction of samples whose predicted class differs from the label.
    pub error_rate: f64,
    /// Per step `l_1..l_γ`: fraction of samples with that bit wrong.
    pub per_bit_error: Vec<f64>,
    pub total: usize,
    pub errors: usize,
    pub predictions: Vec<usize>,
}

pub fn evaluate_stage2<T: Scalar>(model: &Stage2Model<T>, test: &[LabeledPair]) -> Result<Stage2Evaluation> {
    if test.is_empty() {
        return Err(Error::data("stage 2 evaluation set is empty"));
    }
    let mut scratch = model.clone();
    let refs: Vec<&GafImagePair> = test.iter().map(|p| &p.pair).collect();
    let predictions: Vec<usize> = scratch.probabilities(&refs)?.iter().map(|p| argmax(p)).collect();
    let gamma = model.config.gamma;
    let mut bit_wrong = vec![0usize; gamma];
    let mut errors = 0;
    for (&pred, s) in predictions.iter().zip(test) {
        let truth = s.label.class_index();
        errors += usize::from(pred != truth);
        for (i, w) in bit_wrong.iter_mut().enumerate() {
            *w += ((pred ^ truth) >> i) & 1;
        }
    }
    let n = test.len() as f64;
    Ok(Stage2Evaluation {
        error_rate: errors as f64 / n,
        per_bit_error: bit_wrong.iter().map(|&w| w as f64 / n).collect(),
        total: test.len(),
        errors,
        predictions,
    })
}
