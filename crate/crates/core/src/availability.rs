//! Stage 1: feedforward classifier from (location, time, cluster) to a
//! distribution over service ids.

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{
    encode_into, extract_features, EncodingConfig, HolidayCalendar, ServiceVocabulary, TraceRecord, TrainingInstance,
};
use crate::geo_cluster::{assign_cluster, ClusterModel, GeoPoint};
use crate::nn::layers::{LayerSpec, Mode};
use crate::nn::loss::{argmax_rows, one_hot, Loss};
use crate::nn::{Network, NetworkSpec, Tensor};
use crate::rng::{permutation, seeded, sub_seed};
use crate::scalar::{Precision, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HiddenLayer {
    pub width: usize,
    pub leak: f64,
}

impl HiddenLayer {
    pub fn new(width: usize, leak: f64) -> Self {
        Self { width, leak }
    }
}

/// Train / validation / test proportions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.72,
            val: 0.08,
            test: 0.20,
        }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(Error::config(format!("split fractions must lie in [0, 1], got {parts:?}")));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!("split fractions must sum to 1, got {sum}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Stage1Config {
    pub hidden: Vec<HiddenLayer>,
    /// Batch normalization after every hidden activation.
    pub batch_norm: bool,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Minimum epoch-over-epoch decrease of the validation loss that counts as
    /// progress. An infinite tolerance stops after the first epoch.
    pub stop_tol: f64,
    /// Consecutive epochs without progress before stopping.
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub fractions: SplitFractions,
    pub precision: Precision,
    /// Probability above which a service is reported as available; `None`
    /// means `1 / n_services`.
    pub threshold: Option<f64>,
}

impl Default for Stage1Config {
    fn default() -> Self {
        Self {
            hidden: vec![HiddenLayer::new(16, 0.01), HiddenLayer::new(16, 0.01), HiddenLayer::new(8, 0.01)],
            batch_norm: true,
            batch_size: 128,
            learning_rate: 0.01,
            stop_tol: 1e-4,
            patience: 5,
            max_epochs: 200,
            seed: 0,
            fractions: SplitFractions::default(),
            precision: Precision::F64,
            threshold: None,
        }
    }
}

impl Stage1Config {
    /// Taxi-trace architecture: 512, 512 (a = 0.01), 448, 448 (a = 0.02).
    pub fn taxi() -> Self {
        Self {
            hidden: vec![
                HiddenLayer::new(512, 0.01),
                HiddenLayer::new(512, 0.01),
                HiddenLayer::new(448, 0.02),
                HiddenLayer::new(448, 0.02),
            ],
            batch_size: 256,
            ..Self::default()
        }
    }

    /// Check-in architecture: 256 ×3, 128 ×2, all a = 0.01.
    pub fn checkin() -> Self {
        let mut hidden = vec![HiddenLayer::new(256, 0.01); 3];
        hidden.extend([HiddenLayer::new(128, 0.01); 2]);
        Self {
            hidden,
            batch_size: 128,
            ..Self::default()
        }
    }

    /// Ride-hailing architecture: 16, 16, 8, all a = 0.01.
    pub fn rides() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() {
            return Err(Error::config("stage 1 needs at least one hidden layer"));
        }
        for (i, h) in self.hidden.iter().enumerate() {
            if h.width == 0 {
                return Err(Error::config(format!("hidden layer {i} has zero width")));
            }
            if !(h.leak > 0.0 && h.leak < 1.0) {
                return Err(Error::config(format!("hidden layer {i}: leak must lie in (0, 1), got {}", h.leak)));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if self.stop_tol.is_nan() || self.stop_tol < 0.0 {
            return Err(Error::config(format!("stop_tol must be non-negative, got {}", self.stop_tol)));
        }
        if self.patience == 0 || self.max_epochs == 0 {
            return Err(Error::config("patience and max_epochs must be positive"));
        }
        if let Some(t) = self.threshold {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::config(format!("threshold must lie in [0, 1], got {t}")));
            }
        }
        self.fractions.validate()
    }
}

/// Dense → LeakyReLU (→ BatchNorm) per hidden layer, then a dense layer of
/// width `n_services` and softmax.
pub fn build_stage1_network(cfg: &Stage1Config, in_dim: usize, n_services: usize) -> Result<NetworkSpec> {
    cfg.validate()?;
    if n_services < 2 {
        return Err(Error::config(format!("stage 1 needs at least 2 services, got {n_services}")));
    }
    if in_dim == 0 {
        return Err(Error::config("stage 1 input width must be positive"));
    }
    let mut layers = Vec::new();
    let mut width = in_dim;
    for h in &cfg.hidden {
        layers.push(LayerSpec::Dense {
            inputs: width,
            outputs: h.width,
        });
        layers.push(LayerSpec::LeakyRelu { leak: h.leak });
        if cfg.batch_norm {
            layers.push(LayerSpec::batch_norm(h.width));
        }
        width = h.width;
    }
    layers.push(LayerSpec::Dense {
        inputs: width,
        outputs: n_services,
    });
    layers.push(LayerSpec::Softmax);
    let spec = NetworkSpec {
        input_shape: vec![in_dim],
        layers,
    };
    spec.output_shape()?;
    Ok(spec)
}

#[derive(Debug, Clone)]
pub struct Stage1Model<T: Scalar> {
    pub config: Stage1Config,
    pub encoding: EncodingConfig,
    pub clusters: ClusterModel,
    pub vocabulary: ServiceVocabulary,
    pub network: Network<T>,
}

/// Metrics after one training epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    /// 0-based.
    pub epoch: usize,
    pub learning_rate: f64,
    pub train_loss: f64,
    pub train_error: f64,
    pub val_loss: Option<f64>,
    pub val_error: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// Validation loss stopped decreasing by at least `stop_tol`.
    Converged,
    MaxEpochs,
}

#[derive(Debug, Clone)]
pub struct Stage1Training<T: Scalar> {
    pub model: Stage1Model<T>,
    pub history: Vec<EpochReport>,
    pub stop: StopReason,
}

/// Encoded inputs `[n, in_dim]` for a set of instances.
pub fn encode_instances<T: Scalar>(instances: &[TrainingInstance], encoding: &EncodingConfig) -> Result<Tensor<T>> {
    let mut data = Vec::with_capacity(instances.len() * encoding.input_len());
    for inst in instances {
        encode_into(&inst.features, inst.cluster_id, encoding, &mut data)?;
    }
    Tensor::new(vec![instances.len(), encoding.input_len()], data)
}

fn gather_rows<T: Scalar>(x: &Tensor<T>, rows: &[usize]) -> Tensor<T> {
    let width = x.shape()[1];
    let mut data = Vec::with_capacity(rows.len() * width);
    for &r in rows {
        data.extend_from_slice(x.row_slice(r));
    }
    Tensor::new(vec![rows.len(), width], data).expect("row gather keeps width")
}

/// Splits a permutation into batches, folding a trailing single-row batch
/// into its predecessor (batch statistics of one row are degenerate).
fn batches(order: &[usize], size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(size).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        out.pop();
        let start = (out.len() - 1) * size;
        *out.last_mut().expect("at least one batch") = &order[start..];
    }
    out
}

/// Eval-mode mean cross-entropy and error rate over a labelled set.
fn score<T: Scalar>(net: &mut Network<T>, x: &Tensor<T>, labels: &[usize], chunk: usize) -> Result<(f64, f64)> {
    let classes = net.spec().output_shape()?[0];
    let rows: Vec<usize> = (0..labels.len()).collect();
    let mut loss = 0.0;
    let mut wrong = 0usize;
    for part in rows.chunks(chunk.max(1)) {
        let xb = gather_rows(x, part);
        let yl: Vec<usize> = part.iter().map(|&i| labels[i]).collect();
        let yb = one_hot::<T>(&yl, classes)?;
        let p = net.forward(&xb, Mode::Eval)?;
        loss += Loss::CrossEntropy.value(&p, &yb)?.as_f64() * part.len() as f64;
        wrong += argmax_rows(&p).iter().zip(&yl).filter(|(a, b)| a != b).count();
    }
    let n = labels.len() as f64;
    Ok((loss / n, wrong as f64 / n))
}

/// Trains the stage-1 classifier with minibatch SGD and categorical
/// cross-entropy.
///
/// Stops when the validation loss (training loss if `val` is empty) fails to
/// decrease by `stop_tol` for `patience` consecutive epochs, or after
/// `max_epochs`.
pub fn train_stage1<T: Scalar>(
    train: &[TrainingInstance],
    val: &[TrainingInstance],
    encoding: EncodingConfig,
    clusters: ClusterModel,
    vocabulary: ServiceVocabulary,
    cfg: &Stage1Config,
) -> Result<Stage1Training<T>> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::data("stage 1 training set is empty"));
    }
    let mut distinct: Vec<usize> = train.iter().map(|i| i.label).collect();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::data("stage 1 training needs at least two distinct services"));
    }
    if encoding.n_clusters != clusters.k() {
        return Err(Error::config(format!(
            "encoding expects {} clusters but the cluster model has {}",
            encoding.n_clusters,
            clusters.k()
        )));
    }
    let classes = vocabulary.len();
    if let Some(bad) = train.iter().chain(val).find(|i| i.label >= classes) {
        return Err(Error::data(format!("label {} outside vocabulary of {classes}", bad.label)));
    }

    let spec = build_stage1_network(cfg, encoding.input_len(), classes)?;
    let mut net = Network::<T>::build(&spec, sub_seed(cfg.seed, 0))?;
    let mut shuffle = seeded(sub_seed(cfg.seed, 1));

    let x_train = encode_instances::<T>(train, &encoding)?;
    let y_train: Vec<usize> = train.iter().map(|i| i.label).collect();
    let x_val = encode_instances::<T>(val, &encoding)?;
    let y_val: Vec<usize> = val.iter().map(|i| i.label).collect();
    let monitor = |net: &mut Network<T>| -> Result<f64> {
        if val.is_empty() {
            Ok(score(net, &x_train, &y_train, cfg.batch_size)?.0)
        } else {
            Ok(score(net, &x_val, &y_val, cfg.batch_size)?.0)
        }
    };

    let lr = T::of(cfg.learning_rate);
    let patience = if cfg.stop_tol.is_finite() { cfg.patience } else { 1 };
    let mut previous = monitor(&mut net)?;
    let mut stalled = 0;
    let mut history = Vec::new();
    let mut stop = StopReason::MaxEpochs;
    for epoch in 0..cfg.max_epochs {
        let order = permutation(train.len(), &mut shuffle);
        for batch in batches(&order, cfg.batch_size) {
            let xb = gather_rows(&x_train, batch);
            let labels: Vec<usize> = batch.iter().map(|&i| y_train[i]).collect();
            let yb = one_hot::<T>(&labels, classes)?;
            net.train_step(&xb, &yb, Loss::CrossEntropy, lr)?;
        }
        let (train_loss, train_error) = score(&mut net, &x_train, &y_train, cfg.batch_size)?;
        let (val_loss, val_error) = if val.is_empty() {
            (None, None)
        } else {
            let (l, e) = score(&mut net, &x_val, &y_val, cfg.batch_size)?;
            (Some(l), Some(e))
        };
        history.push(EpochReport {
            epoch,
            learning_rate: cfg.learning_rate,
            train_loss,
            train_error,
            val_loss,
            val_error,
        });
        let current = val_loss.unwrap_or(train_loss);
        if previous - current < cfg.stop_tol {
            stalled += 1;
        } else {
            stalled = 0;
        }
        previous = current;
        if stalled >= patience {
            stop = StopReason::Converged;
            break;
        }
    }

    Ok(Stage1Training {
        model: Stage1Model {
            config: cfg.clone(),
            encoding,
            clusters,
            vocabulary,
            network: net,
        },
        history,
        stop,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceProbability {
    pub service_id: String,
    pub label: usize,
    pub probability: f64,
}

impl<T: Scalar> Stage1Model<T> {
    /// Network input for a query point and time.
    pub fn encode_query(&self, p: &GeoPoint, t: NaiveDateTime, cal: &HolidayCalendar) -> Result<Vec<T>> {
        let record = TraceRecord::new("query", *p, t)?;
        let cluster = assign_cluster(&self.clusters, p)?;
        let mut out = Vec::with_capacity(self.encoding.input_len());
        encode_into(&extract_features(&record, cal), cluster, &self.encoding, &mut out)?;
        Ok(out)
    }

    /// Probability cut-off used by [`available_services`].
    pub fn threshold(&self) -> f64 {
        self.config.threshold.unwrap_or(1.0 / self.vocabulary.len() as f64)
    }
}

/// Full service distribution at `(p, t)`, most probable first (ties by label).
pub fn predict_availability<T: Scalar>(
    model: &Stage1Model<T>,
    p: &GeoPoint,
    t: NaiveDateTime,
    cal: &HolidayCalendar,
) -> Result<Vec<ServiceProbability>> {
    let x = Tensor::new(vec![1, model.encoding.input_len()], model.encode_query(p, t, cal)?)?;
    let probs = model.network.infer(&x)?.to_f64();
    let total: f64 = probs.iter().sum();
    if !(total.is_finite() && total > 0.0) {
        return Err(Error::NonFinite {
            layer: model.network.layers().len(),
            kind: "softmax",
        });
    }
    let mut ranked: Vec<ServiceProbability> = probs
        .iter()
        .enumerate()
        .map(|(label, &q)| ServiceProbability {
            service_id: model.vocabulary.service_of(label).unwrap_or_default().to_string(),
            label,
            probability: q / total,
        })
        .collect();
    ranked.sort_by(|a, b| b.probability.total_cmp(&a.probability).then(a.label.cmp(&b.label)));
    Ok(ranked)
}

/// Services whose probability reaches `threshold`; at least the top entry.
pub fn available_services(ranked: &[ServiceProbability], threshold: f64) -> Vec<&ServiceProbability> {
    let mut out: Vec<&ServiceProbability> = ranked.iter().filter(|s| s.probability >= threshold).collect();
    if out.is_empty() {
        out.extend(ranked.first());
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage1Evaluation {
    pub error_rate: f64,
    pub total: usize,
    pub errors: usize,
    pub predictions: Vec<usize>,
}

/// Argmax predictions for a set of instances.
pub fn predict_labels<T: Scalar>(model: &Stage1Model<T>, instances: &[TrainingInstance]) -> Result<Vec<usize>> {
    let mut net = model.network.clone();
    let mut out = Vec::with_capacity(instances.len());
    for chunk in instances.chunks(model.config.batch_size.max(1)) {
        let x = encode_instances::<T>(chunk, &model.encoding)?;
        out.extend(argmax_rows(&net.forward(&x, Mode::Eval)?));
    }
    Ok(out)
}

/// Fraction of instances whose argmax prediction differs from the label.
pub fn evaluate_stage1<T: Scalar>(model: &Stage1Model<T>, test: &[TrainingInstance]) -> Result<Stage1Evaluation> {
    if test.is_empty() {
        return Err(Error::data("stage 1 evaluation set is empty"));
    }
    let predictions = predict_labels(model, test)?;
    let errors = predictions.iter().zip(test).filter(|(p, i)| **p != i.label).count();
    Ok(Stage1Evaluation {
        error_rate: errors as f64 / test.len() as f64,
        total: test.len(),
        errors,
        predictions,
    })
}
