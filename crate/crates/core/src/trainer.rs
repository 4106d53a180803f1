//! Joint optimisation of encoder and classifier, plus the last-hidden-state
//! baseline and dataset evaluation.
//!
//! One optimisation step encodes a mini-batch of instances, samples
//! anchor/positive/negative triples inside that batch, and descends the
//! weighted sum of the contrastive and classification losses. Iteration order,
//! dropout masks and triple sampling all draw from one seeded generator, so a
//! run is a pure function of its config and data.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::calib::{CalibrationReport, MetricError};
use crate::graph::{sgd_step, Adam, Graph, GraphError, NodeId, ParamStore, Tensor};
use crate::objective::{sample_contrastive_batch_with, total_loss_from_parts, total_loss_node, ContrastiveBatch, LossConfig, ObjectiveError};
use crate::probe::{EncoderConfig, ProbeError, ProbeModel};
use crate::store::{Channel, ChannelSet, LayerRange, Selection, StateDataset, StoreError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("{0} dataset is empty")]
    EmptyDataset(&'static str),
    #[error("{0} dataset has instances without a binary label")]
    Unlabeled(&'static str),
    #[error("training data holds only one class (label {0})")]
    SingleClass(bool),
    #[error("validation shape {found} differs from training shape {expected}")]
    ShapeMismatch { expected: String, found: String },
    #[error("loss became non-finite at step {step}")]
    NonFiniteLoss { step: usize },
    #[error(transparent)]
    Probe(#[from] ProbeError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    /// β1 = 0.9, β2 = 0.999, ε = 1e-8.
    Adam,
    Sgd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    /// Coefficient of the L2 penalty added to every gradient.
    pub weight_decay: f64,
    /// Overrides the encoder config's dropout rate.
    pub dropout: f64,
    pub epochs: usize,
    /// Instances per optimisation step; every eligible one serves as an anchor.
    pub batch_size: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub loss: LossConfig,
    pub encoder: EncoderConfig,
    /// Channels read by the probe; all stored channels when absent.
    pub channels: Option<ChannelSet>,
    /// Layers read by the probe; all layers when absent.
    pub layers: Option<LayerRange>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            optimizer: Optimizer::Adam,
            weight_decay: 1e-4,
            dropout: 0.1,
            epochs: 100,
            batch_size: 32,
            patience: 10,
            seed: 0,
            loss: LossConfig::default(),
            encoder: EncoderConfig::cnn(),
            channels: None,
            layers: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size < 2 {
            return bad("batch size must be at least 2");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight decay must be non-negative");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        self.loss.validate()?;
        self.encoder.validate()?;
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serialises");
        Sha256::digest(json).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn selection(&self, shape: crate::store::StateShape) -> Selection {
        Selection::new(self.channels.unwrap_or(shape.channels), self.layers.unwrap_or(LayerRange::full(shape.layers)))
    }

    fn tag(&self) -> &'static str {
        if self.loss.is_classification_only() {
            "cls-only"
        } else {
            "full"
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_contrastive: f64,
    pub train_classification: f64,
    pub train_total: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
    pub selected_epoch: usize,
    pub stopped_early: bool,
    /// Wall-clock seconds per epoch. Kept out of the JSON and CSV forms so
    /// those stay reproducible.
    #[serde(skip)]
    pub epoch_seconds: Vec<f64>,
}

impl TrainingLog {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("log serialises")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_contrastive,train_classification,train_total,val_loss,val_accuracy,selected\n");
        for r in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.epoch,
                r.train_contrastive,
                r.train_classification,
                r.train_total,
                r.val_loss,
                r.val_accuracy,
                (r.epoch == self.selected_epoch) as u8
            ));
        }
        out
    }

    pub fn timing_json(&self) -> String {
        let total: f64 = self.epoch_seconds.iter().sum();
        serde_json::json!({ "epoch_seconds": self.epoch_seconds, "total_seconds": total }).to_string()
    }

    pub fn selected(&self) -> Option<&EpochRecord> {
        self.epochs.iter().find(|r| r.epoch == self.selected_epoch)
    }
}

fn labels_of(ds: &StateDataset, which: &'static str) -> Result<Vec<bool>, TrainError> {
    if ds.is_empty() {
        return Err(TrainError::EmptyDataset(which));
    }
    ds.binary_labels().ok_or(TrainError::Unlabeled(which))
}

/// Triples drawn inside one mini-batch, or `None` when the batch cannot
/// supply an anchor with both a positive and a negative.
fn sample_in_batch(labels: &[bool], loss: &LossConfig, rng: &mut ChaCha8Rng) -> Option<ContrastiveBatch> {
    if loss.contrastive_weight == 0.0 {
        return None;
    }
    let anchors = labels.len();
    sample_contrastive_batch_with(labels, anchors, loss.negatives_per_anchor, rng).ok()
}

/// Mean losses and accuracy of `model` over `ds` with dropout off. The
/// contrastive term uses one fixed triple sample so the value is comparable
/// across epochs.
fn validation_loss(
    model: &ProbeModel,
    ds: &StateDataset,
    labels: &[bool],
    batch: Option<&ContrastiveBatch>,
    loss: &LossConfig,
) -> Result<(f64, f64), TrainError> {
    let tensors: Vec<_> = ds.instances().iter().map(|i| i.tensor()).collect();
    let conf = model.predict_batch(tensors.iter().copied())?;
    let embeddings = match batch {
        Some(_) => tensors.iter().map(|t| model.encode(t)).collect::<Result<Vec<_>, _>>()?,
        None => Vec::new(),
    };
    let cfg = if batch.is_some() { *loss } else { LossConfig { contrastive_weight: 0.0, ..*loss } };
    let empty = ContrastiveBatch { anchors: vec![], positives: vec![], negatives: vec![], negatives_with_replacement: false };
    let parts = total_loss_from_parts(batch.unwrap_or(&empty), &embeddings, &conf, labels, &cfg)?;
    let acc = crate::calib::accuracy_at_threshold(&conf, labels, crate::calib::DEFAULT_THRESHOLD)?;
    Ok((parts.total, acc))
}

/// Trains a probe and returns the parameters of the epoch with the lowest
/// validation loss.
pub fn train(config: &TrainConfig, train_set: &StateDataset, val_set: &StateDataset) -> Result<(ProbeModel, TrainingLog), TrainError> {
    config.validate()?;
    let train_labels = labels_of(train_set, "training")?;
    let val_labels = labels_of(val_set, "validation")?;
    if train_labels.iter().all(|&l| l == train_labels[0]) {
        return Err(TrainError::SingleClass(train_labels[0]));
    }
    if val_set.shape() != train_set.shape() {
        return Err(TrainError::ShapeMismatch { expected: train_set.shape().to_string(), found: val_set.shape().to_string() });
    }

    let shape = train_set.shape();
    let encoder = EncoderConfig { dropout_rate: config.dropout, ..config.encoder.clone() };
    let mut model = ProbeModel::new(encoder, shape, config.selection(shape), config.seed)?;
    {
        let meta = model.metadata_mut();
        meta.seed = config.seed;
        meta.loss = config.loss;
        meta.tag = config.tag().to_string();
        meta.config_hash = config.hash();
    }

    let inputs: Vec<Tensor> = train_set.instances().iter().map(|i| model.prepare_input(i.tensor())).collect::<Result<_, _>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x7261_696e);
    let val_batch = if config.loss.contrastive_weight != 0.0 {
        let mut vrng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x7661_6c69);
        sample_contrastive_batch_with(&val_labels, config.batch_size.min(val_labels.len()), config.loss.negatives_per_anchor, &mut vrng).ok()
    } else {
        None
    };

    let mut adam = Adam::new(model.params());
    let mut log = TrainingLog::default();
    let mut best: Option<(f64, ParamStore)> = None;
    let mut since_best = 0;
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut step = 0;

    for epoch in 0..config.epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let (mut sum_c, mut sum_cls, mut sum_t, mut steps) = (0.0, 0.0, 0.0, 0usize);
        for chunk in order.chunks(config.batch_size) {
            let labels: Vec<bool> = chunk.iter().map(|&i| train_labels[i]).collect();
            let batch = sample_in_batch(&labels, &config.loss, &mut rng);
            let mut g = Graph::new();
            let zs: Vec<NodeId> = chunk.iter().map(|&i| model.encode_node(&mut g, &inputs[i])).collect();
            let stacked = g.stack(&zs);
            let z = g.reshape(stacked, vec![chunk.len(), model.embed_dim()]);
            let c = model.confidence_node(&mut g, z, Some(&mut rng));
            let nodes = total_loss_node(&mut g, z, c, batch.as_ref(), &labels, &config.loss);
            let total = g.scalar(nodes.total);
            if !total.is_finite() {
                return Err(TrainError::NonFiniteLoss { step });
            }
            sum_c += nodes.contrastive.map_or(0.0, |n| g.scalar(n));
            sum_cls += g.scalar(nodes.classification);
            sum_t += total;
            let grads = g.backward(nodes.total)?;
            match config.optimizer {
                Optimizer::Adam => adam.step(model.params_mut(), &grads, config.learning_rate, config.weight_decay),
                Optimizer::Sgd => sgd_step(model.params_mut(), &grads, config.learning_rate, config.weight_decay),
            }
            if !model.params().all_finite() {
                return Err(TrainError::NonFiniteLoss { step });
            }
            step += 1;
            steps += 1;
        }

        let (val_loss, val_accuracy) = match validation_loss(&model, val_set, &val_labels, val_batch.as_ref(), &config.loss) {
            Err(TrainError::Probe(ProbeError::Graph(GraphError::NonFinite { .. }))) => return Err(TrainError::NonFiniteLoss { step }),
            other => other?,
        };
        if !val_loss.is_finite() {
            return Err(TrainError::NonFiniteLoss { step });
        }
        let n = steps as f64;
        log.epochs.push(EpochRecord { epoch, train_contrastive: sum_c / n, train_classification: sum_cls / n, train_total: sum_t / n, val_loss, val_accuracy });
        log.epoch_seconds.push(started.elapsed().as_secs_f64());

        if best.as_ref().is_none_or(|(b, _)| val_loss < *b) {
            best = Some((val_loss, model.params().clone()));
            log.selected_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                log.stopped_early = true;
                break;
            }
        }
    }

    if let Some((_, params)) = best {
        *model.params_mut() = params;
    }
    model.metadata_mut().selected_epoch = Some(log.selected_epoch);
    Ok((model, log))
}

/// Classifier directly on the final layer's activation vector, trained on
/// the classification loss alone.
pub fn train_last_hidden_baseline(config: &TrainConfig, train_set: &StateDataset, val_set: &StateDataset) -> Result<(ProbeModel, TrainingLog), TrainError> {
    let shape = train_set.shape();
    if !shape.channels.contains(Channel::Act) {
        return Err(TrainError::Config("the last-hidden baseline needs the act channel".into()));
    }
    let cfg = TrainConfig {
        encoder: EncoderConfig { mlp_hidden: config.encoder.mlp_hidden, ..EncoderConfig::flat() },
        channels: Some(ChannelSet::single(Channel::Act)),
        layers: Some(LayerRange::new(shape.layers - 1, shape.layers - 1)),
        loss: LossConfig { contrastive_weight: 0.0, ..config.loss },
        ..config.clone()
    };
    let (mut model, log) = train(&cfg, train_set, val_set)?;
    model.metadata_mut().tag = "last-hidden".into();
    Ok((model, log))
}

/// Raw confidences of `model` on every instance of `ds`, in order.
pub fn predict_dataset(model: &ProbeModel, ds: &StateDataset) -> Result<Vec<f64>, TrainError> {
    if ds.is_empty() {
        return Err(TrainError::EmptyDataset("evaluation"));
    }
    Ok(model.predict_batch(ds.instances().iter().map(|i| i.tensor()))?)
}

pub fn evaluate(model: &ProbeModel, ds: &StateDataset) -> Result<CalibrationReport, TrainError> {
    let labels = labels_of(ds, "evaluation")?;
    let conf = predict_dataset(model, ds)?;
    Ok(CalibrationReport::compute(&conf, &labels)?)
}

#[cfg(test)]
mod tests;
