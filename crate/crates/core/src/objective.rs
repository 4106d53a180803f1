//! Training objective: supervised contrastive loss over anchor/positive/negative
//! triples, binary cross-entropy on the classifier output, and their weighted sum.
//!
//! Each loss has a plain-value form and a graph form. Embedding indices in a
//! [`ContrastiveBatch`] refer to rows of the embedding matrix of one mini-batch.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{logsumexp, Graph, NodeId, Tensor};

/// Floor applied to probabilities inside logarithms.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObjectiveError {
    #[error("contrastive sampling needs both classes, found only label {0}")]
    SingleClass(bool),
    #[error("no class has two or more instances, so no anchor can have a positive")]
    NoEligibleAnchors,
    #[error("batch is empty")]
    EmptyBatch,
    #[error("temperature must be positive and finite, got {0}")]
    BadTemperature(f64),
    #[error("negatives per anchor must be at least 1")]
    ZeroNegatives,
    #[error("anchor count must be at least 1")]
    ZeroAnchors,
    #[error("{what} weight must be non-negative and finite, got {value}")]
    BadWeight { what: &'static str, value: f64 },
    #[error("{predictions} predictions but {labels} labels")]
    LengthMismatch { predictions: usize, labels: usize },
    #[error("prediction {0} outside [0, 1]")]
    PredictionOutOfRange(f64),
    #[error("embedding {0} has a non-finite entry")]
    NonFiniteEmbedding(usize),
    #[error("batch refers to embedding {index} but only {available} exist")]
    IndexOutOfRange { index: usize, available: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub temperature: f64,
    pub negatives_per_anchor: usize,
    /// Adds the positive pair to the softmax denominator (InfoNCE form).
    pub include_positive_in_denominator: bool,
    pub contrastive_weight: f64,
    pub classification_weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { temperature: 0.1, negatives_per_anchor: 8, include_positive_in_denominator: false, contrastive_weight: 1.0, classification_weight: 1.0 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), ObjectiveError> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(ObjectiveError::BadTemperature(self.temperature));
        }
        if self.negatives_per_anchor == 0 {
            return Err(ObjectiveError::ZeroNegatives);
        }
        for (what, value) in [("contrastive", self.contrastive_weight), ("classification", self.classification_weight)] {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(ObjectiveError::BadWeight { what, value });
            }
        }
        Ok(())
    }

    /// True when the contrastive term is switched off.
    pub fn is_classification_only(&self) -> bool {
        self.contrastive_weight == 0.0
    }
}

/// Anchor, positive and negative indices for one contrastive step.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContrastiveBatch {
    pub anchors: Vec<usize>,
    pub positives: Vec<usize>,
    /// `negatives[j]` holds the negatives of anchor `j`.
    pub negatives: Vec<Vec<usize>>,
    /// Set when the opposite class had fewer than E members, so some anchors
    /// drew negatives with replacement.
    pub negatives_with_replacement: bool,
}

impl ContrastiveBatch {
    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn negatives_per_anchor(&self) -> usize {
        self.negatives.first().map_or(0, Vec::len)
    }

    fn check_indices(&self, available: usize) -> Result<(), ObjectiveError> {
        let all = self.anchors.iter().chain(&self.positives).chain(self.negatives.iter().flatten());
        match all.copied().find(|&i| i >= available) {
            Some(index) => Err(ObjectiveError::IndexOutOfRange { index, available }),
            None => Ok(()),
        }
    }
}

/// Seeded wrapper around [`sample_contrastive_batch_with`].
pub fn sample_contrastive_batch(labels: &[bool], anchor_count: usize, negatives: usize, seed: u64) -> Result<ContrastiveBatch, ObjectiveError> {
    sample_contrastive_batch_with(labels, anchor_count, negatives, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Draws up to `anchor_count` distinct anchors from instances whose class has
/// at least two members, one same-class positive per anchor (never the anchor
/// itself) and `negatives` opposite-class negatives.
pub fn sample_contrastive_batch_with<R: Rng + ?Sized>(
    labels: &[bool],
    anchor_count: usize,
    negatives: usize,
    rng: &mut R,
) -> Result<ContrastiveBatch, ObjectiveError> {
    if anchor_count == 0 {
        return Err(ObjectiveError::ZeroAnchors);
    }
    if negatives == 0 {
        return Err(ObjectiveError::ZeroNegatives);
    }
    if labels.is_empty() {
        return Err(ObjectiveError::EmptyBatch);
    }
    let by_class: [Vec<usize>; 2] = [false, true].map(|c| (0..labels.len()).filter(|&i| labels[i] == c).collect());
    if let Some(c) = [false, true].into_iter().find(|&c| by_class[1 - c as usize].is_empty()) {
        return Err(ObjectiveError::SingleClass(c));
    }
    let mut eligible: Vec<usize> = (0..labels.len()).filter(|&i| by_class[labels[i] as usize].len() >= 2).collect();
    if eligible.is_empty() {
        return Err(ObjectiveError::NoEligibleAnchors);
    }
    eligible.shuffle(rng);
    eligible.truncate(anchor_count);

    let mut batch = ContrastiveBatch { anchors: eligible, positives: Vec::new(), negatives: Vec::new(), negatives_with_replacement: false };
    for &a in &batch.anchors {
        let same = &by_class[labels[a] as usize];
        // Uniform over same-class members other than the anchor.
        let mut pick = rng.random_range(0..same.len() - 1);
        if same[pick] == a {
            pick = same.len() - 1;
        }
        batch.positives.push(same[pick]);

        let other = &by_class[!labels[a] as usize];
        let negs = if other.len() >= negatives {
            other.choose_multiple(rng, negatives).copied().collect()
        } else {
            batch.negatives_with_replacement = true;
            (0..negatives).map(|_| other[rng.random_range(0..other.len())]).collect()
        };
        batch.negatives.push(negs);
    }
    Ok(batch)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Summed contrastive loss over the batch anchors:
/// `Σ_j [log Σ_neg exp(z_j·z⁻/τ) − z_j·z_j⁺/τ]`, with the positive term also
/// inside the log-sum-exp when `include_positive` is set.
pub fn contrastive_loss(batch: &ContrastiveBatch, embeddings: &[Vec<f64>], temperature: f64, include_positive: bool) -> Result<f64, ObjectiveError> {
    if batch.is_empty() {
        return Err(ObjectiveError::EmptyBatch);
    }
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(ObjectiveError::BadTemperature(temperature));
    }
    batch.check_indices(embeddings.len())?;
    if let Some(i) = embeddings.iter().position(|z| z.iter().any(|v| !v.is_finite())) {
        return Err(ObjectiveError::NonFiniteEmbedding(i));
    }
    let mut total = 0.0;
    for (j, &a) in batch.anchors.iter().enumerate() {
        let z = &embeddings[a];
        let pos = dot(z, &embeddings[batch.positives[j]]) / temperature;
        let mut logits: Vec<f64> = batch.negatives[j].iter().map(|&n| dot(z, &embeddings[n]) / temperature).collect();
        if include_positive {
            logits.push(pos);
        }
        total += logsumexp(&logits) - pos;
    }
    Ok(total)
}

/// Graph form of [`contrastive_loss`]; `z` is the `(B × D)` embedding matrix.
pub fn contrastive_loss_node(g: &mut Graph, z: NodeId, batch: &ContrastiveBatch, temperature: f64, include_positive: bool) -> NodeId {
    let b = g.shape(z)[0];
    let zt = g.transpose(z);
    let sim = g.matmul(z, zt);
    let sim = g.scale(sim, 1.0 / temperature);
    let a = batch.len();
    let pos_idx: Vec<usize> = batch.anchors.iter().zip(&batch.positives).map(|(&i, &p)| i * b + p).collect();
    let pos = g.gather(sim, pos_idx, vec![a]);
    let width = batch.negatives_per_anchor() + include_positive as usize;
    let mut den_idx = Vec::with_capacity(a * width);
    for (j, &i) in batch.anchors.iter().enumerate() {
        den_idx.extend(batch.negatives[j].iter().map(|&n| i * b + n));
        if include_positive {
            den_idx.push(i * b + batch.positives[j]);
        }
    }
    let den = g.gather(sim, den_idx, vec![a, width]);
    let lse = g.logsumexp_rows(den);
    let per_anchor = g.sub(lse, pos);
    g.sum(per_anchor)
}

fn check_predictions(predictions: &[f64], labels: &[bool]) -> Result<(), ObjectiveError> {
    if predictions.len() != labels.len() {
        return Err(ObjectiveError::LengthMismatch { predictions: predictions.len(), labels: labels.len() });
    }
    if predictions.is_empty() {
        return Err(ObjectiveError::EmptyBatch);
    }
    match predictions.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        Some(&p) => Err(ObjectiveError::PredictionOutOfRange(p)),
        None => Ok(()),
    }
}

/// Mean binary cross-entropy with log arguments floored at [`LOG_FLOOR`].
pub fn classification_loss(predictions: &[f64], labels: &[bool]) -> Result<f64, ObjectiveError> {
    check_predictions(predictions, labels)?;
    let total: f64 = predictions.iter().zip(labels).map(|(&p, &y)| if y { -p.max(LOG_FLOOR).ln() } else { -(1.0 - p).max(LOG_FLOOR).ln() }).sum();
    Ok(total / predictions.len() as f64)
}

/// Graph form of [`classification_loss`] over a length-B prediction node.
pub fn classification_loss_node(g: &mut Graph, predictions: NodeId, labels: &[bool]) -> NodeId {
    let n = labels.len();
    let y = g.input(Tensor::vector(labels.iter().map(|&l| l as u8 as f64).collect()));
    let not_y = g.input(Tensor::vector(labels.iter().map(|&l| (!l) as u8 as f64).collect()));
    let p = g.reshape(predictions, vec![n]);
    let log_p = g.log_clamped(p, LOG_FLOOR);
    let q = g.affine(p, -1.0, 1.0);
    let log_q = g.log_clamped(q, LOG_FLOOR);
    let a = g.mul(log_p, y);
    let b = g.mul(log_q, not_y);
    let ll = g.add(a, b);
    let m = g.mean(ll);
    g.scale(m, -1.0)
}

/// `w_c · L_contr + w_cls · L_cls` from already computed components.
pub fn total_loss(contrastive: f64, classification: f64, config: &LossConfig) -> Result<f64, ObjectiveError> {
    config.validate()?;
    Ok(weighted(contrastive, classification, config))
}

fn weighted(contrastive: f64, classification: f64, config: &LossConfig) -> f64 {
    // A zero weight drops the term entirely so a non-finite component cannot leak in.
    let mut t = 0.0;
    if config.contrastive_weight != 0.0 {
        t += config.contrastive_weight * contrastive;
    }
    if config.classification_weight != 0.0 {
        t += config.classification_weight * classification;
    }
    t
}

/// Evaluates both components and the total for plain embeddings and predictions.
pub fn total_loss_from_parts(
    batch: &ContrastiveBatch,
    embeddings: &[Vec<f64>],
    predictions: &[f64],
    labels: &[bool],
    config: &LossConfig,
) -> Result<LossBreakdown, ObjectiveError> {
    config.validate()?;
    let contrastive =
        if config.contrastive_weight != 0.0 { contrastive_loss(batch, embeddings, config.temperature, config.include_positive_in_denominator)? } else { 0.0 };
    let classification = classification_loss(predictions, labels)?;
    Ok(LossBreakdown { contrastive, classification, total: weighted(contrastive, classification, config) })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub contrastive: f64,
    pub classification: f64,
    pub total: f64,
}

/// Graph nodes for the two components and their weighted sum.
pub struct LossNodes {
    pub contrastive: Option<NodeId>,
    pub classification: NodeId,
    pub total: NodeId,
}

/// Builds the full objective on a graph. The contrastive term is skipped when
/// its weight is zero or the batch is empty.
pub fn total_loss_node(
    g: &mut Graph,
    embeddings: NodeId,
    predictions: NodeId,
    batch: Option<&ContrastiveBatch>,
    labels: &[bool],
    config: &LossConfig,
) -> LossNodes {
    let classification = classification_loss_node(g, predictions, labels);
    let contrastive = match batch {
        Some(b) if config.contrastive_weight != 0.0 && !b.is_empty() => {
            Some(contrastive_loss_node(g, embeddings, b, config.temperature, config.include_positive_in_denominator))
        }
        _ => None,
    };
    let cls = g.scale(classification, config.classification_weight);
    let total = match contrastive {
        Some(c) => {
            let c = g.scale(c, config.contrastive_weight);
            g.add(c, cls)
        }
        None => cls,
    };
    LossNodes { contrastive, classification, total }
}
