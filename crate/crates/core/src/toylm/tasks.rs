//! Labeled corpus generators.
//!
//! Every instance draws from its own generator stream, keyed by the corpus
//! seed and the instance id, so instance `i` does not depend on how many
//! instances precede it.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Token, ToyLm, ToyLmError, VocabLayout};
use crate::store::{Channel, ChannelSet, InternalStateTensor, Label, LabeledInstance, LayerRange, StateDataset, StateShape};

/// Key → value pairs, one per line as `key value` in the text form. Lines
/// starting with `#` are comments.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KvTable {
    pairs: Vec<(Token, Token)>,
}

impl KvTable {
    pub fn new(pairs: Vec<(Token, Token)>) -> Result<Self, ToyLmError> {
        let mut keys = BTreeSet::new();
        for (i, &(k, _)) in pairs.iter().enumerate() {
            if !keys.insert(k) {
                return Err(ToyLmError::TableParse { line: i + 1, reason: format!("duplicate key {k}") });
            }
        }
        Ok(Self { pairs })
    }

    pub fn pairs(&self) -> &[(Token, Token)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn get(&self, key: Token) -> Option<Token> {
        self.pairs.iter().find(|p| p.0 == key).map(|p| p.1)
    }

    pub fn to_text(&self) -> String {
        self.pairs.iter().map(|(k, v)| format!("{k} {v}\n")).collect()
    }
}

impl FromStr for KvTable {
    type Err = ToyLmError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut pairs = Vec::new();
        for (i, line) in s.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |reason: &str| ToyLmError::TableParse { line: i + 1, reason: reason.to_string() };
            let cols: Vec<&str> = line.split_whitespace().collect();
            if cols.len() != 2 {
                return Err(err("expected two columns"));
            }
            let k = cols[0].parse().map_err(|_| err("key is not a token id"))?;
            let v = cols[1].parse().map_err(|_| err("value is not a token id"))?;
            pairs.push((k, v));
        }
        Self::new(pairs)
    }
}

/// The full key → value mapping of a key-value task, split into the pairs
/// the model is trained on and the pairs it never sees.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KvTask {
    pub known: KvTable,
    pub unknown: KvTable,
}

impl KvTask {
    /// Assigns every key of the layout a random value and marks
    /// `table_size` of them as known.
    pub fn generate(layout: VocabLayout, table_size: usize, seed: u64) -> Result<Self, ToyLmError> {
        let mut keys: Vec<Token> = layout.keys().collect();
        if table_size == 0 {
            return Err(ToyLmError::EmptyTable);
        }
        if table_size > keys.len() {
            return Err(ToyLmError::Spec(format!("table of {table_size} pairs exceeds the {} available keys", keys.len())));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        keys.shuffle(&mut rng);
        let values: Vec<Token> = layout.values().collect();
        let mut pairs: Vec<(Token, Token)> = keys.into_iter().map(|k| (k, *values.choose(&mut rng).unwrap())).collect();
        let unknown = pairs.split_off(table_size);
        Ok(Self { known: KvTable::new(pairs)?, unknown: KvTable::new(unknown)? })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    KvRecall,
    PlantedSignal,
    ClusterStructured,
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskKind::KvRecall => "kv_recall",
            TaskKind::PlantedSignal => "planted_signal",
            TaskKind::ClusterStructured => "cluster_structured",
        })
    }
}

impl FromStr for TaskKind {
    type Err = ToyLmError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "kv_recall" | "kv" => Ok(TaskKind::KvRecall),
            "planted_signal" | "planted" => Ok(TaskKind::PlantedSignal),
            "cluster_structured" | "cluster" => Ok(TaskKind::ClusterStructured),
            other => Err(ToyLmError::Spec(format!("unknown task kind {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticTaskSpec {
    pub kind: TaskKind,
    pub n: usize,
    /// Key-value task: probability that a query's key is in the trained table.
    pub coverage: f64,
    /// Separation between the classes, in units of the noise scale.
    pub signal_strength: f64,
    /// Planted task: channel carrying the class direction.
    pub signal_channel: Channel,
    /// Planted task: layers carrying the class direction; the middle third when absent.
    pub signal_layers: Option<LayerRange>,
    /// Standard deviation of the Gaussian background.
    pub noise_scale: f64,
    pub seed: u64,
}

impl Default for SyntheticTaskSpec {
    fn default() -> Self {
        Self {
            kind: TaskKind::PlantedSignal,
            n: 2000,
            coverage: 0.5,
            signal_strength: 1.5,
            signal_channel: Channel::Ff,
            signal_layers: None,
            noise_scale: 1.0,
            seed: 0,
        }
    }
}

impl SyntheticTaskSpec {
    pub fn validate(&self) -> Result<(), ToyLmError> {
        if self.n == 0 {
            return Err(ToyLmError::ZeroInstances);
        }
        if !(0.0..=1.0).contains(&self.coverage) {
            return Err(ToyLmError::Spec(format!("coverage {} outside [0, 1]", self.coverage)));
        }
        if !(self.signal_strength >= 0.0 && self.signal_strength.is_finite()) {
            return Err(ToyLmError::Spec(format!("signal strength {} must be non-negative", self.signal_strength)));
        }
        if !(self.noise_scale > 0.0 && self.noise_scale.is_finite()) {
            return Err(ToyLmError::Spec(format!("noise scale {} must be positive", self.noise_scale)));
        }
        Ok(())
    }
}

/// Middle third of `layers`, at least one layer wide.
pub fn default_signal_band(layers: usize) -> LayerRange {
    let start = layers / 3;
    let end = (2 * layers / 3).saturating_sub(1).max(start);
    LayerRange::new(start, end.min(layers - 1))
}

fn instance_rng(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn unit_vector<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).unwrap();
    loop {
        let v: Vec<f64> = (0..len).map(|_| normal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Uninformative answer log-probability `ln U`, `U ~ Uniform(0, 1]`.
fn null_logprob<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    (1.0 - rng.random::<f64>()).ln()
}

/// Gaussian state corpora of shape `(act, attn, ff) × layers × dim`.
///
/// `planted_signal` adds `±strength · u` to the chosen channel in each layer
/// of the band, with `u` a fixed unit vector; every other value is pure noise.
/// `cluster_structured` draws each class from two clusters whose centres are
/// fixed random directions of norm `strength` over the whole tensor.
pub fn generate_synthetic(spec: &SyntheticTaskSpec, layers: usize, dim: usize) -> Result<StateDataset, ToyLmError> {
    spec.validate()?;
    let shape = StateShape::new(layers, dim, ChannelSet::ALL)?;
    let mut setup = ChaCha8Rng::seed_from_u64(spec.seed);
    let sigma = spec.noise_scale;
    let noise = Normal::new(0.0, sigma).unwrap();
    let strength = spec.signal_strength * sigma;

    let band = spec.signal_layers.unwrap_or_else(|| default_signal_band(layers));
    let centres: Vec<Vec<f64>> = match spec.kind {
        TaskKind::PlantedSignal => {
            band.validate(layers)?;
            vec![unit_vector(dim, &mut setup)]
        }
        TaskKind::ClusterStructured => (0..4).map(|_| unit_vector(shape.value_count(), &mut setup)).collect(),
        TaskKind::KvRecall => return Err(ToyLmError::Spec("kv_recall corpora come from a trained toy LM".into())),
    };
    let channel_offset = ChannelSet::ALL.position(spec.signal_channel).unwrap() * layers * dim;

    let instances = (0..spec.n as u64)
        .map(|id| {
            let mut rng = instance_rng(spec.seed, id);
            let label = rng.random_bool(0.5);
            let sign = if label { 1.0 } else { -1.0 };
            let mut values: Vec<f64> = (0..shape.value_count()).map(|_| noise.sample(&mut rng)).collect();
            match spec.kind {
                TaskKind::PlantedSignal => {
                    for l in band.start..=band.end {
                        let row = &mut values[channel_offset + l * dim..channel_offset + (l + 1) * dim];
                        row.iter_mut().zip(&centres[0]).for_each(|(v, u)| *v += sign * strength * u);
                    }
                }
                _ => {
                    let component = rng.random_range(0..2);
                    let centre = &centres[2 * (!label as usize) + component];
                    values.iter_mut().zip(centre).for_each(|(v, c)| *v += strength * c);
                }
            }
            let tensor = InternalStateTensor::new(shape, values.into_iter().map(|v| v as f32).collect())?;
            Ok(LabeledInstance::new(id, tensor, Label::from_correct(label)).with_logprob(null_logprob(&mut rng))?)
        })
        .collect::<Result<Vec<_>, ToyLmError>>()?;
    Ok(StateDataset::new(shape, instances)?)
}

/// Runs `lm` on queries whose keys come from the known table with
/// probability `coverage` and from the unknown table otherwise. Each
/// instance is labeled by exact match of the argmax answer against the task's
/// ground truth and tagged `in-table` or `out-of-table`.
pub fn generate_kv_corpus(lm: &ToyLm, task: &KvTask, spec: &SyntheticTaskSpec) -> Result<StateDataset, ToyLmError> {
    spec.validate()?;
    if task.known.is_empty() {
        return Err(ToyLmError::EmptyTable);
    }
    let layout = VocabLayout::new(lm.config().vocab_size)?;
    let shape = StateShape::new(lm.config().layers, lm.config().dim, ChannelSet::ALL)?;
    let instances = (0..spec.n as u64)
        .map(|id| {
            let mut rng = instance_rng(spec.seed, id);
            let in_table = task.unknown.is_empty() || rng.random_bool(spec.coverage);
            let table = if in_table { &task.known } else { &task.unknown };
            let &(key, truth) = table.pairs().choose(&mut rng).unwrap();
            let rec = lm.run_and_record(&layout.query(key, lm.config().context, &mut rng))?;
            let tag = if in_table { "in-table" } else { "out-of-table" };
            Ok(LabeledInstance::new(id, rec.to_tensor()?, Label::from_correct(rec.answer == truth)).with_logprob(rec.answer_logprob.min(0.0))?.with_tag(tag)?)
        })
        .collect::<Result<Vec<_>, ToyLmError>>()?;
    Ok(StateDataset::new(shape, instances)?)
}
