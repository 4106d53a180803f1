//! Internal-state data model: per-instance stacked layer states, labeled
//! datasets, the ISTD binary format, channel/layer selection and splits.

mod format;
mod select;
mod split;

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use format::{decode_dataset, encode_dataset, read_dataset, write_dataset, HEADER_LEN, MAGIC, RECORD_HEADER_LEN, VERSION};
pub use select::{select_states, LayerRange, Selection};
pub use split::{split, SplitFractions};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic {0:?}, expected \"ISTD\"")]
    BadMagic([u8; 4]),
    #[error("unsupported ISTD version {0}")]
    UnsupportedVersion(u16),
    #[error("unsupported header flags {0:#06x}")]
    UnsupportedFlags(u16),
    #[error("file truncated in header")]
    TruncatedHeader,
    #[error("file truncated in record {0}")]
    TruncatedRecord(u64),
    #[error("{0} trailing bytes after the last record")]
    TrailingBytes(usize),
    #[error("non-finite state value in record {0}")]
    NonFinite(u64),
    #[error("invalid label byte {value} in record {record}")]
    InvalidLabel { record: u64, value: u8 },
    #[error("answer log-probability must be finite and <= 0, got {0}")]
    InvalidLogprob(f64),
    #[error("tag is {0} bytes; at most 255 allowed")]
    TagTooLong(usize),
    #[error("invalid tag bytes in record {0}")]
    InvalidTag(u64),
    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: StateShape, found: StateShape },
    #[error("value count {found} does not match shape {shape} ({expected} values)")]
    ValueCount { shape: StateShape, expected: usize, found: usize },
    #[error("layers and dim must be positive")]
    ZeroExtent,
    #[error("duplicate instance id {0}")]
    DuplicateId(u64),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("channel subset is empty")]
    EmptyChannelSet,
    #[error("channel mask {0:#04x} is invalid")]
    InvalidChannelMask(u8),
    #[error("requested channels {requested} are not all present in {available}")]
    MissingChannels { requested: ChannelSet, available: ChannelSet },
    #[error("layer range {start}..={end} outside 0..={last}")]
    LayerRange { start: usize, end: usize, last: usize },
    #[error("split fractions must be positive and sum to 1, got {0:?}")]
    BadFractions((f64, f64, f64)),
    #[error("need at least 3 instances to split, got {0}")]
    TooSmallToSplit(usize),
    #[error("cannot parse {0:?}")]
    Parse(String),
}

/// The three per-layer state types, in storage order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    /// Residual-stream activation after the layer.
    Act,
    /// Attention sublayer output.
    Attn,
    /// Feed-forward sublayer output.
    Ff,
}

impl Channel {
    pub const ALL: [Channel; 3] = [Channel::Act, Channel::Attn, Channel::Ff];

    fn bit(self) -> u8 {
        match self {
            Channel::Act => 1,
            Channel::Attn => 2,
            Channel::Ff => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Channel::Act => "act",
            Channel::Attn => "attn",
            Channel::Ff => "ff",
        }
    }
}

impl FromStr for Channel {
    type Err = StoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "act" => Ok(Channel::Act),
            "attn" => Ok(Channel::Attn),
            "ff" => Ok(Channel::Ff),
            _ => Err(StoreError::Parse(s.to_string())),
        }
    }
}

/// Non-empty subset of channels; iteration is always act, attn, ff.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ChannelSet(u8);

impl ChannelSet {
    pub const ALL: ChannelSet = ChannelSet(0b111);

    pub fn from_mask(mask: u8) -> Result<Self, StoreError> {
        if mask == 0 {
            Err(StoreError::EmptyChannelSet)
        } else if mask & !0b111 != 0 {
            Err(StoreError::InvalidChannelMask(mask))
        } else {
            Ok(Self(mask))
        }
    }

    pub fn of(channels: &[Channel]) -> Result<Self, StoreError> {
        Self::from_mask(channels.iter().fold(0, |m, c| m | c.bit()))
    }

    pub fn single(channel: Channel) -> Self {
        Self(channel.bit())
    }

    pub fn mask(self) -> u8 {
        self.0
    }

    pub fn contains(self, c: Channel) -> bool {
        self.0 & c.bit() != 0
    }

    pub fn is_subset_of(self, other: ChannelSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = Channel> {
        Channel::ALL.into_iter().filter(move |c| self.contains(*c))
    }

    /// Position of `c` among the channels of this set.
    pub fn position(self, c: Channel) -> Option<usize> {
        self.iter().position(|x| x == c)
    }
}

impl fmt::Display for ChannelSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.iter().map(Channel::name).collect();
        f.write_str(&names.join(","))
    }
}

impl fmt::Debug for ChannelSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{{self}}}")
    }
}

impl FromStr for ChannelSet {
    type Err = StoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.trim().eq_ignore_ascii_case("all") || s.trim().eq_ignore_ascii_case("full") {
            return Ok(Self::ALL);
        }
        let channels = s.split([',', '+']).filter(|p| !p.trim().is_empty()).map(Channel::from_str).collect::<Result<Vec<_>, _>>()?;
        Self::of(&channels)
    }
}

impl TryFrom<String> for ChannelSet {
    type Error = StoreError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<ChannelSet> for String {
    fn from(c: ChannelSet) -> String {
        c.to_string()
    }
}

/// The `(L, d, channels)` contract shared by every tensor of a dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StateShape {
    pub layers: usize,
    pub dim: usize,
    pub channels: ChannelSet,
}

impl StateShape {
    pub fn new(layers: usize, dim: usize, channels: ChannelSet) -> Result<Self, StoreError> {
        if layers == 0 || dim == 0 {
            return Err(StoreError::ZeroExtent);
        }
        Ok(Self { layers, dim, channels })
    }

    pub fn value_count(&self) -> usize {
        self.channels.len() * self.layers * self.dim
    }
}

impl fmt::Display for StateShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(L={}, d={}, channels={{{}}})", self.layers, self.dim, self.channels)
    }
}

/// Final-token states of one forward pass, laid out channel-major, then
/// layer-major, then feature.
#[derive(Clone, Debug, PartialEq)]
pub struct InternalStateTensor {
    shape: StateShape,
    values: Vec<f32>,
}

impl InternalStateTensor {
    pub fn new(shape: StateShape, values: Vec<f32>) -> Result<Self, StoreError> {
        if values.len() != shape.value_count() {
            return Err(StoreError::ValueCount { shape, expected: shape.value_count(), found: values.len() });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(StoreError::NonFinite(0));
        }
        Ok(Self { shape, values })
    }

    pub fn zeros(shape: StateShape) -> Self {
        Self { values: vec![0.0; shape.value_count()], shape }
    }

    pub fn shape(&self) -> StateShape {
        self.shape
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// The `d`-vector of `channel` at `layer`, or `None` if the channel is absent.
    pub fn layer(&self, channel: Channel, layer: usize) -> Option<&[f32]> {
        let c = self.shape.channels.position(channel)?;
        let start = (c * self.shape.layers + layer) * self.shape.dim;
        self.values.get(start..start + self.shape.dim)
    }

    /// Mutable variant of [`layer`](Self::layer).
    pub fn layer_mut(&mut self, channel: Channel, layer: usize) -> Option<&mut [f32]> {
        let c = self.shape.channels.position(channel)?;
        let start = (c * self.shape.layers + layer) * self.shape.dim;
        let dim = self.shape.dim;
        self.values.get_mut(start..start + dim)
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.values.iter().map(|&v| v as f64).collect()
    }
}

/// Correctness label of the model's answer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Incorrect,
    Correct,
    Unlabeled,
}

impl Label {
    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(Label::Incorrect),
            1 => Some(Label::Correct),
            255 => Some(Label::Unlabeled),
            _ => None,
        }
    }

    pub fn to_byte(self) -> u8 {
        match self {
            Label::Incorrect => 0,
            Label::Correct => 1,
            Label::Unlabeled => 255,
        }
    }

    pub fn from_correct(correct: bool) -> Self {
        if correct {
            Label::Correct
        } else {
            Label::Incorrect
        }
    }

    /// `Some(true)` for correct, `Some(false)` for incorrect.
    pub fn as_bool(self) -> Option<bool> {
        match self {
            Label::Correct => Some(true),
            Label::Incorrect => Some(false),
            Label::Unlabeled => None,
        }
    }
}

/// One dataset row: states, correctness label and optional side data.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledInstance {
    id: u64,
    tensor: InternalStateTensor,
    label: Label,
    answer_logprob: Option<f64>,
    tag: Option<String>,
}

impl LabeledInstance {
    pub fn new(id: u64, tensor: InternalStateTensor, label: Label) -> Self {
        Self { id, tensor, label, answer_logprob: None, tag: None }
    }

    /// Attaches the mean per-token answer log-probability. The value is kept
    /// at the 32-bit precision it is stored with.
    pub fn with_logprob(mut self, logprob: f64) -> Result<Self, StoreError> {
        if !logprob.is_finite() || logprob > 0.0 {
            return Err(StoreError::InvalidLogprob(logprob));
        }
        self.answer_logprob = Some(logprob as f32 as f64);
        Ok(self)
    }

    pub fn with_tag(mut self, tag: impl Into<String>) -> Result<Self, StoreError> {
        let tag = tag.into();
        if tag.len() > 255 {
            return Err(StoreError::TagTooLong(tag.len()));
        }
        self.tag = Some(tag);
        Ok(self)
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn tensor(&self) -> &InternalStateTensor {
        &self.tensor
    }

    pub fn label(&self) -> Label {
        self.label
    }

    pub fn answer_logprob(&self) -> Option<f64> {
        self.answer_logprob
    }

    pub fn tag(&self) -> Option<&str> {
        self.tag.as_deref()
    }

    pub(crate) fn with_tensor(&self, tensor: InternalStateTensor) -> Self {
        Self { tensor, ..self.clone() }
    }
}

/// An ordered, shape-homogeneous collection of instances with unique ids.
#[derive(Clone, Debug, PartialEq)]
pub struct StateDataset {
    shape: StateShape,
    instances: Vec<LabeledInstance>,
}

impl StateDataset {
    pub fn new(shape: StateShape, instances: Vec<LabeledInstance>) -> Result<Self, StoreError> {
        let mut seen = HashSet::with_capacity(instances.len());
        for inst in &instances {
            if inst.tensor.shape != shape {
                return Err(StoreError::ShapeMismatch { expected: shape, found: inst.tensor.shape });
            }
            if !seen.insert(inst.id) {
                return Err(StoreError::DuplicateId(inst.id));
            }
        }
        Ok(Self { shape, instances })
    }

    /// Builds a dataset taking the shape from the first instance.
    pub fn from_instances(instances: Vec<LabeledInstance>) -> Result<Self, StoreError> {
        let shape = instances.first().ok_or(StoreError::EmptyDataset)?.tensor.shape;
        Self::new(shape, instances)
    }

    pub fn shape(&self) -> StateShape {
        self.shape
    }

    pub fn instances(&self) -> &[LabeledInstance] {
        &self.instances
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn labels(&self) -> Vec<Label> {
        self.instances.iter().map(|i| i.label).collect()
    }

    /// Labels as booleans; `None` if any instance is unlabeled.
    pub fn binary_labels(&self) -> Option<Vec<bool>> {
        self.instances.iter().map(|i| i.label.as_bool()).collect()
    }

    pub fn count_label(&self, label: Label) -> usize {
        self.instances.iter().filter(|i| i.label == label).count()
    }

    pub fn positive_rate(&self) -> f64 {
        if self.instances.is_empty() {
            return 0.0;
        }
        self.count_label(Label::Correct) as f64 / self.instances.len() as f64
    }

    pub(crate) fn subset(&self, indices: &[usize]) -> Self {
        Self { shape: self.shape, instances: indices.iter().map(|&i| self.instances[i].clone()).collect() }
    }
}

#[cfg(test)]
mod tests;
