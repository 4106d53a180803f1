//! Channel-subset and layer-band views used by the ablations.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{ChannelSet, InternalStateTensor, StateDataset, StateShape, StoreError};

/// Inclusive layer interval `[start, end]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LayerRange {
    pub start: usize,
    pub end: usize,
}

impl LayerRange {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn full(layers: usize) -> Self {
        Self { start: 0, end: layers.saturating_sub(1) }
    }

    pub fn len(&self) -> usize {
        self.end + 1 - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end < self.start
    }

    pub fn validate(&self, layers: usize) -> Result<(), StoreError> {
        if self.start > self.end || self.end >= layers {
            return Err(StoreError::LayerRange { start: self.start, end: self.end, last: layers.saturating_sub(1) });
        }
        Ok(())
    }

    /// `inner` expressed in the coordinates of the layers this range selected.
    pub fn compose(&self, inner: LayerRange) -> LayerRange {
        LayerRange { start: self.start + inner.start, end: self.start + inner.end }
    }
}

impl fmt::Display for LayerRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.start, self.end)
    }
}

impl FromStr for LayerRange {
    type Err = StoreError;

    /// Accepts `a:b` or `a-b` (inclusive) or a single index.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parse = |p: &str| p.trim().parse::<usize>().map_err(|_| StoreError::Parse(s.to_string()));
        match s.split_once([':', '-']) {
            Some((a, b)) => Ok(Self::new(parse(a)?, parse(b)?)),
            None => {
                let v = parse(s)?;
                Ok(Self::new(v, v))
            }
        }
    }
}

/// Restricts every instance to `channels` and the inclusive `layers` band.
/// The source dataset is left untouched.
pub fn select_states(dataset: &StateDataset, channels: ChannelSet, layers: LayerRange) -> Result<StateDataset, StoreError> {
    if channels.is_empty() {
        return Err(StoreError::EmptyChannelSet);
    }
    let src = dataset.shape();
    if !channels.is_subset_of(src.channels) {
        return Err(StoreError::MissingChannels { requested: channels, available: src.channels });
    }
    layers.validate(src.layers)?;
    let shape = StateShape::new(layers.len(), src.dim, channels)?;
    let instances = dataset
        .instances()
        .iter()
        .map(|inst| {
            let t = inst.tensor();
            let mut values = Vec::with_capacity(shape.value_count());
            for c in channels.iter() {
                for l in layers.start..=layers.end {
                    values.extend_from_slice(t.layer(c, l).expect("channel checked above"));
                }
            }
            InternalStateTensor::new(shape, values).map(|t| inst.with_tensor(t))
        })
        .collect::<Result<Vec<_>, _>>()?;
    StateDataset::new(shape, instances)
}

/// A channel subset paired with a layer band.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Selection {
    pub channels: ChannelSet,
    pub layers: LayerRange,
}

impl Selection {
    pub fn new(channels: ChannelSet, layers: LayerRange) -> Self {
        Self { channels, layers }
    }

    /// Everything in `shape`.
    pub fn full(shape: StateShape) -> Self {
        Self { channels: shape.channels, layers: LayerRange::full(shape.layers) }
    }

    /// Shape of a tensor after applying this selection to one of `source` shape.
    pub fn output_shape(&self, source: StateShape) -> Result<StateShape, StoreError> {
        if !self.channels.is_subset_of(source.channels) {
            return Err(StoreError::MissingChannels { requested: self.channels, available: source.channels });
        }
        self.layers.validate(source.layers)?;
        StateShape::new(self.layers.len(), source.dim, self.channels)
    }

    /// Selected values in channel-major, layer-major, feature-minor order.
    pub fn apply_f64(&self, tensor: &InternalStateTensor) -> Result<Vec<f64>, StoreError> {
        let shape = self.output_shape(tensor.shape())?;
        let mut values = Vec::with_capacity(shape.value_count());
        for c in self.channels.iter() {
            for l in self.layers.start..=self.layers.end {
                values.extend(tensor.layer(c, l).expect("channel checked above").iter().map(|&v| v as f64));
            }
        }
        Ok(values)
    }
}

impl fmt::Display for Selection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{{}}} layers {}", self.channels, self.layers)
    }
}
