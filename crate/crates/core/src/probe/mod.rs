//! The confidence probe: an encoder mapping a stacked state tensor to an
//! embedding z, followed by a three-layer MLP mapping z to ĉ ∈ (0, 1).
//!
//! A model remembers the shape of the tensors it was trained on together with
//! the channel/layer selection it applies to them, and rejects anything else.

mod checkpoint;
mod cnn;
mod transformer;

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{sigmoid, Graph, GraphError, Init, NodeId, ParamId, ParamStore, Tensor};
use crate::objective::LossConfig;
use crate::store::{InternalStateTensor, Selection, StateShape, StoreError};

pub use checkpoint::{decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use cnn::CnnParams;
use transformer::{TransformerParams, TransformerShape};

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("input shape mismatch: model expects {expected}, received {found}")]
    ShapeMismatch { expected: StateShape, found: StateShape },
    #[error("embedding has {found} values, classifier expects {expected}")]
    EmbeddingLength { expected: usize, found: usize },
    #[error("embedding contains a non-finite value")]
    NonFiniteEmbedding,
    #[error("invalid encoder config: {0}")]
    Config(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a probe checkpoint (magic {0:?})")]
    BadMagic([u8; 4]),
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u16),
    #[error("checkpoint is truncated")]
    Truncated,
    #[error("checkpoint checksum mismatch")]
    Checksum,
    #[error("checkpoint metadata: {0}")]
    Json(#[from] serde_json::Error),
    #[error("checkpoint parameter mismatch: {0}")]
    ParamMismatch(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Cnn,
    Transformer,
    /// No encoder: the selected states are flattened straight into the MLP.
    Flat,
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EncoderKind::Cnn => "cnn",
            EncoderKind::Transformer => "transformer",
            EncoderKind::Flat => "flat",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    /// Length of z. Ignored by the flat encoder, whose z is the input itself.
    pub embed_dim: usize,
    pub cnn_blocks: usize,
    /// Output channels of each residual block; the first also sizes the stem.
    pub cnn_channels: Vec<usize>,
    pub tf_layers: usize,
    pub tf_model_dim: usize,
    pub tf_heads: usize,
    /// Hidden width of each transformer feed-forward sublayer.
    pub tf_ff_dim: usize,
    /// Learned per-layer position vectors added to the tokens.
    pub tf_positional: bool,
    /// Widths of the two hidden layers of the classifier MLP.
    pub mlp_hidden: [usize; 2],
    pub dropout_rate: f64,
    /// L2-normalise z.
    pub normalize: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self::cnn()
    }
}

impl EncoderConfig {
    pub fn cnn() -> Self {
        Self {
            kind: EncoderKind::Cnn,
            embed_dim: 64,
            cnn_blocks: 4,
            cnn_channels: vec![8, 16, 32, 64],
            tf_layers: 4,
            tf_model_dim: 64,
            tf_heads: 4,
            tf_ff_dim: 128,
            tf_positional: true,
            mlp_hidden: [64, 32],
            dropout_rate: 0.1,
            normalize: true,
        }
    }

    pub fn transformer() -> Self {
        Self { kind: EncoderKind::Transformer, ..Self::cnn() }
    }

    /// Eight layers at model width 768.
    pub fn transformer_full_scale() -> Self {
        Self { tf_layers: 8, tf_model_dim: 768, tf_heads: 12, tf_ff_dim: 3072, embed_dim: 128, mlp_hidden: [256, 64], ..Self::transformer() }
    }

    /// MLP on the raw selected states, without normalisation.
    pub fn flat() -> Self {
        Self { kind: EncoderKind::Flat, normalize: false, ..Self::cnn() }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "cnn" => Some(Self::cnn()),
            "transformer" | "tf" => Some(Self::transformer()),
            "transformer-full" | "tf-full" => Some(Self::transformer_full_scale()),
            "flat" => Some(Self::flat()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), ProbeError> {
        let bad = |m: &str| Err(ProbeError::Config(m.to_string()));
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad("dropout_rate must lie in [0, 1)");
        }
        if self.mlp_hidden.contains(&0) {
            return bad("mlp_hidden widths must be positive");
        }
        match self.kind {
            EncoderKind::Flat => {}
            EncoderKind::Cnn => {
                if self.embed_dim < 2 {
                    return bad("embed_dim must be at least 2");
                }
                if self.cnn_blocks == 0 || self.cnn_channels.len() != self.cnn_blocks {
                    return bad("cnn_channels must list one positive width per block");
                }
                if self.cnn_channels.contains(&0) {
                    return bad("cnn_channels must be positive");
                }
            }
            EncoderKind::Transformer => {
                if self.embed_dim < 2 {
                    return bad("embed_dim must be at least 2");
                }
                if self.tf_layers == 0 || self.tf_model_dim == 0 || self.tf_heads == 0 || self.tf_ff_dim == 0 {
                    return bad("transformer sizes must be positive");
                }
                if !self.tf_model_dim.is_multiple_of(self.tf_heads) {
                    return bad("tf_model_dim must be divisible by tf_heads");
                }
            }
        }
        Ok(())
    }
}

/// Provenance recorded alongside a trained model.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelMetadata {
    pub seed: u64,
    pub loss: LossConfig,
    /// "full", "cls-only" or "last-hidden".
    pub tag: String,
    pub config_hash: String,
    pub selected_epoch: Option<usize>,
}

enum EncoderParams {
    Cnn(CnnParams),
    Transformer(TransformerParams),
    Flat,
}

struct ClassifierParams {
    layers: [(ParamId, ParamId); 3],
}

pub struct ProbeModel {
    config: EncoderConfig,
    input_shape: StateShape,
    selection: Selection,
    encoded_shape: StateShape,
    params: ParamStore,
    encoder: EncoderParams,
    classifier: ClassifierParams,
    metadata: ModelMetadata,
}

impl fmt::Debug for ProbeModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProbeModel")
            .field("kind", &self.config.kind)
            .field("input_shape", &self.input_shape)
            .field("selection", &self.selection)
            .field("parameters", &self.params.scalar_count())
            .finish()
    }
}

impl ProbeModel {
    /// Freshly initialised model for tensors of `input_shape`, reading only
    /// the states picked by `selection`.
    pub fn new(config: EncoderConfig, input_shape: StateShape, selection: Selection, seed: u64) -> Result<Self, ProbeError> {
        config.validate()?;
        let encoded_shape = selection.output_shape(input_shape)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let c = encoded_shape.channels.len();
        let (encoder, embed_dim) = match config.kind {
            EncoderKind::Cnn => (EncoderParams::Cnn(CnnParams::register(&mut params, &mut rng, c, &config.cnn_channels, config.embed_dim)), config.embed_dim),
            EncoderKind::Transformer => {
                let s = TransformerShape {
                    tokens: encoded_shape.layers,
                    token_dim: c * encoded_shape.dim,
                    model_dim: config.tf_model_dim,
                    layers: config.tf_layers,
                    heads: config.tf_heads,
                    ff_dim: config.tf_ff_dim,
                    embed_dim: config.embed_dim,
                    positional: config.tf_positional,
                };
                (EncoderParams::Transformer(TransformerParams::register(&mut params, &mut rng, &s)), config.embed_dim)
            }
            EncoderKind::Flat => (EncoderParams::Flat, encoded_shape.value_count()),
        };
        let [h1, h2] = config.mlp_hidden;
        let mut dense = |name: &str, i: usize, o: usize, init: Init| {
            let w = params.add(format!("cls.{name}.w"), &[i, o], init, &mut rng);
            let b = params.add(format!("cls.{name}.b"), &[o], Init::Zeros, &mut rng);
            (w, b)
        };
        let classifier = ClassifierParams {
            layers: [
                dense("fc1", embed_dim, h1, Init::He { fan_in: embed_dim }),
                dense("fc2", h1, h2, Init::He { fan_in: h1 }),
                dense("fc3", h2, 1, Init::Lecun { fan_in: h2 }),
            ],
        };
        Ok(Self { config, input_shape, selection, encoded_shape, params, encoder, classifier, metadata: ModelMetadata { seed, ..Default::default() } })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn input_shape(&self) -> StateShape {
        self.input_shape
    }

    pub fn selection(&self) -> Selection {
        self.selection
    }

    /// Shape of the states the encoder actually reads.
    pub fn encoded_shape(&self) -> StateShape {
        self.encoded_shape
    }

    pub fn embed_dim(&self) -> usize {
        match self.encoder {
            EncoderParams::Flat => self.encoded_shape.value_count(),
            _ => self.config.embed_dim,
        }
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn metadata(&self) -> &ModelMetadata {
        &self.metadata
    }

    pub fn metadata_mut(&mut self) -> &mut ModelMetadata {
        &mut self.metadata
    }

    /// Checks the shape contract and lays out the selected states in the
    /// encoder's input format.
    pub fn prepare_input(&self, tensor: &InternalStateTensor) -> Result<Tensor, ProbeError> {
        if tensor.shape() != self.input_shape {
            return Err(ProbeError::ShapeMismatch { expected: self.input_shape, found: tensor.shape() });
        }
        let values = self.selection.apply_f64(tensor)?;
        let s = self.encoded_shape;
        let c = s.channels.len();
        Ok(match self.encoder {
            EncoderParams::Cnn(_) => Tensor::new(vec![c, s.layers, s.dim], values),
            EncoderParams::Transformer(_) => {
                // One token per layer: concatenate that layer's channel vectors.
                let mut tokens = Vec::with_capacity(values.len());
                for l in 0..s.layers {
                    for ch in 0..c {
                        let start = (ch * s.layers + l) * s.dim;
                        tokens.extend_from_slice(&values[start..start + s.dim]);
                    }
                }
                Tensor::matrix(s.layers, c * s.dim, tokens)
            }
            EncoderParams::Flat => Tensor::matrix(1, values.len(), values),
        })
    }

    /// Embedding node `(1 × embed_dim)` for an input prepared by [`prepare_input`](Self::prepare_input).
    pub fn encode_node(&self, g: &mut Graph, input: &Tensor) -> NodeId {
        self.encode_node_with(g, &self.params, input)
    }

    /// [`encode_node`](Self::encode_node) reading parameter values from `params`,
    /// which must share this model's layout.
    pub fn encode_node_with(&self, g: &mut Graph, params: &ParamStore, input: &Tensor) -> NodeId {
        let x = g.input(input.clone());
        let z = match &self.encoder {
            EncoderParams::Cnn(p) => p.forward(g, params, x),
            EncoderParams::Transformer(p) => p.forward(g, params, x),
            EncoderParams::Flat => x,
        };
        if self.config.normalize {
            g.l2_normalize(z)
        } else {
            z
        }
    }

    /// Pre-sigmoid classifier outputs `(B × 1)` for a `(B × embed_dim)` node.
    /// Dropout is applied between hidden layers when `dropout` is given.
    pub fn logit_node<R: Rng + ?Sized>(&self, g: &mut Graph, z: NodeId, dropout: Option<&mut R>) -> NodeId {
        self.logit_node_with(g, &self.params, z, dropout)
    }

    pub fn logit_node_with<R: Rng + ?Sized>(&self, g: &mut Graph, params: &ParamStore, z: NodeId, mut dropout: Option<&mut R>) -> NodeId {
        let mut h = z;
        for (i, &(w, b)) in self.classifier.layers.iter().enumerate() {
            let w = g.param(params, w);
            let b = g.param(params, b);
            h = g.linear(h, w, b);
            if i < 2 {
                h = g.relu(h);
                if let Some(rng) = dropout.as_deref_mut() {
                    h = g.dropout(h, self.config.dropout_rate, rng);
                }
            }
        }
        h
    }

    /// Confidence node of length B.
    pub fn confidence_node<R: Rng + ?Sized>(&self, g: &mut Graph, z: NodeId, dropout: Option<&mut R>) -> NodeId {
        self.confidence_node_with(g, &self.params, z, dropout)
    }

    pub fn confidence_node_with<R: Rng + ?Sized>(&self, g: &mut Graph, params: &ParamStore, z: NodeId, dropout: Option<&mut R>) -> NodeId {
        let logits = self.logit_node_with(g, params, z, dropout);
        let b = g.shape(logits)[0];
        let c = g.sigmoid(logits);
        g.reshape(c, vec![b])
    }

    pub fn encode(&self, tensor: &InternalStateTensor) -> Result<Vec<f64>, ProbeError> {
        let input = self.prepare_input(tensor)?;
        let mut g = Graph::new();
        let z = self.encode_node(&mut g, &input);
        g.check_finite()?;
        Ok(g.value(z).data().to_vec())
    }

    /// Final pre-sigmoid output for an embedding.
    pub fn classify_logit(&self, z: &[f64]) -> Result<f64, ProbeError> {
        if z.len() != self.embed_dim() {
            return Err(ProbeError::EmbeddingLength { expected: self.embed_dim(), found: z.len() });
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(ProbeError::NonFiniteEmbedding);
        }
        let mut g = Graph::new();
        let zn = g.input(Tensor::matrix(1, z.len(), z.to_vec()));
        let out = self.logit_node::<ChaCha8Rng>(&mut g, zn, None);
        g.check_finite()?;
        Ok(g.scalar(out))
    }

    pub fn classify(&self, z: &[f64]) -> Result<f64, ProbeError> {
        self.classify_logit(z).map(sigmoid)
    }

    pub fn predict_confidence(&self, tensor: &InternalStateTensor) -> Result<f64, ProbeError> {
        self.classify(&self.encode(tensor)?)
    }

    /// Pre-sigmoid scores for many tensors, in input order.
    pub fn predict_logits<'a>(&self, tensors: impl IntoIterator<Item = &'a InternalStateTensor>) -> Result<Vec<f64>, ProbeError> {
        let tensors: Vec<&InternalStateTensor> = tensors.into_iter().collect();
        let inputs = tensors.iter().map(|t| self.prepare_input(t)).collect::<Result<Vec<_>, _>>()?;
        let mut out = Vec::with_capacity(inputs.len());
        for chunk in inputs.chunks(64) {
            let mut g = Graph::new();
            let zs: Vec<NodeId> = chunk.iter().map(|x| self.encode_node(&mut g, x)).collect();
            let stacked = g.stack(&zs);
            let z = g.reshape(stacked, vec![chunk.len(), self.embed_dim()]);
            let logits = self.logit_node::<ChaCha8Rng>(&mut g, z, None);
            g.check_finite()?;
            out.extend_from_slice(g.value(logits).data());
        }
        Ok(out)
    }

    /// Batched [`predict_confidence`](Self::predict_confidence).
    pub fn predict_batch<'a>(&self, tensors: impl IntoIterator<Item = &'a InternalStateTensor>) -> Result<Vec<f64>, ProbeError> {
        Ok(self.predict_logits(tensors)?.into_iter().map(sigmoid).collect())
    }

    fn rebuild(config: EncoderConfig, input_shape: StateShape, selection: Selection, metadata: ModelMetadata) -> Result<Self, ProbeError> {
        let mut m = Self::new(config, input_shape, selection, 0)?;
        m.metadata = metadata;
        Ok(m)
    }
}
