//! A small pre-norm decoder-only transformer whose forward pass records, at
//! the final token of every layer, the residual stream h, the attention
//! sublayer output a and the feed-forward sublayer output m, together with
//! generators for labeled state corpora.
//!
//! Each block computes `h_mid = h + a` and `h_out = h_mid + m`, so the
//! recorded vectors satisfy `h^l = (h^(l-1) + a^l) + m^l` bit for bit.

mod tasks;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{Adam, Graph, GraphError, Init, NodeId, ParamId, ParamStore, Tensor};
use crate::store::{ChannelSet, InternalStateTensor, StateShape, StoreError};

pub use tasks::{default_signal_band, generate_kv_corpus, generate_synthetic, KvTable, KvTask, SyntheticTaskSpec, TaskKind};

const LN_EPS: f64 = 1e-5;
/// Additive score for future positions; exp underflows to exactly zero.
const MASKED: f64 = -1e30;

pub type Token = u32;

#[derive(Debug, Error)]
pub enum ToyLmError {
    #[error("invalid toy LM config: {0}")]
    Config(String),
    #[error("sequence of {len} tokens exceeds context length {context}")]
    Overlong { len: usize, context: usize },
    #[error("token {token} outside vocabulary of size {vocab}")]
    OutOfVocabulary { token: Token, vocab: usize },
    #[error("empty token sequence")]
    EmptySequence,
    #[error("loss became non-finite at step {step}")]
    NonFinite { step: usize },
    #[error("key-value table is empty")]
    EmptyTable,
    #[error("requested zero instances")]
    ZeroInstances,
    #[error("invalid task spec: {0}")]
    Spec(String),
    #[error("kv table line {line}: {reason}")]
    TableParse { line: usize, reason: String },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyLmConfig {
    pub vocab_size: usize,
    pub layers: usize,
    pub dim: usize,
    pub heads: usize,
    pub context: usize,
    pub seed: u64,
}

impl Default for ToyLmConfig {
    fn default() -> Self {
        Self { vocab_size: 64, layers: 4, dim: 32, heads: 4, context: 8, seed: 0 }
    }
}

impl ToyLmConfig {
    pub fn validate(&self) -> Result<(), ToyLmError> {
        let bad = |m: &str| Err(ToyLmError::Config(m.to_string()));
        if self.layers == 0 || self.dim == 0 || self.heads == 0 {
            return bad("layers, dim and heads must be positive");
        }
        if !self.dim.is_multiple_of(self.heads) {
            return bad("dim must be divisible by heads");
        }
        if self.context < 3 {
            return bad("context length must be at least 3");
        }
        if self.vocab_size < VocabLayout::MIN_VOCAB {
            return bad("vocabulary must hold at least 8 tokens");
        }
        Ok(())
    }

    pub fn ff_dim(&self) -> usize {
        4 * self.dim
    }
}

/// Partition of the vocabulary used by the key-value task: two markers, two
/// filler tokens, then keys, then values (the last quarter).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VocabLayout {
    vocab: usize,
}

impl VocabLayout {
    pub const QUERY: Token = 0;
    pub const ANSWER: Token = 1;
    pub const FILLERS: [Token; 2] = [2, 3];
    const MIN_VOCAB: usize = 8;

    pub fn new(vocab: usize) -> Result<Self, ToyLmError> {
        if vocab < Self::MIN_VOCAB {
            return Err(ToyLmError::Config("vocabulary must hold at least 8 tokens".into()));
        }
        Ok(Self { vocab })
    }

    pub fn value_count(&self) -> usize {
        self.vocab / 4
    }

    pub fn keys(&self) -> std::ops::Range<Token> {
        4..(self.vocab - self.value_count()) as Token
    }

    pub fn values(&self) -> std::ops::Range<Token> {
        (self.vocab - self.value_count()) as Token..self.vocab as Token
    }

    /// `fillers ++ [QUERY, key, ANSWER]`, padded with random fillers to `context`.
    pub fn query<R: Rng + ?Sized>(&self, key: Token, context: usize, rng: &mut R) -> Vec<Token> {
        let mut seq: Vec<Token> = (0..context - 3).map(|_| *Self::FILLERS.choose(rng).unwrap()).collect();
        seq.extend_from_slice(&[Self::QUERY, key, Self::ANSWER]);
        seq
    }
}

struct Dense {
    w: ParamId,
    b: ParamId,
}

impl Dense {
    fn register<R: Rng + ?Sized>(store: &mut ParamStore, rng: &mut R, name: &str, i: usize, o: usize, init: Init) -> Self {
        let w = store.add(format!("{name}.w"), &[i, o], init, rng);
        let b = store.add(format!("{name}.b"), &[o], Init::Zeros, rng);
        Self { w, b }
    }

    fn apply(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> NodeId {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        g.linear(x, w, b)
    }
}

struct Norm {
    gain: ParamId,
    bias: ParamId,
}

impl Norm {
    fn register<R: Rng + ?Sized>(store: &mut ParamStore, rng: &mut R, name: &str, d: usize) -> Self {
        Self { gain: store.add(format!("{name}.gain"), &[d], Init::Ones, rng), bias: store.add(format!("{name}.bias"), &[d], Init::Zeros, rng) }
    }

    fn apply(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> NodeId {
        let n = g.layer_norm_rows(x, LN_EPS);
        let gain = g.param(store, self.gain);
        let bias = g.param(store, self.bias);
        let s = g.mul_row(n, gain);
        g.add_row(s, bias)
    }
}

struct Block {
    norm1: Norm,
    q: Dense,
    k: Dense,
    v: Dense,
    out: Dense,
    norm2: Norm,
    ff1: Dense,
    ff2: Dense,
}

/// Graph nodes of one forward pass.
struct ForwardNodes {
    /// `(T × d)` residual stream entering the first block.
    h0: NodeId,
    /// Per block: attention output, feed-forward output, residual stream after the block.
    layers: Vec<(NodeId, NodeId, NodeId)>,
    /// `(1 × vocab)` next-token logits at the final position.
    logits: NodeId,
}

pub struct ToyLm {
    config: ToyLmConfig,
    params: ParamStore,
    token_embedding: ParamId,
    position_embedding: ParamId,
    blocks: Vec<Block>,
    final_norm: Norm,
    unembed: Dense,
}

impl std::fmt::Debug for ToyLm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ToyLm").field("config", &self.config).field("parameters", &self.params.scalar_count()).finish()
    }
}

/// Per-layer vectors at the final token of one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct Recording {
    pub distribution: Vec<f64>,
    /// Embedding of the final token entering the first block.
    pub h0: Vec<f64>,
    pub act: Vec<Vec<f64>>,
    pub attn: Vec<Vec<f64>>,
    pub ff: Vec<Vec<f64>>,
    /// Argmax of the next-token distribution.
    pub answer: Token,
    pub answer_logprob: f64,
}

impl Recording {
    /// Largest |h^l − (h^(l-1) + a^l + m^l)| over layers and coordinates.
    pub fn residual_deviation(&self) -> f64 {
        let mut prev = &self.h0;
        let mut worst = 0.0f64;
        for l in 0..self.act.len() {
            for (i, &p) in prev.iter().enumerate() {
                let rebuilt = p + self.attn[l][i] + self.ff[l][i];
                worst = worst.max((self.act[l][i] - rebuilt).abs());
            }
            prev = &self.act[l];
        }
        worst
    }

    /// The `(act, attn, ff) × L × d` tensor at storage precision.
    pub fn to_tensor(&self) -> Result<InternalStateTensor, StoreError> {
        let layers = self.act.len();
        let dim = self.h0.len();
        let shape = StateShape::new(layers, dim, ChannelSet::ALL)?;
        let values = [&self.act, &self.attn, &self.ff].iter().flat_map(|ch| ch.iter().flatten().map(|&v| v as f32)).collect();
        InternalStateTensor::new(shape, values)
    }
}

impl ToyLm {
    pub fn new(config: ToyLmConfig) -> Result<Self, ToyLmError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::new();
        let (v, d, ff) = (config.vocab_size, config.dim, config.ff_dim());
        let token_embedding = params.add("lm.token_embedding", &[v, d], Init::Normal(1.0), &mut rng);
        let position_embedding = params.add("lm.position_embedding", &[config.context, d], Init::Normal(0.1), &mut rng);
        let blocks = (0..config.layers)
            .map(|i| {
                let n = format!("lm.block{i}");
                let r = &mut rng;
                Block {
                    norm1: Norm::register(&mut params, r, &format!("{n}.norm1"), d),
                    q: Dense::register(&mut params, r, &format!("{n}.q"), d, d, Init::Lecun { fan_in: d }),
                    k: Dense::register(&mut params, r, &format!("{n}.k"), d, d, Init::Lecun { fan_in: d }),
                    v: Dense::register(&mut params, r, &format!("{n}.v"), d, d, Init::Lecun { fan_in: d }),
                    out: Dense::register(&mut params, r, &format!("{n}.out"), d, d, Init::Lecun { fan_in: d }),
                    norm2: Norm::register(&mut params, r, &format!("{n}.norm2"), d),
                    ff1: Dense::register(&mut params, r, &format!("{n}.ff1"), d, ff, Init::He { fan_in: d }),
                    ff2: Dense::register(&mut params, r, &format!("{n}.ff2"), ff, d, Init::Lecun { fan_in: ff }),
                }
            })
            .collect();
        let final_norm = Norm::register(&mut params, &mut rng, "lm.final_norm", d);
        let unembed = Dense::register(&mut params, &mut rng, "lm.unembed", d, v, Init::Lecun { fan_in: d });
        Ok(Self { config, params, token_embedding, position_embedding, blocks, final_norm, unembed })
    }

    /// Same architecture with every parameter set to zero.
    pub fn zeroed(config: ToyLmConfig) -> Result<Self, ToyLmError> {
        let mut lm = Self::new(config)?;
        lm.params.iter_mut().for_each(|p| p.values.iter_mut().for_each(|v| *v = 0.0));
        Ok(lm)
    }

    pub fn config(&self) -> &ToyLmConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn check_tokens(&self, tokens: &[Token]) -> Result<(), ToyLmError> {
        if tokens.is_empty() {
            return Err(ToyLmError::EmptySequence);
        }
        if tokens.len() > self.config.context {
            return Err(ToyLmError::Overlong { len: tokens.len(), context: self.config.context });
        }
        if let Some(&t) = tokens.iter().find(|&&t| t as usize >= self.config.vocab_size) {
            return Err(ToyLmError::OutOfVocabulary { token: t, vocab: self.config.vocab_size });
        }
        Ok(())
    }

    fn attention(&self, g: &mut Graph, params: &ParamStore, b: &Block, x: NodeId, mask: NodeId) -> NodeId {
        let q = b.q.apply(g, params, x);
        let k = b.k.apply(g, params, x);
        let v = b.v.apply(g, params, x);
        let heads = self.config.heads;
        let dh = self.config.dim / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let outs: Vec<NodeId> = (0..heads)
            .map(|h| {
                let qh = g.slice_cols(q, h * dh, dh);
                let kh = g.slice_cols(k, h * dh, dh);
                let vh = g.slice_cols(v, h * dh, dh);
                let kt = g.transpose(kh);
                let s = g.matmul(qh, kt);
                let s = g.scale(s, scale);
                let s = g.add(s, mask);
                let w = g.softmax_rows(s);
                g.matmul(w, vh)
            })
            .collect();
        let joined = if outs.len() == 1 { outs[0] } else { g.concat_cols(&outs) };
        b.out.apply(g, params, joined)
    }

    fn forward(&self, g: &mut Graph, params: &ParamStore, tokens: &[Token]) -> ForwardNodes {
        let t = tokens.len();
        let idx: Vec<usize> = tokens.iter().map(|&x| x as usize).collect();
        let te = g.param(params, self.token_embedding);
        let pe = g.param(params, self.position_embedding);
        let tok = g.embed(te, &idx);
        let pos = g.embed(pe, &(0..t).collect::<Vec<_>>());
        let h0 = g.add(tok, pos);
        let mask = g.input(Tensor::matrix(t, t, (0..t * t).map(|i| if i % t > i / t { MASKED } else { 0.0 }).collect()));
        let mut h = h0;
        let mut layers = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let n1 = b.norm1.apply(g, params, h);
            let a = self.attention(g, params, b, n1, mask);
            let mid = g.add(h, a);
            let n2 = b.norm2.apply(g, params, mid);
            let f = b.ff1.apply(g, params, n2);
            let f = g.relu(f);
            let m = b.ff2.apply(g, params, f);
            h = g.add(mid, m);
            layers.push((a, m, h));
        }
        let mut pick = vec![0.0; t];
        pick[t - 1] = 1.0;
        let pick = g.input(Tensor::matrix(1, t, pick));
        let last = g.matmul(pick, h);
        let last = self.final_norm.apply(g, params, last);
        let logits = self.unembed.apply(g, params, last);
        ForwardNodes { h0, layers, logits }
    }

    /// Next-token distribution at the final position.
    pub fn next_token_distribution(&self, tokens: &[Token]) -> Result<Vec<f64>, ToyLmError> {
        self.check_tokens(tokens)?;
        let mut g = Graph::new();
        let nodes = self.forward(&mut g, &self.params, tokens);
        let p = g.softmax_rows(nodes.logits);
        g.check_finite()?;
        Ok(g.value(p).data().to_vec())
    }

    pub fn run_and_record(&self, tokens: &[Token]) -> Result<Recording, ToyLmError> {
        self.check_tokens(tokens)?;
        let mut g = Graph::new();
        let nodes = self.forward(&mut g, &self.params, tokens);
        let lse = g.logsumexp_rows(nodes.logits);
        let p = g.softmax_rows(nodes.logits);
        g.check_finite()?;
        let d = self.config.dim;
        let last = |g: &Graph, n: NodeId| g.value(n).data()[(tokens.len() - 1) * d..tokens.len() * d].to_vec();
        let logits = g.value(nodes.logits).data();
        let answer = logits.iter().enumerate().fold(0, |best, (i, &v)| if v > logits[best] { i } else { best });
        Ok(Recording {
            distribution: g.value(p).data().to_vec(),
            h0: last(&g, nodes.h0),
            act: nodes.layers.iter().map(|&(_, _, h)| last(&g, h)).collect(),
            attn: nodes.layers.iter().map(|&(a, _, _)| last(&g, a)).collect(),
            ff: nodes.layers.iter().map(|&(_, m, _)| last(&g, m)).collect(),
            answer: answer as Token,
            answer_logprob: logits[answer] - g.value(lse).data()[0],
        })
    }

    /// Argmax next token.
    pub fn predict(&self, tokens: &[Token]) -> Result<Token, ToyLmError> {
        Ok(self.run_and_record(tokens)?.answer)
    }
}

/// Sequences per optimisation step when fitting the key-value table.
pub const TOY_BATCH: usize = 16;
pub const TOY_LEARNING_RATE: f64 = 3e-3;

/// Fits the model to answer each table query with its value, using
/// cross-entropy on the final position over random filler prefixes.
pub fn train_toy_lm(config: ToyLmConfig, table: &KvTable, steps: usize) -> Result<ToyLm, ToyLmError> {
    if table.is_empty() {
        return Err(ToyLmError::EmptyTable);
    }
    if steps == 0 {
        return Err(ToyLmError::Config("steps must be at least 1".into()));
    }
    let mut lm = ToyLm::new(config)?;
    for &(k, v) in table.pairs() {
        lm.check_tokens(&[k, v])?;
    }
    let layout = VocabLayout::new(config.vocab_size)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x6b76_7472);
    let mut adam = Adam::new(&lm.params);
    for step in 0..steps {
        let batch: Vec<(Vec<Token>, Token)> = (0..TOY_BATCH)
            .map(|_| {
                let &(k, v) = table.pairs().choose(&mut rng).unwrap();
                (layout.query(k, config.context, &mut rng), v)
            })
            .collect();
        let mut g = Graph::new();
        let losses: Vec<NodeId> = batch
            .iter()
            .map(|(seq, target)| {
                let nodes = lm.forward(&mut g, &lm.params, seq);
                let lse = g.logsumexp_rows(nodes.logits);
                let picked = g.gather(nodes.logits, vec![*target as usize], vec![1]);
                g.sub(lse, picked)
            })
            .collect();
        let stacked = g.stack(&losses);
        let loss = g.mean(stacked);
        if !g.scalar(loss).is_finite() {
            return Err(ToyLmError::NonFinite { step });
        }
        let grads = g.backward(loss)?;
        adam.step(&mut lm.params, &grads, TOY_LEARNING_RATE, 0.0);
        if !lm.params.all_finite() {
            return Err(ToyLmError::NonFinite { step });
        }
    }
    Ok(lm)
}

/// Fraction of `table` queries answered with the stored value, each query
/// drawn with a fresh random filler prefix.
pub fn table_accuracy(lm: &ToyLm, table: &KvTable, queries_per_key: usize, seed: u64) -> Result<f64, ToyLmError> {
    if table.is_empty() {
        return Err(ToyLmError::EmptyTable);
    }
    let layout = VocabLayout::new(lm.config.vocab_size)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0usize;
    for &(k, v) in table.pairs() {
        for _ in 0..queries_per_key {
            hits += (lm.predict(&layout.query(k, lm.config.context, &mut rng))? == v) as usize;
        }
    }
    Ok(hits as f64 / (table.len() * queries_per_key) as f64)
}
