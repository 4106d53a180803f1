//! Pre-norm transformer encoder with one token per layer of the input.

use rand::Rng;

use crate::graph::{Graph, Init, NodeId, ParamId, ParamStore, Tensor};

const LN_EPS: f64 = 1e-5;

struct Affine {
    w: ParamId,
    b: Option<ParamId>,
}

impl Affine {
    fn register<R: Rng + ?Sized>(store: &mut ParamStore, rng: &mut R, name: &str, fan_in: usize, fan_out: usize, init: Init) -> Self {
        let w = store.add(format!("{name}.w"), &[fan_in, fan_out], init, rng);
        let b = store.add(format!("{name}.b"), &[fan_out], Init::Zeros, rng);
        Self { w, b: Some(b) }
    }

    /// A key bias shifts every score in a softmax row equally, so keys go without.
    fn register_unbiased<R: Rng + ?Sized>(store: &mut ParamStore, rng: &mut R, name: &str, fan_in: usize, fan_out: usize, init: Init) -> Self {
        Self { w: store.add(format!("{name}.w"), &[fan_in, fan_out], init, rng), b: None }
    }

    fn apply(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> NodeId {
        let w = g.param(store, self.w);
        match self.b {
            Some(b) => {
                let b = g.param(store, b);
                g.linear(x, w, b)
            }
            None => g.matmul(x, w),
        }
    }
}

struct Norm {
    gain: ParamId,
    bias: ParamId,
}

impl Norm {
    fn register<R: Rng + ?Sized>(store: &mut ParamStore, rng: &mut R, name: &str, dim: usize) -> Self {
        let gain = store.add(format!("{name}.gain"), &[dim], Init::Ones, rng);
        let bias = store.add(format!("{name}.bias"), &[dim], Init::Zeros, rng);
        Self { gain, bias }
    }

    fn apply(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> NodeId {
        let n = g.layer_norm_rows(x, LN_EPS);
        let gain = g.param(store, self.gain);
        let bias = g.param(store, self.bias);
        let scaled = g.mul_row(n, gain);
        g.add_row(scaled, bias)
    }
}

struct Layer {
    norm1: Norm,
    q: Affine,
    k: Affine,
    v: Affine,
    out: Affine,
    norm2: Norm,
    ff1: Affine,
    ff2: Affine,
}

pub(super) struct TransformerParams {
    input: Option<Affine>,
    position: Option<ParamId>,
    layers: Vec<Layer>,
    final_norm: Norm,
    proj: Affine,
    heads: usize,
    model_dim: usize,
}

pub(super) struct TransformerShape {
    pub tokens: usize,
    pub token_dim: usize,
    pub model_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub embed_dim: usize,
    pub positional: bool,
}

impl TransformerParams {
    pub(super) fn register<R: Rng + ?Sized>(store: &mut ParamStore, rng: &mut R, s: &TransformerShape) -> Self {
        let m = s.model_dim;
        // Tokens already of model width enter unchanged.
        let input = (s.token_dim != m).then(|| Affine::register(store, rng, "enc.input", s.token_dim, m, Init::Lecun { fan_in: s.token_dim }));
        let position = s.positional.then(|| store.add("enc.position", &[s.tokens, m], Init::Normal(0.02), rng));
        let layers = (0..s.layers)
            .map(|i| {
                let n = format!("enc.layer{i}");
                Layer {
                    norm1: Norm::register(store, rng, &format!("{n}.norm1"), m),
                    q: Affine::register(store, rng, &format!("{n}.q"), m, m, Init::Lecun { fan_in: m }),
                    k: Affine::register_unbiased(store, rng, &format!("{n}.k"), m, m, Init::Lecun { fan_in: m }),
                    v: Affine::register(store, rng, &format!("{n}.v"), m, m, Init::Lecun { fan_in: m }),
                    out: Affine::register(store, rng, &format!("{n}.out"), m, m, Init::Lecun { fan_in: m }),
                    norm2: Norm::register(store, rng, &format!("{n}.norm2"), m),
                    ff1: Affine::register(store, rng, &format!("{n}.ff1"), m, s.ff_dim, Init::He { fan_in: m }),
                    ff2: Affine::register(store, rng, &format!("{n}.ff2"), s.ff_dim, m, Init::Lecun { fan_in: s.ff_dim }),
                }
            })
            .collect();
        let final_norm = Norm::register(store, rng, "enc.final_norm", m);
        let proj = Affine::register(store, rng, "enc.proj", m, s.embed_dim, Init::Lecun { fan_in: m });
        Self { input, position, layers, final_norm, proj, heads: s.heads, model_dim: m }
    }

    fn attention(&self, g: &mut Graph, store: &ParamStore, layer: &Layer, x: NodeId) -> NodeId {
        let q = layer.q.apply(g, store, x);
        let k = layer.k.apply(g, store, x);
        let v = layer.v.apply(g, store, x);
        let dh = self.model_dim / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let heads: Vec<NodeId> = (0..self.heads)
            .map(|h| {
                let qh = g.slice_cols(q, h * dh, dh);
                let kh = g.slice_cols(k, h * dh, dh);
                let vh = g.slice_cols(v, h * dh, dh);
                let kt = g.transpose(kh);
                let scores = g.matmul(qh, kt);
                let scores = g.scale(scores, scale);
                let weights = g.softmax_rows(scores);
                g.matmul(weights, vh)
            })
            .collect();
        let joined = if heads.len() == 1 { heads[0] } else { g.concat_cols(&heads) };
        layer.out.apply(g, store, joined)
    }

    /// `x` is an `(L × C·d)` token matrix; returns the `(1 × embed_dim)` embedding.
    pub(super) fn forward(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> NodeId {
        let tokens = g.shape(x)[0];
        let mut h = match &self.input {
            Some(a) => a.apply(g, store, x),
            None => x,
        };
        if let Some(p) = self.position {
            let p = g.param(store, p);
            h = g.add(h, p);
        }
        for layer in &self.layers {
            let n = layer.norm1.apply(g, store, h);
            let a = self.attention(g, store, layer, n);
            h = g.add(h, a);
            let n = layer.norm2.apply(g, store, h);
            let f = layer.ff1.apply(g, store, n);
            let f = g.relu(f);
            let f = layer.ff2.apply(g, store, f);
            h = g.add(h, f);
        }
        let h = self.final_norm.apply(g, store, h);
        let avg = g.input(Tensor::matrix(1, tokens, vec![1.0 / tokens as f64; tokens]));
        let pooled = g.matmul(avg, h);
        self.proj.apply(g, store, pooled)
    }
}
