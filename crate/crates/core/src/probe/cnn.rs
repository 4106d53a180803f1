//! Residual convolutional encoder over the (layer × feature) plane, with the
//! state types as input channels.

use rand::Rng;

use crate::graph::{Graph, Init, NodeId, ParamId, ParamStore};

struct Conv {
    w: ParamId,
    b: ParamId,
    stride: usize,
    pad: usize,
}

impl Conv {
    fn register<R: Rng + ?Sized>(store: &mut ParamStore, rng: &mut R, name: &str, in_c: usize, out_c: usize, k: usize, stride: usize) -> Self {
        let w = store.add(format!("{name}.w"), &[out_c, in_c, k, k], Init::He { fan_in: in_c * k * k }, rng);
        let b = store.add(format!("{name}.b"), &[out_c], Init::Zeros, rng);
        Self { w, b, stride, pad: k / 2 }
    }

    fn apply(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> NodeId {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        g.conv2d(x, w, b, self.stride, self.pad)
    }
}

struct Block {
    conv1: Conv,
    conv2: Conv,
    shortcut: Option<Conv>,
}

pub(super) struct CnnParams {
    stem: Conv,
    blocks: Vec<Block>,
    proj_w: ParamId,
    proj_b: ParamId,
}

impl CnnParams {
    pub(super) fn register<R: Rng + ?Sized>(store: &mut ParamStore, rng: &mut R, in_channels: usize, channels: &[usize], embed_dim: usize) -> Self {
        let stem = Conv::register(store, rng, "enc.stem", in_channels, channels[0], 3, 1);
        let mut blocks = Vec::with_capacity(channels.len());
        let mut prev = channels[0];
        for (i, &c) in channels.iter().enumerate() {
            let stride = if i == 0 { 1 } else { 2 };
            let name = format!("enc.block{i}");
            let conv1 = Conv::register(store, rng, &format!("{name}.conv1"), prev, c, 3, stride);
            let conv2 = Conv::register(store, rng, &format!("{name}.conv2"), c, c, 3, 1);
            let shortcut = (stride != 1 || prev != c).then(|| Conv::register(store, rng, &format!("{name}.shortcut"), prev, c, 1, stride));
            blocks.push(Block { conv1, conv2, shortcut });
            prev = c;
        }
        let proj_w = store.add("enc.proj.w", &[prev, embed_dim], Init::Lecun { fan_in: prev }, rng);
        let proj_b = store.add("enc.proj.b", &[embed_dim], Init::Zeros, rng);
        Self { stem, blocks, proj_w, proj_b }
    }

    /// `x` is a `(C, L, d)` input; returns the un-normalised `(1 × embed_dim)` embedding.
    pub(super) fn forward(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> NodeId {
        let s = self.stem.apply(g, store, x);
        let mut h = g.relu(s);
        for block in &self.blocks {
            let y = block.conv1.apply(g, store, h);
            let y = g.relu(y);
            let y = block.conv2.apply(g, store, y);
            let skip = match &block.shortcut {
                Some(conv) => conv.apply(g, store, h),
                None => h,
            };
            let sum = g.add(y, skip);
            h = g.relu(sum);
        }
        let pooled = g.global_avg_pool(h);
        let w = g.param(store, self.proj_w);
        let b = g.param(store, self.proj_b);
        g.linear(pooled, w, b)
    }
}
