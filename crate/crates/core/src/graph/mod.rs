//! Minimal reverse-mode differentiation over small dense tensors.
//!
//! A [`Graph`] is a computation record: every primitive applied during the
//! forward pass is appended together with whatever intermediates its backward
//! rule needs. [`Graph::backward`] consumes the record and walks it in exact
//! reverse order, returning a gradient for every parameter that contributed to
//! the scalar loss.
//!
//! Shapes follow row-major conventions. Row-wise primitives (softmax,
//! log-sum-exp, layer norm) operate over the last axis. Convolutions take a
//! single `(C, H, W)` sample; batching is expressed by building one sub-graph
//! per sample and stacking the results.

mod check;
mod optim;
mod params;
mod tensor;

use rand::Rng;
use thiserror::Error;

pub use check::{finite_difference_check, FdReport};
pub use optim::{sgd_step, Adam};
pub use params::{Gradients, Init, ParamId, ParamStore, Parameter};
pub use tensor::Tensor;

use tensor::{matmul, matmul_at, matmul_bt, transpose, ConvGeometry};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("non-finite value produced by `{op}` at node {node}")]
    NonFinite { op: &'static str, node: usize },
    #[error("finite-difference epsilon must lie in (0, 1e-2], got {0}")]
    BadEpsilon(f64),
    #[error("the checked function applies dropout; disable dropout before a finite-difference check")]
    DropoutEnabled,
}

/// Handle to a value recorded in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

enum Op {
    Leaf,
    Param(ParamId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Affine(NodeId, f64),
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    AddRow(NodeId, NodeId),
    MulRow(NodeId, NodeId),
    Relu(NodeId),
    Sigmoid(NodeId),
    ClampLog(NodeId, f64),
    SoftmaxRows(NodeId),
    LogSumExpRows(NodeId),
    LayerNormRows { x: NodeId, xhat: Vec<f64>, inv_std: Vec<f64> },
    Reshape(NodeId),
    SliceCols(NodeId, usize),
    ConcatCols(Vec<NodeId>),
    Stack(Vec<NodeId>),
    Gather(NodeId, Vec<usize>),
    Sum(NodeId),
    Mean(NodeId),
    Conv2d { x: NodeId, w: NodeId, b: NodeId, geom: ConvGeometry, patches: Vec<f64> },
    GlobalAvgPool(NodeId),
    Dropout(NodeId, Vec<f64>),
    L2Normalize { x: NodeId, norm: f64 },
    Embed { table: NodeId, indices: Vec<usize> },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "input",
            Op::Param(_) => "param",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Affine(..) => "affine",
            Op::MatMul(..) => "matmul",
            Op::Transpose(_) => "transpose",
            Op::AddRow(..) => "add_row",
            Op::MulRow(..) => "mul_row",
            Op::Relu(_) => "relu",
            Op::Sigmoid(_) => "sigmoid",
            Op::ClampLog(..) => "log",
            Op::SoftmaxRows(_) => "softmax",
            Op::LogSumExpRows(_) => "logsumexp",
            Op::LayerNormRows { .. } => "layer_norm",
            Op::Reshape(_) => "reshape",
            Op::SliceCols(..) => "slice_cols",
            Op::ConcatCols(_) => "concat_cols",
            Op::Stack(_) => "stack",
            Op::Gather(..) => "gather",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::Conv2d { .. } => "conv2d",
            Op::GlobalAvgPool(_) => "global_avg_pool",
            Op::Dropout(..) => "dropout",
            Op::L2Normalize { .. } => "l2_normalize",
            Op::Embed { .. } => "embed",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// A single forward computation record.
pub struct Graph {
    nodes: Vec<Node>,
    param_nodes: Vec<Option<NodeId>>,
    first_non_finite: Option<(usize, &'static str)>,
    dropout_active: bool,
    track_kinks: bool,
    kink_signature: u64,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            param_nodes: Vec::new(),
            first_non_finite: None,
            dropout_active: false,
            track_kinks: false,
            kink_signature: 0xcbf2_9ce4_8422_2325,
        }
    }

    /// Records a hash of every non-differentiable branch taken (ReLU sign,
    /// log clamp, zero-norm guard) so a finite-difference checker can tell
    /// when a perturbation crossed a kink.
    pub(crate) fn with_kink_tracking() -> Self {
        Self { track_kinks: true, ..Self::new() }
    }

    pub(crate) fn kink_signature(&self) -> u64 {
        self.kink_signature
    }

    pub fn dropout_active(&self) -> bool {
        self.dropout_active
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    /// First scalar of a node; intended for loss values.
    pub fn scalar(&self, id: NodeId) -> f64 {
        self.nodes[id.0].value.data()[0]
    }

    /// Fails with the originating primitive if any recorded value is non-finite.
    pub fn check_finite(&self) -> Result<(), GraphError> {
        match self.first_non_finite {
            Some((node, op)) => Err(GraphError::NonFinite { op, node }),
            None => Ok(()),
        }
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        let requires_grad = match &op {
            Op::Leaf => false,
            Op::Param(_) => true,
            other => parents(other).iter().any(|p| self.nodes[p.0].requires_grad),
        };
        let idx = self.nodes.len();
        if self.first_non_finite.is_none() && !value.is_finite() {
            self.first_non_finite = Some((idx, op.name()));
        }
        self.nodes.push(Node { value, op, requires_grad });
        NodeId(idx)
    }

    fn kink(&mut self, bit: bool) {
        if self.track_kinks {
            self.kink_signature = (self.kink_signature ^ (bit as u64 + 1)).wrapping_mul(0x0100_0000_01b3);
        }
    }

    fn data(&self, id: NodeId) -> &[f64] {
        self.nodes[id.0].value.data()
    }

    // ---- leaves ----

    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf)
    }

    /// Inserts a parameter; repeated calls for the same id reuse one node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        if let Some(Some(node)) = self.param_nodes.get(id.0) {
            return *node;
        }
        let p = store.get(id);
        let node = self.push(Tensor::new(p.shape.clone(), p.values.clone()), Op::Param(id));
        if self.param_nodes.len() <= id.0 {
            self.param_nodes.resize(id.0 + 1, None);
        }
        self.param_nodes[id.0] = Some(node);
        node
    }

    // ---- elementwise ----

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.shape(a), self.shape(b), "add shape mismatch");
        let v: Vec<f64> = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x + y).collect();
        let shape = self.shape(a).to_vec();
        self.push(Tensor::new(shape, v), Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.shape(a), self.shape(b), "sub shape mismatch");
        let v: Vec<f64> = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x - y).collect();
        let shape = self.shape(a).to_vec();
        self.push(Tensor::new(shape, v), Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.shape(a), self.shape(b), "mul shape mismatch");
        let v: Vec<f64> = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x * y).collect();
        let shape = self.shape(a).to_vec();
        self.push(Tensor::new(shape, v), Op::Mul(a, b))
    }

    /// `scale * x + shift`, elementwise.
    pub fn affine(&mut self, x: NodeId, scale: f64, shift: f64) -> NodeId {
        let v: Vec<f64> = self.data(x).iter().map(|v| scale * v + shift).collect();
        let shape = self.shape(x).to_vec();
        self.push(Tensor::new(shape, v), Op::Affine(x, scale))
    }

    pub fn scale(&mut self, x: NodeId, s: f64) -> NodeId {
        self.affine(x, s, 0.0)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let v: Vec<f64> = self.data(x).iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
        if self.track_kinks {
            let bits: Vec<bool> = self.data(x).iter().map(|&v| v > 0.0).collect();
            bits.into_iter().for_each(|b| self.kink(b));
        }
        let shape = self.shape(x).to_vec();
        self.push(Tensor::new(shape, v), Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let v: Vec<f64> = self.data(x).iter().map(|&v| sigmoid(v)).collect();
        let shape = self.shape(x).to_vec();
        self.push(Tensor::new(shape, v), Op::Sigmoid(x))
    }

    /// Natural log of `max(x, floor)`; the gradient is zero where clamped.
    pub fn log_clamped(&mut self, x: NodeId, floor: f64) -> NodeId {
        let v: Vec<f64> = self.data(x).iter().map(|&v| v.max(floor).ln()).collect();
        if self.track_kinks {
            let bits: Vec<bool> = self.data(x).iter().map(|&v| v > floor).collect();
            bits.into_iter().for_each(|b| self.kink(b));
        }
        let shape = self.shape(x).to_vec();
        self.push(Tensor::new(shape, v), Op::ClampLog(x, floor))
    }

    /// Inverted dropout: kept units are scaled by `1 / (1 - rate)`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: NodeId, rate: f64, rng: &mut R) -> NodeId {
        assert!((0.0..1.0).contains(&rate));
        if rate == 0.0 {
            return x;
        }
        self.dropout_active = true;
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..self.value(x).len()).map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep }).collect();
        let v: Vec<f64> = self.data(x).iter().zip(&mask).map(|(a, m)| a * m).collect();
        let shape = self.shape(x).to_vec();
        self.push(Tensor::new(shape, v), Op::Dropout(x, mask))
    }

    // ---- linear algebra ----

    /// `a (m×k) · b (k×n)`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (m, k) = matrix_dims(self.shape(a));
        let (k2, n) = matrix_dims(self.shape(b));
        assert_eq!(k, k2, "matmul inner dimension mismatch");
        let v = matmul(self.data(a), self.data(b), m, k, n);
        self.push(Tensor::matrix(m, n, v), Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let (m, n) = matrix_dims(self.shape(a));
        let v = transpose(self.data(a), m, n);
        self.push(Tensor::matrix(n, m, v), Op::Transpose(a))
    }

    /// Adds a length-n vector to every row of an (m×n) matrix.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        let (_, n) = self.value(a).rows_cols();
        assert_eq!(self.value(row).len(), n, "add_row width mismatch");
        let r = self.data(row).to_vec();
        let v: Vec<f64> = self.data(a).chunks(n).flat_map(|c| c.iter().zip(&r).map(|(x, y)| x + y)).collect();
        let shape = self.shape(a).to_vec();
        self.push(Tensor::new(shape, v), Op::AddRow(a, row))
    }

    /// Multiplies every row of an (m×n) matrix by a length-n vector.
    pub fn mul_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        let (_, n) = self.value(a).rows_cols();
        assert_eq!(self.value(row).len(), n, "mul_row width mismatch");
        let r = self.data(row).to_vec();
        let v: Vec<f64> = self.data(a).chunks(n).flat_map(|c| c.iter().zip(&r).map(|(x, y)| x * y)).collect();
        let shape = self.shape(a).to_vec();
        self.push(Tensor::new(shape, v), Op::MulRow(a, row))
    }

    /// `x · W + b` for `x` of shape (m×k), `W` (k×n), `b` (n).
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> NodeId {
        let xw = self.matmul(x, w);
        self.add_row(xw, b)
    }

    // ---- row-wise reductions ----

    pub fn softmax_rows(&mut self, x: NodeId) -> NodeId {
        let (_, n) = self.value(x).rows_cols();
        let mut v = self.data(x).to_vec();
        v.chunks_mut(n).for_each(softmax_in_place);
        let shape = self.shape(x).to_vec();
        self.push(Tensor::new(shape, v), Op::SoftmaxRows(x))
    }

    /// One log-sum-exp per row; output has one entry per row.
    pub fn logsumexp_rows(&mut self, x: NodeId) -> NodeId {
        let (_, n) = self.value(x).rows_cols();
        let v: Vec<f64> = self.data(x).chunks(n).map(logsumexp).collect();
        self.push(Tensor::vector(v), Op::LogSumExpRows(x))
    }

    /// Normalises each row to zero mean, unit variance (no affine part).
    pub fn layer_norm_rows(&mut self, x: NodeId, eps: f64) -> NodeId {
        let (_, n) = self.value(x).rows_cols();
        let mut xhat = Vec::with_capacity(self.value(x).len());
        let mut inv_std = Vec::new();
        for row in self.data(x).chunks(n) {
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std.push(is);
            xhat.extend(row.iter().map(|v| (v - mean) * is));
        }
        let shape = self.shape(x).to_vec();
        let value = Tensor::new(shape, xhat.clone());
        self.push(value, Op::LayerNormRows { x, xhat, inv_std })
    }

    // ---- shape manipulation ----

    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> NodeId {
        let v = self.data(x).to_vec();
        self.push(Tensor::new(shape, v), Op::Reshape(x))
    }

    /// Columns `[start, start + width)` of a matrix.
    pub fn slice_cols(&mut self, x: NodeId, start: usize, width: usize) -> NodeId {
        let (m, n) = matrix_dims(self.shape(x));
        assert!(start + width <= n);
        let v: Vec<f64> = self.data(x).chunks(n).flat_map(|r| r[start..start + width].iter().copied()).collect();
        self.push(Tensor::matrix(m, width, v), Op::SliceCols(x, start))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        let m = matrix_dims(self.shape(parts[0])).0;
        let widths: Vec<usize> = parts
            .iter()
            .map(|&p| {
                let (pm, pn) = matrix_dims(self.shape(p));
                assert_eq!(pm, m, "concat_cols row mismatch");
                pn
            })
            .collect();
        let total: usize = widths.iter().sum();
        let mut v = Vec::with_capacity(m * total);
        for i in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                v.extend_from_slice(&self.data(p)[i * w..(i + 1) * w]);
            }
        }
        self.push(Tensor::matrix(m, total, v), Op::ConcatCols(parts.to_vec()))
    }

    /// Stacks equally shaped nodes along a new leading axis.
    pub fn stack(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let inner = self.shape(parts[0]).to_vec();
        let mut v = Vec::with_capacity(parts.len() * self.value(parts[0]).len());
        for &p in parts {
            assert_eq!(self.shape(p), inner.as_slice(), "stack shape mismatch");
            v.extend_from_slice(self.data(p));
        }
        let mut shape = vec![parts.len()];
        shape.extend(inner);
        self.push(Tensor::new(shape, v), Op::Stack(parts.to_vec()))
    }

    /// Picks flat indices of `x` into a new tensor of the given shape.
    pub fn gather(&mut self, x: NodeId, indices: Vec<usize>, shape: Vec<usize>) -> NodeId {
        let src = self.data(x);
        let v: Vec<f64> = indices.iter().map(|&i| src[i]).collect();
        self.push(Tensor::new(shape, v), Op::Gather(x, indices))
    }

    /// Rows of an embedding table `(V×d)` selected by token index.
    pub fn embed(&mut self, table: NodeId, indices: &[usize]) -> NodeId {
        let (vocab, d) = matrix_dims(self.shape(table));
        let src = self.data(table);
        let mut v = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            assert!(i < vocab, "embedding index out of range");
            v.extend_from_slice(&src[i * d..(i + 1) * d]);
        }
        self.push(Tensor::matrix(indices.len(), d, v), Op::Embed { table, indices: indices.to_vec() })
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let s = self.data(x).iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let n = self.value(x).len() as f64;
        let s = self.data(x).iter().sum::<f64>() / n;
        self.push(Tensor::scalar(s), Op::Mean(x))
    }

    /// Dot product of two equally sized nodes, as a scalar.
    pub fn dot(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let p = self.mul(a, b);
        self.sum(p)
    }

    // ---- convolution ----

    /// 2-D convolution of one `(C, H, W)` sample with weights `(O, C, kh, kw)`
    /// and bias `(O)`, zero padding.
    pub fn conv2d(&mut self, x: NodeId, w: NodeId, b: NodeId, stride: usize, pad: usize) -> NodeId {
        let [c, h, wd]: [usize; 3] = self.shape(x).try_into().expect("conv2d input must be (C, H, W)");
        let [o, wc, kh, kw]: [usize; 4] = self.shape(w).try_into().expect("conv2d weight must be 4-D");
        assert_eq!(c, wc, "conv2d channel mismatch");
        assert_eq!(self.value(b).len(), o);
        let geom = ConvGeometry::new([c, h, wd], [kh, kw], stride, pad);
        let patches = geom.im2row(self.data(x));
        let k = geom.patch_len();
        let p = geom.positions();
        let mut v = matmul_bt(self.data(w), &patches, o, k, p);
        for (row, bias) in v.chunks_mut(p).zip(self.data(b)) {
            row.iter_mut().for_each(|x| *x += bias);
        }
        let value = Tensor::new(vec![o, geom.out_h, geom.out_w], v);
        self.push(value, Op::Conv2d { x, w, b, geom, patches })
    }

    /// Averages each channel of a `(C, H, W)` map, giving a length-C vector.
    pub fn global_avg_pool(&mut self, x: NodeId) -> NodeId {
        let c = self.shape(x)[0];
        let hw = self.value(x).len() / c;
        let v: Vec<f64> = self.data(x).chunks(hw).map(|ch| ch.iter().sum::<f64>() / hw as f64).collect();
        self.push(Tensor::vector(v), Op::GlobalAvgPool(x))
    }

    /// Scales a vector to unit L2 norm. An exactly-zero vector maps to the
    /// first basis vector and passes no gradient.
    pub fn l2_normalize(&mut self, x: NodeId) -> NodeId {
        let norm = self.data(x).iter().map(|v| v * v).sum::<f64>().sqrt();
        self.kink(norm > 0.0);
        let v: Vec<f64> = if norm > 0.0 {
            self.data(x).iter().map(|v| v / norm).collect()
        } else {
            let mut e = vec![0.0; self.value(x).len()];
            e[0] = 1.0;
            e
        };
        let shape = self.shape(x).to_vec();
        self.push(Tensor::new(shape, v), Op::L2Normalize { x, norm })
    }

    // ---- backward ----

    /// Consumes the record and returns exact reverse-mode gradients of the
    /// scalar `loss` for every parameter that reached it.
    pub fn backward(self, loss: NodeId) -> Result<Gradients, GraphError> {
        self.check_finite()?;
        if self.value(loss).len() != 1 {
            return Err(GraphError::NonScalarLoss(self.shape(loss).to_vec()));
        }
        let n_params = self.param_nodes.len();
        let mut out = Gradients { per_param: vec![None; n_params] };
        let mut grads: Vec<Option<Vec<f64>>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let mut send = |target: NodeId, delta: Vec<f64>| {
                if self.nodes[target.0].requires_grad {
                    accumulate(&mut grads[target.0], delta);
                }
            };
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => out.per_param[id.0] = Some(g),
                Op::Add(a, b) => {
                    send(*a, g.clone());
                    send(*b, g);
                }
                Op::Sub(a, b) => {
                    send(*b, g.iter().map(|v| -v).collect());
                    send(*a, g);
                }
                Op::Mul(a, b) => {
                    let da = g.iter().zip(self.data(*b)).map(|(x, y)| x * y).collect();
                    let db = g.iter().zip(self.data(*a)).map(|(x, y)| x * y).collect();
                    send(*a, da);
                    send(*b, db);
                }
                Op::Affine(x, s) => send(*x, g.iter().map(|v| v * s).collect()),
                Op::MatMul(a, b) => {
                    let (m, k) = matrix_dims(self.shape(*a));
                    let n = matrix_dims(self.shape(*b)).1;
                    if self.nodes[a.0].requires_grad {
                        send(*a, matmul_bt(&g, self.data(*b), m, n, k));
                    }
                    if self.nodes[b.0].requires_grad {
                        send(*b, matmul_at(self.data(*a), &g, m, k, n));
                    }
                }
                Op::Transpose(a) => {
                    let (m, n) = matrix_dims(self.shape(*a));
                    send(*a, transpose(&g, n, m));
                }
                Op::AddRow(a, row) => {
                    let n = self.value(*row).len();
                    let mut dr = vec![0.0; n];
                    for chunk in g.chunks(n) {
                        dr.iter_mut().zip(chunk).for_each(|(d, v)| *d += v);
                    }
                    send(*row, dr);
                    send(*a, g);
                }
                Op::MulRow(a, row) => {
                    let n = self.value(*row).len();
                    let r = self.data(*row);
                    let mut dr = vec![0.0; n];
                    let mut da = Vec::with_capacity(g.len());
                    for (gc, ac) in g.chunks(n).zip(self.data(*a).chunks(n)) {
                        for j in 0..n {
                            dr[j] += gc[j] * ac[j];
                            da.push(gc[j] * r[j]);
                        }
                    }
                    send(*row, dr);
                    send(*a, da);
                }
                Op::Relu(x) => {
                    let d = g.iter().zip(self.data(*x)).map(|(gv, &xv)| if xv > 0.0 { *gv } else { 0.0 }).collect();
                    send(*x, d);
                }
                Op::Sigmoid(x) => {
                    let y = node.value.data();
                    send(*x, g.iter().zip(y).map(|(gv, yv)| gv * yv * (1.0 - yv)).collect());
                }
                Op::ClampLog(x, floor) => {
                    let d = g.iter().zip(self.data(*x)).map(|(gv, &xv)| if xv > *floor { gv / xv } else { 0.0 }).collect();
                    send(*x, d);
                }
                Op::SoftmaxRows(x) => {
                    let (_, n) = node.value.rows_cols();
                    let mut d = Vec::with_capacity(g.len());
                    for (gc, yc) in g.chunks(n).zip(node.value.data().chunks(n)) {
                        let s: f64 = gc.iter().zip(yc).map(|(a, b)| a * b).sum();
                        d.extend(gc.iter().zip(yc).map(|(gv, yv)| yv * (gv - s)));
                    }
                    send(*x, d);
                }
                Op::LogSumExpRows(x) => {
                    let (_, n) = self.value(*x).rows_cols();
                    let mut d = Vec::with_capacity(self.value(*x).len());
                    for (row, (gv, lse)) in self.data(*x).chunks(n).zip(g.iter().zip(node.value.data())) {
                        d.extend(row.iter().map(|v| gv * (v - lse).exp()));
                    }
                    send(*x, d);
                }
                Op::LayerNormRows { x, xhat, inv_std } => {
                    let n = xhat.len() / inv_std.len();
                    let mut d = Vec::with_capacity(xhat.len());
                    for ((gc, hc), is) in g.chunks(n).zip(xhat.chunks(n)).zip(inv_std) {
                        let mg = gc.iter().sum::<f64>() / n as f64;
                        let mgh = gc.iter().zip(hc).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                        d.extend(gc.iter().zip(hc).map(|(gv, hv)| is * (gv - mg - hv * mgh)));
                    }
                    send(*x, d);
                }
                Op::Reshape(x) => send(*x, g),
                Op::SliceCols(x, start) => {
                    let (m, n) = matrix_dims(self.shape(*x));
                    let w = node.value.shape()[1];
                    let mut d = vec![0.0; m * n];
                    for i in 0..m {
                        d[i * n + start..i * n + start + w].copy_from_slice(&g[i * w..(i + 1) * w]);
                    }
                    send(*x, d);
                }
                Op::ConcatCols(parts) => {
                    let (m, total) = matrix_dims(node.value.shape());
                    let mut offset = 0;
                    for &p in parts {
                        let w = matrix_dims(self.shape(p)).1;
                        let mut d = Vec::with_capacity(m * w);
                        for i in 0..m {
                            d.extend_from_slice(&g[i * total + offset..i * total + offset + w]);
                        }
                        offset += w;
                        send(p, d);
                    }
                }
                Op::Stack(parts) => {
                    let inner = self.value(parts[0]).len();
                    for (i, &p) in parts.iter().enumerate() {
                        send(p, g[i * inner..(i + 1) * inner].to_vec());
                    }
                }
                Op::Gather(x, indices) => {
                    let mut d = vec![0.0; self.value(*x).len()];
                    for (&i, gv) in indices.iter().zip(&g) {
                        d[i] += gv;
                    }
                    send(*x, d);
                }
                Op::Embed { table, indices } => {
                    let d_model = self.shape(*table)[1];
                    let mut d = vec![0.0; self.value(*table).len()];
                    for (row, &i) in indices.iter().enumerate() {
                        for j in 0..d_model {
                            d[i * d_model + j] += g[row * d_model + j];
                        }
                    }
                    send(*table, d);
                }
                Op::Sum(x) => send(*x, vec![g[0]; self.value(*x).len()]),
                Op::Mean(x) => {
                    let n = self.value(*x).len();
                    send(*x, vec![g[0] / n as f64; n]);
                }
                Op::Conv2d { x, w, b, geom, patches } => {
                    let o = self.shape(*w)[0];
                    let k = geom.patch_len();
                    let p = geom.positions();
                    if self.nodes[b.0].requires_grad {
                        send(*b, g.chunks(p).map(|r| r.iter().sum()).collect());
                    }
                    if self.nodes[w.0].requires_grad {
                        send(*w, matmul(&g, patches, o, p, k));
                    }
                    if self.nodes[x.0].requires_grad {
                        let gt = transpose(&g, o, p);
                        let dpatch = matmul(&gt, self.data(*w), p, o, k);
                        send(*x, geom.row2im(&dpatch));
                    }
                }
                Op::GlobalAvgPool(x) => {
                    let c = self.shape(*x)[0];
                    let hw = self.value(*x).len() / c;
                    let d = g.iter().flat_map(|gv| std::iter::repeat_n(gv / hw as f64, hw)).collect();
                    send(*x, d);
                }
                Op::Dropout(x, mask) => send(*x, g.iter().zip(mask).map(|(a, m)| a * m).collect()),
                Op::L2Normalize { x, norm } => {
                    if *norm > 0.0 {
                        let y = node.value.data();
                        let yg: f64 = y.iter().zip(&g).map(|(a, b)| a * b).sum();
                        send(*x, g.iter().zip(y).map(|(gv, yv)| (gv - yv * yg) / norm).collect());
                    }
                }
            }
        }
        Ok(out)
    }
}

fn parents(op: &Op) -> Vec<NodeId> {
    match op {
        Op::Leaf | Op::Param(_) => vec![],
        Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::MatMul(a, b) | Op::AddRow(a, b) | Op::MulRow(a, b) => {
            vec![*a, *b]
        }
        Op::Affine(x, _)
        | Op::Transpose(x)
        | Op::Relu(x)
        | Op::Sigmoid(x)
        | Op::ClampLog(x, _)
        | Op::SoftmaxRows(x)
        | Op::LogSumExpRows(x)
        | Op::Reshape(x)
        | Op::SliceCols(x, _)
        | Op::Gather(x, _)
        | Op::Sum(x)
        | Op::Mean(x)
        | Op::GlobalAvgPool(x)
        | Op::Dropout(x, _) => vec![*x],
        Op::LayerNormRows { x, .. } | Op::L2Normalize { x, .. } => vec![*x],
        Op::Embed { table, .. } => vec![*table],
        Op::ConcatCols(parts) | Op::Stack(parts) => parts.clone(),
        Op::Conv2d { x, w, b, .. } => vec![*x, *w, *b],
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, delta: Vec<f64>) {
    match slot {
        Some(acc) => acc.iter_mut().zip(&delta).for_each(|(a, d)| *a += d),
        None => *slot = Some(delta),
    }
}

fn matrix_dims(shape: &[usize]) -> (usize, usize) {
    match shape {
        [m, n] => (*m, *n),
        [n] => (1, *n),
        other => panic!("expected a matrix, got shape {other:?}"),
    }
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    row.iter_mut().for_each(|v| *v /= s);
}

/// Runs `f` on a fresh record and returns the scalar output with its
/// parameter gradients.
pub fn evaluate_with_gradients<F>(store: &ParamStore, f: F) -> Result<(f64, Gradients), GraphError>
where
    F: FnOnce(&mut Graph, &ParamStore) -> NodeId,
{
    let mut g = Graph::new();
    let out = f(&mut g, store);
    let value = g.scalar(out);
    let grads = g.backward(out)?;
    Ok((value, grads))
}

#[cfg(test)]
mod tests;
