//! Define-by-run reverse-mode automatic differentiation.
//!
//! A [`Graph`] is rebuilt for every forward pass: each operation appends a
//! node holding its output value, so node order is already topological and
//! one reverse sweep computes all gradients. Gradients accumulate additively
//! across fan-out. A graph can be swept backward exactly once.

use std::collections::HashMap;

use super::kernels;
use super::{Scalar, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op<S: Scalar> {
    Leaf,
    Matmul { a: Var, b: Var, trans_b: bool },
    Linear { x: Var, w: Var, b: Var },
    Conv2d { x: Var, w: Var, stride: usize, pad: usize, cols: Tensor<S> },
    AddChannelBias { x: Var, b: Var },
    Relu { x: Var },
    Gelu { x: Var },
    SoftmaxRows { x: Var },
    LayerNormRows { x: Var, rstd: Vec<S> },
    Mha { q: Var, k: Var, v: Var, batch: usize, seq: usize, heads: usize, att: Tensor<S> },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, c: S },
    AddRowBias { x: Var, b: Var },
    MulRow { x: Var, b: Var },
    GatherRows { x: Var, idx: Vec<u32> },
    ConcatRows { a: Var, b: Var },
    Patches { x: Var, ps: usize },
    MeanPoolGroups { x: Var, group: usize },
    Reshape { x: Var },
    SumAll { x: Var },
}

impl<S: Scalar> Op<S> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Matmul { .. } => "matmul",
            Op::Linear { .. } => "linear",
            Op::Conv2d { .. } => "conv2d",
            Op::AddChannelBias { .. } => "add_channel_bias",
            Op::Relu { .. } => "relu",
            Op::Gelu { .. } => "gelu",
            Op::SoftmaxRows { .. } => "softmax_rows",
            Op::LayerNormRows { .. } => "layernorm_rows",
            Op::Mha { .. } => "mha",
            Op::Add { .. } => "add",
            Op::Sub { .. } => "sub",
            Op::Mul { .. } => "mul",
            Op::Scale { .. } => "scale",
            Op::AddRowBias { .. } => "add_row_bias",
            Op::MulRow { .. } => "mul_row",
            Op::GatherRows { .. } => "gather_rows",
            Op::ConcatRows { .. } => "concat_rows",
            Op::Patches { .. } => "patches",
            Op::MeanPoolGroups { .. } => "mean_pool_groups",
            Op::Reshape { .. } => "reshape",
            Op::SumAll { .. } => "sum_all",
        }
    }
}

struct Node<S: Scalar> {
    value: Tensor<S>,
    requires: bool,
    op: Op<S>,
}

pub struct Graph<S: Scalar = f32> {
    nodes: Vec<Node<S>>,
    keyed: HashMap<usize, Var>,
    grads: Vec<Option<Tensor<S>>>,
    consumed: bool,
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), keyed: HashMap::new(), grads: Vec::new(), consumed: false }
    }

    fn push(&mut self, value: Tensor<S>, requires: bool, op: Op<S>) -> Var {
        debug_assert!(
            value.all_finite(),
            "graph op '{}' produced non-finite values",
            op.name()
        );
        assert!(!self.consumed, "graph: cannot record new ops after backward");
        self.nodes.push(Node { value, requires, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor<S>, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<S>) -> Var {
        self.leaf(value, false)
    }

    /// Memoized leaf: repeated calls with the same key return the same node,
    /// so fan-out through shared parameters accumulates into one gradient.
    pub fn leaf_keyed(&mut self, key: usize, value: &Tensor<S>, requires_grad: bool) -> Var {
        if let Some(&v) = self.keyed.get(&key) {
            return v;
        }
        let v = self.leaf(value.clone(), requires_grad);
        self.keyed.insert(key, v);
        v
    }

    #[inline]
    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    /// Gradient of the loss w.r.t. `v`; None before backward or when no
    /// gradient reached the node.
    pub fn grad(&self, v: Var) -> Option<&Tensor<S>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradients of all keyed leaves, for harvesting into a parameter store.
    pub fn keyed_grads(&self) -> impl Iterator<Item = (usize, Option<&Tensor<S>>)> {
        self.keyed.iter().map(move |(&key, &var)| (key, self.grad(var)))
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn requires(&self, v: Var) -> bool {
        self.nodes[v.0].requires
    }

    // -- op builders --------------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = kernels::matmul(self.value(a), self.value(b), false);
        let req = self.requires(a) || self.requires(b);
        self.push(value, req, Op::Matmul { a, b, trans_b: false })
    }

    /// a . bᵀ with b stored row-major [n, k].
    pub fn matmul_tb(&mut self, a: Var, b: Var) -> Var {
        let value = kernels::matmul(self.value(a), self.value(b), true);
        let req = self.requires(a) || self.requires(b);
        self.push(value, req, Op::Matmul { a, b, trans_b: true })
    }

    /// Fused x . W + bias (bias broadcast over rows); one output buffer,
    /// no intermediate.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let (rows, k) = (self.value(x).rows(), self.value(x).cols());
        let (wk, cols) = (self.shape(w)[0], self.shape(w)[1]);
        assert_eq!(
            k,
            wk,
            "linear: input shape {:?} incompatible with weight shape {:?}",
            self.shape(x),
            self.shape(w)
        );
        assert_eq!(
            self.shape(b),
            &[cols],
            "linear: bias shape {:?} != output width {cols}",
            self.shape(b)
        );
        let mut out = Tensor::zeros(&[rows, cols]);
        for (row, bias) in out.data_mut().chunks_mut(cols).zip(std::iter::repeat(self.value(b).data())) {
            row.copy_from_slice(bias);
        }
        kernels::gemm_chunked(
            rows,
            k,
            cols,
            self.value(x).data(),
            k as isize,
            1,
            self.value(w).data(),
            cols as isize,
            1,
            S::ONE,
            out.data_mut(),
        );
        let req = self.requires(x) || self.requires(w) || self.requires(b);
        self.push(out, req, Op::Linear { x, w, b })
    }

    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Var {
        let (value, cols) = kernels::conv2d_fwd(self.value(x), self.value(w), stride, pad);
        let req = self.requires(x) || self.requires(w);
        self.push(value, req, Op::Conv2d { x, w, stride, pad, cols })
    }

    pub fn add_channel_bias(&mut self, x: Var, b: Var) -> Var {
        let xs = self.shape(x).to_vec();
        assert_eq!(xs.len(), 4, "add_channel_bias: x must be [b,c,h,w], got {xs:?}");
        assert_eq!(
            self.shape(b),
            &[xs[1]],
            "add_channel_bias: bias shape {:?} != channels {}",
            self.shape(b),
            xs[1]
        );
        let hw = xs[2] * xs[3];
        let mut value = self.value(x).clone();
        let bias = self.value(b).data().to_vec();
        for img in value.data_mut().chunks_mut(xs[1] * hw) {
            for (c, chan) in img.chunks_mut(hw).enumerate() {
                for v in chan.iter_mut() {
                    *v += bias[c];
                }
            }
        }
        let req = self.requires(x) || self.requires(b);
        self.push(value, req, Op::AddChannelBias { x, b })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = kernels::relu(self.value(x));
        let req = self.requires(x);
        self.push(value, req, Op::Relu { x })
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let value = kernels::gelu(self.value(x));
        let req = self.requires(x);
        self.push(value, req, Op::Gelu { x })
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let value = kernels::softmax_rows(self.value(x));
        let req = self.requires(x);
        self.push(value, req, Op::SoftmaxRows { x })
    }

    pub fn layernorm_rows(&mut self, x: Var) -> Var {
        let (value, rstd) = kernels::layernorm_rows(self.value(x));
        let req = self.requires(x);
        self.push(value, req, Op::LayerNormRows { x, rstd })
    }

    /// Fused multi-head attention; see [`kernels::mha_fwd`].
    #[allow(clippy::too_many_arguments)]
    pub fn mha(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        batch: usize,
        seq: usize,
        heads: usize,
        mask: &Tensor<S>,
    ) -> Var {
        let (value, att) =
            kernels::mha_fwd(self.value(q), self.value(k), self.value(v), batch, seq, heads, mask);
        let req = self.requires(q) || self.requires(k) || self.requires(v);
        self.push(value, req, Op::Mha { q, k, v, batch, seq, heads, att })
    }

    fn binary_same_shape(&mut self, a: Var, b: Var, what: &str) {
        assert_eq!(
            self.shape(a),
            self.shape(b),
            "{what}: shape {:?} != shape {:?}",
            self.shape(a),
            self.shape(b)
        );
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary_same_shape(a, b, "add");
        let mut value = self.value(a).clone();
        for (x, y) in value.data_mut().iter_mut().zip(self.nodes[b.0].value.data()) {
            *x += *y;
        }
        let req = self.requires(a) || self.requires(b);
        self.push(value, req, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary_same_shape(a, b, "sub");
        let mut value = self.value(a).clone();
        for (x, y) in value.data_mut().iter_mut().zip(self.nodes[b.0].value.data()) {
            *x -= *y;
        }
        let req = self.requires(a) || self.requires(b);
        self.push(value, req, Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary_same_shape(a, b, "mul");
        let mut value = self.value(a).clone();
        for (x, y) in value.data_mut().iter_mut().zip(self.nodes[b.0].value.data()) {
            *x *= *y;
        }
        let req = self.requires(a) || self.requires(b);
        self.push(value, req, Op::Mul { a, b })
    }

    pub fn scale(&mut self, x: Var, c: S) -> Var {
        let value = self.value(x).map(|v| v * c);
        let req = self.requires(x);
        self.push(value, req, Op::Scale { x, c })
    }

    pub fn add_row_bias(&mut self, x: Var, b: Var) -> Var {
        let cols = self.shape(x)[self.shape(x).len() - 1];
        assert_eq!(
            self.shape(b),
            &[cols],
            "add_row_bias: bias shape {:?} != row width {cols}",
            self.shape(b)
        );
        let mut value = self.value(x).clone();
        let bias = self.value(b).data().to_vec();
        for row in value.data_mut().chunks_mut(cols) {
            for (v, bv) in row.iter_mut().zip(&bias) {
                *v += *bv;
            }
        }
        let req = self.requires(x) || self.requires(b);
        self.push(value, req, Op::AddRowBias { x, b })
    }

    pub fn mul_row(&mut self, x: Var, b: Var) -> Var {
        let cols = self.shape(x)[self.shape(x).len() - 1];
        assert_eq!(
            self.shape(b),
            &[cols],
            "mul_row: scale shape {:?} != row width {cols}",
            self.shape(b)
        );
        let mut value = self.value(x).clone();
        let scale = self.value(b).data().to_vec();
        for row in value.data_mut().chunks_mut(cols) {
            for (v, sv) in row.iter_mut().zip(&scale) {
                *v *= *sv;
            }
        }
        let req = self.requires(x) || self.requires(b);
        self.push(value, req, Op::MulRow { x, b })
    }

    /// Select rows of a 2-d tensor by index; duplicates allowed (gradient
    /// scatter-adds).
    pub fn gather_rows(&mut self, x: Var, idx: Vec<u32>) -> Var {
        let rows = self.value(x).rows();
        let cols = self.value(x).cols();
        assert!(
            idx.iter().all(|&i| (i as usize) < rows),
            "gather_rows: index out of range for {rows} rows"
        );
        let mut data = Vec::with_capacity(idx.len() * cols);
        for &i in &idx {
            data.extend_from_slice(&self.value(x).data()[i as usize * cols..(i as usize + 1) * cols]);
        }
        let value = Tensor::new(&[idx.len(), cols], data);
        let req = self.requires(x);
        self.push(value, req, Op::GatherRows { x, idx })
    }

    pub fn concat_rows(&mut self, a: Var, b: Var) -> Var {
        let cols = self.value(a).cols();
        assert_eq!(
            cols,
            self.value(b).cols(),
            "concat_rows: widths differ ({:?} vs {:?})",
            self.shape(a),
            self.shape(b)
        );
        let ra = self.value(a).rows();
        let rb = self.value(b).rows();
        let mut data = Vec::with_capacity((ra + rb) * cols);
        data.extend_from_slice(self.value(a).data());
        data.extend_from_slice(self.value(b).data());
        let value = Tensor::new(&[ra + rb, cols], data);
        let req = self.requires(a) || self.requires(b);
        self.push(value, req, Op::ConcatRows { a, b })
    }

    /// Split [b, 1, h, w] images into non-overlapping ps x ps patches:
    /// output is [b * (h/ps) * (w/ps), ps * ps], patches in row-major order.
    pub fn patches(&mut self, x: Var, ps: usize) -> Var {
        let xs = self.shape(x).to_vec();
        assert_eq!(xs.len(), 4, "patches: input must be [b,1,h,w], got {xs:?}");
        assert_eq!(xs[1], 1, "patches: single-channel input required, got {xs:?}");
        let (b, h, w) = (xs[0], xs[2], xs[3]);
        assert!(
            h % ps == 0 && w % ps == 0,
            "patches: patch size {ps} does not divide image {h}x{w}"
        );
        let (ph, pw) = (h / ps, w / ps);
        let mut data = vec![S::ZERO; b * ph * pw * ps * ps];
        let xd = self.value(x).data();
        for bi in 0..b {
            for py in 0..ph {
                for px in 0..pw {
                    let row = ((bi * ph + py) * pw + px) * ps * ps;
                    for iy in 0..ps {
                        for ix in 0..ps {
                            data[row + iy * ps + ix] =
                                xd[(bi * h + py * ps + iy) * w + px * ps + ix];
                        }
                    }
                }
            }
        }
        let value = Tensor::new(&[b * ph * pw, ps * ps], data);
        let req = self.requires(x);
        self.push(value, req, Op::Patches { x, ps })
    }

    /// Mean over consecutive groups of `group` rows: [g*group, c] -> [g, c].
    pub fn mean_pool_groups(&mut self, x: Var, group: usize) -> Var {
        let rows = self.value(x).rows();
        let cols = self.value(x).cols();
        assert!(
            group > 0 && rows.is_multiple_of(group),
            "mean_pool_groups: {rows} rows not divisible into groups of {group}"
        );
        let g = rows / group;
        let inv = S::from_f64(1.0 / group as f64);
        let mut data = vec![S::ZERO; g * cols];
        let xd = self.value(x).data();
        for gi in 0..g {
            for t in 0..group {
                let src = (gi * group + t) * cols;
                for c in 0..cols {
                    data[gi * cols + c] += xd[src + c];
                }
            }
            for c in 0..cols {
                data[gi * cols + c] *= inv;
            }
        }
        let value = Tensor::new(&[g, cols], data);
        let req = self.requires(x);
        self.push(value, req, Op::MeanPoolGroups { x, group })
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let value = self.value(x).clone().reshape(shape);
        let req = self.requires(x);
        self.push(value, req, Op::Reshape { x })
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s: S = self.value(x).data().iter().copied().sum();
        let req = self.requires(x);
        self.push(Tensor::scalar(s), req, Op::SumAll { x })
    }

    // -- backward -----------------------------------------------------------

    /// One reverse sweep from a scalar loss. Panics if the loss is not
    /// scalar or if the graph was already swept.
    pub fn backward(&mut self, loss: Var) {
        assert!(
            !self.consumed,
            "backward: graph already consumed by a previous backward pass"
        );
        assert_eq!(
            self.nodes[loss.0].value.numel(),
            1,
            "backward: loss must be a scalar, got shape {:?}",
            self.nodes[loss.0].value.shape()
        );
        self.consumed = true;
        self.grads = Vec::with_capacity(self.nodes.len());
        self.grads.resize_with(self.nodes.len(), || None);
        self.grads[loss.0] = Some(Tensor::scalar(S::ONE));

        for i in (0..self.nodes.len()).rev() {
            if self.grads[i].is_none() || !self.nodes[i].requires {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let (lower, upper) = self.grads.split_at_mut(i);
            let dout = upper[0].as_ref().unwrap();
            let nodes = &self.nodes;
            let acc = |lower: &mut [Option<Tensor<S>>], tgt: Var, delta: Tensor<S>| {
                if !nodes[tgt.0].requires {
                    return;
                }
                debug_assert_eq!(delta.numel(), nodes[tgt.0].value.numel());
                match &mut lower[tgt.0] {
                    Some(g) => {
                        for (gv, dv) in g.data_mut().iter_mut().zip(delta.data()) {
                            *gv += *dv;
                        }
                    }
                    slot @ None => *slot = Some(delta),
                }
            };

            match &self.nodes[i].op {
                Op::Leaf => {}
                Op::Matmul { a, b, trans_b: false } => {
                    let da = kernels::matmul(dout, &nodes[b.0].value, true);
                    let db = kernels::matmul_ta(&nodes[a.0].value, dout);
                    acc(lower, *a, da);
                    acc(lower, *b, db);
                }
                Op::Matmul { a, b, trans_b: true } => {
                    let da = kernels::matmul(dout, &nodes[b.0].value, false);
                    let db = kernels::matmul_ta(dout, &nodes[a.0].value);
                    acc(lower, *a, da);
                    acc(lower, *b, db);
                }
                Op::Linear { x, w, b } => {
                    let dx = kernels::matmul(dout, &nodes[w.0].value, true);
                    let dw = kernels::matmul_ta(&nodes[x.0].value, dout);
                    let width = nodes[b.0].value.numel();
                    let mut db = Tensor::zeros(&[width]);
                    for row in dout.data().chunks(width) {
                        for (g, &v) in db.data_mut().iter_mut().zip(row) {
                            *g += v;
                        }
                    }
                    acc(lower, *x, dx);
                    acc(lower, *w, dw);
                    acc(lower, *b, db);
                }
                Op::Conv2d { x, w, stride, pad, cols } => {
                    let (dx, dw) = kernels::conv2d_bwd(
                        nodes[x.0].value.shape(),
                        &nodes[w.0].value,
                        cols,
                        dout,
                        *stride,
                        *pad,
                    );
                    acc(lower, *x, dx);
                    acc(lower, *w, dw);
                }
                Op::AddChannelBias { x, b } => {
                    let xs = nodes[x.0].value.shape();
                    let (ch, hw) = (xs[1], xs[2] * xs[3]);
                    let mut db = Tensor::zeros(&[ch]);
                    for img in dout.data().chunks(ch * hw) {
                        for (c, chan) in img.chunks(hw).enumerate() {
                            let mut s = S::ZERO;
                            for &v in chan {
                                s += v;
                            }
                            db.data_mut()[c] += s;
                        }
                    }
                    acc(lower, *x, dout.clone());
                    acc(lower, *b, db);
                }
                Op::Relu { x } => {
                    let mut dx = dout.clone();
                    for (d, &xv) in dx.data_mut().iter_mut().zip(nodes[x.0].value.data()) {
                        if xv <= S::ZERO {
                            *d = S::ZERO;
                        }
                    }
                    acc(lower, *x, dx);
                }
                Op::Gelu { x } => {
                    let mut dx = dout.clone();
                    for (d, &xv) in dx.data_mut().iter_mut().zip(nodes[x.0].value.data()) {
                        *d *= kernels::gelu_grad_at(xv);
                    }
                    acc(lower, *x, dx);
                }
                Op::SoftmaxRows { x } => {
                    let out = &self.nodes[i].value;
                    let cols = out.cols();
                    let mut dx = dout.clone();
                    for (d_row, o_row) in
                        dx.data_mut().chunks_mut(cols).zip(out.data().chunks(cols))
                    {
                        let mut dot = S::ZERO;
                        for (d, o) in d_row.iter().zip(o_row) {
                            dot += *d * *o;
                        }
                        for (d, o) in d_row.iter_mut().zip(o_row) {
                            *d = *o * (*d - dot);
                        }
                    }
                    acc(lower, *x, dx);
                }
                Op::LayerNormRows { x, rstd } => {
                    let dx = kernels::layernorm_bwd(&self.nodes[i].value, rstd, dout);
                    acc(lower, *x, dx);
                }
                Op::Mha { q, k, v, batch, seq, heads, att } => {
                    let (dq, dk, dv) = kernels::mha_bwd(
                        &nodes[q.0].value,
                        &nodes[k.0].value,
                        &nodes[v.0].value,
                        att,
                        dout,
                        *batch,
                        *seq,
                        *heads,
                    );
                    acc(lower, *q, dq);
                    acc(lower, *k, dk);
                    acc(lower, *v, dv);
                }
                Op::Add { a, b } => {
                    acc(lower, *a, dout.clone());
                    acc(lower, *b, dout.clone());
                }
                Op::Sub { a, b } => {
                    acc(lower, *a, dout.clone());
                    acc(lower, *b, dout.map(|v| -v));
                }
                Op::Mul { a, b } => {
                    let mut da = dout.clone();
                    for (d, &bv) in da.data_mut().iter_mut().zip(nodes[b.0].value.data()) {
                        *d *= bv;
                    }
                    let mut db = dout.clone();
                    for (d, &av) in db.data_mut().iter_mut().zip(nodes[a.0].value.data()) {
                        *d *= av;
                    }
                    acc(lower, *a, da);
                    acc(lower, *b, db);
                }
                Op::Scale { x, c } => {
                    acc(lower, *x, dout.map(|v| v * *c));
                }
                Op::AddRowBias { x, b } => {
                    let cols = nodes[b.0].value.numel();
                    let mut db = Tensor::zeros(&[cols]);
                    for row in dout.data().chunks(cols) {
                        for (g, &v) in db.data_mut().iter_mut().zip(row) {
                            *g += v;
                        }
                    }
                    acc(lower, *x, dout.clone());
                    acc(lower, *b, db);
                }
                Op::MulRow { x, b } => {
                    let cols = nodes[b.0].value.numel();
                    let mut dx = dout.clone();
                    let scale = nodes[b.0].value.data();
                    for row in dx.data_mut().chunks_mut(cols) {
                        for (d, &sv) in row.iter_mut().zip(scale) {
                            *d *= sv;
                        }
                    }
                    let mut db = Tensor::zeros(&[cols]);
                    for (d_row, x_row) in dout
                        .data()
                        .chunks(cols)
                        .zip(nodes[x.0].value.data().chunks(cols))
                    {
                        for c in 0..cols {
                            db.data_mut()[c] += d_row[c] * x_row[c];
                        }
                    }
                    acc(lower, *x, dx);
                    acc(lower, *b, db);
                }
                Op::GatherRows { x, idx } => {
                    let cols = nodes[x.0].value.cols();
                    let mut dx = Tensor::zeros(nodes[x.0].value.shape());
                    for (r, &src) in idx.iter().enumerate() {
                        let dst = src as usize * cols;
                        for c in 0..cols {
                            dx.data_mut()[dst + c] += dout.data()[r * cols + c];
                        }
                    }
                    acc(lower, *x, dx);
                }
                Op::ConcatRows { a, b } => {
                    let na = nodes[a.0].value.numel();
                    let da = Tensor::new(nodes[a.0].value.shape(), dout.data()[..na].to_vec());
                    let db = Tensor::new(nodes[b.0].value.shape(), dout.data()[na..].to_vec());
                    acc(lower, *a, da);
                    acc(lower, *b, db);
                }
                Op::Patches { x, ps } => {
                    let xs = nodes[x.0].value.shape();
                    let (b, h, w) = (xs[0], xs[2], xs[3]);
                    let (ph, pw) = (h / ps, w / ps);
                    let mut dx = Tensor::zeros(xs);
                    for bi in 0..b {
                        for py in 0..ph {
                            for px in 0..pw {
                                let row = ((bi * ph + py) * pw + px) * ps * ps;
                                for iy in 0..*ps {
                                    for ix in 0..*ps {
                                        dx.data_mut()
                                            [(bi * h + py * ps + iy) * w + px * ps + ix] =
                                            dout.data()[row + iy * ps + ix];
                                    }
                                }
                            }
                        }
                    }
                    acc(lower, *x, dx);
                }
                Op::MeanPoolGroups { x, group } => {
                    let cols = nodes[x.0].value.cols();
                    let inv = S::from_f64(1.0 / *group as f64);
                    let mut dx = Tensor::zeros(nodes[x.0].value.shape());
                    for (r, row) in dx.data_mut().chunks_mut(cols).enumerate() {
                        let g = r / group;
                        for (c, v) in row.iter_mut().enumerate() {
                            *v = dout.data()[g * cols + c] * inv;
                        }
                    }
                    acc(lower, *x, dx);
                }
                Op::Reshape { x } => {
                    let dx = dout.clone().reshape(nodes[x.0].value.shape());
                    acc(lower, *x, dx);
                }
                Op::SumAll { x } => {
                    let d = dout.data()[0];
                    acc(lower, *x, Tensor::full(nodes[x.0].value.shape(), d));
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn square_at_three_has_gradient_six() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::scalar(3.0), true);
        let y = g.mul(x, x);
        g.backward(y);
        assert_eq!(g.grad(x).unwrap().data(), &[6.0]);
    }

    #[test]
    fn fanout_doubles_gradient_exactly() {
        // loss = f(x) + f(x) must give exactly 2x the grad of f(x).
        let run = |dup: bool| -> Vec<f64> {
            let mut g = Graph::<f64>::new();
            let x = g.leaf(Tensor::new(&[2], vec![1.5, -0.5]), true);
            let f = g.mul(x, x);
            let s = g.sum_all(f);
            let loss = if dup { g.add(s, s) } else { s };
            g.backward(loss);
            g.grad(x).unwrap().data().to_vec()
        };
        let single = run(false);
        let double = run(true);
        for (s, d) in single.iter().zip(&double) {
            assert_eq!(*d, 2.0 * *s);
        }
    }

    #[test]
    #[should_panic(expected = "already consumed")]
    fn second_backward_panics() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::scalar(1.0), true);
        let y = g.mul(x, x);
        g.backward(y);
        g.backward(y);
    }

    #[test]
    #[should_panic(expected = "loss must be a scalar")]
    fn non_scalar_loss_panics() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::new(&[2], vec![1.0, 2.0]), true);
        let y = g.mul(x, x);
        g.backward(y);
    }

    #[test]
    fn matmul_gradients_match_hand_computation() {
        // loss = sum(A . B), dA = 1 . Bᵀ, dB = Aᵀ . 1
        let mut g = Graph::<f64>::new();
        let a = g.leaf(Tensor::new(&[1, 2], vec![1.0, 2.0]), true);
        let b = g.leaf(Tensor::new(&[2, 1], vec![3.0, 4.0]), true);
        let c = g.matmul(a, b);
        let loss = g.sum_all(c);
        g.backward(loss);
        assert_eq!(g.grad(a).unwrap().data(), &[3.0, 4.0]);
        assert_eq!(g.grad(b).unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn keyed_leaf_is_memoized() {
        let mut g = Graph::<f64>::new();
        let t = Tensor::new(&[2], vec![1.0, 2.0]);
        let v1 = g.leaf_keyed(7, &t, true);
        let v2 = g.leaf_keyed(7, &t, true);
        assert_eq!(v1, v2);
        let f = g.mul(v1, v2); // x*x through one shared node
        let loss = g.sum_all(f);
        g.backward(loss);
        assert_eq!(g.grad(v1).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn gather_rows_scatter_adds_duplicates() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]), true);
        let gathered = g.gather_rows(x, vec![0, 0, 1]);
        let loss = g.sum_all(gathered);
        g.backward(loss);
        assert_eq!(g.grad(x).unwrap().data(), &[2.0, 2.0, 1.0, 1.0]);
    }

    #[test]
    fn constant_receives_no_gradient() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::scalar(2.0), true);
        let c = g.constant(Tensor::scalar(5.0));
        let y = g.mul(x, c);
        g.backward(y);
        assert!(g.grad(c).is_none());
        assert_eq!(g.grad(x).unwrap().data(), &[5.0]);
    }

    #[test]
    fn interleave_via_concat_and_gather_roundtrips() {
        let mut rng = Rng::seed_from(1);
        let n = 3;
        let mut g = Graph::<f64>::new();
        let a = g.leaf(Tensor::randn(&[n, 2], 1.0, &mut rng), true);
        let b = g.leaf(Tensor::randn(&[n, 2], 1.0, &mut rng), true);
        let cat = g.concat_rows(a, b);
        let idx: Vec<u32> = (0..2 * n)
            .map(|t| if t % 2 == 0 { (t / 2) as u32 } else { (n + t / 2) as u32 })
            .collect();
        let inter = g.gather_rows(cat, idx);
        for i in 0..n {
            assert_eq!(g.value(inter).at(&[2 * i, 0]), g.value(a).at(&[i, 0]));
            assert_eq!(g.value(inter).at(&[2 * i + 1, 0]), g.value(b).at(&[i, 0]));
        }
    }

    #[test]
    fn patches_partition_the_image() {
        let mut g = Graph::<f64>::new();
        let data: Vec<f64> = (0..16).map(|v| v as f64).collect();
        let x = g.leaf(Tensor::new(&[1, 1, 4, 4], data), false);
        let p = g.patches(x, 2);
        assert_eq!(g.value(p).shape(), &[4, 4]);
        // top-left patch is rows 0-1, cols 0-1
        assert_eq!(g.value(p).at(&[0, 0]), 0.0);
        assert_eq!(g.value(p).at(&[0, 1]), 1.0);
        assert_eq!(g.value(p).at(&[0, 2]), 4.0);
        assert_eq!(g.value(p).at(&[0, 3]), 5.0);
        // bottom-right patch starts at (2, 2)
        assert_eq!(g.value(p).at(&[3, 0]), 10.0);
    }

    #[test]
    fn mean_pool_groups_averages() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::new(&[4, 1], vec![1.0, 3.0, 10.0, 20.0]), true);
        let p = g.mean_pool_groups(x, 2);
        assert_eq!(g.value(p).data(), &[2.0, 15.0]);
        let loss = g.sum_all(p);
        g.backward(loss);
        assert_eq!(g.grad(x).unwrap().data(), &[0.5, 0.5, 0.5, 0.5]);
    }
}
