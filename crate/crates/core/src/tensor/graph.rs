//! Define-by-run computation graph with reverse-mode gradients.
//!
//! A graph is built fresh for every forward pass. Ops record their inputs and
//! enough saved state to run backward; `grad` replays the tape in reverse
//! without mutating it, so one graph supports repeated gradient queries.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use super::dct;
use super::kernels;
use super::{Tensor, TensorError};

static GRAPH_COUNTER: AtomicU64 = AtomicU64::new(1);

/// Handle to a node of a specific graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeRef {
    graph: u64,
    index: u32,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Conv2d { x: usize, w: usize, b: Option<usize>, stride: usize, pad: usize },
    Dense { x: usize, w: usize, b: Option<usize> },
    Relu { x: usize },
    LeakyRelu { x: usize, slope: f32 },
    Sigmoid { x: usize },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    ScalarMul { x: usize, k: f32 },
    Mul { a: usize, b: usize, channel_broadcast: bool },
    AvgPool2 { x: usize, k: usize },
    Upsample2 { x: usize },
    GlobalAvgPool { x: usize },
    Sum { x: usize },
    PNorm { x: usize, p: f32 },
    Clamp { x: usize, lo: f32, hi: f32 },
    BlockDct8 { x: usize },
    BlockIdct8 { x: usize },
    BceLogit { x: usize, target: f32 },
    Reshape { x: usize },
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Append-only tape of recorded operations.
#[derive(Debug)]
pub struct Graph {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self { id: GRAPH_COUNTER.fetch_add(1, Ordering::Relaxed), nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Register a tracked leaf (gradients will flow to it).
    pub fn var(&mut self, t: &Tensor) -> Tensor {
        self.push_leaf(t, true)
    }

    /// Register an untracked constant leaf.
    pub fn constant(&mut self, t: &Tensor) -> Tensor {
        self.push_leaf(t, false)
    }

    fn push_leaf(&mut self, t: &Tensor, requires_grad: bool) -> Tensor {
        let idx = self.nodes.len();
        let value = t.detached();
        self.nodes.push(Node { op: Op::Leaf, value: value.clone(), requires_grad });
        value.with_node(NodeRef { graph: self.id, index: idx as u32 })
    }

    /// Node index for a tensor; constants without a link are auto-registered.
    fn ensure(&mut self, t: &Tensor) -> Result<usize, TensorError> {
        match t.node() {
            Some(r) => {
                if r.graph != self.id {
                    return Err(TensorError::GraphMismatch);
                }
                let idx = r.index as usize;
                if idx >= self.nodes.len() {
                    return Err(TensorError::NodeNotInGraph);
                }
                Ok(idx)
            }
            None => {
                let leaf = self.constant(t);
                Ok(leaf.node().expect("fresh leaf has a node").index as usize)
            }
        }
    }

    fn index_of(&self, t: &Tensor) -> Result<usize, TensorError> {
        let r = t.node().ok_or(TensorError::NodeNotInGraph)?;
        if r.graph != self.id {
            return Err(TensorError::GraphMismatch);
        }
        let idx = r.index as usize;
        if idx >= self.nodes.len() {
            return Err(TensorError::NodeNotInGraph);
        }
        Ok(idx)
    }

    fn push(&mut self, op: Op, inputs: &[usize], value: Tensor) -> Tensor {
        let requires_grad = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        let idx = self.nodes.len();
        self.nodes.push(Node { op, value: value.clone(), requires_grad });
        value.with_node(NodeRef { graph: self.id, index: idx as u32 })
    }

    fn value(&self, idx: usize) -> &Tensor {
        &self.nodes[idx].value
    }

    // ---- ops -------------------------------------------------------------

    pub fn conv2d(
        &mut self,
        x: &Tensor,
        weight: &Tensor,
        bias: Option<&Tensor>,
        stride: usize,
        pad: usize,
    ) -> Result<Tensor, TensorError> {
        if x.shape().len() != 3 || weight.shape().len() != 4 {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                lhs: x.shape().to_vec(),
                rhs: weight.shape().to_vec(),
            });
        }
        let (c_in, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let (c_out, kc, kh, kw) =
            (weight.shape()[0], weight.shape()[1], weight.shape()[2], weight.shape()[3]);
        if kc != c_in || h + 2 * pad < kh || w + 2 * pad < kw || stride == 0 {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                lhs: x.shape().to_vec(),
                rhs: weight.shape().to_vec(),
            });
        }
        if let Some(b) = bias {
            if b.shape() != [c_out] {
                return Err(TensorError::ShapeMismatch {
                    op: "conv2d bias",
                    lhs: vec![c_out],
                    rhs: b.shape().to_vec(),
                });
            }
        }
        let xi = self.ensure(x)?;
        let wi = self.ensure(weight)?;
        let bi = bias.map(|b| self.ensure(b)).transpose()?;
        let ho = kernels::conv_out_extent(h, kh, stride, pad);
        let wo = kernels::conv_out_extent(w, kw, stride, pad);
        let mut out = Tensor::zeros(vec![c_out, ho, wo]);
        kernels::conv2d_forward(
            self.value(xi).data(),
            c_in,
            h,
            w,
            self.value(wi).data(),
            c_out,
            kh,
            kw,
            bi.map(|i| self.value(i).data()),
            stride,
            pad,
            out.data_mut(),
        );
        let mut inputs = vec![xi, wi];
        if let Some(i) = bi {
            inputs.push(i);
        }
        Ok(self.push(Op::Conv2d { x: xi, w: wi, b: bi, stride, pad }, &inputs, out))
    }

    pub fn dense(
        &mut self,
        x: &Tensor,
        weight: &Tensor,
        bias: Option<&Tensor>,
    ) -> Result<Tensor, TensorError> {
        if x.shape().len() != 1 || weight.shape().len() != 2 || weight.shape()[1] != x.shape()[0] {
            return Err(TensorError::ShapeMismatch {
                op: "dense",
                lhs: x.shape().to_vec(),
                rhs: weight.shape().to_vec(),
            });
        }
        let n_out = weight.shape()[0];
        if let Some(b) = bias {
            if b.shape() != [n_out] {
                return Err(TensorError::ShapeMismatch {
                    op: "dense bias",
                    lhs: vec![n_out],
                    rhs: b.shape().to_vec(),
                });
            }
        }
        let xi = self.ensure(x)?;
        let wi = self.ensure(weight)?;
        let bi = bias.map(|b| self.ensure(b)).transpose()?;
        let mut out = Tensor::zeros(vec![n_out]);
        kernels::dense_forward(
            self.value(xi).data(),
            self.value(wi).data(),
            bi.map(|i| self.value(i).data()),
            n_out,
            out.data_mut(),
        );
        let mut inputs = vec![xi, wi];
        if let Some(i) = bi {
            inputs.push(i);
        }
        Ok(self.push(Op::Dense { x: xi, w: wi, b: bi }, &inputs, out))
    }

    pub fn relu(&mut self, x: &Tensor) -> Result<Tensor, TensorError> {
        let xi = self.ensure(x)?;
        let out = Tensor::new(
            self.value(xi).shape().to_vec(),
            self.value(xi).data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect(),
        );
        Ok(self.push(Op::Relu { x: xi }, &[xi], out))
    }

    pub fn leaky_relu(&mut self, x: &Tensor, slope: f32) -> Result<Tensor, TensorError> {
        let xi = self.ensure(x)?;
        let out = Tensor::new(
            self.value(xi).shape().to_vec(),
            self.value(xi).data().iter().map(|&v| if v > 0.0 { v } else { slope * v }).collect(),
        );
        Ok(self.push(Op::LeakyRelu { x: xi, slope }, &[xi], out))
    }

    pub fn sigmoid(&mut self, x: &Tensor) -> Result<Tensor, TensorError> {
        let xi = self.ensure(x)?;
        let out = Tensor::new(
            self.value(xi).shape().to_vec(),
            self.value(xi).data().iter().map(|&v| 1.0 / (1.0 + (-v).exp())).collect(),
        );
        Ok(self.push(Op::Sigmoid { x: xi }, &[xi], out))
    }

    pub fn add(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
        self.binary("add", a, b, |x, y| x + y, false)
    }

    pub fn sub(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
        self.binary("sub", a, b, |x, y| x - y, true)
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: &Tensor,
        b: &Tensor,
        f: fn(f32, f32) -> f32,
        is_sub: bool,
    ) -> Result<Tensor, TensorError> {
        if a.shape() != b.shape() {
            return Err(TensorError::ShapeMismatch {
                op: name,
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let ai = self.ensure(a)?;
        let bi = self.ensure(b)?;
        let out = Tensor::new(
            self.value(ai).shape().to_vec(),
            self.value(ai)
                .data()
                .iter()
                .zip(self.value(bi).data())
                .map(|(&x, &y)| f(x, y))
                .collect(),
        );
        let op = if is_sub { Op::Sub { a: ai, b: bi } } else { Op::Add { a: ai, b: bi } };
        Ok(self.push(op, &[ai, bi], out))
    }

    pub fn scalar_mul(&mut self, x: &Tensor, k: f32) -> Result<Tensor, TensorError> {
        let xi = self.ensure(x)?;
        let out = Tensor::new(
            self.value(xi).shape().to_vec(),
            self.value(xi).data().iter().map(|&v| k * v).collect(),
        );
        Ok(self.push(Op::ScalarMul { x: xi, k }, &[xi], out))
    }

    /// Elementwise product. `b` may also be a `[C]` vector against an
    /// `[C, H, W]` tensor `a`, scaling each channel plane (the only broadcast
    /// the models need).
    pub fn mul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
        let channel_broadcast =
            a.shape().len() == 3 && b.shape().len() == 1 && b.shape()[0] == a.shape()[0];
        if !channel_broadcast && a.shape() != b.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "mul",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let ai = self.ensure(a)?;
        let bi = self.ensure(b)?;
        let av = self.value(ai);
        let bv = self.value(bi);
        let mut out = Tensor::zeros(av.shape().to_vec());
        if channel_broadcast {
            let plane = av.shape()[1] * av.shape()[2];
            for c in 0..av.shape()[0] {
                let s = bv.data()[c];
                for (o, &x) in out.data_mut()[c * plane..(c + 1) * plane]
                    .iter_mut()
                    .zip(&av.data()[c * plane..(c + 1) * plane])
                {
                    *o = s * x;
                }
            }
        } else {
            for ((o, &x), &y) in out.data_mut().iter_mut().zip(av.data()).zip(bv.data()) {
                *o = x * y;
            }
        }
        Ok(self.push(Op::Mul { a: ai, b: bi, channel_broadcast }, &[ai, bi], out))
    }

    pub fn avg_pool2(&mut self, x: &Tensor, k: usize) -> Result<Tensor, TensorError> {
        let xi = self.ensure(x)?;
        let shape = self.value(xi).shape().to_vec();
        if shape.len() != 3 || shape[1] % k != 0 || shape[2] % k != 0 || k == 0 {
            return Err(TensorError::InvalidArg {
                op: "avg_pool2",
                msg: format!("shape {shape:?} not divisible by pool size {k}"),
            });
        }
        let (c, h, w) = (shape[0], shape[1], shape[2]);
        let mut out = Tensor::zeros(vec![c, h / k, w / k]);
        kernels::avg_pool2_forward(self.value(xi).data(), c, h, w, k, out.data_mut());
        Ok(self.push(Op::AvgPool2 { x: xi, k }, &[xi], out))
    }

    pub fn upsample2(&mut self, x: &Tensor) -> Result<Tensor, TensorError> {
        let xi = self.ensure(x)?;
        let shape = self.value(xi).shape().to_vec();
        if shape.len() != 3 {
            return Err(TensorError::InvalidArg {
                op: "upsample2",
                msg: format!("expected [C,H,W], got {shape:?}"),
            });
        }
        let (c, h, w) = (shape[0], shape[1], shape[2]);
        let mut out = Tensor::zeros(vec![c, 2 * h, 2 * w]);
        kernels::upsample2_forward(self.value(xi).data(), c, h, w, out.data_mut());
        Ok(self.push(Op::Upsample2 { x: xi }, &[xi], out))
    }

    pub fn global_avg_pool(&mut self, x: &Tensor) -> Result<Tensor, TensorError> {
        let xi = self.ensure(x)?;
        let shape = self.value(xi).shape().to_vec();
        if shape.len() != 3 {
            return Err(TensorError::InvalidArg {
                op: "global_avg_pool",
                msg: format!("expected [C,H,W], got {shape:?}"),
            });
        }
        let (c, plane) = (shape[0], shape[1] * shape[2]);
        let data = self.value(xi).data();
        let out = Tensor::new(
            vec![c],
            (0..c)
                .map(|ch| data[ch * plane..(ch + 1) * plane].iter().sum::<f32>() / plane as f32)
                .collect(),
        );
        Ok(self.push(Op::GlobalAvgPool { x: xi }, &[xi], out))
    }

    pub fn sum(&mut self, x: &Tensor) -> Result<Tensor, TensorError> {
        let xi = self.ensure(x)?;
        let total: f32 = self.value(xi).data().iter().sum();
        Ok(self.push(Op::Sum { x: xi }, &[xi], Tensor::scalar(total)))
    }

    /// `(sum_i |x_i|^p)^(1/p)` for finite `p >= 1`, as a scalar tensor.
    pub fn pnorm(&mut self, x: &Tensor, p: f32) -> Result<Tensor, TensorError> {
        if !(p >= 1.0) || !p.is_finite() {
            return Err(TensorError::InvalidArg {
                op: "pnorm",
                msg: format!("p must be finite and >= 1, got {p}"),
            });
        }
        let xi = self.ensure(x)?;
        let acc: f64 =
            self.value(xi).data().iter().map(|&v| (v.abs() as f64).powf(p as f64)).sum();
        let norm = acc.powf(1.0 / p as f64) as f32;
        Ok(self.push(Op::PNorm { x: xi, p }, &[xi], Tensor::scalar(norm)))
    }

    pub fn clamp(&mut self, x: &Tensor, lo: f32, hi: f32) -> Result<Tensor, TensorError> {
        if lo > hi {
            return Err(TensorError::InvalidArg {
                op: "clamp",
                msg: format!("lo {lo} > hi {hi}"),
            });
        }
        let xi = self.ensure(x)?;
        let out = Tensor::new(
            self.value(xi).shape().to_vec(),
            self.value(xi).data().iter().map(|&v| v.clamp(lo, hi)).collect(),
        );
        Ok(self.push(Op::Clamp { x: xi, lo, hi }, &[xi], out))
    }

    /// Blockwise 8x8 orthonormal DCT of each channel of `[C, H, W]`.
    /// Extents are reflect-padded up to multiples of 8.
    pub fn block_dct8(&mut self, x: &Tensor) -> Result<Tensor, TensorError> {
        let xi = self.ensure(x)?;
        let shape = self.value(xi).shape().to_vec();
        if shape.len() != 3 {
            return Err(TensorError::InvalidArg {
                op: "block_dct8",
                msg: format!("expected [C,H,W], got {shape:?}"),
            });
        }
        let (c, h, w) = (shape[0], shape[1], shape[2]);
        let (hp, wp) = (dct::padded_extent(h), dct::padded_extent(w));
        let mut out = Tensor::zeros(vec![c, hp, wp]);
        for ch in 0..c {
            let plane = dct::dct8_plane(&self.value(xi).data()[ch * h * w..(ch + 1) * h * w], h, w);
            out.data_mut()[ch * hp * wp..(ch + 1) * hp * wp].copy_from_slice(&plane);
        }
        Ok(self.push(Op::BlockDct8 { x: xi }, &[xi], out))
    }

    /// Inverse of [`Graph::block_dct8`]; extents must be multiples of 8.
    pub fn block_idct8(&mut self, x: &Tensor) -> Result<Tensor, TensorError> {
        let xi = self.ensure(x)?;
        let shape = self.value(xi).shape().to_vec();
        if shape.len() != 3 || shape[1] % 8 != 0 || shape[2] % 8 != 0 {
            return Err(TensorError::InvalidArg {
                op: "block_idct8",
                msg: format!("expected [C,8m,8n], got {shape:?}"),
            });
        }
        let (c, h, w) = (shape[0], shape[1], shape[2]);
        let mut out = Tensor::zeros(vec![c, h, w]);
        for ch in 0..c {
            let plane =
                dct::idct8_plane(&self.value(xi).data()[ch * h * w..(ch + 1) * h * w], h, w);
            out.data_mut()[ch * h * w..(ch + 1) * h * w].copy_from_slice(&plane);
        }
        Ok(self.push(Op::BlockIdct8 { x: xi }, &[xi], out))
    }

    /// Numerically stable binary cross-entropy on a scalar logit against a
    /// constant 0/1 target: `softplus(z) - target * z`.
    pub fn bce_logit(&mut self, z: &Tensor, target: f32) -> Result<Tensor, TensorError> {
        if z.shape() != [1] {
            return Err(TensorError::NotScalar { shape: z.shape().to_vec() });
        }
        let zi = self.ensure(z)?;
        let v = self.value(zi).data()[0];
        let loss = v.max(0.0) + (1.0 + (-v.abs()).exp()).ln() - target * v;
        Ok(self.push(Op::BceLogit { x: zi, target }, &[zi], Tensor::scalar(loss)))
    }

    /// Shape bookkeeping only; data is unchanged.
    pub fn reshape(&mut self, x: &Tensor, shape: Vec<usize>) -> Result<Tensor, TensorError> {
        let xi = self.ensure(x)?;
        if shape.iter().product::<usize>() != self.value(xi).len() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: self.value(xi).shape().to_vec(),
                rhs: shape,
            });
        }
        let out = Tensor::new(shape, self.value(xi).data().to_vec());
        Ok(self.push(Op::Reshape { x: xi }, &[xi], out))
    }

    /// `|x|`, composed as `relu(x) + relu(-x)`; subgradient 0 at 0.
    pub fn abs(&mut self, x: &Tensor) -> Result<Tensor, TensorError> {
        let pos = self.relu(x)?;
        let negx = self.scalar_mul(x, -1.0)?;
        let neg = self.relu(&negx)?;
        self.add(&pos, &neg)
    }

    // ---- backward ---------------------------------------------------------

    /// Gradient of a scalar output w.r.t. each requested node. The graph is
    /// not mutated; calling `grad` again (with the same or different `wrt`)
    /// gives the same answers.
    pub fn grad(
        &self,
        output: &Tensor,
        wrt: &[NodeRef],
    ) -> Result<BTreeMap<NodeRef, Tensor>, TensorError> {
        let out_idx = self.index_of(output)?;
        if self.nodes[out_idx].value.shape() != [1] {
            return Err(TensorError::NotScalar {
                shape: self.nodes[out_idx].value.shape().to_vec(),
            });
        }
        let mut wanted = vec![false; self.nodes.len()];
        for r in wrt {
            if r.graph != self.id {
                return Err(TensorError::GraphMismatch);
            }
            let idx = r.index as usize;
            if idx >= self.nodes.len() {
                return Err(TensorError::NodeNotInGraph);
            }
            if !self.nodes[idx].requires_grad {
                return Err(TensorError::InvalidArg {
                    op: "grad",
                    msg: "requested node was not registered with var()".into(),
                });
            }
            wanted[idx] = true;
        }

        let mut grads: Vec<Option<Vec<f32>>> = vec![None; out_idx + 1];
        grads[out_idx] = Some(vec![1.0]);
        let mut result = BTreeMap::new();

        for i in (0..=out_idx).rev() {
            let Some(g) = grads[i].take() else { continue };
            if wanted[i] {
                result.insert(
                    NodeRef { graph: self.id, index: i as u32 },
                    Tensor::new(self.nodes[i].value.shape().to_vec(), g.clone()),
                );
            }
            self.backward_op(i, &g, &mut grads);
        }

        // Requested nodes with no path to the output get zero gradients.
        for r in wrt {
            result.entry(*r).or_insert_with(|| {
                Tensor::zeros(self.nodes[r.index as usize].value.shape().to_vec())
            });
        }
        Ok(result)
    }

    fn needs(&self, idx: usize) -> bool {
        self.nodes[idx].requires_grad
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f32>>], idx: usize, contribution: &[f32]) {
        match &mut grads[idx] {
            Some(g) => {
                for (a, &b) in g.iter_mut().zip(contribution) {
                    *a += b;
                }
            }
            None => grads[idx] = Some(contribution.to_vec()),
        }
    }

    fn grad_buf<'a>(
        &self,
        grads: &'a mut [Option<Vec<f32>>],
        idx: usize,
    ) -> &'a mut Vec<f32> {
        if grads[idx].is_none() {
            grads[idx] = Some(vec![0.0; self.nodes[idx].value.len()]);
        }
        grads[idx].as_mut().expect("just initialized")
    }

    fn backward_op(&self, i: usize, g: &[f32], grads: &mut [Option<Vec<f32>>]) {
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, stride, pad } => {
                let xv = self.nodes[*x].value.shape().to_vec();
                let wv = self.nodes[*w].value.shape().to_vec();
                let (c_in, h, wdt) = (xv[0], xv[1], xv[2]);
                let (c_out, kh, kw) = (wv[0], wv[2], wv[3]);
                if self.needs(*x) {
                    let weight = self.nodes[*w].value.data();
                    let buf = self.grad_buf(grads, *x);
                    kernels::conv2d_backward_input(
                        g, c_in, h, wdt, weight, c_out, kh, kw, *stride, *pad, buf,
                    );
                }
                if self.needs(*w) {
                    let input = self.nodes[*x].value.data();
                    // Bias grads ride along with the weight pass when the bias
                    // node also needs them.
                    let needs_bias = b.map(|bi| self.needs(bi)).unwrap_or(false);
                    let mut gw = vec![0.0f32; self.nodes[*w].value.len()];
                    let mut gb = if needs_bias { Some(vec![0.0f32; c_out]) } else { None };
                    kernels::conv2d_backward_weight(
                        g,
                        input,
                        c_in,
                        h,
                        wdt,
                        c_out,
                        kh,
                        kw,
                        *stride,
                        *pad,
                        &mut gw,
                        gb.as_deref_mut(),
                    );
                    self.accumulate(grads, *w, &gw);
                    if let (Some(bi), Some(gb)) = (b, gb) {
                        self.accumulate(grads, *bi, &gb);
                    }
                } else if let Some(bi) = b {
                    if self.needs(*bi) {
                        let ho_wo = self.nodes[i].value.len() / c_out;
                        let gb: Vec<f32> = (0..c_out)
                            .map(|co| g[co * ho_wo..(co + 1) * ho_wo].iter().sum())
                            .collect();
                        self.accumulate(grads, *bi, &gb);
                    }
                }
            }
            Op::Dense { x, w, b } => {
                let input = self.nodes[*x].value.data().to_vec();
                let weight = self.nodes[*w].value.data().to_vec();
                let needs_x = self.needs(*x);
                let needs_w = self.needs(*w);
                let needs_b = b.map(|bi| self.needs(bi)).unwrap_or(false);
                let mut gx = if needs_x { Some(vec![0.0f32; input.len()]) } else { None };
                let mut gw = if needs_w { Some(vec![0.0f32; weight.len()]) } else { None };
                let mut gb = if needs_b { Some(vec![0.0f32; g.len()]) } else { None };
                kernels::dense_backward(
                    g,
                    &input,
                    &weight,
                    gx.as_deref_mut(),
                    gw.as_deref_mut(),
                    gb.as_deref_mut(),
                );
                if let Some(gx) = gx {
                    self.accumulate(grads, *x, &gx);
                }
                if let Some(gw) = gw {
                    self.accumulate(grads, *w, &gw);
                }
                if let (Some(bi), Some(gb)) = (b, gb) {
                    self.accumulate(grads, *bi, &gb);
                }
            }
            Op::Relu { x } => {
                if self.needs(*x) {
                    let xd = self.nodes[*x].value.data();
                    let contrib: Vec<f32> = g
                        .iter()
                        .zip(xd)
                        .map(|(&gv, &xv)| if xv > 0.0 { gv } else { 0.0 })
                        .collect();
                    self.accumulate(grads, *x, &contrib);
                }
            }
            Op::LeakyRelu { x, slope } => {
                if self.needs(*x) {
                    let xd = self.nodes[*x].value.data();
                    let contrib: Vec<f32> = g
                        .iter()
                        .zip(xd)
                        .map(|(&gv, &xv)| if xv > 0.0 { gv } else { slope * gv })
                        .collect();
                    self.accumulate(grads, *x, &contrib);
                }
            }
            Op::Sigmoid { x } => {
                if self.needs(*x) {
                    let yd = self.nodes[i].value.data();
                    let contrib: Vec<f32> =
                        g.iter().zip(yd).map(|(&gv, &yv)| gv * yv * (1.0 - yv)).collect();
                    self.accumulate(grads, *x, &contrib);
                }
            }
            Op::Add { a, b } => {
                if self.needs(*a) {
                    self.accumulate(grads, *a, g);
                }
                if self.needs(*b) {
                    self.accumulate(grads, *b, g);
                }
            }
            Op::Sub { a, b } => {
                if self.needs(*a) {
                    self.accumulate(grads, *a, g);
                }
                if self.needs(*b) {
                    let neg: Vec<f32> = g.iter().map(|&v| -v).collect();
                    self.accumulate(grads, *b, &neg);
                }
            }
            Op::ScalarMul { x, k } => {
                if self.needs(*x) {
                    let contrib: Vec<f32> = g.iter().map(|&v| k * v).collect();
                    self.accumulate(grads, *x, &contrib);
                }
            }
            Op::Mul { a, b, channel_broadcast } => {
                let av = self.nodes[*a].value.data();
                let bv = self.nodes[*b].value.data();
                if *channel_broadcast {
                    let shape = self.nodes[*a].value.shape();
                    let (c, plane) = (shape[0], shape[1] * shape[2]);
                    if self.needs(*a) {
                        let mut contrib = vec![0.0f32; av.len()];
                        for ch in 0..c {
                            let s = bv[ch];
                            for (o, &gv) in contrib[ch * plane..(ch + 1) * plane]
                                .iter_mut()
                                .zip(&g[ch * plane..(ch + 1) * plane])
                            {
                                *o = s * gv;
                            }
                        }
                        self.accumulate(grads, *a, &contrib);
                    }
                    if self.needs(*b) {
                        let contrib: Vec<f32> = (0..c)
                            .map(|ch| {
                                g[ch * plane..(ch + 1) * plane]
                                    .iter()
                                    .zip(&av[ch * plane..(ch + 1) * plane])
                                    .map(|(&gv, &xv)| gv * xv)
                                    .sum()
                            })
                            .collect();
                        self.accumulate(grads, *b, &contrib);
                    }
                } else {
                    if self.needs(*a) {
                        let contrib: Vec<f32> =
                            g.iter().zip(bv).map(|(&gv, &yv)| gv * yv).collect();
                        self.accumulate(grads, *a, &contrib);
                    }
                    if self.needs(*b) {
                        let contrib: Vec<f32> =
                            g.iter().zip(av).map(|(&gv, &xv)| gv * xv).collect();
                        self.accumulate(grads, *b, &contrib);
                    }
                }
            }
            Op::AvgPool2 { x, k } => {
                if self.needs(*x) {
                    let shape = self.nodes[*x].value.shape().to_vec();
                    let buf = self.grad_buf(grads, *x);
                    kernels::avg_pool2_backward(g, shape[0], shape[1], shape[2], *k, buf);
                }
            }
            Op::Upsample2 { x } => {
                if self.needs(*x) {
                    let shape = self.nodes[*x].value.shape().to_vec();
                    let buf = self.grad_buf(grads, *x);
                    kernels::upsample2_backward(g, shape[0], shape[1], shape[2], buf);
                }
            }
            Op::GlobalAvgPool { x } => {
                if self.needs(*x) {
                    let shape = self.nodes[*x].value.shape();
                    let (c, plane) = (shape[0], shape[1] * shape[2]);
                    let mut contrib = vec![0.0f32; c * plane];
                    for ch in 0..c {
                        let gv = g[ch] / plane as f32;
                        contrib[ch * plane..(ch + 1) * plane].fill(gv);
                    }
                    self.accumulate(grads, *x, &contrib);
                }
            }
            Op::Sum { x } => {
                if self.needs(*x) {
                    let contrib = vec![g[0]; self.nodes[*x].value.len()];
                    self.accumulate(grads, *x, &contrib);
                }
            }
            Op::PNorm { x, p } => {
                if self.needs(*x) {
                    let y = self.nodes[i].value.data()[0];
                    let xd = self.nodes[*x].value.data();
                    let contrib: Vec<f32> = if y == 0.0 {
                        vec![0.0; xd.len()]
                    } else if *p == 2.0 {
                        xd.iter().map(|&v| g[0] * v / y).collect()
                    } else {
                        let ylp = (y as f64).powf(1.0 - *p as f64);
                        xd.iter()
                            .map(|&v| {
                                let m = (v.abs() as f64).powf(*p as f64 - 1.0) * v.signum() as f64;
                                (g[0] as f64 * m * ylp) as f32
                            })
                            .collect()
                    };
                    self.accumulate(grads, *x, &contrib);
                }
            }
            Op::Clamp { x, lo, hi } => {
                if self.needs(*x) {
                    let xd = self.nodes[*x].value.data();
                    let contrib: Vec<f32> = g
                        .iter()
                        .zip(xd)
                        .map(|(&gv, &xv)| if xv > *lo && xv < *hi { gv } else { 0.0 })
                        .collect();
                    self.accumulate(grads, *x, &contrib);
                }
            }
            Op::BlockDct8 { x } => {
                if self.needs(*x) {
                    let shape = self.nodes[*x].value.shape().to_vec();
                    let (c, h, w) = (shape[0], shape[1], shape[2]);
                    let (hp, wp) = (dct::padded_extent(h), dct::padded_extent(w));
                    let mut contrib = vec![0.0f32; c * h * w];
                    for ch in 0..c {
                        let gplane = dct::idct8_plane(&g[ch * hp * wp..(ch + 1) * hp * wp], hp, wp);
                        dct::fold_reflect_pad(&gplane, h, w, &mut contrib[ch * h * w..(ch + 1) * h * w]);
                    }
                    self.accumulate(grads, *x, &contrib);
                }
            }
            Op::BlockIdct8 { x } => {
                if self.needs(*x) {
                    let shape = self.nodes[*x].value.shape().to_vec();
                    let (c, h, w) = (shape[0], shape[1], shape[2]);
                    let mut contrib = vec![0.0f32; c * h * w];
                    for ch in 0..c {
                        let gplane = dct::dct8_plane(&g[ch * h * w..(ch + 1) * h * w], h, w);
                        contrib[ch * h * w..(ch + 1) * h * w].copy_from_slice(&gplane);
                    }
                    self.accumulate(grads, *x, &contrib);
                }
            }
            Op::BceLogit { x, target } => {
                if self.needs(*x) {
                    let z = self.nodes[*x].value.data()[0];
                    let s = 1.0 / (1.0 + (-z).exp());
                    self.accumulate(grads, *x, &[g[0] * (s - target)]);
                }
            }
            Op::Reshape { x } => {
                if self.needs(*x) {
                    self.accumulate(grads, *x, g);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn node_of(t: &Tensor) -> NodeRef {
        t.node().expect("tensor should be linked")
    }

    #[test]
    fn conv2d_of_ones_sums_kernel_footprint() {
        let mut g = Graph::new();
        let x = Tensor::filled(vec![1, 3, 3], 1.0);
        let k = Tensor::filled(vec![1, 1, 2, 2], 1.0);
        let y = g.conv2d(&x, &k, None, 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 2, 2]);
        assert!(y.data().iter().all(|&v| v == 4.0));
    }

    #[test]
    fn conv2d_identity_kernel_preserves_input() {
        let mut g = Graph::new();
        let x = Tensor::new(vec![1, 4, 4], (0..16).map(|v| v as f32 / 7.0).collect());
        let mut k = Tensor::zeros(vec![1, 1, 3, 3]);
        k.data_mut()[4] = 1.0; // centered delta
        let y = g.conv2d(&x, &k, None, 1, 1).unwrap();
        assert_eq!(y.shape(), x.shape());
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn conv2d_shape_mismatch_reports_both_shapes() {
        let mut g = Graph::new();
        let x = Tensor::zeros(vec![2, 4, 4]);
        let k = Tensor::zeros(vec![1, 3, 3, 3]);
        let err = g.conv2d(&x, &k, None, 1, 1).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 4, 4]") && msg.contains("[1, 3, 3, 3]"), "{msg}");
    }

    #[test]
    fn grad_of_square_is_two_x() {
        let mut g = Graph::new();
        let x = g.var(&Tensor::scalar(3.0));
        let y = g.mul(&x, &x).unwrap();
        let grads = g.grad(&y, &[node_of(&x)]).unwrap();
        assert_eq!(grads[&node_of(&x)].item(), 6.0);
    }

    #[test]
    fn grad_of_dead_relu_is_zero() {
        let mut g = Graph::new();
        let x = g.var(&Tensor::scalar(-1.0));
        let y = g.relu(&x).unwrap();
        let s = g.sum(&y).unwrap();
        let grads = g.grad(&s, &[node_of(&x)]).unwrap();
        assert_eq!(grads[&node_of(&x)].item(), 0.0);
    }

    #[test]
    fn grad_rejects_non_scalar_output() {
        let mut g = Graph::new();
        let x = g.var(&Tensor::zeros(vec![3]));
        let y = g.relu(&x).unwrap();
        assert!(matches!(g.grad(&y, &[node_of(&x)]), Err(TensorError::NotScalar { .. })));
    }

    #[test]
    fn grad_rejects_foreign_node() {
        let mut g1 = Graph::new();
        let mut g2 = Graph::new();
        let x1 = g1.var(&Tensor::scalar(1.0));
        let x2 = g2.var(&Tensor::scalar(1.0));
        let y = g1.mul(&x1, &x1).unwrap();
        assert!(matches!(g1.grad(&y, &[node_of(&x2)]), Err(TensorError::GraphMismatch)));
    }

    #[test]
    fn grad_is_rerunnable_and_stable() {
        let mut g = Graph::new();
        let x = g.var(&Tensor::new(vec![2], vec![1.5, -0.5]));
        let n = g.pnorm(&x, 2.0).unwrap();
        let a = g.grad(&n, &[node_of(&x)]).unwrap();
        let b = g.grad(&n, &[node_of(&x)]).unwrap();
        assert_eq!(a[&node_of(&x)].data(), b[&node_of(&x)].data());
    }

    #[test]
    fn clamp_blocks_gradient_outside_open_interval() {
        let mut g = Graph::new();
        let x = g.var(&Tensor::new(vec![3], vec![-0.5, 0.5, 1.5]));
        let c = g.clamp(&x, 0.0, 1.0).unwrap();
        let s = g.sum(&c).unwrap();
        let grads = g.grad(&s, &[node_of(&x)]).unwrap();
        assert_eq!(grads[&node_of(&x)].data(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn forward_is_deterministic() {
        let run = || {
            let mut g = Graph::new();
            let x = Tensor::new(vec![1, 4, 4], (0..16).map(|v| (v as f32).sin()).collect());
            let k = Tensor::new(vec![2, 1, 3, 3], (0..18).map(|v| (v as f32).cos()).collect());
            let y = g.conv2d(&x, &k, None, 1, 1).unwrap();
            let y = g.sigmoid(&y).unwrap();
            let s = g.sum(&y).unwrap();
            s.item().to_bits()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn abs_composition_matches_abs() {
        let mut g = Graph::new();
        let x = g.var(&Tensor::new(vec![4], vec![-2.0, -0.5, 0.0, 3.0]));
        let a = g.abs(&x).unwrap();
        assert_eq!(a.data(), &[2.0, 0.5, 0.0, 3.0]);
        let s = g.sum(&a).unwrap();
        let grads = g.grad(&s, &[node_of(&x)]).unwrap();
        assert_eq!(grads[&node_of(&x)].data(), &[-1.0, -1.0, 0.0, 1.0]);
    }

    #[test]
    fn bce_logit_matches_closed_form() {
        let mut g = Graph::new();
        let z = g.var(&Tensor::scalar(0.7));
        let loss = g.bce_logit(&z, 1.0).unwrap();
        let expected = (1.0f32 + (-0.7f32).exp()).ln();
        assert!((loss.item() - expected).abs() < 1e-6);
        let grads = g.grad(&loss, &[node_of(&z)]).unwrap();
        let sig = 1.0 / (1.0 + (-0.7f32).exp());
        assert!((grads[&node_of(&z)].item() - (sig - 1.0)).abs() < 1e-6);
    }
}
