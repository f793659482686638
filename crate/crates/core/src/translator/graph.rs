//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! Every operation appends a node holding its forward value; [`Graph::backward`]
//! walks the tape in reverse. Only nodes that depend on a trainable parameter
//! receive gradients.

use std::collections::BTreeMap;

use rand::Rng;

use super::tensor::{conv_transpose_out_len, Patches, Real, Tensor};
use crate::error::{Error, Result};

const NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub stride: usize,
    pub pad: usize,
}

enum Op<T> {
    Leaf,
    Param(String),
    Conv2d { x: NodeId, w: NodeId, b: NodeId, geo: ConvGeometry },
    ConvTranspose2d { x: NodeId, w: NodeId, b: NodeId, geo: ConvGeometry },
    LeakyRelu { x: NodeId, slope: T },
    Tanh { x: NodeId },
    InstanceNorm { x: NodeId, gamma: NodeId, beta: NodeId, xhat: Vec<T>, inv_std: Vec<T> },
    Dropout { x: NodeId, mask: Vec<T> },
    Concat { a: NodeId, b: NodeId },
    L1 { a: NodeId, b: NodeId },
    SquaredError { x: NodeId, target: T },
    WeightedSum { terms: Vec<(NodeId, T)> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Parameter name to node mapping produced by [`Graph::bind`].
pub type Bound = BTreeMap<String, NodeId>;

pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> NodeId {
        self.nodes.push(Node { value, op, needs_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// Constant input; never receives a gradient.
    pub fn input(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    /// Trainable parameter.
    pub fn param(&mut self, name: impl Into<String>, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Param(name.into()), true)
    }

    /// Registers every tensor of `params`; with `trainable = false` they enter
    /// as constants (gradients still flow through them to their inputs).
    pub fn bind<'a>(&mut self, params: impl IntoIterator<Item = (&'a String, &'a Tensor<T>)>, trainable: bool) -> Bound {
        params
            .into_iter()
            .map(|(name, t)| {
                let id = if trainable { self.param(name.clone(), t.clone()) } else { self.input(t.clone()) };
                (name.clone(), id)
            })
            .collect()
    }

    fn check_conv_params(&self, x: NodeId, w: NodeId, b: NodeId, in_axis: usize, out_axis: usize) -> Result<()> {
        let (xs, ws, bs) = (self.value(x).shape(), self.value(w).shape(), self.value(b).shape());
        if ws[2] != ws[3] {
            return Err(Error::Shape(format!("non-square kernel {ws:?}")));
        }
        if xs[1] != ws[in_axis] {
            return Err(Error::Shape(format!("input has {} channels, weights expect {}", xs[1], ws[in_axis])));
        }
        if bs != [1, ws[out_axis], 1, 1] {
            return Err(Error::Shape(format!("bias shape {bs:?} for weights {ws:?}")));
        }
        Ok(())
    }

    /// Cross-correlation; weights `(out, in, k, k)`, bias `(1, out, 1, 1)`.
    pub fn conv2d(&mut self, x: NodeId, w: NodeId, b: NodeId, geo: ConvGeometry) -> Result<NodeId> {
        self.check_conv_params(x, w, b, 1, 0)?;
        let xs = self.value(x).shape();
        let ws = self.value(w).shape();
        let (c_out, k) = (ws[0], ws[2]);
        let p = Patches::new(xs[1], xs[2], xs[3], k, geo.stride, geo.pad)?;
        let mut out = Tensor::zeros([xs[0], c_out, p.out_h, p.out_w]);
        let mut col = vec![T::zero(); p.rows() * p.cols()];
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        for n in 0..xs[0] {
            p.im2col(xv.item(n), &mut col);
            let dst = out.item_mut(n);
            for (o, chunk) in dst.chunks_mut(p.cols()).enumerate() {
                chunk.fill(bv.data()[o]);
            }
            let rows = p.rows() as isize;
            let cols = p.cols() as isize;
            T::gemm(c_out, p.rows(), p.cols(), T::one(), wv.data(), rows, 1, &col, cols, 1, T::one(), dst, cols, 1);
        }
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(out, Op::Conv2d { x, w, b, geo }, needs))
    }

    /// Transposed convolution; weights `(in, out, k, k)`, bias `(1, out, 1, 1)`.
    pub fn conv_transpose2d(&mut self, x: NodeId, w: NodeId, b: NodeId, geo: ConvGeometry) -> Result<NodeId> {
        self.check_conv_params(x, w, b, 0, 1)?;
        let xs = self.value(x).shape();
        let ws = self.value(w).shape();
        let (c_in, c_out, k) = (ws[0], ws[1], ws[2]);
        let (out_h, out_w) = match (
            conv_transpose_out_len(xs[2], k, geo.stride, geo.pad),
            conv_transpose_out_len(xs[3], k, geo.stride, geo.pad),
        ) {
            (Some(h), Some(w)) if h > 0 && w > 0 => (h, w),
            _ => return Err(Error::Shape(format!("transposed conv of {xs:?} has no output"))),
        };
        let p = Patches::new(c_out, out_h, out_w, k, geo.stride, geo.pad)?;
        debug_assert_eq!((p.out_h, p.out_w), (xs[2], xs[3]));
        let mut out = Tensor::zeros([xs[0], c_out, out_h, out_w]);
        let mut col = vec![T::zero(); p.rows() * p.cols()];
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let hw = xs[2] * xs[3];
        for n in 0..xs[0] {
            // col (c_out*k*k x hw) = W^T (c_out*k*k x c_in) * x_n (c_in x hw)
            let rows = p.rows() as isize;
            T::gemm(p.rows(), c_in, hw, T::one(), wv.data(), 1, rows, xv.item(n), hw as isize, 1, T::zero(), &mut col, hw as isize, 1);
            let dst = out.item_mut(n);
            p.col2im(&col, dst);
            for (o, chunk) in dst.chunks_mut(out_h * out_w).enumerate() {
                let bias = bv.data()[o];
                chunk.iter_mut().for_each(|v| *v += bias);
            }
        }
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(out, Op::ConvTranspose2d { x, w, b, geo }, needs))
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: f64) -> NodeId {
        let slope = T::of(slope);
        let out = self.value(x).map(|v| if v > T::zero() { v } else { v * slope });
        let needs = self.needs(x);
        self.push(out, Op::LeakyRelu { x, slope }, needs)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.leaky_relu(x, 0.0)
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).map(|v| v.tanh());
        let needs = self.needs(x);
        self.push(out, Op::Tanh { x }, needs)
    }

    /// Per-sample, per-channel standardisation followed by a learned affine
    /// map; `gamma` and `beta` are `(1, channels, 1, 1)`.
    pub fn instance_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        let [batch, ch, h, w] = xv.shape();
        for p in [gamma, beta] {
            if self.value(p).shape() != [1, ch, 1, 1] {
                return Err(Error::Shape(format!("norm parameters {:?} for {ch} channels", self.value(p).shape())));
            }
        }
        let (gv, bv) = (self.value(gamma).data(), self.value(beta).data());
        let plane = h * w;
        let mut xhat = Vec::with_capacity(xv.numel());
        let mut inv_std = Vec::with_capacity(batch * ch);
        let mut out = Vec::with_capacity(xv.numel());
        for (i, chunk) in xv.data().chunks(plane).enumerate() {
            let c = i % ch;
            let mean = chunk.iter().map(|v| v.f64()).sum::<f64>() / plane as f64;
            let var = chunk.iter().map(|v| (v.f64() - mean).powi(2)).sum::<f64>() / plane as f64;
            let inv = 1.0 / (var + NORM_EPS).sqrt();
            inv_std.push(T::of(inv));
            for &v in chunk {
                let z = T::of((v.f64() - mean) * inv);
                xhat.push(z);
                out.push(gv[c] * z + bv[c]);
            }
        }
        let out = Tensor::from_vec(xv.shape(), out)?;
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(out, Op::InstanceNorm { x, gamma, beta, xhat, inv_std }, needs))
    }

    /// Inverted dropout: kept units are scaled by `1 / (1 - rate)`.
    pub fn dropout(&mut self, x: NodeId, rate: f64, rng: &mut impl Rng) -> NodeId {
        let keep = 1.0 - rate;
        let scale = T::of(1.0 / keep);
        let mask: Vec<T> = (0..self.value(x).numel())
            .map(|_| if rng.random::<f64>() < keep { scale } else { T::zero() })
            .collect();
        self.dropout_with_mask(x, mask)
    }

    pub fn dropout_with_mask(&mut self, x: NodeId, mask: Vec<T>) -> NodeId {
        let xv = self.value(x);
        assert_eq!(mask.len(), xv.numel(), "dropout mask size");
        let data = xv.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let out = Tensor::from_vec(xv.shape(), data).expect("same shape");
        let needs = self.needs(x);
        self.push(out, Op::Dropout { x, mask }, needs)
    }

    /// Channel concatenation.
    pub fn concat(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa[0] != sb[0] || sa[2..] != sb[2..] {
            return Err(Error::Shape(format!("cannot concatenate {sa:?} and {sb:?}")));
        }
        let shape = [sa[0], sa[1] + sb[1], sa[2], sa[3]];
        let mut data = Vec::with_capacity(shape.iter().product());
        for n in 0..sa[0] {
            data.extend_from_slice(self.value(a).item(n));
            data.extend_from_slice(self.value(b).item(n));
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::from_vec(shape, data)?, Op::Concat { a, b }, needs))
    }

    /// `mean(|a - b|)` as a scalar node.
    pub fn l1(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::Shape(format!("l1 of {:?} and {:?}", va.shape(), vb.shape())));
        }
        let sum: f64 = va.data().iter().zip(vb.data()).map(|(&p, &q)| (p - q).abs().f64()).sum();
        let out = Tensor::scalar(T::of(sum / va.numel() as f64));
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::L1 { a, b }, needs))
    }

    /// `mean((x - target)^2)` as a scalar node.
    pub fn squared_error(&mut self, x: NodeId, target: f64) -> NodeId {
        let xv = self.value(x);
        let sum: f64 = xv.data().iter().map(|&v| (v.f64() - target).powi(2)).sum();
        let out = Tensor::scalar(T::of(sum / xv.numel() as f64));
        let needs = self.needs(x);
        self.push(out, Op::SquaredError { x, target: T::of(target) }, needs)
    }

    /// Linear combination of scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(NodeId, f64)]) -> Result<NodeId> {
        let mut total = 0.0;
        for &(id, w) in terms {
            if self.value(id).numel() != 1 {
                return Err(Error::Shape("weighted_sum expects scalar terms".into()));
            }
            total += w * self.value(id).value().f64();
        }
        let needs = terms.iter().any(|&(id, _)| self.needs(id));
        let terms = terms.iter().map(|&(id, w)| (id, T::of(w))).collect();
        Ok(self.push(Tensor::scalar(T::of(total)), Op::WeightedSum { terms }, needs))
    }

    /// Gradients of the scalar `loss` with respect to every trainable
    /// parameter reachable from it, keyed by parameter name.
    pub fn backward(&self, loss: NodeId) -> Result<BTreeMap<String, Tensor<T>>> {
        if self.nodes.is_empty() || loss.0 >= self.nodes.len() {
            return Err(Error::NoForward);
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::Shape("backward needs a scalar loss".into()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(T::one()));
        let mut out = BTreeMap::new();

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {}
                Op::Param(name) => {
                    out.entry(name.clone())
                        .and_modify(|acc: &mut Tensor<T>| acc.add_assign(&g))
                        .or_insert(g);
                }
                Op::Conv2d { x, w, b, geo } => self.conv2d_backward(&g, *x, *w, *b, *geo, &mut grads)?,
                Op::ConvTranspose2d { x, w, b, geo } => self.conv_t_backward(&g, *x, *w, *b, *geo, &mut grads)?,
                Op::LeakyRelu { x, slope } => {
                    if self.needs(*x) {
                        let xv = self.value(*x);
                        let data = xv
                            .data()
                            .iter()
                            .zip(g.data())
                            .map(|(&v, &gv)| if v > T::zero() { gv } else { gv * *slope })
                            .collect();
                        accumulate(&mut grads, *x, Tensor::from_vec(xv.shape(), data)?);
                    }
                }
                Op::Tanh { x } => {
                    if self.needs(*x) {
                        let data = node
                            .value
                            .data()
                            .iter()
                            .zip(g.data())
                            .map(|(&y, &gv)| gv * (T::one() - y * y))
                            .collect();
                        accumulate(&mut grads, *x, Tensor::from_vec(node.value.shape(), data)?);
                    }
                }
                Op::InstanceNorm { x, gamma, beta, xhat, inv_std } => {
                    let shape = g.shape();
                    let ch = shape[1];
                    let plane = shape[2] * shape[3];
                    let gv = self.value(*gamma).data();
                    let mut dgamma = vec![T::zero(); ch];
                    let mut dbeta = vec![T::zero(); ch];
                    let mut dx = Vec::with_capacity(g.numel());
                    for (i, (gc, zc)) in g.data().chunks(plane).zip(xhat.chunks(plane)).enumerate() {
                        let c = i % ch;
                        let (mut sum_g, mut sum_gz) = (T::zero(), T::zero());
                        for (&gi, &zi) in gc.iter().zip(zc) {
                            sum_g += gi;
                            sum_gz += gi * zi;
                        }
                        dgamma[c] += sum_gz;
                        dbeta[c] += sum_g;
                        // gradient through the standardisation with dxhat = g * gamma
                        let m = T::of(plane as f64);
                        let k = gv[c] * inv_std[i] / m;
                        dx.extend(gc.iter().zip(zc).map(|(&gi, &zi)| k * (m * gi - sum_g - zi * sum_gz)));
                    }
                    if self.needs(*x) {
                        accumulate(&mut grads, *x, Tensor::from_vec(shape, dx)?);
                    }
                    if self.needs(*gamma) {
                        accumulate(&mut grads, *gamma, Tensor::from_vec([1, ch, 1, 1], dgamma)?);
                    }
                    if self.needs(*beta) {
                        accumulate(&mut grads, *beta, Tensor::from_vec([1, ch, 1, 1], dbeta)?);
                    }
                }
                Op::Dropout { x, mask } => {
                    if self.needs(*x) {
                        let data = g.data().iter().zip(mask).map(|(&gv, &m)| gv * m).collect();
                        accumulate(&mut grads, *x, Tensor::from_vec(g.shape(), data)?);
                    }
                }
                Op::Concat { a, b } => {
                    let (sa, sb) = (self.value(*a).shape(), self.value(*b).shape());
                    let (la, lb) = (sa[1] * sa[2] * sa[3], sb[1] * sb[2] * sb[3]);
                    if self.needs(*a) {
                        let data = (0..sa[0]).flat_map(|n| g.item(n)[..la].iter().copied()).collect();
                        accumulate(&mut grads, *a, Tensor::from_vec(sa, data)?);
                    }
                    if self.needs(*b) {
                        let data = (0..sb[0]).flat_map(|n| g.item(n)[la..la + lb].iter().copied()).collect();
                        accumulate(&mut grads, *b, Tensor::from_vec(sb, data)?);
                    }
                }
                Op::L1 { a, b } => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let scale = g.value() / T::of(va.numel() as f64);
                    let sign: Vec<T> = va
                        .data()
                        .iter()
                        .zip(vb.data())
                        .map(|(&p, &q)| {
                            if p > q {
                                scale
                            } else if p < q {
                                -scale
                            } else {
                                T::zero()
                            }
                        })
                        .collect();
                    if self.needs(*b) {
                        let neg = sign.iter().map(|&s| -s).collect();
                        accumulate(&mut grads, *b, Tensor::from_vec(vb.shape(), neg)?);
                    }
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, Tensor::from_vec(va.shape(), sign)?);
                    }
                }
                Op::SquaredError { x, target } => {
                    if self.needs(*x) {
                        let xv = self.value(*x);
                        let scale = g.value() * T::of(2.0 / xv.numel() as f64);
                        accumulate(&mut grads, *x, xv.map(|v| (v - *target) * scale));
                    }
                }
                Op::WeightedSum { terms } => {
                    for &(id, w) in terms {
                        if self.needs(id) {
                            accumulate(&mut grads, id, Tensor::scalar(g.value() * w));
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    fn conv2d_backward(
        &self,
        g: &Tensor<T>,
        x: NodeId,
        w: NodeId,
        b: NodeId,
        geo: ConvGeometry,
        grads: &mut [Option<Tensor<T>>],
    ) -> Result<()> {
        let (xv, wv) = (self.value(x), self.value(w));
        let (xs, ws) = (xv.shape(), wv.shape());
        let c_out = ws[0];
        let p = Patches::new(xs[1], xs[2], xs[3], ws[2], geo.stride, geo.pad)?;
        let (rows, cols) = (p.rows(), p.cols());
        if self.needs(b) {
            accumulate(grads, b, bias_grad(g, c_out));
        }
        let mut col = vec![T::zero(); rows * cols];
        if self.needs(w) {
            let mut gw = Tensor::zeros(ws);
            for n in 0..xs[0] {
                p.im2col(xv.item(n), &mut col);
                // gw (c_out x rows) += g_n (c_out x cols) * col^T (cols x rows)
                T::gemm(c_out, cols, rows, T::one(), g.item(n), cols as isize, 1, &col, 1, cols as isize, T::one(), gw.data_mut(), rows as isize, 1);
            }
            accumulate(grads, w, gw);
        }
        if self.needs(x) {
            let mut gx = Tensor::zeros(xs);
            for n in 0..xs[0] {
                // col (rows x cols) = W^T (rows x c_out) * g_n (c_out x cols)
                T::gemm(rows, c_out, cols, T::one(), wv.data(), 1, rows as isize, g.item(n), cols as isize, 1, T::zero(), &mut col, cols as isize, 1);
                p.col2im(&col, gx.item_mut(n));
            }
            accumulate(grads, x, gx);
        }
        Ok(())
    }

    fn conv_t_backward(
        &self,
        g: &Tensor<T>,
        x: NodeId,
        w: NodeId,
        b: NodeId,
        geo: ConvGeometry,
        grads: &mut [Option<Tensor<T>>],
    ) -> Result<()> {
        let (xv, wv) = (self.value(x), self.value(w));
        let (xs, ws) = (xv.shape(), wv.shape());
        let (c_in, c_out) = (ws[0], ws[1]);
        let gs = g.shape();
        let p = Patches::new(c_out, gs[2], gs[3], ws[2], geo.stride, geo.pad)?;
        let (rows, hw) = (p.rows(), p.cols());
        if self.needs(b) {
            accumulate(grads, b, bias_grad(g, c_out));
        }
        let mut gcol = vec![T::zero(); rows * hw];
        let mut gw = self.needs(w).then(|| Tensor::zeros(ws));
        let mut gx = self.needs(x).then(|| Tensor::zeros(xs));
        for n in 0..xs[0] {
            p.im2col(g.item(n), &mut gcol);
            if let Some(gw) = gw.as_mut() {
                // gw (c_in x rows) += x_n (c_in x hw) * gcol^T (hw x rows)
                T::gemm(c_in, hw, rows, T::one(), xv.item(n), hw as isize, 1, &gcol, 1, hw as isize, T::one(), gw.data_mut(), rows as isize, 1);
            }
            if let Some(gx) = gx.as_mut() {
                // gx_n (c_in x hw) = W (c_in x rows) * gcol (rows x hw)
                T::gemm(c_in, rows, hw, T::one(), wv.data(), rows as isize, 1, &gcol, hw as isize, 1, T::zero(), gx.item_mut(n), hw as isize, 1);
            }
        }
        if let Some(gw) = gw {
            accumulate(grads, w, gw);
        }
        if let Some(gx) = gx {
            accumulate(grads, x, gx);
        }
        Ok(())
    }
}

fn bias_grad<T: Real>(g: &Tensor<T>, channels: usize) -> Tensor<T> {
    let mut gb = Tensor::zeros([1, channels, 1, 1]);
    let plane = g.shape()[2] * g.shape()[3];
    for n in 0..g.batch() {
        for (o, chunk) in g.item(n).chunks(plane).enumerate() {
            gb.data_mut()[o] += chunk.iter().copied().sum::<T>();
        }
    }
    gb
}

fn accumulate<T: Real>(grads: &mut [Option<Tensor<T>>], id: NodeId, g: Tensor<T>) {
    match &mut grads[id.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}
