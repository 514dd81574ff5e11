//! Reverse-mode automatic differentiation over tensors.
//!
//! A [`Graph`] is an append-only tape: every op pushes a node whose parents
//! already exist, so reverse insertion order is a valid topological order
//! and [`Graph::backward`] visits each node once. Gradients of a node that
//! feeds several consumers are accumulated additively.

use alloc::vec;
use alloc::vec::Vec;

use crate::conv::{self, ConvGeom};
use crate::error::{invalid, Error, Result};
use crate::real::Real;
use crate::tensor::{rows_channels, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Per-channel statistics of one training-mode batch-norm call.
#[derive(Debug, Clone)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Bessel-corrected variance, used for the running estimate.
    pub var: Vec<T>,
}

enum Op<T> {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        geom: ConvGeom,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        /// Batch statistics (train) or frozen running statistics (infer).
        batch: bool,
    },
    Prelu {
        x: Var,
        alpha: Var,
    },
    AvgPool {
        x: Var,
        k: usize,
    },
    Concat {
        a: Var,
        b: Var,
    },
    Sub {
        a: Var,
        b: Var,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    grad: Option<Vec<T>>,
    requires_grad: bool,
    op: Op<T>,
}

pub struct Graph<T: Real = f32> {
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

    /// Adds a leaf. Parameters are leaves with `requires_grad = true`.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient accumulated by the last [`Graph::backward`], if the node
    /// received one.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, requires_grad: bool, op: Op<T>) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize) -> Result<Var> {
        let geom = ConvGeom::new(self.shape(x), self.shape(w), self.shape(b), stride)?;
        let out = conv::forward(&geom, self.value(x).data(), self.value(w).data(), self.value(b).data());
        let value = Tensor::new(&geom.out_shape(), out)?;
        let rg = self.any_grad(&[x, w, b]);
        Ok(self.push(value, rg, Op::Conv2d { x, w, b, geom }))
    }

    fn check_channel_param(&self, op: &'static str, x: Var, p: Var) -> Result<usize> {
        let c = self.value(x).channels();
        if self.shape(p) != [c] {
            return Err(Error::ShapeMismatch {
                op,
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(p).to_vec(),
            });
        }
        Ok(c)
    }

    /// Training-mode batch normalization: normalizes every channel with the
    /// batch mean and (biased) variance.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<(Var, BatchStats<T>)> {
        let c = self.check_channel_param("batch_norm", x, gamma)?;
        self.check_channel_param("batch_norm", x, beta)?;
        let (rows, _) = rows_channels(self.shape(x));
        if rows < 2 {
            return Err(invalid("batch_norm", "training mode needs at least 2 values per channel"));
        }
        let xd = self.value(x).data();
        let n = T::from_usize(rows);
        let mut mean = vec![T::ZERO; c];
        for row in xd.chunks_exact(c) {
            for (m, &v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut ss = vec![T::ZERO; c];
        for row in xd.chunks_exact(c) {
            for ((s, &v), &m) in ss.iter_mut().zip(row).zip(&mean) {
                let d = v - m;
                *s += d * d;
            }
        }
        let inv_std: Vec<T> = ss.iter().map(|&s| T::ONE / (s / n + eps).sqrt()).collect();
        let unbiased = ss.iter().map(|&s| s / T::from_usize(rows - 1)).collect();
        let stats = BatchStats { mean: mean.clone(), var: unbiased };
        let v = self.normalize(x, gamma, beta, &mean, inv_std, true)?;
        Ok((v, stats))
    }

    /// Inference-mode batch normalization with frozen statistics; an affine
    /// map of `x`.
    pub fn batch_norm_infer(&mut self, x: Var, gamma: Var, beta: Var, mean: &[T], var: &[T], eps: T) -> Result<Var> {
        let c = self.check_channel_param("batch_norm", x, gamma)?;
        self.check_channel_param("batch_norm", x, beta)?;
        if mean.len() != c || var.len() != c {
            return Err(Error::ShapeMismatch {
                op: "batch_norm (running statistics)",
                lhs: self.shape(x).to_vec(),
                rhs: vec![mean.len(), var.len()],
            });
        }
        let inv_std = var.iter().map(|&v| T::ONE / (v + eps).sqrt()).collect();
        self.normalize(x, gamma, beta, mean, inv_std, false)
    }

    fn normalize(&mut self, x: Var, gamma: Var, beta: Var, mean: &[T], inv_std: Vec<T>, batch: bool) -> Result<Var> {
        let c = mean.len();
        let xd = self.value(x).data();
        let (gd, bd) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = Vec::with_capacity(xd.len());
        let mut out = Vec::with_capacity(xd.len());
        for row in xd.chunks_exact(c.max(1)) {
            for (ch, &v) in row.iter().enumerate() {
                let h = (v - mean[ch]) * inv_std[ch];
                xhat.push(h);
                out.push(gd[ch] * h + bd[ch]);
            }
        }
        let value = Tensor::new(self.shape(x), out)?;
        let rg = self.any_grad(&[x, gamma, beta]);
        Ok(self.push(
            value,
            rg,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch,
            },
        ))
    }

    /// `x` where positive, `alpha[c] * x` otherwise.
    pub fn prelu(&mut self, x: Var, alpha: Var) -> Result<Var> {
        let c = self.check_channel_param("prelu", x, alpha)?;
        let a = self.value(alpha).data();
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_exact_mut(c.max(1)) {
            for (v, &al) in row.iter_mut().zip(a) {
                if *v <= T::ZERO {
                    *v = al * *v;
                }
            }
        }
        let value = Tensor::new(self.shape(x), out)?;
        let rg = self.any_grad(&[x, alpha]);
        Ok(self.push(value, rg, Op::Prelu { x, alpha }))
    }

    /// Non-overlapping `k x k` mean pooling.
    pub fn avg_pool(&mut self, x: Var, k: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 || k == 0 || !s[1].is_multiple_of(k) || !s[2].is_multiple_of(k) {
            return Err(invalid("avg_pool", alloc::format!("extent {s:?} not divisible by window {k}")));
        }
        let (b, h, w, c) = (s[0], s[1], s[2], s[3]);
        let (oh, ow) = (h / k, w / k);
        let xd = self.value(x).data();
        let norm = T::from_usize(k * k);
        let mut out = vec![T::ZERO; b * oh * ow * c];
        for bi in 0..b {
            for i in 0..oh {
                for j in 0..ow {
                    let o = &mut out[((bi * oh + i) * ow + j) * c..][..c];
                    for u in 0..k {
                        for v in 0..k {
                            let src = &xd[((bi * h + i * k + u) * w + j * k + v) * c..][..c];
                            for (a, &val) in o.iter_mut().zip(src) {
                                *a += val;
                            }
                        }
                    }
                    o.iter_mut().for_each(|a| *a /= norm);
                }
            }
        }
        let value = Tensor::new(&[b, oh, ow, c], out)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, rg, Op::AvgPool { x, k }))
    }

    /// Concatenates along the trailing (channel) axis, `a` first.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != sb.len() || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
            return Err(Error::ShapeMismatch {
                op: "channel_concat",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (rows, ca) = rows_channels(sa);
        let cb = *sb.last().unwrap();
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(rows * (ca + cb));
        for r in 0..rows {
            out.extend_from_slice(&ad[r * ca..(r + 1) * ca]);
            out.extend_from_slice(&bd[r * cb..(r + 1) * cb]);
        }
        let mut shape = sa.to_vec();
        *shape.last_mut().unwrap() = ca + cb;
        let value = Tensor::new(&shape, out)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, rg, Op::Concat { a, b }))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::ShapeMismatch {
                op: "pointwise_sub",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let out = self.value(a).data().iter().zip(self.value(b).data()).map(|(&p, &q)| p - q).collect();
        let value = Tensor::new(self.shape(a), out)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, rg, Op::Sub { a, b }))
    }

    /// Mean negative log-likelihood of `labels` under `softmax(logits)`.
    /// Every leading axis of `logits` is treated as a batch row, the trailing
    /// axis as classes. Returns the scalar loss node and the probabilities.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<(Var, Tensor<T>)> {
        let shape = self.shape(logits).to_vec();
        let (rows, n) = rows_channels(&shape);
        if n < 2 {
            return Err(invalid("softmax_cross_entropy", "need at least 2 classes"));
        }
        if labels.len() != rows {
            return Err(invalid(
                "softmax_cross_entropy",
                alloc::format!("{} labels for {rows} rows", labels.len()),
            ));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= n) {
            return Err(Error::LabelOutOfRange { label, n_class: n });
        }
        let z = self.value(logits).data();
        let mut probs = Vec::with_capacity(z.len());
        let mut loss = T::ZERO;
        for (row, &label) in z.chunks_exact(n).zip(labels) {
            let (log_norm, p) = log_softmax_row(row);
            loss += log_norm - row[label];
            probs.extend(p);
        }
        loss /= T::from_usize(rows);
        let probs_t = Tensor::new(&[rows, n], probs.clone())?;
        let rg = self.any_grad(&[logits]);
        let v = self.push(
            Tensor::scalar(loss),
            rg,
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        );
        Ok((v, probs_t))
    }

    /// Back-propagates from the scalar `loss`, seeding its gradient with 1.
    /// Gradients from an earlier call are discarded.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(invalid("backward", "loss must be a scalar"));
        }
        self.backward_with(loss, vec![T::ONE])
    }

    /// Back-propagates an arbitrary upstream gradient for `out`.
    pub fn backward_with(&mut self, out: Var, seed: Vec<T>) -> Result<()> {
        if seed.len() != self.value(out).len() {
            return Err(Error::ShapeMismatch {
                op: "backward",
                lhs: self.shape(out).to_vec(),
                rhs: vec![seed.len()],
            });
        }
        for n in &mut self.nodes {
            n.grad = None;
        }
        self.nodes[out.0].grad = Some(seed);
        for i in (0..=out.0).rev() {
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &mut rest[0];
            if !node.requires_grad {
                continue;
            }
            let Some(gout) = node.grad.as_deref() else {
                continue;
            };
            backprop(&node.op, &node.value, gout, before);
        }
        Ok(())
    }
}

/// `(log Σ exp z, softmax(z))`, shifted by the row max for stability.
pub(crate) fn log_softmax_row<T: Real>(row: &[T]) -> (T, Vec<T>) {
    let m = row.iter().copied().fold(row[0], T::max);
    let e: Vec<T> = row.iter().map(|&v| (v - m).exp()).collect();
    let s: T = e.iter().copied().sum();
    (m + s.ln(), e.into_iter().map(|v| v / s).collect())
}

/// Row-wise softmax over the trailing axis (forward only).
pub fn softmax<T: Real>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let (rows, n) = rows_channels(logits.shape());
    if n == 0 {
        return Err(invalid("softmax", "no classes"));
    }
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.data().chunks_exact(n) {
        out.extend(log_softmax_row(row).1);
    }
    Tensor::new(&[rows, n], out)
}

/// Splits channels `[0, at)` and `[at, C)`; inverse of `Graph::concat`.
pub fn split_channels<T: Real>(t: &Tensor<T>, at: usize) -> Result<(Tensor<T>, Tensor<T>)> {
    let (rows, c) = rows_channels(t.shape());
    if at > c {
        return Err(invalid("split_channels", alloc::format!("split point {at} beyond {c} channels")));
    }
    let mut a = Vec::with_capacity(rows * at);
    let mut b = Vec::with_capacity(rows * (c - at));
    for r in 0..rows {
        a.extend_from_slice(&t.data()[r * c..r * c + at]);
        b.extend_from_slice(&t.data()[r * c + at..(r + 1) * c]);
    }
    let mut sa = t.shape().to_vec();
    let mut sb = sa.clone();
    *sa.last_mut().unwrap() = at;
    *sb.last_mut().unwrap() = c - at;
    Ok((Tensor::new(&sa, a)?, Tensor::new(&sb, b)?))
}

fn accumulate<T: Real>(nodes: &mut [Node<T>], v: Var, g: Vec<T>) {
    let node = &mut nodes[v.0];
    if !node.requires_grad {
        return;
    }
    match node.grad.as_mut() {
        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &d)| *a += d),
        None => node.grad = Some(g),
    }
}

fn backprop<T: Real>(op: &Op<T>, value: &Tensor<T>, gout: &[T], nodes: &mut [Node<T>]) {
    match op {
        Op::Leaf => {}
        Op::Conv2d { x, w, b, geom } => {
            let grads = conv::backward(
                geom,
                nodes[x.0].value.data(),
                nodes[w.0].value.data(),
                gout,
                nodes[x.0].requires_grad,
                nodes[w.0].requires_grad,
                nodes[b.0].requires_grad,
            );
            if let Some(g) = grads.input {
                accumulate(nodes, *x, g);
            }
            if let Some(g) = grads.weight {
                accumulate(nodes, *w, g);
            }
            if let Some(g) = grads.bias {
                accumulate(nodes, *b, g);
            }
        }
        Op::BatchNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
            batch,
        } => {
            let c = inv_std.len();
            let mut sum_dy = vec![T::ZERO; c];
            let mut sum_dy_xhat = vec![T::ZERO; c];
            for (go, xh) in gout.chunks_exact(c).zip(xhat.chunks_exact(c)) {
                for ch in 0..c {
                    sum_dy[ch] += go[ch];
                    sum_dy_xhat[ch] += go[ch] * xh[ch];
                }
            }
            if nodes[x.0].requires_grad {
                let gd = nodes[gamma.0].value.data();
                let rows = gout.len() / c;
                let n = T::from_usize(rows);
                let mut gx = Vec::with_capacity(gout.len());
                for (go, xh) in gout.chunks_exact(c).zip(xhat.chunks_exact(c)) {
                    for ch in 0..c {
                        let scale = gd[ch] * inv_std[ch];
                        gx.push(if *batch {
                            scale / n * (n * go[ch] - sum_dy[ch] - xh[ch] * sum_dy_xhat[ch])
                        } else {
                            scale * go[ch]
                        });
                    }
                }
                accumulate(nodes, *x, gx);
            }
            accumulate(nodes, *gamma, sum_dy_xhat);
            accumulate(nodes, *beta, sum_dy);
        }
        Op::Prelu { x, alpha } => {
            let xd = nodes[x.0].value.data();
            let ad = nodes[alpha.0].value.data();
            let c = ad.len().max(1);
            let mut gx = Vec::with_capacity(xd.len());
            let mut ga = vec![T::ZERO; ad.len()];
            for (xr, gr) in xd.chunks_exact(c).zip(gout.chunks_exact(c)) {
                for ch in 0..ad.len() {
                    if xr[ch] > T::ZERO {
                        gx.push(gr[ch]);
                    } else {
                        gx.push(ad[ch] * gr[ch]);
                        ga[ch] += xr[ch] * gr[ch];
                    }
                }
            }
            accumulate(nodes, *x, gx);
            accumulate(nodes, *alpha, ga);
        }
        Op::AvgPool { x, k } => {
            let s = nodes[x.0].value.shape().to_vec();
            let (b, h, w, c) = (s[0], s[1], s[2], s[3]);
            let (oh, ow) = (h / k, w / k);
            let norm = T::from_usize(k * k);
            let mut gx = vec![T::ZERO; b * h * w * c];
            for bi in 0..b {
                for i in 0..h {
                    for j in 0..w {
                        let src = &gout[((bi * oh + i / k) * ow + j / k) * c..][..c];
                        let dst = &mut gx[((bi * h + i) * w + j) * c..][..c];
                        for (d, &g) in dst.iter_mut().zip(src) {
                            *d = g / norm;
                        }
                    }
                }
            }
            accumulate(nodes, *x, gx);
        }
        Op::Concat { a, b } => {
            let ca = nodes[a.0].value.channels();
            let c = value.channels();
            let rows = gout.len() / c.max(1);
            let mut ga = Vec::with_capacity(rows * ca);
            let mut gb = Vec::with_capacity(rows * (c - ca));
            for r in 0..rows {
                ga.extend_from_slice(&gout[r * c..r * c + ca]);
                gb.extend_from_slice(&gout[r * c + ca..(r + 1) * c]);
            }
            accumulate(nodes, *a, ga);
            accumulate(nodes, *b, gb);
        }
        Op::Sub { a, b } => {
            accumulate(nodes, *a, gout.to_vec());
            accumulate(nodes, *b, gout.iter().map(|&g| -g).collect());
        }
        Op::SoftmaxCrossEntropy { logits, labels, probs } => {
            let n = probs.len() / labels.len();
            let scale = gout[0] / T::from_usize(labels.len());
            let mut g: Vec<T> = probs.iter().map(|&p| p * scale).collect();
            for (r, &l) in labels.iter().enumerate() {
                g[r * n + l] -= scale;
            }
            accumulate(nodes, *logits, g);
        }
    }
}
