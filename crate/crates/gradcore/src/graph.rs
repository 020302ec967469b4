//! Tape-based reverse-mode differentiation over dense tensors.
//!
//! A [`Graph`] records every operation applied during a forward pass together
//! with whatever context its backward rule needs (im2col buffers, normalized
//! activations, softmax probabilities). Nodes are addressed by [`Var`] handles
//! and stored in creation order, so a reverse sweep over the node list is a
//! valid topological order for the backward pass.
//!
//! A graph created with [`Graph::no_grad`] computes the same values but keeps
//! no backward context; calling [`Graph::backward`] on it is an error.

use crate::error::{GradError, Result};
use crate::scalar::{gemm, Scalar, Trans};
use crate::tensor::Tensor;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Per-channel statistics observed by a training-mode normalization layer.
#[derive(Debug, Clone)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Biased (population) variance of the batch.
    pub var: Vec<T>,
    pub count: usize,
}

enum Op<T> {
    Leaf,
    Param(usize),
    Conv3x3 {
        input: Var,
        weight: Var,
        cols: Vec<T>,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        batch_stats: bool,
    },
    Relu(Var),
    MaxPool2 {
        input: Var,
        argmax: Vec<usize>,
    },
    GlobalAvgPool(Var),
    Linear {
        input: Var,
        weight: Var,
        bias: Var,
    },
    SliceRows {
        input: Var,
        start: usize,
    },
    CrossEntropy {
        logits: Var,
        probs: Vec<T>,
        targets: Vec<usize>,
        weights: Vec<T>,
        divisor: T,
    },
    Add(Var, Var),
    Scale(Var, T),
    Mul(Var, Var),
    Sum(Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Computation tape.
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
    recording: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn mismatch(layer: &str, expected: &[usize], actual: &[usize]) -> GradError {
    GradError::ShapeMismatch {
        layer: layer.to_string(),
        expected: expected.to_vec(),
        actual: actual.to_vec(),
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Vec<T>>, delta: Vec<T>) {
    match slot {
        Some(g) => g.iter_mut().zip(delta).for_each(|(a, d)| *a = *a + d),
        None => *slot = Some(delta),
    }
}

impl<T: Scalar> Graph<T> {
    /// A recording graph.
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            recording: true,
        }
    }

    /// A graph that only evaluates values.
    pub fn no_grad() -> Self {
        Self {
            nodes: Vec::new(),
            recording: false,
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        let op = if self.recording { op } else { Op::Leaf };
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// A constant input (no gradient is reported for it).
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// A trainable leaf tied to parameter slot `index`.
    pub fn param(&mut self, index: usize, value: &Tensor<T>) -> Var {
        let mut v = value.clone();
        v.clear_grad();
        self.nodes.push(Node {
            value: v,
            op: Op::Param(index),
        });
        Var(self.nodes.len() - 1)
    }

    /// 3×3 convolution, stride 1, zero padding 1, no bias.
    /// `x`: `[N, C, H, W]`, `w`: `[O, C, 3, 3]` → `[N, O, H, W]`.
    pub fn conv3x3(&mut self, x: Var, w: Var) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        let ws = self.value(w).shape().to_vec();
        if xs.len() != 4 {
            return Err(mismatch("conv3x3 input", &[0, 0, 0, 0], &xs));
        }
        let (n, c, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        if ws.len() != 4 || ws[1] != c || ws[2] != 3 || ws[3] != 3 {
            return Err(mismatch("conv3x3 weight", &[ws.first().copied().unwrap_or(0), c, 3, 3], &ws));
        }
        let o = ws[0];
        let hw = h * wd;
        let rows = c * 9;
        let cols_n = n * hw;
        let mut cols = vec![T::zero(); rows * cols_n];
        {
            let xd = self.value(x).data();
            for ci in 0..c {
                for ky in 0..3 {
                    for kx in 0..3 {
                        let r = ci * 9 + ky * 3 + kx;
                        let row = &mut cols[r * cols_n..(r + 1) * cols_n];
                        for ni in 0..n {
                            let src = &xd[(ni * c + ci) * hw..(ni * c + ci + 1) * hw];
                            let dst = &mut row[ni * hw..(ni + 1) * hw];
                            for y in 0..h {
                                let sy = y as isize + ky as isize - 1;
                                if sy < 0 || sy >= h as isize {
                                    continue;
                                }
                                let sy = sy as usize;
                                let x0 = if kx == 0 { 1 } else { 0 };
                                let x1 = if kx == 2 { wd - 1 } else { wd };
                                for xx in x0..x1 {
                                    dst[y * wd + xx] = src[sy * wd + xx + kx - 1];
                                }
                            }
                        }
                    }
                }
            }
        }
        let mut out_cm = vec![T::zero(); o * cols_n];
        gemm(
            Trans::No,
            Trans::No,
            o,
            cols_n,
            rows,
            T::one(),
            self.value(w).data(),
            &cols,
            T::zero(),
            &mut out_cm,
        );
        let mut out = vec![T::zero(); n * o * hw];
        for oi in 0..o {
            for ni in 0..n {
                out[(ni * o + oi) * hw..(ni * o + oi + 1) * hw]
                    .copy_from_slice(&out_cm[oi * cols_n + ni * hw..oi * cols_n + (ni + 1) * hw]);
            }
        }
        let value = Tensor::from_vec(&[n, o, h, wd], out)?;
        let cols = if self.recording { cols } else { Vec::new() };
        Ok(self.push(value, Op::Conv3x3 { input: x, weight: w, cols }))
    }

    fn bn_dims(&self, x: Var, gamma: Var, beta: Var) -> Result<(usize, usize, usize)> {
        let xs = self.value(x).shape();
        if xs.len() != 4 && xs.len() != 2 {
            return Err(mismatch("batch_norm input", &[0, 0, 0, 0], xs));
        }
        let (n, c) = (xs[0], xs[1]);
        let hw: usize = xs[2..].iter().product();
        for p in [gamma, beta] {
            if self.value(p).shape() != [c] {
                return Err(mismatch("batch_norm affine", &[c], self.value(p).shape()));
            }
        }
        Ok((n, c, hw))
    }

    /// Normalization with the batch's own per-channel statistics.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<(Var, BatchStats<T>)> {
        let (n, c, hw) = self.bn_dims(x, gamma, beta)?;
        let count = n * hw;
        let xd = self.value(x).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        let inv_count = T::one() / T::from_usize(count.max(1));
        for ci in 0..c {
            let mut s = T::zero();
            for ni in 0..n {
                s = s + xd[(ni * c + ci) * hw..(ni * c + ci + 1) * hw].iter().copied().sum::<T>();
            }
            let m = s * inv_count;
            let mut sq = T::zero();
            for ni in 0..n {
                for &v in &xd[(ni * c + ci) * hw..(ni * c + ci + 1) * hw] {
                    sq = sq + (v - m) * (v - m);
                }
            }
            mean[ci] = m;
            var[ci] = sq * inv_count;
        }
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut xhat = vec![T::zero(); xd.len()];
        let mut out = vec![T::zero(); xd.len()];
        for ni in 0..n {
            for ci in 0..c {
                let base = (ni * c + ci) * hw;
                for p in 0..hw {
                    let xh = (xd[base + p] - mean[ci]) * inv_std[ci];
                    xhat[base + p] = xh;
                    out[base + p] = g[ci] * xh + b[ci];
                }
            }
        }
        let value = Tensor::from_vec(self.value(x).shape(), out)?;
        let stats = BatchStats { mean, var, count };
        let (xhat, inv_std) = if self.recording { (xhat, inv_std) } else { (Vec::new(), Vec::new()) };
        let v = self.push(
            value,
            Op::BatchNorm {
                input: x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats: true,
            },
        );
        Ok((v, stats))
    }

    /// Normalization with frozen running statistics.
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[T],
        running_var: &[T],
        eps: T,
    ) -> Result<Var> {
        let (n, c, hw) = self.bn_dims(x, gamma, beta)?;
        if running_mean.len() != c || running_var.len() != c {
            return Err(mismatch("batch_norm running stats", &[c], &[running_mean.len()]));
        }
        let inv_std: Vec<T> = running_var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let xd = self.value(x).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = vec![T::zero(); xd.len()];
        let mut out = vec![T::zero(); xd.len()];
        for ni in 0..n {
            for ci in 0..c {
                let base = (ni * c + ci) * hw;
                for p in 0..hw {
                    let xh = (xd[base + p] - running_mean[ci]) * inv_std[ci];
                    xhat[base + p] = xh;
                    out[base + p] = g[ci] * xh + b[ci];
                }
            }
        }
        let value = Tensor::from_vec(self.value(x).shape(), out)?;
        let (xhat, inv_std) = if self.recording { (xhat, inv_std) } else { (Vec::new(), Vec::new()) };
        Ok(self.push(
            value,
            Op::BatchNorm {
                input: x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats: false,
            },
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let data = v.data().iter().map(|&a| if a > T::zero() { a } else { T::zero() }).collect();
        let value = Tensor::from_vec(v.shape(), data).expect("same shape");
        self.push(value, Op::Relu(x))
    }

    /// 2×2 max pooling, stride 2. Odd trailing rows/columns are dropped.
    pub fn max_pool2(&mut self, x: Var) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        if xs.len() != 4 || xs[2] < 2 || xs[3] < 2 {
            return Err(mismatch("max_pool2 input", &[0, 0, 2, 2], &xs));
        }
        let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (oh, ow) = (h / 2, w / 2);
        let xd = self.value(x).data();
        let mut out = vec![T::zero(); n * c * oh * ow];
        let mut argmax = vec![0usize; out.len()];
        for plane in 0..n * c {
            let base = plane * h * w;
            for y in 0..oh {
                for xx in 0..ow {
                    let mut best = base + 2 * y * w + 2 * xx;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * y + dy) * w + 2 * xx + dx;
                        if xd[idx] > xd[best] {
                            best = idx;
                        }
                    }
                    let o = plane * oh * ow + y * ow + xx;
                    out[o] = xd[best];
                    argmax[o] = best;
                }
            }
        }
        let value = Tensor::from_vec(&[n, c, oh, ow], out)?;
        let argmax = if self.recording { argmax } else { Vec::new() };
        Ok(self.push(value, Op::MaxPool2 { input: x, argmax }))
    }

    /// `[N, C, H, W]` → `[N, C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        if xs.len() != 4 {
            return Err(mismatch("global_avg_pool input", &[0, 0, 0, 0], &xs));
        }
        let hw = xs[2] * xs[3];
        let inv = T::one() / T::from_usize(hw);
        let data = self
            .value(x)
            .data()
            .chunks(hw)
            .map(|p| p.iter().copied().sum::<T>() * inv)
            .collect();
        let value = Tensor::from_vec(&[xs[0], xs[1]], data)?;
        Ok(self.push(value, Op::GlobalAvgPool(x)))
    }

    /// `x[N, F] @ w[O, F]^T + b[O]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        let ws = self.value(w).shape().to_vec();
        if xs.len() != 2 {
            return Err(mismatch("linear input", &[0, 0], &xs));
        }
        if ws.len() != 2 || ws[1] != xs[1] {
            return Err(mismatch("linear weight", &[ws.first().copied().unwrap_or(0), xs[1]], &ws));
        }
        let (n, f, o) = (xs[0], xs[1], ws[0]);
        if self.value(b).shape() != [o] {
            return Err(mismatch("linear bias", &[o], self.value(b).shape()));
        }
        let mut out = vec![T::zero(); n * o];
        for row in out.chunks_mut(o) {
            row.copy_from_slice(self.value(b).data());
        }
        gemm(
            Trans::No,
            Trans::Yes,
            n,
            o,
            f,
            T::one(),
            self.value(x).data(),
            self.value(w).data(),
            T::one(),
            &mut out,
        );
        let value = Tensor::from_vec(&[n, o], out)?;
        Ok(self.push(value, Op::Linear { input: x, weight: w, bias: b }))
    }

    /// Rows `[start, end)` of a tensor along its leading axis.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let v = self.value(x);
        if v.shape().is_empty() || start > end || end > v.shape()[0] {
            return Err(mismatch("slice_rows", &[end], v.shape()));
        }
        let value = v.slice_rows(start, end);
        Ok(self.push(value, Op::SliceRows { input: x, start }))
    }

    /// Mean over rows of weighted negative log-softmax.
    ///
    /// `weights`, when given, must lie in `[0, 1]`; a zero-weight row contributes
    /// neither loss nor gradient.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], weights: Option<&[T]>) -> Result<Var> {
        let n = targets.len();
        self.cross_entropy_normalized(logits, targets, weights, T::from_usize(n.max(1)))
    }

    /// Weighted negative log-softmax summed over rows and divided by `divisor`.
    pub fn cross_entropy_normalized(
        &mut self,
        logits: Var,
        targets: &[usize],
        weights: Option<&[T]>,
        divisor: T,
    ) -> Result<Var> {
        let ls = self.value(logits).shape().to_vec();
        if ls.len() != 2 || ls[0] != targets.len() {
            return Err(mismatch("cross_entropy logits", &[targets.len(), 0], &ls));
        }
        let (n, c) = (ls[0], ls[1]);
        let weights: Vec<T> = match weights {
            Some(w) => {
                if w.len() != n {
                    return Err(mismatch("cross_entropy weights", &[n], &[w.len()]));
                }
                for (row, &wt) in w.iter().enumerate() {
                    if !(wt >= T::zero() && wt <= T::one()) {
                        return Err(GradError::InvalidWeight {
                            row,
                            weight: wt.as_f64(),
                        });
                    }
                }
                w.to_vec()
            }
            None => vec![T::one(); n],
        };
        for (row, &t) in targets.iter().enumerate() {
            if t >= c {
                return Err(GradError::TargetOutOfRange { row, target: t, classes: c });
            }
        }
        let ld = self.value(logits).data();
        let mut probs = vec![T::zero(); n * c];
        let mut total = T::zero();
        for i in 0..n {
            let row = &ld[i * c..(i + 1) * c];
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for (j, &v) in row.iter().enumerate() {
                let e = (v - max).exp();
                probs[i * c + j] = e;
                z = z + e;
            }
            for p in &mut probs[i * c..(i + 1) * c] {
                *p = *p / z;
            }
            if weights[i] != T::zero() {
                let nll = z.ln() + max - row[targets[i]];
                total = total + weights[i] * nll;
            }
        }
        let value = Tensor::scalar(total / divisor);
        Ok(self.push(
            value,
            Op::CrossEntropy {
                logits,
                probs,
                targets: targets.to_vec(),
                weights,
                divisor,
            },
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(mismatch("add", av.shape(), bv.shape()));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| x + y).collect();
        let value = Tensor::from_vec(av.shape(), data)?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(mismatch("mul", av.shape(), bv.shape()));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| x * y).collect();
        let value = Tensor::from_vec(av.shape(), data)?;
        Ok(self.push(value, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Var {
        let av = self.value(a);
        let data = av.data().iter().map(|&x| x * factor).collect();
        let value = Tensor::from_vec(av.shape(), data).expect("same shape");
        self.push(value, Op::Scale(a, factor))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if !self.recording {
            return Err(GradError::NoGraph);
        }
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(GradError::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf | Op::Param(_)) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
        }
        let mut params = Vec::new();
        for (idx, node) in self.nodes.iter().enumerate() {
            if let Op::Param(slot) = node.op {
                if let Some(g) = grads[idx].take() {
                    params.push((slot, g));
                }
            }
        }
        Ok(Gradients { nodes: grads, params })
    }

    fn backprop_node(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::Conv3x3 { input, weight, cols } => {
                let xs = self.value(*input).shape();
                let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
                let o = self.value(*weight).shape()[0];
                let hw = h * w;
                let cols_n = n * hw;
                let rows = c * 9;
                let mut g_cm = vec![T::zero(); o * cols_n];
                for oi in 0..o {
                    for ni in 0..n {
                        g_cm[oi * cols_n + ni * hw..oi * cols_n + (ni + 1) * hw]
                            .copy_from_slice(&g[(ni * o + oi) * hw..(ni * o + oi + 1) * hw]);
                    }
                }
                let mut dw = vec![T::zero(); o * rows];
                gemm(Trans::No, Trans::Yes, o, rows, cols_n, T::one(), &g_cm, cols, T::zero(), &mut dw);
                accumulate(&mut grads[weight.0], dw);
                if self.needs_grad(*input) {
                    let mut dcols = vec![T::zero(); rows * cols_n];
                    gemm(
                        Trans::Yes,
                        Trans::No,
                        rows,
                        cols_n,
                        o,
                        T::one(),
                        self.value(*weight).data(),
                        &g_cm,
                        T::zero(),
                        &mut dcols,
                    );
                    let mut dx = vec![T::zero(); n * c * hw];
                    for ci in 0..c {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let r = ci * 9 + ky * 3 + kx;
                                let row = &dcols[r * cols_n..(r + 1) * cols_n];
                                for ni in 0..n {
                                    let src = &row[ni * hw..(ni + 1) * hw];
                                    let dst = &mut dx[(ni * c + ci) * hw..(ni * c + ci + 1) * hw];
                                    for y in 0..h {
                                        let sy = y as isize + ky as isize - 1;
                                        if sy < 0 || sy >= h as isize {
                                            continue;
                                        }
                                        let sy = sy as usize;
                                        let x0 = if kx == 0 { 1 } else { 0 };
                                        let x1 = if kx == 2 { w - 1 } else { w };
                                        for xx in x0..x1 {
                                            let d = &mut dst[sy * w + xx + kx - 1];
                                            *d = *d + src[y * w + xx];
                                        }
                                    }
                                }
                            }
                        }
                    }
                    accumulate(&mut grads[input.0], dx);
                }
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let xs = self.value(*input).shape();
                let (n, c) = (xs[0], xs[1]);
                let hw: usize = xs[2..].iter().product();
                let gm = self.value(*gamma).data();
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                for ni in 0..n {
                    for ci in 0..c {
                        let base = (ni * c + ci) * hw;
                        for p in 0..hw {
                            dgamma[ci] = dgamma[ci] + g[base + p] * xhat[base + p];
                            dbeta[ci] = dbeta[ci] + g[base + p];
                        }
                    }
                }
                if self.needs_grad(*input) {
                    let mut dx = vec![T::zero(); g.len()];
                    if *batch_stats {
                        let m = T::from_usize(n * hw);
                        for ci in 0..c {
                            let k = gm[ci] * inv_std[ci] / m;
                            for ni in 0..n {
                                let base = (ni * c + ci) * hw;
                                for p in 0..hw {
                                    dx[base + p] = k * (m * g[base + p] - dbeta[ci] - xhat[base + p] * dgamma[ci]);
                                }
                            }
                        }
                    } else {
                        for ni in 0..n {
                            for ci in 0..c {
                                let k = gm[ci] * inv_std[ci];
                                let base = (ni * c + ci) * hw;
                                for p in 0..hw {
                                    dx[base + p] = k * g[base + p];
                                }
                            }
                        }
                    }
                    accumulate(&mut grads[input.0], dx);
                }
                accumulate(&mut grads[gamma.0], dgamma);
                accumulate(&mut grads[beta.0], dbeta);
            }
            Op::Relu(x) => {
                let dx = node
                    .value
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&y, &d)| if y > T::zero() { d } else { T::zero() })
                    .collect();
                accumulate(&mut grads[x.0], dx);
            }
            Op::MaxPool2 { input, argmax } => {
                let mut dx = vec![T::zero(); self.value(*input).numel()];
                for (&src, &d) in argmax.iter().zip(g) {
                    dx[src] = dx[src] + d;
                }
                accumulate(&mut grads[input.0], dx);
            }
            Op::GlobalAvgPool(x) => {
                let xs = self.value(*x).shape();
                let hw = xs[2] * xs[3];
                let inv = T::one() / T::from_usize(hw);
                let mut dx = Vec::with_capacity(self.value(*x).numel());
                for &d in g {
                    dx.extend(std::iter::repeat_n(d * inv, hw));
                }
                accumulate(&mut grads[x.0], dx);
            }
            Op::Linear { input, weight, bias } => {
                let xs = self.value(*input).shape();
                let (n, f) = (xs[0], xs[1]);
                let o = self.value(*weight).shape()[0];
                let mut dw = vec![T::zero(); o * f];
                gemm(Trans::Yes, Trans::No, o, f, n, T::one(), g, self.value(*input).data(), T::zero(), &mut dw);
                accumulate(&mut grads[weight.0], dw);
                let mut db = vec![T::zero(); o];
                for row in g.chunks(o) {
                    db.iter_mut().zip(row).for_each(|(a, &d)| *a = *a + d);
                }
                accumulate(&mut grads[bias.0], db);
                if self.needs_grad(*input) {
                    let mut dx = vec![T::zero(); n * f];
                    gemm(Trans::No, Trans::No, n, f, o, T::one(), g, self.value(*weight).data(), T::zero(), &mut dx);
                    accumulate(&mut grads[input.0], dx);
                }
            }
            Op::SliceRows { input, start } => {
                let v = self.value(*input);
                let row: usize = v.shape()[1..].iter().product();
                let mut dx = vec![T::zero(); v.numel()];
                dx[start * row..start * row + g.len()].copy_from_slice(g);
                accumulate(&mut grads[input.0], dx);
            }
            Op::CrossEntropy {
                logits,
                probs,
                targets,
                weights,
                divisor,
            } => {
                let c = self.value(*logits).shape()[1];
                let up = g[0] / *divisor;
                let mut dx = vec![T::zero(); probs.len()];
                for (i, (&t, &w)) in targets.iter().zip(weights).enumerate() {
                    if w == T::zero() {
                        continue;
                    }
                    let k = up * w;
                    for j in 0..c {
                        let onehot = if j == t { T::one() } else { T::zero() };
                        dx[i * c + j] = k * (probs[i * c + j] - onehot);
                    }
                }
                accumulate(&mut grads[logits.0], dx);
            }
            Op::Add(a, b) => {
                accumulate(&mut grads[a.0], g.to_vec());
                accumulate(&mut grads[b.0], g.to_vec());
            }
            Op::Scale(a, factor) => {
                accumulate(&mut grads[a.0], g.iter().map(|&d| d * *factor).collect());
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                accumulate(&mut grads[a.0], g.iter().zip(bv).map(|(&d, &y)| d * y).collect());
                accumulate(&mut grads[b.0], g.iter().zip(av).map(|(&d, &x)| d * x).collect());
            }
            Op::Sum(a) => {
                let n = self.value(*a).numel();
                accumulate(&mut grads[a.0], vec![g[0]; n]);
            }
        }
    }

    /// Inputs (batch images) never need a gradient; skipping them saves the
    /// largest col2im of the network.
    fn needs_grad(&self, v: Var) -> bool {
        !matches!(self.nodes[v.0].op, Op::Leaf)
    }
}

/// Result of [`Graph::backward`].
pub struct Gradients<T> {
    nodes: Vec<Option<Vec<T>>>,
    params: Vec<(usize, Vec<T>)>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient with respect to a non-parameter node, when it was reached.
    pub fn of(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].as_deref()
    }

    /// Gradients accumulated per parameter slot. Slots not reachable from the
    /// loss are absent.
    pub fn param_grads(&self) -> impl Iterator<Item = (usize, &[T])> {
        self.params.iter().map(|(s, g)| (*s, g.as_slice()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_has_derivative_two_w() {
        let mut g = Graph::<f64>::new();
        let w = g.param(0, &Tensor::scalar(3.0));
        let sq = g.mul(w, w).unwrap();
        let grads = g.backward(sq).unwrap();
        let (slot, dw) = grads.param_grads().next().unwrap();
        assert_eq!(slot, 0);
        assert_eq!(dw, &[6.0]);
    }

    #[test]
    fn unreachable_param_has_no_gradient() {
        let mut g = Graph::<f64>::new();
        let w = g.param(0, &Tensor::scalar(3.0));
        let _p = g.param(1, &Tensor::scalar(5.0));
        let loss = g.mul(w, w).unwrap();
        let grads = g.backward(loss).unwrap();
        let slots: Vec<usize> = grads.param_grads().map(|(s, _)| s).collect();
        assert_eq!(slots, vec![0]);
    }

    #[test]
    fn backward_on_no_grad_graph_errors() {
        let mut g = Graph::<f32>::no_grad();
        let w = g.param(0, &Tensor::scalar(1.0));
        let s = g.sum(w);
        assert!(matches!(g.backward(s), Err(GradError::NoGraph)));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::<f32>::new();
        let w = g.param(0, &Tensor::zeros(&[3]));
        assert!(matches!(g.backward(w), Err(GradError::NonScalarLoss(_))));
    }

    #[test]
    fn uniform_logits_give_ln_classes() {
        let mut g = Graph::<f64>::new();
        let logits = g.input(Tensor::zeros(&[4, 10]));
        let loss = g.cross_entropy(logits, &[0, 3, 7, 9], None).unwrap();
        assert!((g.value(loss).item() - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn confident_margin_drives_loss_to_zero() {
        let mut prev = f64::INFINITY;
        for margin in [1.0, 5.0, 20.0, 80.0] {
            let mut g = Graph::<f64>::new();
            let mut logits = vec![0.0; 3];
            logits[1] = margin;
            let l = g.input(Tensor::from_vec(&[1, 3], logits).unwrap());
            let loss = g.cross_entropy(l, &[1], None).unwrap();
            let v = g.value(loss).item();
            assert!(v < prev);
            prev = v;
        }
        assert!(prev < 1e-30);
    }

    #[test]
    fn zero_weights_zero_loss_and_gradient() {
        let mut g = Graph::<f32>::new();
        let w = g.param(0, &Tensor::from_vec(&[2, 3], vec![0.3, -1.0, 2.0, 0.1, 0.5, -0.2]).unwrap());
        let loss = g.cross_entropy(w, &[0, 2], Some(&[0.0, 0.0])).unwrap();
        assert_eq!(g.value(loss).item(), 0.0);
        let grads = g.backward(loss).unwrap();
        let (_, dw) = grads.param_grads().next().unwrap();
        assert!(dw.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn target_out_of_range_errors() {
        let mut g = Graph::<f32>::new();
        let l = g.input(Tensor::zeros(&[1, 3]));
        assert!(matches!(
            g.cross_entropy(l, &[3], None),
            Err(GradError::TargetOutOfRange { target: 3, classes: 3, .. })
        ));
    }

    #[test]
    fn weight_outside_unit_interval_errors() {
        let mut g = Graph::<f32>::new();
        let l = g.input(Tensor::zeros(&[1, 3]));
        assert!(g.cross_entropy(l, &[0], Some(&[1.5])).is_err());
    }

    #[test]
    fn max_pool_routes_gradient_to_argmax() {
        let mut g = Graph::<f64>::new();
        let x = g.param(0, &Tensor::from_vec(&[1, 1, 2, 2], vec![1.0, 4.0, 2.0, 3.0]).unwrap());
        let p = g.max_pool2(x).unwrap();
        assert_eq!(g.value(p).data(), &[4.0]);
        let s = g.sum(p);
        let grads = g.backward(s).unwrap();
        let (_, dx) = grads.param_grads().next().unwrap();
        assert_eq!(dx, &[0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn conv_identity_kernel_copies_input() {
        let mut g = Graph::<f64>::new();
        let data: Vec<f64> = (0..9).map(|v| v as f64).collect();
        let x = g.input(Tensor::from_vec(&[1, 1, 3, 3], data.clone()).unwrap());
        let mut k = vec![0.0; 9];
        k[4] = 1.0;
        let w = g.param(0, &Tensor::from_vec(&[1, 1, 3, 3], k).unwrap());
        let y = g.conv3x3(x, w).unwrap();
        assert_eq!(g.value(y).data(), data.as_slice());
    }

    #[test]
    fn conv_shift_kernel_pads_with_zero() {
        let mut g = Graph::<f64>::new();
        let data: Vec<f64> = (1..=9).map(|v| v as f64).collect();
        let x = g.input(Tensor::from_vec(&[1, 1, 3, 3], data).unwrap());
        // picks the left neighbour
        let mut k = vec![0.0; 9];
        k[3] = 1.0;
        let w = g.param(0, &Tensor::from_vec(&[1, 1, 3, 3], k).unwrap());
        let y = g.conv3x3(x, w).unwrap();
        assert_eq!(g.value(y).data(), &[0.0, 1.0, 2.0, 0.0, 4.0, 5.0, 0.0, 7.0, 8.0]);
    }
}
