use rand::Rng;

use super::graph::{Graph, NodeId, NormKind, Op};
use super::kernels;
use super::tensor::{Element, Tensor};
use crate::error::{Error, Result};

/// Number of times `rhs` tiles `lhs` when `rhs` is a trailing-suffix of `lhs`.
fn suffix_repeats(lhs: &[usize], rhs: &[usize]) -> Option<usize> {
    if rhs.len() > lhs.len() || lhs[lhs.len() - rhs.len()..] != *rhs {
        return None;
    }
    Some(lhs[..lhs.len() - rhs.len()].iter().product())
}

fn sum_tiles<T: Element>(g: &Tensor<T>, shape: &[usize]) -> Tensor<T> {
    let mut out = Tensor::zeros(shape.to_vec());
    let n = out.numel().max(1);
    for (i, &v) in g.data().iter().enumerate() {
        out.data_mut()[i % n] = out.data()[i % n] + v;
    }
    out
}

fn batch_dims(shape: &[usize]) -> usize {
    shape[..shape.len() - 2].iter().product()
}

impl<T: Element> Graph<T> {
    fn binary_shapes(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<usize> {
        suffix_repeats(self.shape(a), self.shape(b)).ok_or_else(|| {
            Error::shape(
                op,
                format!(
                    "rhs {:?} is not a trailing suffix of lhs {:?}",
                    self.shape(b),
                    self.shape(a)
                ),
            )
        })
    }

    fn broadcast_binary(&mut self, a: NodeId, b: NodeId, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let av = self.value(a);
        let bv = self.value(b);
        let n = bv.numel().max(1);
        let data = av
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, bv.data()[i % n]))
            .collect();
        Tensor::new(av.shape().to_vec(), data).expect("same shape")
    }

    /// Elementwise sum; the smaller operand may be a trailing suffix of the other.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (a, b) = if self.shape(a).len() < self.shape(b).len() {
            (b, a)
        } else {
            (a, b)
        };
        self.binary_shapes("add", a, b)?;
        let out = self.broadcast_binary(a, b, |x, y| x + y);
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    /// `a − b` with `b` broadcast as a trailing suffix of `a`.
    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_shapes("sub", a, b)?;
        let out = self.broadcast_binary(a, b, |x, y| x - y);
        Ok(self.push(out, Op::Sub(a, b), &[a, b]))
    }

    /// Elementwise product; the smaller operand may be a trailing suffix of the other.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (a, b) = if self.shape(a).len() < self.shape(b).len() {
            (b, a)
        } else {
            (a, b)
        };
        self.binary_shapes("mul", a, b)?;
        let out = self.broadcast_binary(a, b, |x, y| x * y);
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, x: NodeId, s: T) -> NodeId {
        let out = self.value(x).map(|v| v * s);
        self.push(out, Op::Scale(x, s), &[x])
    }

    /// Batched matrix product `[..., m, k] × [..., k, n]`. A rank-2 rhs is shared across the batch.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let bad = || Error::shape("matmul", format!("cannot multiply {sa:?} by {sb:?}"));
        if sa.len() < 2 || sb.len() < 2 {
            return Err(bad());
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (k2, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        let shared = sb.len() == 2;
        if k != k2 || (!shared && sa[..sa.len() - 2] != sb[..sb.len() - 2]) {
            return Err(bad());
        }
        let batch = batch_dims(&sa);
        let mut out_shape = sa[..sa.len() - 2].to_vec();
        out_shape.extend([m, n]);
        let mut out = Tensor::zeros(out_shape);
        {
            let (av, bv) = (self.value(a).data(), self.value(b).data());
            let od = out.data_mut();
            for i in 0..batch {
                let bo = if shared { 0 } else { i * k * n };
                T::gemm(
                    m,
                    k,
                    n,
                    &av[i * m * k..(i + 1) * m * k],
                    (k as isize, 1),
                    &bv[bo..bo + k * n],
                    (n as isize, 1),
                    &mut od[i * m * n..(i + 1) * m * n],
                    (n as isize, 1),
                    false,
                );
            }
        }
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    /// `y = x·wᵀ + b` over the last axis of `x`; `w` is `[out, in]`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> Result<NodeId> {
        let sx = self.shape(x).to_vec();
        let sw = self.shape(w).to_vec();
        if sw.len() != 2 || sx.is_empty() || sx[sx.len() - 1] != sw[1] {
            return Err(Error::shape(
                "linear",
                format!("input {sx:?} incompatible with weight {sw:?}"),
            ));
        }
        let (d_out, d_in) = (sw[0], sw[1]);
        if let Some(b) = b {
            if self.shape(b) != [d_out] {
                return Err(Error::shape(
                    "linear",
                    format!("bias {:?} for {d_out} outputs", self.shape(b)),
                ));
            }
        }
        let rows = self.value(x).numel() / d_in;
        let mut out_shape = sx[..sx.len() - 1].to_vec();
        out_shape.push(d_out);
        let mut out = Tensor::zeros(out_shape);
        T::gemm(
            rows,
            d_in,
            d_out,
            self.value(x).data(),
            (d_in as isize, 1),
            self.value(w).data(),
            (1, d_in as isize),
            out.data_mut(),
            (d_out as isize, 1),
            false,
        );
        if let Some(b) = b {
            let bias = self.value(b).data().to_vec();
            for row in out.data_mut().chunks_mut(d_out) {
                for (o, &bb) in row.iter_mut().zip(&bias) {
                    *o = *o + bb;
                }
            }
        }
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(out, Op::Linear { x, w, b }, &inputs))
    }

    /// 2-D cross-correlation, `x: [N, C, H, W]`, `w: [O, C, KH, KW]`.
    pub fn conv2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        stride: (usize, usize),
        pad: (usize, usize),
    ) -> Result<NodeId> {
        let sx = self.shape(x).to_vec();
        let sw = self.shape(w).to_vec();
        if sx.len() != 4 || sw.len() != 4 || sx[1] != sw[1] || stride.0 == 0 || stride.1 == 0 {
            return Err(Error::shape(
                "conv2d",
                format!("input {sx:?} incompatible with kernel {sw:?}"),
            ));
        }
        let geom = kernels::ConvGeom::new(&sx, &sw, stride, pad).ok_or_else(|| {
            Error::shape(
                "conv2d",
                format!("kernel {sw:?} larger than padded input {sx:?}"),
            )
        })?;
        if let Some(b) = b {
            if self.shape(b) != [sw[0]] {
                return Err(Error::shape(
                    "conv2d",
                    format!("bias {:?} for {} filters", self.shape(b), sw[0]),
                ));
            }
        }
        let bias = b.map(|b| self.value(b).data().to_vec());
        let out = kernels::conv2d_forward(
            &geom,
            self.value(x).data(),
            self.value(w).data(),
            bias.as_deref(),
        );
        let out = Tensor::new(geom.out_shape(), out)?;
        let op = Op::Conv2d {
            x,
            w,
            b,
            stride,
            pad,
        };
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(out, op, &inputs))
    }

    /// 2×2 max pooling with stride 2; odd trailing rows/columns are dropped.
    pub fn maxpool2d(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 || s[2] < 2 || s[3] < 2 {
            return Err(Error::shape("maxpool2d", format!("input {s:?}")));
        }
        let (planes, h, w) = (s[0] * s[1], s[2], s[3]);
        let (ho, wo) = (h / 2, w / 2);
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(planes * ho * wo);
        let mut argmax = Vec::with_capacity(planes * ho * wo);
        for p in 0..planes {
            let base = p * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = base + 2 * oy * w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                        if xv[idx] > xv[best] {
                            best = idx;
                        }
                    }
                    out.push(xv[best]);
                    argmax.push(best);
                }
            }
        }
        let out = Tensor::new(vec![s[0], s[1], ho, wo], out)?;
        Ok(self.push(out, Op::MaxPool2d { x, argmax }, &[x]))
    }

    /// Batch normalization over `[N, C, H, W]`.
    ///
    /// In train mode normalizes with batch statistics and returns the updated
    /// running `(mean, var)`; in eval mode applies the running statistics.
    #[allow(clippy::too_many_arguments)]
    pub fn batchnorm2d(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        running_mean: &Tensor<T>,
        running_var: &Tensor<T>,
        momentum: T,
        eps: T,
    ) -> Result<(NodeId, Option<(Tensor<T>, Tensor<T>)>)> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 {
            return Err(Error::shape("batchnorm2d", format!("input {s:?}")));
        }
        let c = s[1];
        for (what, shape) in [
            ("gamma", self.shape(gamma).to_vec()),
            ("beta", self.shape(beta).to_vec()),
            ("running_mean", running_mean.shape().to_vec()),
            ("running_var", running_var.shape().to_vec()),
        ] {
            if shape != [c] {
                return Err(Error::shape(
                    "batchnorm2d",
                    format!("{what} {shape:?} for {c} channels"),
                ));
            }
        }
        let (n, hw) = (s[0], s[2] * s[3]);
        let count = n * hw;
        let xv = self.value(x).data().to_vec();
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        let train = self.is_train();
        if train {
            if count < 2 {
                return Err(Error::shape(
                    "batchnorm2d",
                    "training mode needs more than one value per channel",
                ));
            }
            for ch in 0..c {
                let vals = (0..n).flat_map(|b| {
                    let off = (b * c + ch) * hw;
                    xv[off..off + hw].iter().copied()
                });
                let m = vals.clone().sum::<T>() / T::lit(count as f64);
                let v = vals.map(|x| (x - m) * (x - m)).sum::<T>() / T::lit(count as f64);
                mean[ch] = m;
                var[ch] = v;
            }
        } else {
            mean.copy_from_slice(running_mean.data());
            var.copy_from_slice(running_var.data());
        }
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let gv = self.value(gamma).data().to_vec();
        let bv = self.value(beta).data().to_vec();
        let mut xhat = vec![T::zero(); xv.len()];
        let mut out = vec![T::zero(); xv.len()];
        for b in 0..n {
            for ch in 0..c {
                let off = (b * c + ch) * hw;
                for i in off..off + hw {
                    xhat[i] = (xv[i] - mean[ch]) * inv_std[ch];
                    out[i] = gv[ch] * xhat[i] + bv[ch];
                }
            }
        }
        let updated = train.then(|| {
            let unbias = T::lit(count as f64 / (count - 1) as f64);
            let one = T::one();
            let rm = Tensor::from_fn([c], |i| {
                (one - momentum) * running_mean.data()[i] + momentum * mean[i]
            });
            let rv = Tensor::from_fn([c], |i| {
                (one - momentum) * running_var.data()[i] + momentum * var[i] * unbias
            });
            (rm, rv)
        });
        let kind = if train {
            NormKind::BatchTrain
        } else {
            NormKind::BatchEval
        };
        let op = Op::Norm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
            kind,
        };
        let id = self.push(Tensor::new(s, out)?, op, &[x, gamma, beta]);
        Ok((id, updated))
    }

    /// Layer normalization over the last axis.
    pub fn layernorm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, eps: T) -> Result<NodeId> {
        let s = self.shape(x).to_vec();
        let d = *s.last().ok_or_else(|| Error::shape("layernorm", "scalar input"))?;
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(Error::shape(
                "layernorm",
                format!(
                    "affine {:?}/{:?} for feature size {d}",
                    self.shape(gamma),
                    self.shape(beta)
                ),
            ));
        }
        let xv = self.value(x).data();
        let gv = self.value(gamma).data();
        let bv = self.value(beta).data();
        let rows = xv.len() / d;
        let mut xhat = vec![T::zero(); xv.len()];
        let mut out = vec![T::zero(); xv.len()];
        let mut inv_std = vec![T::zero(); rows];
        let dn = T::lit(d as f64);
        for r in 0..rows {
            let row = &xv[r * d..(r + 1) * d];
            let m = row.iter().copied().sum::<T>() / dn;
            let v = row.iter().map(|&x| (x - m) * (x - m)).sum::<T>() / dn;
            let is = T::one() / (v + eps).sqrt();
            inv_std[r] = is;
            for j in 0..d {
                let h = (row[j] - m) * is;
                xhat[r * d + j] = h;
                out[r * d + j] = gv[j] * h + bv[j];
            }
        }
        let op = Op::Norm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
            kind: NormKind::Layer,
        };
        Ok(self.push(Tensor::new(s, out)?, op, &[x, gamma, beta]))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).map(|v| v.max(T::zero()));
        self.push(out, Op::Relu(x), &[x])
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).map(|v| kernels::gelu(v).0);
        self.push(out, Op::Gelu(x), &[x])
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.shape(x).to_vec();
        let d = *s.last().ok_or_else(|| Error::shape("softmax", "scalar input"))?;
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_mut(d) {
            kernels::softmax_in_place(row);
        }
        Ok(self.push(Tensor::new(s, out)?, Op::Softmax(x), &[x]))
    }

    /// Inverted dropout. Identity in eval mode or when `p == 0`.
    pub fn dropout(&mut self, x: NodeId, p: f64) -> Result<NodeId> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("dropout probability {p} not in [0, 1)")));
        }
        if !self.is_train() || p == 0.0 {
            return Ok(x);
        }
        let keep = T::lit(1.0 / (1.0 - p));
        let n = self.value(x).numel();
        let mask: Vec<T> = (0..n)
            .map(|_| {
                if self.rng.gen::<f64>() >= p {
                    keep
                } else {
                    T::zero()
                }
            })
            .collect();
        let xv = self.value(x);
        let data = xv.data().iter().zip(&mask).map(|(&a, &m)| a * m).collect();
        let out = Tensor::new(xv.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Dropout { x, mask }, &[x]))
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let out = (*self.nodes[x.0].value).clone().reshape(shape.to_vec())?;
        Ok(self.push(out, Op::Reshape(x), &[x]))
    }

    /// Axis permutation; `out.shape[i] = x.shape[perm[i]]`.
    pub fn permute(&mut self, x: NodeId, perm: &[usize]) -> Result<NodeId> {
        let s = self.shape(x).to_vec();
        let mut seen = vec![false; s.len()];
        if perm.len() != s.len() || perm.iter().any(|&p| p >= s.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::shape(
                "permute",
                format!("{perm:?} is not a permutation of {} axes", s.len()),
            ));
        }
        let out = kernels::permute(self.value(x), perm);
        Ok(self.push(out, Op::Permute { x, perm: perm.to_vec() }, &[x]))
    }

    pub fn transpose(&mut self, x: NodeId, a0: usize, a1: usize) -> Result<NodeId> {
        let rank = self.shape(x).len();
        if a0 >= rank || a1 >= rank {
            return Err(Error::shape("transpose", format!("axes ({a0}, {a1}) of rank {rank}")));
        }
        let mut perm: Vec<usize> = (0..rank).collect();
        perm.swap(a0, a1);
        self.permute(x, &perm)
    }

    pub fn concat(&mut self, inputs: &[NodeId], axis: usize) -> Result<NodeId> {
        let first = self
            .shape(*inputs.first().ok_or_else(|| Error::shape("concat", "no inputs"))?)
            .to_vec();
        if axis >= first.len() {
            return Err(Error::shape("concat", format!("axis {axis} of {first:?}")));
        }
        let mut total = 0;
        for &i in inputs {
            let s = self.shape(i);
            if s.len() != first.len()
                || s.iter().zip(&first).enumerate().any(|(d, (a, b))| d != axis && a != b)
            {
                return Err(Error::shape(
                    "concat",
                    format!("{s:?} does not match {first:?} off axis {axis}"),
                ));
            }
            total += s[axis];
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut out_shape = first.clone();
        out_shape[axis] = total;
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &i in inputs {
                let len = self.shape(i)[axis] * inner;
                data.extend_from_slice(&self.value(i).data()[o * len..(o + 1) * len]);
            }
        }
        let out = Tensor::new(out_shape, data)?;
        Ok(self.push(
            out,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            inputs,
        ))
    }

    /// Contiguous range `[start, start + len)` along `axis`.
    pub fn slice(&mut self, x: NodeId, axis: usize, start: usize, len: usize) -> Result<NodeId> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || start + len > s[axis] {
            return Err(Error::shape(
                "slice",
                format!("[{start}, {}) on axis {axis} of {s:?}", start + len),
            ));
        }
        let outer: usize = s[..axis].iter().product();
        let inner: usize = s[axis + 1..].iter().product();
        let xv = self.value(x).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * s[axis] + start) * inner;
            data.extend_from_slice(&xv[base..base + len * inner]);
        }
        let mut out_shape = s;
        out_shape[axis] = len;
        let out = Tensor::new(out_shape, data)?;
        Ok(self.push(out, Op::Slice { x, axis, start }, &[x]))
    }

    /// Repeats a `[1, ...]` tensor `n` times along axis 0.
    pub fn expand(&mut self, x: NodeId, n: usize) -> Result<NodeId> {
        let s = self.shape(x).to_vec();
        if s.first() != Some(&1) {
            return Err(Error::shape("expand", format!("leading axis of {s:?} must be 1")));
        }
        let xv = self.value(x).data();
        let data: Vec<T> = (0..n).flat_map(|_| xv.iter().copied()).collect();
        let mut out_shape = s;
        out_shape[0] = n;
        let out = Tensor::new(out_shape, data)?;
        Ok(self.push(out, Op::Expand(x), &[x]))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let out = Tensor::scalar(self.value(x).sum());
        self.push(out, Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        let out = Tensor::scalar(v.sum() / T::lit(v.numel() as f64));
        self.push(out, Op::Mean(x), &[x])
    }

    /// Mean softmax cross-entropy of `[B, C]` logits against class indices.
    pub fn cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let s = self.shape(logits).to_vec();
        if s.len() != 2 || s[0] != labels.len() || s[0] == 0 {
            return Err(Error::shape(
                "cross_entropy",
                format!("logits {s:?} with {} labels", labels.len()),
            ));
        }
        let c = s[1];
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::shape(
                "cross_entropy",
                format!("label {bad} out of range for {c} classes"),
            ));
        }
        let mut probs = self.value(logits).data().to_vec();
        let mut loss = T::zero();
        for (row, &label) in probs.chunks_mut(c).zip(labels) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
            loss = loss + lse - row[label];
            kernels::softmax_in_place(row);
        }
        let out = Tensor::scalar(loss / T::lit(labels.len() as f64));
        let op = Op::CrossEntropy {
            logits,
            labels: labels.to_vec(),
            probs,
        };
        Ok(self.push(out, op, &[logits]))
    }

    /// `softmax(q·kᵀ·scale)·v` over `[B, H, S, D]`; probabilities are recomputed in backward.
    pub fn scaled_dot_product_attention(&mut self, q: NodeId, k: NodeId, v: NodeId) -> Result<NodeId> {
        let sq = self.shape(q).to_vec();
        if sq.len() != 4 || self.shape(k) != sq.as_slice() || self.shape(v) != sq.as_slice() {
            return Err(Error::shape(
                "attention",
                format!(
                    "q {:?}, k {:?}, v {:?} must share a [B, H, S, D] shape",
                    sq,
                    self.shape(k),
                    self.shape(v)
                ),
            ));
        }
        let d = sq[3];
        let scale = T::one() / T::lit(d as f64).sqrt();
        let out = kernels::attention_forward(
            &sq,
            self.value(q).data(),
            self.value(k).data(),
            self.value(v).data(),
            scale,
        );
        let out = Tensor::new(sq, out)?;
        Ok(self.push(out, Op::Attention { q, k, v, scale }, &[q, k, v]))
    }

    /// Batched inverse of `[..., n, n]`.
    pub fn inverse(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.shape(x).to_vec();
        if s.len() < 2 || s[s.len() - 1] != s[s.len() - 2] {
            return Err(Error::shape("inverse", format!("non-square input {s:?}")));
        }
        let out = kernels::batched_inverse(self.value(x))
            .ok_or_else(|| Error::Contract("inverse of a singular matrix".into()))?;
        Ok(self.push(out, Op::Inverse(x), &[x]))
    }

    /// `[..., b(b−1)/2]` upper-triangle entries → `[..., b, b]` skew-symmetric matrices.
    pub fn skew_from_packed(&mut self, x: NodeId, b: usize) -> Result<NodeId> {
        let s = self.shape(x).to_vec();
        let p = b * b.saturating_sub(1) / 2;
        if s.last() != Some(&p) {
            return Err(Error::shape(
                "skew_from_packed",
                format!("{s:?} does not hold {p} entries for block size {b}"),
            ));
        }
        let xv = self.value(x).data();
        let lead = xv.len() / p.max(1);
        let mut data = vec![T::zero(); lead * b * b];
        for m in 0..lead {
            let mut idx = 0;
            for i in 0..b {
                for j in i + 1..b {
                    let v = xv[m * p + idx];
                    data[m * b * b + i * b + j] = v;
                    data[m * b * b + j * b + i] = -v;
                    idx += 1;
                }
            }
        }
        let mut out_shape = s[..s.len() - 1].to_vec();
        out_shape.extend([b, b]);
        let out = Tensor::new(out_shape, data)?;
        Ok(self.push(out, Op::SkewFromPacked(x), &[x]))
    }

    /// Gradients of node `id`'s inputs given the gradient of its output.
    pub(crate) fn input_grads(&self, id: NodeId, g: &Tensor<T>) -> Result<Vec<(NodeId, Tensor<T>)>> {
        let node = &self.nodes[id.0];
        let out = &node.value;
        let val = |n: NodeId| self.value(n);
        let needs = |n: NodeId| self.requires_grad(n);
        let mut res = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if needs(*a) {
                    res.push((*a, g.clone()));
                }
                if needs(*b) {
                    res.push((*b, sum_tiles(g, val(*b).shape())));
                }
            }
            Op::Sub(a, b) => {
                if needs(*a) {
                    res.push((*a, g.clone()));
                }
                if needs(*b) {
                    res.push((*b, sum_tiles(&g.map(|v| -v), val(*b).shape())));
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let n = bv.numel().max(1);
                if needs(*a) {
                    let d = g.data().iter().enumerate().map(|(i, &gv)| gv * bv.data()[i % n]).collect();
                    res.push((*a, Tensor::new(av.shape().to_vec(), d)?));
                }
                if needs(*b) {
                    let prod = g.data().iter().zip(av.data()).map(|(&gv, &x)| gv * x).collect();
                    let prod = Tensor::new(av.shape().to_vec(), prod)?;
                    res.push((*b, sum_tiles(&prod, bv.shape())));
                }
            }
            Op::Scale(x, s) => res.push((*x, g.map(|v| v * *s))),
            Op::MatMul(a, b) => {
                let (sa, sb) = (val(*a).shape(), val(*b).shape());
                let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
                let n = sb[sb.len() - 1];
                let shared = sb.len() == 2;
                let batch = batch_dims(sa);
                let (av, bv, gd) = (val(*a).data(), val(*b).data(), g.data());
                if needs(*a) {
                    let mut da = Tensor::zeros(sa.to_vec());
                    for i in 0..batch {
                        let bo = if shared { 0 } else { i * k * n };
                        T::gemm(
                            m,
                            n,
                            k,
                            &gd[i * m * n..(i + 1) * m * n],
                            (n as isize, 1),
                            &bv[bo..bo + k * n],
                            (1, n as isize),
                            &mut da.data_mut()[i * m * k..(i + 1) * m * k],
                            (k as isize, 1),
                            false,
                        );
                    }
                    res.push((*a, da));
                }
                if needs(*b) {
                    let mut db = Tensor::zeros(sb.to_vec());
                    for i in 0..batch {
                        let bo = if shared { 0 } else { i * k * n };
                        T::gemm(
                            k,
                            m,
                            n,
                            &av[i * m * k..(i + 1) * m * k],
                            (1, k as isize),
                            &gd[i * m * n..(i + 1) * m * n],
                            (n as isize, 1),
                            &mut db.data_mut()[bo..bo + k * n],
                            (n as isize, 1),
                            shared,
                        );
                    }
                    res.push((*b, db));
                }
            }
            Op::Linear { x, w, b } => {
                let sw = val(*w).shape();
                let (d_out, d_in) = (sw[0], sw[1]);
                let rows = g.numel() / d_out;
                if needs(*x) {
                    let mut dx = Tensor::zeros(val(*x).shape().to_vec());
                    T::gemm(
                        rows,
                        d_out,
                        d_in,
                        g.data(),
                        (d_out as isize, 1),
                        val(*w).data(),
                        (d_in as isize, 1),
                        dx.data_mut(),
                        (d_in as isize, 1),
                        false,
                    );
                    res.push((*x, dx));
                }
                if needs(*w) {
                    let mut dw = Tensor::zeros(sw.to_vec());
                    T::gemm(
                        d_out,
                        rows,
                        d_in,
                        g.data(),
                        (1, d_out as isize),
                        val(*x).data(),
                        (d_in as isize, 1),
                        dw.data_mut(),
                        (d_in as isize, 1),
                        false,
                    );
                    res.push((*w, dw));
                }
                if let Some(b) = b {
                    if needs(*b) {
                        res.push((*b, sum_tiles(g, &[d_out])));
                    }
                }
            }
            Op::Conv2d { x, w, b, stride, pad } => {
                let geom = kernels::ConvGeom::new(val(*x).shape(), val(*w).shape(), *stride, *pad)
                    .expect("validated at construction");
                let (dx, dw) = kernels::conv2d_backward(
                    &geom,
                    val(*x).data(),
                    val(*w).data(),
                    g.data(),
                    needs(*x),
                    needs(*w),
                );
                if let Some(dx) = dx {
                    res.push((*x, Tensor::new(val(*x).shape().to_vec(), dx)?));
                }
                if let Some(dw) = dw {
                    res.push((*w, Tensor::new(val(*w).shape().to_vec(), dw)?));
                }
                if let Some(b) = b {
                    if needs(*b) {
                        let o = geom.out_channels;
                        let plane = geom.out_h * geom.out_w;
                        let mut db = vec![T::zero(); o];
                        for (i, chunk) in g.data().chunks(plane).enumerate() {
                            db[i % o] = db[i % o] + chunk.iter().copied().sum::<T>();
                        }
                        res.push((*b, Tensor::new(vec![o], db)?));
                    }
                }
            }
            Op::MaxPool2d { x, argmax } => {
                let mut dx = Tensor::zeros(val(*x).shape().to_vec());
                for (&src, &gv) in argmax.iter().zip(g.data()) {
                    dx.data_mut()[src] = dx.data()[src] + gv;
                }
                res.push((*x, dx));
            }
            Op::Norm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                kind,
            } => {
                let sx = val(*x).shape();
                let gam = val(*gamma).data();
                let gd = g.data();
                let nf = gam.len();
                // Contiguous chunks share one statistics group. Layer norm: a row per
                // group, features vary along it. Batch norm: an H×W plane per chunk,
                // group and feature are both the channel.
                let layer = matches!(kind, NormKind::Layer);
                let chunk = if layer { nf } else { sx[2] * sx[3] };
                let group = |k: usize| if layer { k } else { k % nf };
                let gamma_at = |k: usize, j: usize| if layer { gam[j] } else { gam[k % nf] };
                if needs(*x) {
                    let mut dx = vec![T::zero(); gd.len()];
                    if matches!(kind, NormKind::BatchEval) {
                        for (k, (dst, gc)) in dx.chunks_mut(chunk).zip(gd.chunks(chunk)).enumerate() {
                            let f = gam[k % nf] * inv_std[k % nf];
                            for (d, &gv) in dst.iter_mut().zip(gc) {
                                *d = gv * f;
                            }
                        }
                    } else {
                        let groups = inv_std.len();
                        let mut s1 = vec![T::zero(); groups];
                        let mut s2 = vec![T::zero(); groups];
                        let mut cnt = vec![0usize; groups];
                        for (k, (gc, hc)) in gd.chunks(chunk).zip(xhat.chunks(chunk)).enumerate() {
                            let gi = group(k);
                            let (mut a, mut b) = (T::zero(), T::zero());
                            for (j, (&gv, &h)) in gc.iter().zip(hc).enumerate() {
                                let d = gv * gamma_at(k, j);
                                a = a + d;
                                b = b + d * h;
                            }
                            s1[gi] = s1[gi] + a;
                            s2[gi] = s2[gi] + b;
                            cnt[gi] += gc.len();
                        }
                        for (k, ((dst, gc), hc)) in dx
                            .chunks_mut(chunk)
                            .zip(gd.chunks(chunk))
                            .zip(xhat.chunks(chunk))
                            .enumerate()
                        {
                            let gi = group(k);
                            let m = T::lit(cnt[gi] as f64);
                            let (m1, m2, is) = (s1[gi] / m, s2[gi] / m, inv_std[gi]);
                            for (j, ((d, &gv), &h)) in dst.iter_mut().zip(gc).zip(hc).enumerate() {
                                *d = is * (gv * gamma_at(k, j) - m1 - h * m2);
                            }
                        }
                    }
                    res.push((*x, Tensor::new(sx.to_vec(), dx)?));
                }
                if needs(*gamma) || needs(*beta) {
                    let mut dg = vec![T::zero(); nf];
                    let mut db = vec![T::zero(); nf];
                    for (k, (gc, hc)) in gd.chunks(chunk).zip(xhat.chunks(chunk)).enumerate() {
                        if layer {
                            for (j, (&gv, &h)) in gc.iter().zip(hc).enumerate() {
                                dg[j] = dg[j] + gv * h;
                                db[j] = db[j] + gv;
                            }
                        } else {
                            let f = k % nf;
                            let (mut a, mut b) = (T::zero(), T::zero());
                            for (&gv, &h) in gc.iter().zip(hc) {
                                a = a + gv * h;
                                b = b + gv;
                            }
                            dg[f] = dg[f] + a;
                            db[f] = db[f] + b;
                        }
                    }
                    if needs(*gamma) {
                        res.push((*gamma, Tensor::new(vec![nf], dg)?));
                    }
                    if needs(*beta) {
                        res.push((*beta, Tensor::new(vec![nf], db)?));
                    }
                }
            }
            Op::Relu(x) => {
                let xv = val(*x).data();
                let d = g.data().iter().zip(xv).map(|(&gv, &v)| if v > T::zero() { gv } else { T::zero() }).collect();
                res.push((*x, Tensor::new(g.shape().to_vec(), d)?));
            }
            Op::Gelu(x) => {
                let xv = val(*x).data();
                let d = g.data().iter().zip(xv).map(|(&gv, &v)| gv * kernels::gelu(v).1).collect();
                res.push((*x, Tensor::new(g.shape().to_vec(), d)?));
            }
            Op::Softmax(x) => {
                let d = *out.shape().last().expect("rank ≥ 1");
                let mut dx = g.data().to_vec();
                for (drow, yrow) in dx.chunks_mut(d).zip(out.data().chunks(d)) {
                    let dot: T = drow.iter().zip(yrow).map(|(&a, &b)| a * b).sum();
                    for (dv, &y) in drow.iter_mut().zip(yrow) {
                        *dv = y * (*dv - dot);
                    }
                }
                res.push((*x, Tensor::new(g.shape().to_vec(), dx)?));
            }
            Op::Dropout { x, mask } => {
                let d = g.data().iter().zip(mask).map(|(&a, &m)| a * m).collect();
                res.push((*x, Tensor::new(g.shape().to_vec(), d)?));
            }
            Op::Reshape(x) => res.push((*x, g.clone().reshape(val(*x).shape().to_vec())?)),
            Op::Permute { x, perm } => {
                let mut inv = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inv[p] = i;
                }
                res.push((*x, kernels::permute(g, &inv)));
            }
            Op::Concat { inputs, axis } => {
                let s = out.shape();
                let outer: usize = s[..*axis].iter().product();
                let inner: usize = s[axis + 1..].iter().product();
                let mut offset = 0;
                for &i in inputs {
                    let si = val(i).shape();
                    let len = si[*axis] * inner;
                    if needs(i) {
                        let mut d = Vec::with_capacity(outer * len);
                        for o in 0..outer {
                            let base = o * s[*axis] * inner + offset;
                            d.extend_from_slice(&g.data()[base..base + len]);
                        }
                        res.push((i, Tensor::new(si.to_vec(), d)?));
                    }
                    offset += len;
                }
            }
            Op::Slice { x, axis, start } => {
                let sx = val(*x).shape();
                let outer: usize = sx[..*axis].iter().product();
                let inner: usize = sx[axis + 1..].iter().product();
                let len = out.shape()[*axis] * inner;
                let mut dx = Tensor::zeros(sx.to_vec());
                for o in 0..outer {
                    let base = (o * sx[*axis] + start) * inner;
                    dx.data_mut()[base..base + len].copy_from_slice(&g.data()[o * len..(o + 1) * len]);
                }
                res.push((*x, dx));
            }
            Op::Expand(x) => res.push((*x, sum_tiles(g, val(*x).shape()))),
            Op::Sum(x) => res.push((*x, Tensor::full(val(*x).shape().to_vec(), g[0]))),
            Op::Mean(x) => {
                let n = T::lit(val(*x).numel() as f64);
                res.push((*x, Tensor::full(val(*x).shape().to_vec(), g[0] / n)));
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let c = val(*logits).shape()[1];
                let scale = g[0] / T::lit(labels.len() as f64);
                let mut d = probs.clone();
                for (row, &l) in d.chunks_mut(c).zip(labels) {
                    row[l] = row[l] - T::one();
                    for v in row.iter_mut() {
                        *v = *v * scale;
                    }
                }
                res.push((*logits, Tensor::new(val(*logits).shape().to_vec(), d)?));
            }
            Op::Attention { q, k, v, scale } => {
                let shape = val(*q).shape().to_vec();
                let (dq, dk, dv) = kernels::attention_backward(
                    &shape,
                    val(*q).data(),
                    val(*k).data(),
                    val(*v).data(),
                    g.data(),
                    *scale,
                );
                for (n, d) in [(*q, dq), (*k, dk), (*v, dv)] {
                    if needs(n) {
                        res.push((n, Tensor::new(shape.clone(), d)?));
                    }
                }
            }
            Op::Inverse(x) => {
                // dA = −A⁻ᵀ·G·A⁻ᵀ
                let s = out.shape();
                let n = s[s.len() - 1];
                let batch = batch_dims(s);
                let y = out.data();
                let mut tmp = vec![T::zero(); n * n];
                let mut dx = Tensor::zeros(s.to_vec());
                for i in 0..batch {
                    let r = i * n * n..(i + 1) * n * n;
                    T::gemm(n, n, n, &y[r.clone()], (1, n as isize), &g.data()[r.clone()], (n as isize, 1), &mut tmp, (n as isize, 1), false);
                    T::gemm(n, n, n, &tmp, (n as isize, 1), &y[r.clone()], (1, n as isize), &mut dx.data_mut()[r], (n as isize, 1), false);
                }
                res.push((*x, dx.map(|v| -v)));
            }
            Op::SkewFromPacked(x) => {
                let s = out.shape();
                let b = s[s.len() - 1];
                let p = b * (b - 1) / 2;
                let lead = g.numel() / (b * b);
                let mut d = Vec::with_capacity(lead * p);
                for m in 0..lead {
                    for i in 0..b {
                        for j in i + 1..b {
                            d.push(g.data()[m * b * b + i * b + j] - g.data()[m * b * b + j * b + i]);
                        }
                    }
                }
                res.push((*x, Tensor::new(val(*x).shape().to_vec(), d)?));
            }
        }
        Ok(res)
    }
}
