//! Dense kernels behind the graph ops.

use super::tensor::{Element, Tensor};

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub in_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_channels: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: (usize, usize),
    pub pad: (usize, usize),
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn new(x: &[usize], w: &[usize], stride: (usize, usize), pad: (usize, usize)) -> Option<Self> {
        let (ph, pw) = (x[2] + 2 * pad.0, x[3] + 2 * pad.1);
        if w[2] > ph || w[3] > pw {
            return None;
        }
        Some(Self {
            batch: x[0],
            in_channels: x[1],
            in_h: x[2],
            in_w: x[3],
            out_channels: w[0],
            kh: w[2],
            kw: w[3],
            stride,
            pad,
            out_h: (ph - w[2]) / stride.0 + 1,
            out_w: (pw - w[3]) / stride.1 + 1,
        })
    }

    pub fn out_shape(&self) -> Vec<usize> {
        vec![self.batch, self.out_channels, self.out_h, self.out_w]
    }

    fn col_rows(&self) -> usize {
        self.in_channels * self.kh * self.kw
    }

    fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }

    fn in_plane(&self) -> usize {
        self.in_channels * self.in_h * self.in_w
    }

    /// Visits every in-image run of taps as `(column row, first output position, first input offset, length)`.
    ///
    /// Consecutive taps of a run advance the output position by 1 and the input offset by the column stride.
    fn for_each_run(&self, mut f: impl FnMut(usize, usize, usize, usize)) {
        let (sy, sx) = self.stride;
        let (py, px) = (self.pad.0 as isize, self.pad.1 as isize);
        for c in 0..self.in_channels {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    // Valid ox satisfy 0 ≤ ox·sx + kj − px < in_w.
                    let lo = (px - kj as isize).max(0) as usize;
                    let ox0 = lo.div_ceil(sx);
                    let hi = self.in_w as isize + px - kj as isize;
                    if hi <= 0 {
                        continue;
                    }
                    let ox1 = (((hi - 1) as usize) / sx + 1).min(self.out_w);
                    if ox0 >= ox1 {
                        continue;
                    }
                    for oy in 0..self.out_h {
                        let iy = (oy * sy + ki) as isize - py;
                        if iy < 0 || iy >= self.in_h as isize {
                            continue;
                        }
                        let ix0 = (ox0 * sx + kj) as isize - px;
                        let start = (c * self.in_h + iy as usize) * self.in_w + ix0 as usize;
                        f(row, oy * self.out_w + ox0, start, ox1 - ox0);
                    }
                }
            }
        }
    }

    fn im2col<T: Element>(&self, x: &[T], cols: &mut [T]) {
        let (p, sx) = (self.col_cols(), self.stride.1);
        cols.fill(T::zero());
        self.for_each_run(|r, pos, xi, len| {
            let dst = &mut cols[r * p + pos..r * p + pos + len];
            if sx == 1 {
                dst.copy_from_slice(&x[xi..xi + len]);
            } else {
                for (j, d) in dst.iter_mut().enumerate() {
                    *d = x[xi + j * sx];
                }
            }
        });
    }

    /// Column matrix stored transposed, `[out_h·out_w, rows]`.
    fn im2col_t<T: Element>(&self, x: &[T], cols: &mut [T]) {
        let (rows, sx) = (self.col_rows(), self.stride.1);
        cols.fill(T::zero());
        self.for_each_run(|r, pos, xi, len| {
            for j in 0..len {
                cols[(pos + j) * rows + r] = x[xi + j * sx];
            }
        });
    }

    fn col2im<T: Element>(&self, cols: &[T], dx: &mut [T]) {
        let (p, sx) = (self.col_cols(), self.stride.1);
        self.for_each_run(|r, pos, xi, len| {
            let src = &cols[r * p + pos..r * p + pos + len];
            for (j, v) in src.iter().enumerate() {
                dx[xi + j * sx] = dx[xi + j * sx] + *v;
            }
        });
    }
}

pub(crate) fn conv2d_forward<T: Element>(geom: &ConvGeom, x: &[T], w: &[T], bias: Option<&[T]>) -> Vec<T> {
    let (rows, p, o) = (geom.col_rows(), geom.col_cols(), geom.out_channels);
    let mut cols = vec![T::zero(); rows * p];
    let mut out = vec![T::zero(); geom.batch * o * p];
    for n in 0..geom.batch {
        geom.im2col(&x[n * geom.in_plane()..(n + 1) * geom.in_plane()], &mut cols);
        let dst = &mut out[n * o * p..(n + 1) * o * p];
        T::gemm(o, rows, p, w, (rows as isize, 1), &cols, (p as isize, 1), dst, (p as isize, 1), false);
        if let Some(b) = bias {
            for (ch, plane) in dst.chunks_mut(p).enumerate() {
                for v in plane {
                    *v = *v + b[ch];
                }
            }
        }
    }
    out
}

/// Returns `(dx, dw)` for the requested inputs; columns are rebuilt rather than cached.
pub(crate) fn conv2d_backward<T: Element>(
    geom: &ConvGeom,
    x: &[T],
    w: &[T],
    g: &[T],
    want_dx: bool,
    want_dw: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>) {
    let (rows, p, o) = (geom.col_rows(), geom.col_cols(), geom.out_channels);
    let mut cols = vec![T::zero(); rows * p];
    let mut dx = want_dx.then(|| vec![T::zero(); x.len()]);
    let mut dw = want_dw.then(|| vec![T::zero(); w.len()]);
    for n in 0..geom.batch {
        let gn = &g[n * o * p..(n + 1) * o * p];
        if let Some(dw) = dw.as_mut() {
            geom.im2col_t(&x[n * geom.in_plane()..(n + 1) * geom.in_plane()], &mut cols);
            T::gemm(o, p, rows, gn, (p as isize, 1), &cols, (rows as isize, 1), dw, (rows as isize, 1), true);
        }
        if let Some(dx) = dx.as_mut() {
            T::gemm(rows, o, p, w, (1, rows as isize), gn, (p as isize, 1), &mut cols, (p as isize, 1), false);
            geom.col2im(&cols, &mut dx[n * geom.in_plane()..(n + 1) * geom.in_plane()]);
        }
    }
    (dx, dw)
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/π)
const GELU_A: f64 = 0.044_715;

/// `(gelu(x), d gelu / dx)`, tanh approximation.
pub(crate) fn gelu<T: Element>(x: T) -> (T, T) {
    let (c, a, half, one) = (T::lit(GELU_C), T::lit(GELU_A), T::lit(0.5), T::one());
    let u = c * (x + a * x * x * x);
    let t = u.tanh();
    let y = half * x * (one + t);
    let dy = half * (one + t) + half * x * (one - t * t) * c * (one + T::lit(3.0) * a * x * x);
    (y, dy)
}

/// Subnormal probabilities are flushed to zero; they would otherwise slow every downstream kernel.
pub(crate) fn softmax_in_place<T: Element>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total = total + *v;
    }
    let tiny = T::min_positive_value();
    for v in row.iter_mut() {
        *v = *v / total;
        if *v < tiny {
            *v = T::zero();
        }
    }
}

pub(crate) fn permute<T: Element>(x: &Tensor<T>, perm: &[usize]) -> Tensor<T> {
    let s = x.shape();
    let rank = s.len();
    let mut in_strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * s[i + 1];
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| s[p]).collect();
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let n = x.numel();
    let mut out = Vec::with_capacity(n);
    let mut idx = vec![0usize; rank];
    let mut src = 0usize;
    let xd = x.data();
    for _ in 0..n {
        out.push(xd[src]);
        for d in (0..rank).rev() {
            idx[d] += 1;
            src += strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            src -= strides[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    Tensor::new(out_shape, out).expect("permutation preserves size")
}

/// Row-stochastic attention probabilities for one `[S, D]` head.
pub(crate) fn attention_probs<T: Element>(s: usize, d: usize, q: &[T], k: &[T], scale: T) -> Vec<T> {
    let mut p = vec![T::zero(); s * s];
    T::gemm(s, d, s, q, (d as isize, 1), k, (1, d as isize), &mut p, (s as isize, 1), false);
    for row in p.chunks_mut(s) {
        for v in row.iter_mut() {
            *v = *v * scale;
        }
        softmax_in_place(row);
    }
    p
}

pub(crate) fn attention_forward<T: Element>(shape: &[usize], q: &[T], k: &[T], v: &[T], scale: T) -> Vec<T> {
    let (heads, s, d) = (shape[0] * shape[1], shape[2], shape[3]);
    let mut out = vec![T::zero(); q.len()];
    for h in 0..heads {
        let r = h * s * d..(h + 1) * s * d;
        let p = attention_probs(s, d, &q[r.clone()], &k[r.clone()], scale);
        T::gemm(s, s, d, &p, (s as isize, 1), &v[r.clone()], (d as isize, 1), &mut out[r], (d as isize, 1), false);
    }
    out
}

pub(crate) fn attention_backward<T: Element>(
    shape: &[usize],
    q: &[T],
    k: &[T],
    v: &[T],
    g: &[T],
    scale: T,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let (heads, s, d) = (shape[0] * shape[1], shape[2], shape[3]);
    let (mut dq, mut dk, mut dv) = (vec![T::zero(); q.len()], vec![T::zero(); k.len()], vec![T::zero(); v.len()]);
    let mut dp = vec![T::zero(); s * s];
    let (ss, ds) = (s as isize, d as isize);
    for h in 0..heads {
        let r = h * s * d..(h + 1) * s * d;
        let p = attention_probs(s, d, &q[r.clone()], &k[r.clone()], scale);
        let gh = &g[r.clone()];
        T::gemm(s, s, d, &p, (1, ss), gh, (ds, 1), &mut dv[r.clone()], (ds, 1), false);
        T::gemm(s, d, s, gh, (ds, 1), &v[r.clone()], (1, ds), &mut dp, (ss, 1), false);
        for (dprow, prow) in dp.chunks_mut(s).zip(p.chunks(s)) {
            let dot: T = dprow.iter().zip(prow).map(|(&a, &b)| a * b).sum();
            for (x, &pp) in dprow.iter_mut().zip(prow) {
                *x = pp * (*x - dot) * scale;
            }
        }
        T::gemm(s, s, d, &dp, (ss, 1), &k[r.clone()], (ds, 1), &mut dq[r.clone()], (ds, 1), false);
        T::gemm(s, s, d, &dp, (1, ss), &q[r.clone()], (ds, 1), &mut dk[r], (ds, 1), false);
    }
    (dq, dk, dv)
}

/// Gauss–Jordan inverse with partial pivoting for each trailing `n×n` block.
pub(crate) fn batched_inverse<T: Element>(x: &Tensor<T>) -> Option<Tensor<T>> {
    let s = x.shape();
    let n = s[s.len() - 1];
    let mut out = Vec::with_capacity(x.numel());
    for block in x.data().chunks(n * n) {
        let mut a = block.to_vec();
        let mut inv = Tensor::<T>::eye(n).into_data();
        for col in 0..n {
            let pivot = (col..n).max_by(|&i, &j| {
                a[i * n + col]
                    .abs()
                    .partial_cmp(&a[j * n + col].abs())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })?;
            if a[pivot * n + col].abs() <= T::epsilon() {
                return None;
            }
            if pivot != col {
                for j in 0..n {
                    a.swap(col * n + j, pivot * n + j);
                    inv.swap(col * n + j, pivot * n + j);
                }
            }
            let d = a[col * n + col];
            for j in 0..n {
                a[col * n + j] = a[col * n + j] / d;
                inv[col * n + j] = inv[col * n + j] / d;
            }
            for i in 0..n {
                if i == col {
                    continue;
                }
                let f = a[i * n + col];
                if f == T::zero() {
                    continue;
                }
                for j in 0..n {
                    a[i * n + j] = a[i * n + j] - f * a[col * n + j];
                    inv[i * n + j] = inv[i * n + j] - f * inv[col * n + j];
                }
            }
        }
        out.extend(inv);
    }
    Tensor::new(s.to_vec(), out).ok()
}
