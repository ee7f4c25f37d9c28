//! Layer kernels with hand-written backward passes.
//!
//! Sequence tensors are 2-D with one row per token, sample-major: row
//! `b * len + t` is token `t` of sample `b`. Backward functions accumulate
//! parameter gradients into the supplied buffers and return the gradient
//! with respect to the layer input.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};

use super::params::{DenseParams, LstmParams};
use crate::domain::Rng;

/// Sum that does not depend on the order of `xs`.
pub fn canonical_sum(xs: &mut [f64]) -> f64 {
    xs.sort_unstable_by(f64::total_cmp);
    xs.iter().sum()
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

// ---------------------------------------------------------------- dense

pub fn dense_forward(x: ArrayView2<f64>, p: &DenseParams) -> Array2<f64> {
    let mut y = x.dot(&p.w);
    y += &p.b;
    y
}

pub fn dense_backward(
    x: ArrayView2<f64>,
    p: &DenseParams,
    dy: &Array2<f64>,
    g: &mut DenseParams,
) -> Array2<f64> {
    general_mat_mul(1.0, &x.t(), dy, 1.0, &mut g.w);
    g.b += &dy.sum_axis(Axis(0));
    dy.dot(&p.w.t())
}

// ---------------------------------------------------------------- relu

pub fn relu_forward(mut x: Array2<f64>) -> Array2<f64> {
    x.mapv_inplace(|v| v.max(0.0));
    x
}

/// `y` is the forward output; the gradient passes where it is positive.
pub fn relu_backward(y: &Array2<f64>, mut dy: Array2<f64>) -> Array2<f64> {
    Zip::from(&mut dy).and(y).for_each(|d, &v| {
        if v <= 0.0 {
            *d = 0.0;
        }
    });
    dy
}

// ---------------------------------------------------------------- dropout

/// Inverted dropout mask: kept units are scaled by `1 / (1 - rate)`.
pub fn dropout_mask(shape: (usize, usize), rate: f64, rng: &mut Rng) -> Array2<f64> {
    let keep = 1.0 - rate;
    let scale = 1.0 / keep;
    Array2::from_shape_simple_fn(shape, || if rng.bernoulli(keep) { scale } else { 0.0 })
}

// ---------------------------------------------------------------- attention

pub struct AttentionParamsRef<'a> {
    pub query: &'a DenseParams,
    pub key: &'a Array2<f64>,
    pub value: &'a DenseParams,
    pub fuse: &'a DenseParams,
}

pub struct AttentionGrads<'a> {
    pub query: &'a mut DenseParams,
    pub key: &'a mut Array2<f64>,
    pub value: &'a mut DenseParams,
    pub fuse: &'a mut DenseParams,
}

pub struct AttentionCache {
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    /// Attention weights, `[sample][head][query][key]` flattened.
    weights: Vec<f64>,
    heads_out: Array2<f64>,
}

impl AttentionCache {
    /// Weights of one sample and head as a `len × len` matrix.
    pub fn weights(
        &self,
        sample: usize,
        head: usize,
        n_heads: usize,
        len: usize,
    ) -> ArrayView2<'_, f64> {
        let base = (sample * n_heads + head) * len * len;
        ArrayView2::from_shape((len, len), &self.weights[base..base + len * len])
            .expect("weights shape")
    }
}

/// Multi-head scaled dot-product self-attention with a linear fuse of the
/// concatenated heads. Reductions over keys are order-independent, so
/// permuting a sample's tokens permutes its outputs bit for bit.
pub fn attention_forward(
    x: ArrayView2<f64>,
    len: usize,
    n_heads: usize,
    p: &AttentionParamsRef,
) -> (Array2<f64>, AttentionCache) {
    let q = dense_forward(x, p.query);
    let k = x.dot(p.key);
    let v = dense_forward(x, p.value);
    let (rows, d) = q.dim();
    let batch = rows / len;
    let dh = d / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut weights = vec![0.0; batch * n_heads * len * len];
    let mut heads_out = Array2::<f64>::zeros((rows, d));
    let mut terms = vec![0.0; len];
    for b in 0..batch {
        let r0 = b * len;
        for h in 0..n_heads {
            let c0 = h * dh;
            let base = (b * n_heads + h) * len * len;
            for i in 0..len {
                let row = &mut weights[base + i * len..base + (i + 1) * len];
                for (j, w) in row.iter_mut().enumerate() {
                    let mut s = 0.0;
                    for c in c0..c0 + dh {
                        s += q[[r0 + i, c]] * k[[r0 + j, c]];
                    }
                    *w = s * scale;
                }
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                row.iter_mut().for_each(|w| *w = (*w - max).exp());
                terms.copy_from_slice(row);
                let z = canonical_sum(&mut terms);
                row.iter_mut().for_each(|w| *w /= z);
                for c in c0..c0 + dh {
                    for (j, t) in terms.iter_mut().enumerate() {
                        *t = row[j] * v[[r0 + j, c]];
                    }
                    heads_out[[r0 + i, c]] = canonical_sum(&mut terms);
                }
            }
        }
    }
    let y = dense_forward(heads_out.view(), p.fuse);
    (
        y,
        AttentionCache {
            q,
            k,
            v,
            weights,
            heads_out,
        },
    )
}

pub fn attention_backward(
    x: ArrayView2<f64>,
    len: usize,
    n_heads: usize,
    p: &AttentionParamsRef,
    cache: &AttentionCache,
    dy: &Array2<f64>,
    g: AttentionGrads,
) -> Array2<f64> {
    let d_heads = dense_backward(cache.heads_out.view(), p.fuse, dy, g.fuse);
    let (rows, d) = cache.q.dim();
    let batch = rows / len;
    let dh = d / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dq = Array2::<f64>::zeros((rows, d));
    let mut dk = Array2::<f64>::zeros((rows, d));
    let mut dv = Array2::<f64>::zeros((rows, d));
    let mut da = vec![0.0; len];
    for b in 0..batch {
        let r0 = b * len;
        for h in 0..n_heads {
            let c0 = h * dh;
            let a = cache.weights(b, h, n_heads, len);
            for i in 0..len {
                for j in 0..len {
                    let mut s = 0.0;
                    for c in c0..c0 + dh {
                        s += d_heads[[r0 + i, c]] * cache.v[[r0 + j, c]];
                        dv[[r0 + j, c]] += a[[i, j]] * d_heads[[r0 + i, c]];
                    }
                    da[j] = s;
                }
                let dot: f64 = (0..len).map(|j| a[[i, j]] * da[j]).sum();
                for j in 0..len {
                    let ds = a[[i, j]] * (da[j] - dot) * scale;
                    for c in c0..c0 + dh {
                        dq[[r0 + i, c]] += ds * cache.k[[r0 + j, c]];
                        dk[[r0 + j, c]] += ds * cache.q[[r0 + i, c]];
                    }
                }
            }
        }
    }
    let mut dx = dense_backward(x, p.query, &dq, g.query);
    general_mat_mul(1.0, &x.t(), &dk, 1.0, g.key);
    general_mat_mul(1.0, &dk, &p.key.t(), 1.0, &mut dx);
    dx += &dense_backward(x, p.value, &dv, g.value);
    dx
}

// ---------------------------------------------------------------- conv1d

/// Left padding of a length-preserving convolution; the rest goes right.
pub fn same_padding(kernel: usize) -> usize {
    (kernel - 1) / 2
}

fn im2col(x: ArrayView2<f64>, len: usize, kernel: usize) -> Array2<f64> {
    let (rows, c) = x.dim();
    let batch = rows / len;
    let pad = same_padding(kernel) as isize;
    let mut col = Array2::<f64>::zeros((rows, kernel * c));
    for b in 0..batch {
        for t in 0..len {
            for s in 0..kernel {
                let src = t as isize - pad + s as isize;
                if src < 0 || src >= len as isize {
                    continue;
                }
                col.slice_mut(s![b * len + t, s * c..(s + 1) * c])
                    .assign(&x.row(b * len + src as usize));
            }
        }
    }
    col
}

fn col2im(dcol: &Array2<f64>, len: usize, kernel: usize, channels: usize) -> Array2<f64> {
    let rows = dcol.nrows();
    let batch = rows / len;
    let pad = same_padding(kernel) as isize;
    let mut dx = Array2::<f64>::zeros((rows, channels));
    for b in 0..batch {
        for t in 0..len {
            for s in 0..kernel {
                let src = t as isize - pad + s as isize;
                if src < 0 || src >= len as isize {
                    continue;
                }
                let mut target = dx.row_mut(b * len + src as usize);
                target += &dcol.slice(s![b * len + t, s * channels..(s + 1) * channels]);
            }
        }
    }
    dx
}

pub struct ConvCache {
    col: Array2<f64>,
}

/// 1-D convolution over each sample's token axis, zero-padded so the
/// length is unchanged.
pub fn conv_forward(
    x: ArrayView2<f64>,
    len: usize,
    kernel: usize,
    p: &DenseParams,
) -> (Array2<f64>, ConvCache) {
    let col = im2col(x, len, kernel);
    let y = dense_forward(col.view(), p);
    (y, ConvCache { col })
}

pub fn conv_backward(
    cache: &ConvCache,
    len: usize,
    kernel: usize,
    channels: usize,
    p: &DenseParams,
    dy: &Array2<f64>,
    g: &mut DenseParams,
) -> Array2<f64> {
    let dcol = dense_backward(cache.col.view(), p, dy, g);
    col2im(&dcol, len, kernel, channels)
}

// ---------------------------------------------------------------- max pool

pub struct PoolCache {
    argmax: Vec<usize>,
    in_rows: usize,
}

/// Non-overlapping max pool of `width` tokens; a trailing remainder is
/// dropped.
pub fn pool_forward(x: ArrayView2<f64>, len: usize, width: usize) -> (Array2<f64>, PoolCache) {
    let (rows, c) = x.dim();
    let batch = rows / len;
    let out_len = len / width;
    let mut y = Array2::<f64>::zeros((batch * out_len, c));
    let mut argmax = vec![0; batch * out_len * c];
    for b in 0..batch {
        for t in 0..out_len {
            let out_row = b * out_len + t;
            for ch in 0..c {
                let mut best = b * len + t * width;
                for s in 1..width {
                    let r = b * len + t * width + s;
                    if x[[r, ch]] > x[[best, ch]] {
                        best = r;
                    }
                }
                y[[out_row, ch]] = x[[best, ch]];
                argmax[out_row * c + ch] = best;
            }
        }
    }
    (
        y,
        PoolCache {
            argmax,
            in_rows: rows,
        },
    )
}

pub fn pool_backward(cache: &PoolCache, dy: &Array2<f64>) -> Array2<f64> {
    let c = dy.ncols();
    let mut dx = Array2::<f64>::zeros((cache.in_rows, c));
    for (r, row) in dy.outer_iter().enumerate() {
        for (ch, &v) in row.iter().enumerate() {
            dx[[cache.argmax[r * c + ch], ch]] += v;
        }
    }
    dx
}

// ---------------------------------------------------------------- lstm

struct StepCache {
    /// Activated gates `[i, f, o, g]`, `[batch, 4H]`.
    gates: Array2<f64>,
    tanh_c: Array2<f64>,
    h_prev: Array2<f64>,
    c_prev: Array2<f64>,
}

pub struct LstmCache {
    fwd: Vec<StepCache>,
    bwd: Vec<StepCache>,
}

fn rows_at(x: &Array2<f64>, len: usize, t: usize) -> Array2<f64> {
    let batch = x.nrows() / len;
    let idx: Vec<usize> = (0..batch).map(|b| b * len + t).collect();
    x.select(Axis(0), &idx)
}

fn lstm_direction(
    zx: &Array2<f64>,
    len: usize,
    p: &LstmParams,
    reverse: bool,
) -> (Vec<StepCache>, Vec<Array2<f64>>) {
    let hidden = p.wh.nrows();
    let batch = zx.nrows() / len;
    let mut h = Array2::<f64>::zeros((batch, hidden));
    let mut c = Array2::<f64>::zeros((batch, hidden));
    let mut steps = Vec::with_capacity(len);
    let mut outputs = vec![Array2::zeros((0, 0)); len];
    let order: Vec<usize> = if reverse {
        (0..len).rev().collect()
    } else {
        (0..len).collect()
    };
    for t in order {
        let mut z = rows_at(zx, len, t);
        general_mat_mul(1.0, &h, &p.wh, 1.0, &mut z);
        let mut gates = z;
        gates.slice_mut(s![.., ..3 * hidden]).mapv_inplace(sigmoid);
        gates
            .slice_mut(s![.., 3 * hidden..])
            .mapv_inplace(f64::tanh);
        let i = gates.slice(s![.., ..hidden]);
        let f = gates.slice(s![.., hidden..2 * hidden]);
        let o = gates.slice(s![.., 2 * hidden..3 * hidden]);
        let g = gates.slice(s![.., 3 * hidden..]);
        let c_new = &f * &c + &i * &g;
        let tanh_c = c_new.mapv(f64::tanh);
        let h_new = &o * &tanh_c;
        steps.push(StepCache {
            gates: gates.clone(),
            tanh_c,
            h_prev: h,
            c_prev: c,
        });
        outputs[t] = h_new.clone();
        h = h_new;
        c = c_new;
    }
    (steps, outputs)
}

/// Bidirectional LSTM; output row `b * len + t` is `[h_fwd(t), h_bwd(t)]`.
pub fn lstm_forward(
    x: ArrayView2<f64>,
    len: usize,
    fwd: &LstmParams,
    bwd: &LstmParams,
) -> (Array2<f64>, LstmCache) {
    let hidden = fwd.wh.nrows();
    let rows = x.nrows();
    let mut out = Array2::<f64>::zeros((rows, 2 * hidden));
    let zf = x.dot(&fwd.wx) + &fwd.b;
    let zb = x.dot(&bwd.wx) + &bwd.b;
    let (fwd_steps, fwd_h) = lstm_direction(&zf, len, fwd, false);
    let (bwd_steps, bwd_h) = lstm_direction(&zb, len, bwd, true);
    let batch = rows / len;
    for t in 0..len {
        for b in 0..batch {
            out.slice_mut(s![b * len + t, ..hidden])
                .assign(&fwd_h[t].row(b));
            out.slice_mut(s![b * len + t, hidden..])
                .assign(&bwd_h[t].row(b));
        }
    }
    (
        out,
        LstmCache {
            fwd: fwd_steps,
            bwd: bwd_steps,
        },
    )
}

/// Backpropagation through time for one direction. `dh_out[t]` is the
/// gradient on that direction's output at position `t`; returns the
/// gradient on the input pre-activations `x · wx + b`, `[rows, 4H]`.
fn lstm_direction_backward(
    steps: &[StepCache],
    dh_out: &[Array2<f64>],
    len: usize,
    p: &LstmParams,
    g: &mut LstmParams,
    reverse: bool,
) -> Array2<f64> {
    let hidden = p.wh.nrows();
    let batch = dh_out[0].nrows();
    let mut dzx = Array2::<f64>::zeros((batch * len, 4 * hidden));
    let mut dh_next = Array2::<f64>::zeros((batch, hidden));
    let mut dc_next = Array2::<f64>::zeros((batch, hidden));
    // steps[k] is the k-th processed position.
    let order: Vec<usize> = if reverse {
        (0..len).rev().collect()
    } else {
        (0..len).collect()
    };
    for (k, &t) in order.iter().enumerate().rev() {
        let st = &steps[k];
        let i = st.gates.slice(s![.., ..hidden]);
        let f = st.gates.slice(s![.., hidden..2 * hidden]);
        let o = st.gates.slice(s![.., 2 * hidden..3 * hidden]);
        let gg = st.gates.slice(s![.., 3 * hidden..]);
        let dh = &dh_out[t] + &dh_next;
        let dc = &dh * &o * st.tanh_c.mapv(|v| 1.0 - v * v) + &dc_next;
        let mut dz = Array2::<f64>::zeros((batch, 4 * hidden));
        Zip::from(dz.slice_mut(s![.., ..hidden]))
            .and(&dc)
            .and(&gg)
            .and(&i)
            .for_each(|d, &dc, &g, &i| *d = dc * g * i * (1.0 - i));
        Zip::from(dz.slice_mut(s![.., hidden..2 * hidden]))
            .and(&dc)
            .and(&st.c_prev)
            .and(&f)
            .for_each(|d, &dc, &cp, &f| *d = dc * cp * f * (1.0 - f));
        Zip::from(dz.slice_mut(s![.., 2 * hidden..3 * hidden]))
            .and(&dh)
            .and(&st.tanh_c)
            .and(&o)
            .for_each(|d, &dh, &tc, &o| *d = dh * tc * o * (1.0 - o));
        Zip::from(dz.slice_mut(s![.., 3 * hidden..]))
            .and(&dc)
            .and(&i)
            .and(&gg)
            .for_each(|d, &dc, &i, &g| *d = dc * i * (1.0 - g * g));
        dc_next = &dc * &f;
        general_mat_mul(1.0, &st.h_prev.t(), &dz, 1.0, &mut g.wh);
        dh_next = dz.dot(&p.wh.t());
        for b in 0..batch {
            dzx.row_mut(b * len + t).assign(&dz.row(b));
        }
    }
    dzx
}

pub fn lstm_backward(
    x: ArrayView2<f64>,
    len: usize,
    fwd: &LstmParams,
    bwd: &LstmParams,
    cache: &LstmCache,
    dy: &Array2<f64>,
    gf: &mut LstmParams,
    gb: &mut LstmParams,
) -> Array2<f64> {
    let hidden = fwd.wh.nrows();
    let split = |lo: usize| -> Vec<Array2<f64>> {
        (0..len)
            .map(|t| rows_at(&dy.slice(s![.., lo..lo + hidden]).to_owned(), len, t))
            .collect()
    };
    let dzf = lstm_direction_backward(&cache.fwd, &split(0), len, fwd, gf, false);
    let dzb = lstm_direction_backward(&cache.bwd, &split(hidden), len, bwd, gb, true);
    let mut dx = Array2::<f64>::zeros(x.raw_dim());
    for (dz, p, g) in [(&dzf, fwd, gf), (&dzb, bwd, gb)] {
        general_mat_mul(1.0, &x.t(), dz, 1.0, &mut g.wx);
        g.b += &dz.sum_axis(Axis(0));
        general_mat_mul(1.0, dz, &p.wx.t(), 1.0, &mut dx);
    }
    dx
}

// ---------------------------------------------------------------- softmax

/// Row-wise softmax with max subtraction.
pub fn softmax(logits: ArrayView2<f64>) -> Array2<f64> {
    let mut p = logits.to_owned();
    for mut row in p.outer_iter_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let z = row.sum();
        row.mapv_inplace(|v| v / z);
    }
    p
}

/// Summed cross-entropy of `labels` under `softmax(logits)` and its
/// gradient with respect to the logits (also summed, not averaged).
pub fn softmax_cross_entropy(logits: ArrayView2<f64>, labels: &[usize]) -> (f64, Array2<f64>) {
    let mut grad = softmax(logits);
    let mut loss = 0.0;
    for (b, &y) in labels.iter().enumerate() {
        let row = logits.row(b);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - row[y];
        grad[[b, y]] -= 1.0;
    }
    (loss, grad)
}

pub fn zeros_like_bias(n: usize) -> Array1<f64> {
    Array1::zeros(n)
}
