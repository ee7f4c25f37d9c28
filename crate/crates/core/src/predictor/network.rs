//! Whole-network forward and backward passes.

use ndarray::{Array2, ArrayView2, Axis};

use super::config::PredictorConfig;
use super::layers::{
    attention_backward, attention_forward, conv_backward, conv_forward, dense_backward,
    dense_forward, dropout_mask, lstm_backward, lstm_forward, pool_backward, pool_forward,
    relu_backward, relu_forward, softmax_cross_entropy, AttentionCache, AttentionGrads,
    AttentionParamsRef, ConvCache, LstmCache, PoolCache,
};
use super::params::PredictorParams;
use super::PredictError;
use crate::domain::Rng;

/// Activations kept for the backward pass.
pub struct ForwardCache {
    input: Array2<f64>,
    tokens: Array2<f64>,
    attention: AttentionCache,
    conv1: ConvCache,
    act1: Array2<f64>,
    pool: PoolCache,
    conv2: ConvCache,
    act2: Array2<f64>,
    lstm: LstmCache,
    /// Input to each FC layer.
    fc_in: Vec<Array2<f64>>,
    /// ReLU output of each hidden FC layer, before dropout.
    fc_act: Vec<Array2<f64>>,
    /// Dropout mask of each hidden FC layer, when one was applied.
    masks: Vec<Option<Array2<f64>>>,
}

fn attention_refs(p: &PredictorParams) -> AttentionParamsRef<'_> {
    AttentionParamsRef {
        query: &p.query,
        key: &p.key,
        value: &p.value,
        fuse: &p.fuse,
    }
}

/// Logits `[batch, m]` for a `[batch, features]` input. Dropout is applied
/// only when `dropout` supplies a mask stream.
pub fn forward(
    params: &PredictorParams,
    cfg: &PredictorConfig,
    x: ArrayView2<f64>,
    dropout: Option<&mut Rng>,
) -> Result<(Array2<f64>, ForwardCache), PredictError> {
    if x.nrows() == 0 {
        return Err(PredictError::EmptyBatch);
    }
    if x.ncols() != params.n_features() {
        return Err(PredictError::ShapeMismatch {
            expected: params.n_features(),
            found: x.ncols(),
        });
    }
    let batch = x.nrows();
    let len = cfg.seq_len;
    let plen = cfg.pooled_len();
    let embedded = dense_forward(x, &params.embed);
    let tokens = embedded
        .into_shape_with_order((batch * len, cfg.d_model))
        .map_err(|_| PredictError::ShapeMismatch {
            expected: len * cfg.d_model,
            found: params.embed.w.ncols(),
        })?;
    let (attended, attention) =
        attention_forward(tokens.view(), len, cfg.n_heads, &attention_refs(params));
    let (z1, conv1) = conv_forward(attended.view(), len, cfg.conv_kernel, &params.conv1);
    let act1 = relu_forward(z1);
    let (pooled, pool) = pool_forward(act1.view(), len, cfg.pool_width);
    let (z2, conv2) = conv_forward(pooled.view(), plen, cfg.conv_kernel, &params.conv2);
    let act2 = relu_forward(z2);
    let (seq, lstm) = lstm_forward(act2.view(), plen, &params.lstm_fwd, &params.lstm_bwd);
    let flat = seq
        .into_shape_with_order((batch, cfg.flat_width()))
        .expect("recurrent output is contiguous");

    let n_fc = params.fc.len();
    let mut fc_in = Vec::with_capacity(n_fc);
    let mut fc_act = Vec::with_capacity(n_fc - 1);
    let mut masks = Vec::with_capacity(n_fc - 1);
    let mut h = flat;
    let mut rng = dropout;
    for (i, layer) in params.fc.iter().enumerate() {
        let z = dense_forward(h.view(), layer);
        fc_in.push(h);
        if i + 1 == n_fc {
            h = z;
            break;
        }
        let a = relu_forward(z);
        h = match (cfg.dropout_rates.get(i), rng.as_deref_mut()) {
            (Some(&rate), Some(r)) if rate > 0.0 => {
                let m = dropout_mask(a.dim(), rate, r);
                let out = &a * &m;
                masks.push(Some(m));
                out
            }
            _ => {
                masks.push(None);
                a.clone()
            }
        };
        fc_act.push(a);
    }
    Ok((
        h,
        ForwardCache {
            input: x.to_owned(),
            tokens,
            attention,
            conv1,
            act1,
            pool,
            conv2,
            act2,
            lstm,
            fc_in,
            fc_act,
            masks,
        },
    ))
}

/// Parameter gradients for upstream gradient `dlogits`.
pub fn backward(
    params: &PredictorParams,
    cfg: &PredictorConfig,
    cache: &ForwardCache,
    dlogits: &Array2<f64>,
) -> PredictorParams {
    let mut g = PredictorParams::zeros(cfg, params.n_features());
    let batch = dlogits.nrows();
    let len = cfg.seq_len;
    let plen = cfg.pooled_len();
    let (c1, _) = cfg.conv_channels;

    let n_fc = params.fc.len();
    let mut dh = dlogits.clone();
    for i in (0..n_fc).rev() {
        if i + 1 < n_fc {
            if let Some(m) = &cache.masks[i] {
                dh = &dh * m;
            }
            dh = relu_backward(&cache.fc_act[i], dh);
        }
        dh = dense_backward(cache.fc_in[i].view(), &params.fc[i], &dh, &mut g.fc[i]);
    }

    let dseq = dh
        .into_shape_with_order((batch * plen, 2 * cfg.lstm_hidden))
        .expect("flat gradient is contiguous");
    let (gf, gb) = (&mut g.lstm_fwd, &mut g.lstm_bwd);
    let dact2 = lstm_backward(
        cache.act2.view(),
        plen,
        &params.lstm_fwd,
        &params.lstm_bwd,
        &cache.lstm,
        &dseq,
        gf,
        gb,
    );
    let dz2 = relu_backward(&cache.act2, dact2);
    let dpooled = conv_backward(
        &cache.conv2,
        plen,
        cfg.conv_kernel,
        c1,
        &params.conv2,
        &dz2,
        &mut g.conv2,
    );
    let dact1 = pool_backward(&cache.pool, &dpooled);
    let dz1 = relu_backward(&cache.act1, dact1);
    let dattended = conv_backward(
        &cache.conv1,
        len,
        cfg.conv_kernel,
        cfg.d_model,
        &params.conv1,
        &dz1,
        &mut g.conv1,
    );
    let dtokens = attention_backward(
        cache.tokens.view(),
        len,
        cfg.n_heads,
        &attention_refs(params),
        &cache.attention,
        &dattended,
        AttentionGrads {
            query: &mut g.query,
            key: &mut g.key,
            value: &mut g.value,
            fuse: &mut g.fuse,
        },
    );
    let dembedded = dtokens
        .into_shape_with_order((batch, len * cfg.d_model))
        .expect("token gradient is contiguous");
    dense_backward(cache.input.view(), &params.embed, &dembedded, &mut g.embed);
    g
}

fn check_labels(labels: &[usize], batch: usize, m: usize) -> Result<(), PredictError> {
    if labels.len() != batch {
        return Err(PredictError::ShapeMismatch {
            expected: batch,
            found: labels.len(),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= m) {
        return Err(PredictError::LabelOutOfRange {
            label: bad,
            classes: m,
        });
    }
    Ok(())
}

/// Summed loss over the batch and gradients of `scale * summed loss`.
pub(crate) fn summed_loss_and_grads(
    params: &PredictorParams,
    cfg: &PredictorConfig,
    x: ArrayView2<f64>,
    labels: &[usize],
    dropout: Option<&mut Rng>,
    scale: f64,
) -> Result<(f64, PredictorParams), PredictError> {
    check_labels(labels, x.nrows(), cfg.n_classes)?;
    let (logits, cache) = forward(params, cfg, x, dropout)?;
    let (loss, mut dlogits) = softmax_cross_entropy(logits.view(), labels);
    dlogits *= scale;
    Ok((loss, backward(params, cfg, &cache, &dlogits)))
}

/// Mean cross-entropy over the batch and its gradient. Dropout is active
/// when `dropout` is given; masks are drawn from it in layer order.
pub fn loss_and_grads(
    params: &PredictorParams,
    cfg: &PredictorConfig,
    x: ArrayView2<f64>,
    labels: &[usize],
    dropout: Option<&mut Rng>,
) -> Result<(f64, PredictorParams), PredictError> {
    let n = x.nrows().max(1) as f64;
    let (loss, g) = summed_loss_and_grads(params, cfg, x, labels, dropout, 1.0 / n)?;
    Ok((loss / n, g))
}

/// Mean cross-entropy without dropout.
pub fn loss(
    params: &PredictorParams,
    cfg: &PredictorConfig,
    x: ArrayView2<f64>,
    labels: &[usize],
) -> Result<f64, PredictError> {
    check_labels(labels, x.nrows(), cfg.n_classes)?;
    let (logits, _) = forward(params, cfg, x, None)?;
    Ok(softmax_cross_entropy(logits.view(), labels).0 / x.nrows() as f64)
}

/// Class probabilities `[batch, m]`, dropout off.
pub fn probabilities(
    params: &PredictorParams,
    cfg: &PredictorConfig,
    x: ArrayView2<f64>,
) -> Result<Array2<f64>, PredictError> {
    let (logits, _) = forward(params, cfg, x, None)?;
    Ok(super::layers::softmax(logits.view()))
}

pub(crate) fn stack_rows(rows: &[Vec<f64>]) -> Array2<f64> {
    let width = rows.first().map_or(0, Vec::len);
    let mut out = Array2::zeros((rows.len(), width));
    for (mut dst, src) in out.axis_iter_mut(Axis(0)).zip(rows) {
        dst.iter_mut().zip(src).for_each(|(d, &s)| *d = s);
    }
    out
}
