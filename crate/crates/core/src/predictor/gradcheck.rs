//! Central finite-difference checks of the hand-written backward passes.
//!
//! Each check builds a small seeded instance of one layer class, reduces
//! its output to a scalar with a fixed random projection, and compares the
//! analytic gradient of every input and parameter entry against
//! `(f(x + h) - f(x - h)) / 2h`.

use ndarray::{Array1, Array2, ArrayD, Ix1, Ix2};

use super::config::{InitScheme, PredictorConfig};
use super::layers::{
    attention_backward, attention_forward, conv_backward, conv_forward, dense_backward,
    dense_forward, lstm_backward, lstm_forward, pool_backward, pool_forward, softmax_cross_entropy,
    AttentionGrads, AttentionParamsRef,
};
use super::network::loss_and_grads;
use super::params::{DenseParams, LstmParams, PredictorParams};
use crate::domain::Rng;

pub const STEP: f64 = 1e-5;

/// Magnitude below which a gradient entry is compared on an absolute
/// scale. Central differences at `STEP` carry rounding noise near `1e-10`,
/// so entries that are exactly zero in theory (the key bias, which every
/// score in a softmax row shares) would otherwise read as 100% error.
pub const SCALE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub layer: &'static str,
    pub entries: usize,
    pub max_rel_error: f64,
}

/// `|a - n| / max(|a|, |n|, SCALE_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(SCALE_FLOOR)
}

/// Compares `grad(tensors)` against central differences of `f`.
pub fn check_tensors(
    layer: &'static str,
    mut tensors: Vec<ArrayD<f64>>,
    f: impl Fn(&[ArrayD<f64>]) -> f64,
    grad: impl Fn(&[ArrayD<f64>]) -> Vec<ArrayD<f64>>,
) -> GradCheck {
    let analytic = grad(&tensors);
    assert_eq!(analytic.len(), tensors.len(), "one gradient per tensor");
    let mut worst = 0.0f64;
    let mut entries = 0;
    for t in 0..tensors.len() {
        assert_eq!(
            analytic[t].shape(),
            tensors[t].shape(),
            "gradient shape of tensor {t}"
        );
        for i in 0..tensors[t].len() {
            let orig = tensors[t].as_slice().expect("standard layout")[i];
            tensors[t].as_slice_mut().expect("standard layout")[i] = orig + STEP;
            let up = f(&tensors);
            tensors[t].as_slice_mut().expect("standard layout")[i] = orig - STEP;
            let down = f(&tensors);
            tensors[t].as_slice_mut().expect("standard layout")[i] = orig;
            let numeric = (up - down) / (2.0 * STEP);
            let a = analytic[t].as_slice().expect("standard layout")[i];
            worst = worst.max(relative_error(a, numeric));
            entries += 1;
        }
    }
    GradCheck {
        layer,
        entries,
        max_rel_error: worst,
    }
}

fn normal2(rng: &mut Rng, r: usize, c: usize) -> ArrayD<f64> {
    Array2::from_shape_simple_fn((r, c), || rng.normal()).into_dyn()
}

fn normal1(rng: &mut Rng, n: usize) -> ArrayD<f64> {
    Array1::from_shape_simple_fn(n, || rng.normal()).into_dyn()
}

fn m2(t: &ArrayD<f64>) -> Array2<f64> {
    t.clone().into_dimensionality::<Ix2>().expect("matrix")
}

fn v1(t: &ArrayD<f64>) -> Array1<f64> {
    t.clone().into_dimensionality::<Ix1>().expect("vector")
}

fn dense_at(ts: &[ArrayD<f64>], i: usize) -> DenseParams {
    DenseParams {
        w: m2(&ts[i]),
        b: v1(&ts[i + 1]),
    }
}

fn lstm_at(ts: &[ArrayD<f64>], i: usize) -> LstmParams {
    LstmParams {
        wx: m2(&ts[i]),
        wh: m2(&ts[i + 1]),
        b: v1(&ts[i + 2]),
    }
}

fn project(y: &Array2<f64>, r: &Array2<f64>) -> f64 {
    (y * r).sum()
}

pub fn check_dense(seed: u64) -> GradCheck {
    let mut rng = Rng::new(seed);
    let (b, i, o) = (5, 4, 3);
    let tensors = vec![
        normal2(&mut rng, b, i),
        normal2(&mut rng, i, o),
        normal1(&mut rng, o),
    ];
    let r = m2(&normal2(&mut rng, b, o));
    check_tensors(
        "fully connected",
        tensors,
        |ts| project(&dense_forward(m2(&ts[0]).view(), &dense_at(ts, 1)), &r),
        |ts| {
            let p = dense_at(ts, 1);
            let mut g = DenseParams::zeros(i, o);
            let dx = dense_backward(m2(&ts[0]).view(), &p, &r, &mut g);
            vec![dx.into_dyn(), g.w.into_dyn(), g.b.into_dyn()]
        },
    )
}

pub fn check_attention(seed: u64) -> GradCheck {
    let mut rng = Rng::new(seed);
    let (batch, len, d, heads) = (2, 3, 4, 2);
    // x, query.w, query.b, key.w, value.w, value.b, fuse.w, fuse.b
    let mut tensors = vec![normal2(&mut rng, batch * len, d)];
    tensors.push(normal2(&mut rng, d, d));
    tensors.push(normal1(&mut rng, d));
    tensors.push(normal2(&mut rng, d, d));
    for _ in 0..2 {
        tensors.push(normal2(&mut rng, d, d));
        tensors.push(normal1(&mut rng, d));
    }
    let r = m2(&normal2(&mut rng, batch * len, d));
    let run = |ts: &[ArrayD<f64>]| {
        let (query, key, value, fuse) = (
            dense_at(ts, 1),
            m2(&ts[3]),
            dense_at(ts, 4),
            dense_at(ts, 6),
        );
        let x = m2(&ts[0]);
        let refs = AttentionParamsRef {
            query: &query,
            key: &key,
            value: &value,
            fuse: &fuse,
        };
        let (y, cache) = attention_forward(x.view(), len, heads, &refs);
        let (mut gq, mut gv, mut go) = (
            DenseParams::zeros(d, d),
            DenseParams::zeros(d, d),
            DenseParams::zeros(d, d),
        );
        let mut gk = Array2::zeros((d, d));
        let dx = attention_backward(
            x.view(),
            len,
            heads,
            &refs,
            &cache,
            &r,
            AttentionGrads {
                query: &mut gq,
                key: &mut gk,
                value: &mut gv,
                fuse: &mut go,
            },
        );
        let out = vec![
            dx.into_dyn(),
            gq.w.into_dyn(),
            gq.b.into_dyn(),
            gk.into_dyn(),
            gv.w.into_dyn(),
            gv.b.into_dyn(),
            go.w.into_dyn(),
            go.b.into_dyn(),
        ];
        (project(&y, &r), out)
    };
    check_tensors("attention", tensors, |ts| run(ts).0, |ts| run(ts).1)
}

pub fn check_conv(seed: u64) -> GradCheck {
    let mut rng = Rng::new(seed);
    let (batch, len, c_in, c_out, kernel) = (2, 5, 3, 4, 4);
    let tensors = vec![
        normal2(&mut rng, batch * len, c_in),
        normal2(&mut rng, kernel * c_in, c_out),
        normal1(&mut rng, c_out),
    ];
    let r = m2(&normal2(&mut rng, batch * len, c_out));
    check_tensors(
        "convolution",
        tensors,
        |ts| {
            project(
                &conv_forward(m2(&ts[0]).view(), len, kernel, &dense_at(ts, 1)).0,
                &r,
            )
        },
        |ts| {
            let p = dense_at(ts, 1);
            let (_, cache) = conv_forward(m2(&ts[0]).view(), len, kernel, &p);
            let mut g = DenseParams::zeros(kernel * c_in, c_out);
            let dx = conv_backward(&cache, len, kernel, c_in, &p, &r, &mut g);
            vec![dx.into_dyn(), g.w.into_dyn(), g.b.into_dyn()]
        },
    )
}

pub fn check_pool(seed: u64) -> GradCheck {
    let mut rng = Rng::new(seed);
    let (batch, len, c, width) = (3, 6, 4, 2);
    let tensors = vec![normal2(&mut rng, batch * len, c)];
    let r = m2(&normal2(&mut rng, batch * len / width, c));
    check_tensors(
        "max pool",
        tensors,
        |ts| project(&pool_forward(m2(&ts[0]).view(), len, width).0, &r),
        |ts| {
            let (_, cache) = pool_forward(m2(&ts[0]).view(), len, width);
            vec![pool_backward(&cache, &r).into_dyn()]
        },
    )
}

pub fn check_recurrent(seed: u64) -> GradCheck {
    let mut rng = Rng::new(seed);
    let (batch, len, c, h) = (2, 4, 3, 3);
    let mut tensors = vec![normal2(&mut rng, batch * len, c)];
    for _ in 0..2 {
        tensors.push(normal2(&mut rng, c, 4 * h));
        tensors.push(normal2(&mut rng, h, 4 * h));
        tensors.push(normal1(&mut rng, 4 * h));
    }
    let r = m2(&normal2(&mut rng, batch * len, 2 * h));
    let zeros = || LstmParams {
        wx: Array2::zeros((c, 4 * h)),
        wh: Array2::zeros((h, 4 * h)),
        b: Array1::zeros(4 * h),
    };
    check_tensors(
        "recurrent",
        tensors,
        |ts| {
            project(
                &lstm_forward(m2(&ts[0]).view(), len, &lstm_at(ts, 1), &lstm_at(ts, 4)).0,
                &r,
            )
        },
        |ts| {
            let (f, b) = (lstm_at(ts, 1), lstm_at(ts, 4));
            let x = m2(&ts[0]);
            let (_, cache) = lstm_forward(x.view(), len, &f, &b);
            let (mut gf, mut gb) = (zeros(), zeros());
            let dx = lstm_backward(x.view(), len, &f, &b, &cache, &r, &mut gf, &mut gb);
            vec![
                dx.into_dyn(),
                gf.wx.into_dyn(),
                gf.wh.into_dyn(),
                gf.b.into_dyn(),
                gb.wx.into_dyn(),
                gb.wh.into_dyn(),
                gb.b.into_dyn(),
            ]
        },
    )
}

pub fn check_softmax_cross_entropy(seed: u64) -> GradCheck {
    let mut rng = Rng::new(seed);
    let (batch, m) = (6, 5);
    let labels: Vec<usize> = (0..batch).map(|_| rng.below(m)).collect();
    let tensors = vec![normal2(&mut rng, batch, m)];
    check_tensors(
        "softmax cross-entropy",
        tensors,
        |ts| softmax_cross_entropy(m2(&ts[0]).view(), &labels).0,
        |ts| {
            vec![softmax_cross_entropy(m2(&ts[0]).view(), &labels)
                .1
                .into_dyn()]
        },
    )
}

/// A shrunken network configuration for end-to-end checks.
pub fn small_config(n_classes: usize) -> PredictorConfig {
    PredictorConfig {
        seq_len: 4,
        d_model: 4,
        n_heads: 2,
        conv_channels: (3, 4),
        lstm_hidden: 2,
        fc_dims: vec![6, 5, 4, 4, n_classes],
        init: InitScheme::Uniform { limit: 0.8 },
        ..PredictorConfig::for_classes(n_classes)
    }
}

/// Every parameter of the whole network, dropout off.
pub fn check_network(seed: u64) -> GradCheck {
    check_network_with(seed, None)
}

/// As [`check_network`], with dropout masks replayed from `mask_seed` on
/// every evaluation so the objective stays a fixed function.
pub fn check_network_with(seed: u64, mask_seed: Option<u64>) -> GradCheck {
    let mut rng = Rng::new(seed);
    let (batch, features, m) = (3, 5, 4);
    let cfg = small_config(m);
    let params = PredictorParams::init(&cfg, features, &mut rng.fork(1));
    let x = Array2::from_shape_simple_fn((batch, features), || rng.uniform());
    let labels: Vec<usize> = (0..batch).map(|_| rng.below(m)).collect();
    let tensors: Vec<ArrayD<f64>> = params
        .tensors()
        .into_iter()
        .map(|(_, t)| t.to_owned())
        .collect();
    let rebuild = |ts: &[ArrayD<f64>]| {
        let mut p = PredictorParams::zeros(&cfg, features);
        for ((_, mut dst), src) in p.tensors_mut().into_iter().zip(ts) {
            dst.assign(src);
        }
        p
    };
    check_tensors(
        "network",
        tensors,
        |ts| {
            let mut masks = mask_seed.map(Rng::new);
            loss_and_grads(&rebuild(ts), &cfg, x.view(), &labels, masks.as_mut())
                .expect("valid batch")
                .0
        },
        |ts| {
            let mut masks = mask_seed.map(Rng::new);
            let (_, g) = loss_and_grads(&rebuild(ts), &cfg, x.view(), &labels, masks.as_mut())
                .expect("valid batch");
            g.tensors().into_iter().map(|(_, t)| t.to_owned()).collect()
        },
    )
}

/// One check per layer class plus the assembled network.
pub fn check_all(seed: u64) -> Vec<GradCheck> {
    vec![
        check_attention(seed),
        check_conv(seed),
        check_pool(seed),
        check_recurrent(seed),
        check_dense(seed),
        check_softmax_cross_entropy(seed),
        check_network(seed),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_layer_class_matches_finite_differences() {
        for seed in 0..3 {
            for c in check_all(seed) {
                assert!(c.entries > 0, "{} checked nothing", c.layer);
                assert!(c.max_rel_error < 1e-4, "seed {seed}: {:?}", c);
            }
        }
    }
}
