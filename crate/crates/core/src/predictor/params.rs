use ndarray::{Array1, Array2, ArrayViewD, ArrayViewMutD, Zip};

use super::config::{InitScheme, PredictorConfig};
use crate::domain::Rng;

/// One direction of the recurrent layer. Gate blocks are laid out
/// `[input, forget, output, candidate]` along the `4H` axis.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub wx: Array2<f64>,
    pub wh: Array2<f64>,
    pub b: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl DenseParams {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            w: Array2::zeros((fan_in, fan_out)),
            b: Array1::zeros(fan_out),
        }
    }
}

/// All trainable tensors. Weight matrices are stored `[fan_in, fan_out]`
/// so a layer is `x · w + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorParams {
    /// `[features, seq_len * d_model]`.
    pub embed: DenseParams,
    pub query: DenseParams,
    /// Key map, without bias: a key bias adds the same amount to every
    /// score in a softmax row and so never changes the output.
    pub key: Array2<f64>,
    pub value: DenseParams,
    pub fuse: DenseParams,
    /// `[kernel * d_model, c1]`, rows ordered by kernel tap then channel.
    pub conv1: DenseParams,
    pub conv2: DenseParams,
    pub lstm_fwd: LstmParams,
    pub lstm_bwd: LstmParams,
    pub fc: Vec<DenseParams>,
}

impl PredictorParams {
    pub fn zeros(cfg: &PredictorConfig, n_features: usize) -> Self {
        let d = cfg.d_model;
        let (c1, c2) = cfg.conv_channels;
        let h = cfg.lstm_hidden;
        let lstm = || LstmParams {
            wx: Array2::zeros((c2, 4 * h)),
            wh: Array2::zeros((h, 4 * h)),
            b: Array1::zeros(4 * h),
        };
        let mut fc = Vec::with_capacity(cfg.fc_dims.len());
        let mut fan_in = cfg.flat_width();
        for &w in &cfg.fc_dims {
            fc.push(DenseParams::zeros(fan_in, w));
            fan_in = w;
        }
        Self {
            embed: DenseParams::zeros(n_features, cfg.seq_len * d),
            query: DenseParams::zeros(d, d),
            key: Array2::zeros((d, d)),
            value: DenseParams::zeros(d, d),
            fuse: DenseParams::zeros(d, d),
            conv1: DenseParams::zeros(cfg.conv_kernel * d, c1),
            conv2: DenseParams::zeros(cfg.conv_kernel * c1, c2),
            lstm_fwd: lstm(),
            lstm_bwd: lstm(),
            fc,
        }
    }

    /// Seeded initialization; the draw order follows [`Self::tensors`].
    pub fn init(cfg: &PredictorConfig, n_features: usize, rng: &mut Rng) -> Self {
        let mut p = Self::zeros(cfg, n_features);
        let h = cfg.lstm_hidden;
        for (name, mut t) in p.tensors_mut() {
            let is_bias = name.ends_with(".b");
            match cfg.init {
                InitScheme::Uniform { limit } => {
                    t.iter_mut()
                        .for_each(|v| *v = rng.uniform_range(-limit, limit));
                }
                InitScheme::Glorot if !is_bias => {
                    let (fan_in, fan_out) = (t.shape()[0], t.shape()[1]);
                    // Recurrent and input maps of one gate share a fan-out.
                    let fan_out = if name.starts_with("lstm") {
                        fan_out / 4
                    } else {
                        fan_out
                    };
                    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    t.iter_mut().for_each(|v| *v = rng.uniform_range(-a, a));
                }
                InitScheme::He { gain } if !is_bias => {
                    let a = if name == "query.w" {
                        0.0
                    } else {
                        gain * (6.0 / t.shape()[0] as f64).sqrt()
                    };
                    t.iter_mut().for_each(|v| *v = rng.uniform_range(-a, a));
                }
                InitScheme::Glorot | InitScheme::He { .. } => {
                    if name.starts_with("lstm") {
                        t.iter_mut().skip(h).take(h).for_each(|v| *v = 1.0);
                    }
                }
            }
        }
        p
    }

    /// Every tensor with a stable name, in serialization order.
    pub fn tensors(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        let mut out: Vec<(String, ArrayViewD<'_, f64>)> = Vec::new();
        fn dense<'a>(name: &str, p: &'a DenseParams, out: &mut Vec<(String, ArrayViewD<'a, f64>)>) {
            out.push((format!("{name}.w"), p.w.view().into_dyn()));
            out.push((format!("{name}.b"), p.b.view().into_dyn()));
        }
        dense("embed", &self.embed, &mut out);
        dense("query", &self.query, &mut out);
        out.push(("key.w".into(), self.key.view().into_dyn()));
        dense("value", &self.value, &mut out);
        dense("fuse", &self.fuse, &mut out);
        dense("conv1", &self.conv1, &mut out);
        dense("conv2", &self.conv2, &mut out);
        for (name, l) in [("lstm_fwd", &self.lstm_fwd), ("lstm_bwd", &self.lstm_bwd)] {
            out.push((format!("{name}.wx"), l.wx.view().into_dyn()));
            out.push((format!("{name}.wh"), l.wh.view().into_dyn()));
            out.push((format!("{name}.b"), l.b.view().into_dyn()));
        }
        for (i, p) in self.fc.iter().enumerate() {
            dense(&format!("fc{}", i + 1), p, &mut out);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, f64>)> {
        let mut out: Vec<(String, ArrayViewMutD<'_, f64>)> = Vec::new();
        fn dense<'a>(
            name: &str,
            p: &'a mut DenseParams,
            out: &mut Vec<(String, ArrayViewMutD<'a, f64>)>,
        ) {
            out.push((format!("{name}.w"), p.w.view_mut().into_dyn()));
            out.push((format!("{name}.b"), p.b.view_mut().into_dyn()));
        }
        dense("embed", &mut self.embed, &mut out);
        dense("query", &mut self.query, &mut out);
        out.push(("key.w".into(), self.key.view_mut().into_dyn()));
        dense("value", &mut self.value, &mut out);
        dense("fuse", &mut self.fuse, &mut out);
        dense("conv1", &mut self.conv1, &mut out);
        dense("conv2", &mut self.conv2, &mut out);
        for (name, l) in [
            ("lstm_fwd", &mut self.lstm_fwd),
            ("lstm_bwd", &mut self.lstm_bwd),
        ] {
            out.push((format!("{name}.wx"), l.wx.view_mut().into_dyn()));
            out.push((format!("{name}.wh"), l.wh.view_mut().into_dyn()));
            out.push((format!("{name}.b"), l.b.view_mut().into_dyn()));
        }
        for (i, p) in self.fc.iter_mut().enumerate() {
            dense(&format!("fc{}", i + 1), p, &mut out);
        }
        out
    }

    pub fn len(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn all_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }

    /// `self += alpha * other`, tensor by tensor.
    pub fn scaled_add(&mut self, alpha: f64, other: &PredictorParams) {
        for ((_, mut a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            Zip::from(&mut a).and(&b).for_each(|x, &y| *x += alpha * y);
        }
    }

    pub fn n_features(&self) -> usize {
        self.embed.w.nrows()
    }
}
