//! Temporal convolutional network producing 3-class frame logits.
//!
//! Layout: a 1×1 input projection, `blocks` residual blocks of
//! `layers_per_block` dilated same-padded convolutions (dilation `2^k`), each
//! followed by per-frame layer normalization over channels and ReLU, and a
//! 1×1 output projection. Every output frame depends only on input frames
//! within the receptive field `1 + blocks·(kernel − 1)·(2^layers − 1)`.

use ndarray::{s, Array1, Array2, Array3, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{slice_of, slice_of_mut, Parameters};

const NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TcnConfig {
    pub input_dim: usize,
    pub hidden: usize,
    pub kernel_size: usize,
    pub blocks: usize,
    pub layers_per_block: usize,
    pub num_classes: usize,
}

impl Default for TcnConfig {
    fn default() -> Self {
        TcnConfig {
            input_dim: 64,
            hidden: 64,
            kernel_size: 3,
            blocks: 3,
            layers_per_block: 5,
            num_classes: 3,
        }
    }
}

impl TcnConfig {
    pub fn receptive_field(&self) -> usize {
        1 + self.blocks * (self.kernel_size - 1) * ((1 << self.layers_per_block) - 1)
    }

    pub fn dilation(&self, layer_in_block: usize) -> usize {
        1 << layer_in_block
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel_size % 2 == 0
            || self.input_dim == 0
            || self.hidden == 0
            || self.blocks == 0
            || self.layers_per_block == 0
            || self.num_classes == 0
        {
            return Err(Error::InvalidInput(format!("invalid TCN configuration {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    /// Taps indexed `[k, in, out]`.
    pub weight: Array3<f64>,
    pub bias: Array1<f64>,
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
}

/// Model parameters. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct TcnModel {
    pub config: TcnConfig,
    pub in_w: Array2<f64>,
    pub in_b: Array1<f64>,
    pub layers: Vec<ConvLayer>,
    pub out_w: Array2<f64>,
    pub out_b: Array1<f64>,
}

impl TcnModel {
    pub fn zeros(config: TcnConfig) -> Self {
        let h = config.hidden;
        let layers = (0..config.blocks * config.layers_per_block)
            .map(|_| ConvLayer {
                weight: Array3::zeros((config.kernel_size, h, h)),
                bias: Array1::zeros(h),
                gamma: Array1::zeros(h),
                beta: Array1::zeros(h),
            })
            .collect();
        TcnModel {
            config,
            in_w: Array2::zeros((config.input_dim, h)),
            in_b: Array1::zeros(h),
            layers,
            out_w: Array2::zeros((h, config.num_classes)),
            out_b: Array1::zeros(config.num_classes),
        }
    }

    /// Fan-in uniform initialization; norm gains start at one.
    pub fn init<R: Rng>(config: TcnConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut m = Self::zeros(config);
        let fill = |a: &mut [f64], fan_in: usize, rng: &mut R| {
            let bound = (1.0 / fan_in as f64).sqrt();
            a.iter_mut().for_each(|x| *x = rng.random_range(-bound..bound));
        };
        fill(slice_of_mut(&mut m.in_w), config.input_dim, rng);
        for layer in &mut m.layers {
            fill(slice_of_mut(&mut layer.weight), config.kernel_size * config.hidden, rng);
            layer.gamma.fill(1.0);
        }
        fill(slice_of_mut(&mut m.out_w), config.hidden, rng);
        Ok(m)
    }

    fn layer_dilation(&self, index: usize) -> usize {
        self.config.dilation(index % self.config.layers_per_block)
    }
}

impl Parameters for TcnModel {
    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        f("in_w", self.in_w.shape(), slice_of(&self.in_w));
        f("in_b", self.in_b.shape(), slice_of(&self.in_b));
        for (i, l) in self.layers.iter().enumerate() {
            f(&format!("layers.{i}.weight"), l.weight.shape(), slice_of(&l.weight));
            f(&format!("layers.{i}.bias"), l.bias.shape(), slice_of(&l.bias));
            f(&format!("layers.{i}.gamma"), l.gamma.shape(), slice_of(&l.gamma));
            f(&format!("layers.{i}.beta"), l.beta.shape(), slice_of(&l.beta));
        }
        f("out_w", self.out_w.shape(), slice_of(&self.out_w));
        f("out_b", self.out_b.shape(), slice_of(&self.out_b));
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        f("in_w", slice_of_mut(&mut self.in_w));
        f("in_b", slice_of_mut(&mut self.in_b));
        for (i, l) in self.layers.iter_mut().enumerate() {
            f(&format!("layers.{i}.weight"), slice_of_mut(&mut l.weight));
            f(&format!("layers.{i}.bias"), slice_of_mut(&mut l.bias));
            f(&format!("layers.{i}.gamma"), slice_of_mut(&mut l.gamma));
            f(&format!("layers.{i}.beta"), slice_of_mut(&mut l.beta));
        }
        f("out_w", slice_of_mut(&mut self.out_w));
        f("out_b", slice_of_mut(&mut self.out_b));
    }
}

#[derive(Debug, Clone)]
struct LayerCache {
    input: Array2<f64>,
    normed: Array2<f64>,
    inv_std: Array1<f64>,
    pre_relu: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct TcnCache {
    features: Array2<f64>,
    layers: Vec<LayerCache>,
    last_hidden: Array2<f64>,
}

/// `out[t] += x[t + offset] · w` for every `t` with `t + offset` in range.
fn shifted_matmul_add(out: &mut Array2<f64>, x: &Array2<f64>, w: ArrayView2<f64>, offset: isize) {
    let t = x.nrows() as isize;
    let lo = (-offset).max(0);
    let hi = (t - offset).min(t);
    if lo >= hi {
        return;
    }
    let src = x.slice(s![(lo + offset)..(hi + offset), ..]);
    let prod = src.dot(&w);
    let mut dst = out.slice_mut(s![lo..hi, ..]);
    dst += &prod;
}

/// Forward pass over `T × input_dim` features; returns `T × classes` logits.
pub fn tcn_forward(features: ArrayView2<f64>, model: &TcnModel) -> Result<(Array2<f64>, TcnCache)> {
    let cfg = &model.config;
    if features.ncols() != cfg.input_dim {
        return Err(Error::Shape(format!(
            "features have dimension {}, model expects {}",
            features.ncols(),
            cfg.input_dim
        )));
    }
    if features.nrows() == 0 {
        return Err(Error::InvalidInput("empty feature sequence".into()));
    }
    let t_count = features.nrows();
    let half = (cfg.kernel_size / 2) as isize;
    let mut h = features.dot(&model.in_w) + &model.in_b;
    let mut caches = Vec::with_capacity(model.layers.len());

    for block in 0..cfg.blocks {
        let residual = h.clone();
        for l in 0..cfg.layers_per_block {
            let idx = block * cfg.layers_per_block + l;
            let layer = &model.layers[idx];
            let dil = model.layer_dilation(idx) as isize;
            let mut z = Array2::zeros((t_count, cfg.hidden));
            for k in 0..cfg.kernel_size {
                let offset = (k as isize - half) * dil;
                shifted_matmul_add(&mut z, &h, layer.weight.index_axis(Axis(0), k), offset);
            }
            z += &layer.bias;
            let (normed, inv_std) = layer_norm_rows(&z);
            let pre_relu = &normed * &layer.gamma + &layer.beta;
            let out = pre_relu.mapv(|v| v.max(0.0));
            caches.push(LayerCache {
                input: std::mem::replace(&mut h, out),
                normed,
                inv_std,
                pre_relu,
            });
        }
        h += &residual;
    }
    let logits = h.dot(&model.out_w) + &model.out_b;
    Ok((
        logits,
        TcnCache {
            features: features.to_owned(),
            layers: caches,
            last_hidden: h,
        },
    ))
}

fn layer_norm_rows(z: &Array2<f64>) -> (Array2<f64>, Array1<f64>) {
    let h = z.ncols() as f64;
    let mut normed = z.clone();
    let mut inv_std = Array1::zeros(z.nrows());
    for (mut row, s) in normed.outer_iter_mut().zip(inv_std.iter_mut()) {
        let mean = row.sum() / h;
        row -= mean;
        let var = row.mapv(|v| v * v).sum() / h;
        *s = 1.0 / (var + NORM_EPS).sqrt();
        row *= *s;
    }
    (normed, inv_std)
}

/// Gradients of the loss w.r.t. the model parameters and the input features.
pub fn tcn_backward(
    cache: &TcnCache,
    model: &TcnModel,
    d_logits: ArrayView2<f64>,
) -> Result<(TcnModel, Array2<f64>)> {
    let cfg = &model.config;
    let t_count = cache.features.nrows();
    if d_logits.dim() != (t_count, cfg.num_classes) || cache.layers.len() != model.layers.len() {
        return Err(Error::Shape(format!(
            "logit gradient {:?} does not match the cached forward pass ({t_count} × {})",
            d_logits.dim(),
            cfg.num_classes
        )));
    }
    let hdim = cfg.hidden as f64;
    let half = (cfg.kernel_size / 2) as isize;
    let mut grads = TcnModel::zeros(*cfg);

    grads.out_w = cache.last_hidden.t().dot(&d_logits);
    grads.out_b = d_logits.sum_axis(Axis(0));
    let mut dh = d_logits.dot(&model.out_w.t());

    for block in (0..cfg.blocks).rev() {
        let d_residual = dh.clone();
        for l in (0..cfg.layers_per_block).rev() {
            let idx = block * cfg.layers_per_block + l;
            let layer = &model.layers[idx];
            let lc = &cache.layers[idx];
            let dil = model.layer_dilation(idx) as isize;
            let g = &mut grads.layers[idx];

            let mut da = dh;
            ndarray::Zip::from(&mut da)
                .and(&lc.pre_relu)
                .for_each(|d, &a| {
                    if a <= 0.0 {
                        *d = 0.0
                    }
                });
            g.gamma = (&da * &lc.normed).sum_axis(Axis(0));
            g.beta = da.sum_axis(Axis(0));
            let dn = &da * &layer.gamma;
            let mut dz = Array2::zeros(dn.raw_dim());
            for t in 0..t_count {
                let dn_row = dn.row(t);
                let n_row = lc.normed.row(t);
                let sum_dn = dn_row.sum();
                let sum_dn_n = dn_row.dot(&n_row);
                let s = lc.inv_std[t] / hdim;
                for c in 0..cfg.hidden {
                    dz[[t, c]] = s * (hdim * dn_row[c] - sum_dn - n_row[c] * sum_dn_n);
                }
            }
            g.bias = dz.sum_axis(Axis(0));
            let mut dx = Array2::zeros((t_count, cfg.hidden));
            for k in 0..cfg.kernel_size {
                let offset = (k as isize - half) * dil;
                let tn = t_count as isize;
                let lo = (-offset).max(0);
                let hi = (tn - offset).min(tn);
                if lo >= hi {
                    continue;
                }
                let x_src = lc.input.slice(s![(lo + offset)..(hi + offset), ..]);
                let dz_rows = dz.slice(s![lo..hi, ..]);
                let dw = x_src.t().dot(&dz_rows);
                g.weight.index_axis_mut(Axis(0), k).assign(&dw);
                let back = dz_rows.dot(&layer.weight.index_axis(Axis(0), k).t());
                let mut dst = dx.slice_mut(s![(lo + offset)..(hi + offset), ..]);
                dst += &back;
            }
            dh = dx;
        }
        dh += &d_residual;
    }
    grads.in_w = cache.features.t().dot(&dh);
    grads.in_b = dh.sum_axis(Axis(0));
    let d_features = dh.dot(&model.in_w.t());
    Ok((grads, d_features))
}
