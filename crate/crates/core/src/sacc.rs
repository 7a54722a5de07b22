//! Self-attention channel combinator over the beamformer power outputs.
//!
//! For each frame `t`, the `P × F` power matrix `Y_t` is projected to queries
//! and keys (`P × D`) and values (`P × 1`). Attention across channels yields
//! one score per channel,
//!
//! ```text
//! w_SA,t = softmax(Q_t K_tᵀ / √D) V_t
//! ```
//!
//! and the combined frame is `Ȳ_t = Σ_p softmax(w_SA,t)_p · Y_t,p`, a single
//! weight per channel shared by all frequency bins. The attention softmax is
//! taken over keys (row-wise).

use ndarray::{s, Array1, Array2, Array3, ArrayView2, ArrayView3, Axis};
use rand::Rng;

use crate::error::{Error, Result};
use crate::params::{slice_of, slice_of_mut, Parameters};

pub const DEFAULT_HIDDEN: usize = 256;

/// Query/key/value projections. Doubles as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct SaccParams {
    pub w_q: Array2<f64>,
    pub w_k: Array2<f64>,
    pub w_v: Array2<f64>,
    pub b_q: Array1<f64>,
    pub b_k: Array1<f64>,
    pub b_v: Array1<f64>,
}

impl SaccParams {
    pub fn zeros(bins: usize, hidden: usize) -> Self {
        SaccParams {
            w_q: Array2::zeros((bins, hidden)),
            w_k: Array2::zeros((bins, hidden)),
            w_v: Array2::zeros((bins, 1)),
            b_q: Array1::zeros(hidden),
            b_k: Array1::zeros(hidden),
            b_v: Array1::zeros(1),
        }
    }

    /// Projection matrices uniform in `±sqrt(1/F)`, biases zero.
    pub fn init<R: Rng>(bins: usize, hidden: usize, rng: &mut R) -> Self {
        let bound = (1.0 / bins as f64).sqrt();
        let mut p = Self::zeros(bins, hidden);
        for w in [&mut p.w_q, &mut p.w_k, &mut p.w_v] {
            w.mapv_inplace(|_| rng.random_range(-bound..bound));
        }
        p
    }

    pub fn bins(&self) -> usize {
        self.w_q.nrows()
    }

    pub fn hidden(&self) -> usize {
        self.w_q.ncols()
    }

    fn check(&self) -> Result<()> {
        let (f, d) = self.w_q.dim();
        if d == 0
            || self.w_k.dim() != (f, d)
            || self.w_v.dim() != (f, 1)
            || self.b_q.len() != d
            || self.b_k.len() != d
            || self.b_v.len() != 1
        {
            return Err(Error::Shape("inconsistent SACC parameter shapes".into()));
        }
        Ok(())
    }
}

impl Parameters for SaccParams {
    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        f("w_q", self.w_q.shape(), slice_of(&self.w_q));
        f("w_k", self.w_k.shape(), slice_of(&self.w_k));
        f("w_v", self.w_v.shape(), slice_of(&self.w_v));
        f("b_q", self.b_q.shape(), slice_of(&self.b_q));
        f("b_k", self.b_k.shape(), slice_of(&self.b_k));
        f("b_v", self.b_v.shape(), slice_of(&self.b_v));
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        f("w_q", slice_of_mut(&mut self.w_q));
        f("w_k", slice_of_mut(&mut self.w_k));
        f("w_v", slice_of_mut(&mut self.w_v));
        f("b_q", slice_of_mut(&mut self.b_q));
        f("b_k", slice_of_mut(&mut self.b_k));
        f("b_v", slice_of_mut(&mut self.b_v));
    }
}

/// Pre-softmax channel scores `w_SA`, `T × P`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights {
    pub scores: Array2<f64>,
}

impl AttentionWeights {
    /// Row-wise softmax: the per-frame channel combination weights.
    pub fn combination_weights(&self) -> Array2<f64> {
        extract_weights(&self.scores)
    }
}

/// Row-wise softmax of `T × P` scores.
pub fn extract_weights(scores: &Array2<f64>) -> Array2<f64> {
    let mut out = scores.clone();
    for mut row in out.outer_iter_mut() {
        softmax_in_place(row.as_slice_mut().expect("owned rows are contiguous"));
    }
    out
}

pub(crate) fn softmax_in_place(x: &mut [f64]) {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in x.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in x.iter_mut() {
        *v /= sum;
    }
}

/// Intermediates retained for [`sacc_backward`].
#[derive(Debug, Clone)]
pub struct SaccCache {
    frames: usize,
    channels: usize,
    /// `(T·P) × F`
    y: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array1<f64>,
    /// `T × P × P`, rows sum to one.
    attn: Array3<f64>,
    /// `T × P`, post-softmax combination weights.
    mix: Array2<f64>,
}

impl SaccCache {
    pub fn combination_weights(&self) -> &Array2<f64> {
        &self.mix
    }
}

#[derive(Debug, Clone)]
pub struct SaccOutput {
    /// `Ȳ`, `T × F`.
    pub combined: Array2<f64>,
    pub weights: AttentionWeights,
    pub cache: SaccCache,
}

/// Forward pass over a `T × P × F` power tensor.
pub fn sacc_forward(y_pow: ArrayView3<f64>, params: &SaccParams) -> Result<SaccOutput> {
    params.check()?;
    let (t_count, p_count, f_count) = y_pow.dim();
    if p_count == 0 || t_count == 0 {
        return Err(Error::Shape("SACC input needs at least one frame and one channel".into()));
    }
    if f_count != params.bins() {
        return Err(Error::Shape(format!(
            "SACC input has {f_count} bins, parameters expect {}",
            params.bins()
        )));
    }
    let d = params.hidden();
    let scale = 1.0 / (d as f64).sqrt();
    let y = y_pow
        .to_owned()
        .into_shape_with_order((t_count * p_count, f_count))
        .expect("contiguous reshape");
    let q = y.dot(&params.w_q) + &params.b_q;
    let k = y.dot(&params.w_k) + &params.b_k;
    let v = y.dot(&params.w_v).column(0).to_owned() + params.b_v[0];

    let mut attn = Array3::zeros((t_count, p_count, p_count));
    let mut scores = Array2::zeros((t_count, p_count));
    for t in 0..t_count {
        let base = t * p_count;
        for i in 0..p_count {
            let mut row: Vec<f64> = (0..p_count)
                .map(|j| q.row(base + i).dot(&k.row(base + j)) * scale)
                .collect();
            softmax_in_place(&mut row);
            let mut acc = 0.0;
            for (j, a) in row.iter().enumerate() {
                attn[[t, i, j]] = *a;
                acc += a * v[base + j];
            }
            scores[[t, i]] = acc;
        }
    }
    let mix = extract_weights(&scores);
    let mut combined = Array2::zeros((t_count, f_count));
    for t in 0..t_count {
        let mut out = combined.row_mut(t);
        for p in 0..p_count {
            out.scaled_add(mix[[t, p]], &y.row(t * p_count + p));
        }
    }
    Ok(SaccOutput {
        combined,
        weights: AttentionWeights { scores },
        cache: SaccCache {
            frames: t_count,
            channels: p_count,
            y,
            q,
            k,
            v,
            attn,
            mix,
        },
    })
}

/// Exact gradients of a scalar loss with respect to all SACC parameters,
/// given `dL/dȲ` (`T × F`).
pub fn sacc_backward(cache: &SaccCache, d_combined: ArrayView2<f64>) -> Result<SaccParams> {
    let (t_count, p_count) = (cache.frames, cache.channels);
    let f_count = cache.y.ncols();
    if d_combined.dim() != (t_count, f_count) {
        return Err(Error::Shape(format!(
            "upstream gradient is {:?}, forward cache holds {t_count} × {f_count}",
            d_combined.dim()
        )));
    }
    let d = cache.q.ncols();
    let scale = 1.0 / (d as f64).sqrt();

    let mut d_q = Array2::<f64>::zeros(cache.q.raw_dim());
    let mut d_k = Array2::<f64>::zeros(cache.k.raw_dim());
    let mut d_v = Array1::<f64>::zeros(cache.v.len());

    for t in 0..t_count {
        let base = t * p_count;
        let g = d_combined.row(t);
        // through Ȳ_t = Σ_p mix_p Y_p
        let d_mix: Vec<f64> = (0..p_count).map(|p| g.dot(&cache.y.row(base + p))).collect();
        // through the channel softmax
        let mix = cache.mix.row(t);
        let inner: f64 = (0..p_count).map(|p| mix[p] * d_mix[p]).sum();
        let d_score: Vec<f64> = (0..p_count).map(|p| mix[p] * (d_mix[p] - inner)).collect();
        // through w_SA = A V
        let attn = cache.attn.slice(s![t, .., ..]);
        for i in 0..p_count {
            for j in 0..p_count {
                d_v[base + j] += attn[[i, j]] * d_score[i];
            }
        }
        for i in 0..p_count {
            // dA_ij = d_score_i · V_j, then the attention softmax over j
            let d_a: Vec<f64> = (0..p_count).map(|j| d_score[i] * cache.v[base + j]).collect();
            let dot: f64 = (0..p_count).map(|j| attn[[i, j]] * d_a[j]).sum();
            for j in 0..p_count {
                let d_s = attn[[i, j]] * (d_a[j] - dot) * scale;
                if d_s == 0.0 {
                    continue;
                }
                let k_row = cache.k.row(base + j).to_owned();
                let q_row = cache.q.row(base + i).to_owned();
                d_q.row_mut(base + i).scaled_add(d_s, &k_row);
                d_k.row_mut(base + j).scaled_add(d_s, &q_row);
            }
        }
    }

    let y_t = cache.y.t();
    Ok(SaccParams {
        w_q: y_t.dot(&d_q),
        w_k: y_t.dot(&d_k),
        w_v: y_t.dot(&d_v.view().insert_axis(Axis(1))),
        b_q: d_q.sum_axis(Axis(0)),
        b_k: d_k.sum_axis(Axis(0)),
        b_v: Array1::from_elem(1, d_v.sum()),
    })
}
