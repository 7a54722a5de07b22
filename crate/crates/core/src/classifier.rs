//! Frame labels and posteriors, the cross-entropy objective, the Adam
//! optimizer, VAD/OSD decisions and sliding-window inference.

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::Parameters;
use crate::sacc::softmax_in_place;

pub const NUM_CLASSES: usize = 3;

/// Per-frame speaker-count class: 0 none, 1 single speaker, 2 overlap.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LabelSequence(Vec<u8>);

impl LabelSequence {
    pub fn new(labels: Vec<u8>) -> Result<Self> {
        if let Some(bad) = labels.iter().find(|&&l| l as usize >= NUM_CLASSES) {
            return Err(Error::InvalidInput(format!("label {bad} is outside {{0, 1, 2}}")));
        }
        Ok(LabelSequence(labels))
    }

    /// Class for each speaker count (`≥ 2` collapses to overlap).
    pub fn from_counts(counts: &[usize]) -> Self {
        LabelSequence(counts.iter().map(|&c| c.min(2) as u8).collect())
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn slice(&self, start: usize, len: usize) -> LabelSequence {
        LabelSequence(self.0[start..start + len].to_vec())
    }

    pub fn speech(&self) -> Vec<bool> {
        self.0.iter().map(|&l| l >= 1).collect()
    }

    pub fn overlap(&self) -> Vec<bool> {
        self.0.iter().map(|&l| l >= 2).collect()
    }
}

/// Row-normalized class probabilities, `T × 3`.
#[derive(Debug, Clone, PartialEq)]
pub struct FramePosteriors {
    pub probs: Array2<f64>,
}

impl FramePosteriors {
    pub fn from_logits(logits: ArrayView2<f64>) -> Self {
        let mut probs = logits.to_owned();
        for mut row in probs.outer_iter_mut() {
            softmax_in_place(row.as_slice_mut().expect("owned rows are contiguous"));
        }
        FramePosteriors { probs }
    }

    pub fn frames(&self) -> usize {
        self.probs.nrows()
    }

    /// Most probable class per frame.
    pub fn argmax(&self) -> Vec<u8> {
        self.probs
            .outer_iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .map(|(i, _)| i as u8)
                    .unwrap_or(0)
            })
            .collect()
    }
}

/// Mean negative log-likelihood over frames and its gradient `(softmax − onehot)/T`.
pub fn cross_entropy(logits: ArrayView2<f64>, labels: &LabelSequence) -> Result<(f64, Array2<f64>)> {
    let t_count = logits.nrows();
    if labels.len() != t_count || t_count == 0 {
        return Err(Error::Shape(format!(
            "{} labels for {t_count} logit frames",
            labels.len()
        )));
    }
    if logits.ncols() != NUM_CLASSES {
        return Err(Error::Shape(format!("expected {NUM_CLASSES} classes, got {}", logits.ncols())));
    }
    let mut grad = Array2::zeros(logits.raw_dim());
    let mut loss = 0.0;
    for (t, (row, &label)) in logits.outer_iter().zip(labels.as_slice()).enumerate() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_z = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += log_z - row[label as usize];
        for c in 0..NUM_CLASSES {
            let p = (row[c] - log_z).exp();
            grad[[t, c]] = (p - if c == label as usize { 1.0 } else { 0.0 }) / t_count as f64;
        }
    }
    Ok((loss / t_count as f64, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(param_count: usize) -> Self {
        AdamState {
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            step: 0,
        }
    }
}

/// One bias-corrected Adam update. Non-finite gradients abort the step
/// without touching parameters or state.
pub fn adam_step<P: Parameters>(
    params: &mut P,
    grads: &P,
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    let mut bad = None;
    grads.visit(&mut |name, _, data| {
        if bad.is_none() {
            if let Some(i) = data.iter().position(|g| !g.is_finite()) {
                bad = Some(format!("{name}[{i}] = {}", data[i]));
            }
        }
    });
    if let Some(what) = bad {
        return Err(Error::Numeric(format!("non-finite gradient {what}; step skipped")));
    }
    let g = grads.flatten();
    if g.len() != state.m.len() || g.len() != params.param_count() {
        return Err(Error::Shape(format!(
            "optimizer state holds {} values, gradients have {}",
            state.m.len(),
            g.len()
        )));
    }
    state.step += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.step as i32);
    let mut offset = 0;
    params.visit_mut(&mut |_, data| {
        for (i, p) in data.iter_mut().enumerate() {
            let j = offset + i;
            state.m[j] = cfg.beta1 * state.m[j] + (1.0 - cfg.beta1) * g[j];
            state.v[j] = cfg.beta2 * state.v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
            let m_hat = state.m[j] / bc1;
            let v_hat = state.v[j] / bc2;
            *p -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
        offset += data.len();
    });
    Ok(())
}

/// `vad = p1 + p2 ≥ vad_threshold`, `osd = p2 ≥ osd_threshold`.
pub fn derive_vad_osd(
    posteriors: &FramePosteriors,
    vad_threshold: f64,
    osd_threshold: f64,
) -> Result<(Vec<bool>, Vec<bool>)> {
    for th in [vad_threshold, osd_threshold] {
        if !(0.0..=1.0).contains(&th) {
            return Err(Error::InvalidInput(format!("threshold {th} is outside [0, 1]")));
        }
    }
    let vad = posteriors
        .probs
        .outer_iter()
        .map(|r| r[1] + r[2] >= vad_threshold)
        .collect();
    let osd = posteriors
        .probs
        .outer_iter()
        .map(|r| r[2] >= osd_threshold)
        .collect();
    Ok((vad, osd))
}

/// Odd-length majority (median) filter over a boolean track.
pub fn median_smooth(track: &[bool], window: usize) -> Vec<bool> {
    if window <= 1 || track.is_empty() {
        return track.to_vec();
    }
    let half = window / 2;
    (0..track.len())
        .map(|t| {
            let lo = t.saturating_sub(half);
            let hi = (t + half + 1).min(track.len());
            let on = track[lo..hi].iter().filter(|&&b| b).count();
            2 * on > hi - lo
        })
        .collect()
}

/// Window start frames: every `hop` frames while the window fits, plus a
/// final window flush with the end. Inputs shorter than a window get one
/// window spanning everything.
pub fn window_starts(total: usize, window: usize, hop: usize) -> Vec<usize> {
    if total <= window {
        return vec![0];
    }
    let mut starts: Vec<usize> = (0..)
        .map(|i| i * hop.max(1))
        .take_while(|s| s + window <= total)
        .collect();
    if starts.last().map(|s| s + window) != Some(total) {
        starts.push(total - window);
    }
    starts
}

/// How many windows cover each frame.
pub fn window_coverage(total: usize, window: usize, hop: usize) -> Vec<usize> {
    let mut counts = vec![0; total];
    for s in window_starts(total, window, hop) {
        for c in counts.iter_mut().skip(s).take(window.min(total)) {
            *c += 1;
        }
    }
    counts
}

/// Runs `infer(start, len)` on each window and averages the `T × cols` rows
/// of every frame over the windows covering it.
pub fn sliding_window_average<F>(
    total: usize,
    window: usize,
    hop: usize,
    cols: usize,
    mut infer: F,
) -> Result<Array2<f64>>
where
    F: FnMut(usize, usize) -> Result<Array2<f64>>,
{
    if total == 0 {
        return Err(Error::InvalidInput("cannot run inference on an empty input".into()));
    }
    let mut sum = Array2::<f64>::zeros((total, cols));
    let mut counts = vec![0usize; total];
    for start in window_starts(total, window, hop) {
        let len = window.min(total);
        let rows = infer(start, len)?;
        if rows.dim() != (len, cols) {
            return Err(Error::Shape(format!(
                "window inference returned {:?} for a {len}-frame window with {cols} columns",
                rows.dim()
            )));
        }
        let mut dst = sum.slice_mut(ndarray::s![start..start + len, ..]);
        dst += &rows;
        for c in &mut counts[start..start + len] {
            *c += 1;
        }
    }
    for (mut row, &c) in sum.outer_iter_mut().zip(&counts) {
        row /= c as f64;
    }
    Ok(sum)
}

/// Sliding-window posteriors, averaged per frame and renormalized.
pub fn sliding_window_infer<F>(total: usize, window: usize, hop: usize, mut infer: F) -> Result<FramePosteriors>
where
    F: FnMut(usize, usize) -> Result<FramePosteriors>,
{
    let mut probs = sliding_window_average(total, window, hop, NUM_CLASSES, |s, len| Ok(infer(s, len)?.probs))?;
    normalize_rows(&mut probs);
    Ok(FramePosteriors { probs })
}

/// Scales each row to sum to one.
pub fn normalize_rows(a: &mut Array2<f64>) {
    for mut row in a.outer_iter_mut() {
        let s = row.sum();
        row /= s;
    }
}

/// Fraction of frames where `a` and `b` agree.
pub fn frame_accuracy(a: &[bool], b: &[bool]) -> f64 {
    let same = a.iter().zip(b).filter(|(x, y)| x == y).count();
    same as f64 / a.len().max(1) as f64
}

/// Sum of each posterior row; used by normalization checks.
pub fn row_sums(p: &FramePosteriors) -> Vec<f64> {
    p.probs.sum_axis(Axis(1)).to_vec()
}
