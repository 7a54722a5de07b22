//! Frame-level segmentation metrics, attention-weight pseudo-localization and
//! its scores, and the closest-speaker overlap assignment.

use ndarray::ArrayView2;
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::array::nearest_steer_index;
use crate::error::{Error, Result};
use crate::segments::Segment;

/// Tolerance on weight-row normalization accepted by [`localize`].
pub const ROW_SUM_TOL: f64 = 1e-6;

/// VAD error rates in percent of reference speech frames. Rates are `None`
/// when the reference has no speech.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentationScore {
    pub frames: usize,
    pub ref_speech: usize,
    pub false_alarm: usize,
    pub missed: usize,
    pub fa_rate: Option<f64>,
    pub miss_rate: Option<f64>,
    pub ser: Option<f64>,
}

impl SegmentationScore {
    fn from_counts(frames: usize, ref_speech: usize, false_alarm: usize, missed: usize) -> Self {
        let rate = |n: usize| (ref_speech > 0).then(|| 100.0 * n as f64 / ref_speech as f64);
        let (fa_rate, miss_rate) = (rate(false_alarm), rate(missed));
        SegmentationScore {
            frames,
            ref_speech,
            false_alarm,
            missed,
            fa_rate,
            miss_rate,
            ser: fa_rate.zip(miss_rate).map(|(a, b)| a + b),
        }
    }

    /// Pools frame counts across files.
    pub fn pooled(scores: &[SegmentationScore]) -> Self {
        let sum = |f: fn(&SegmentationScore) -> usize| scores.iter().map(f).sum();
        Self::from_counts(sum(|s| s.frames), sum(|s| s.ref_speech), sum(|s| s.false_alarm), sum(|s| s.missed))
    }

    pub fn has_reference_speech(&self) -> bool {
        self.ref_speech > 0
    }
}

fn check_lengths(pred: &[bool], reference: &[bool]) -> Result<()> {
    if pred.len() != reference.len() {
        return Err(Error::Shape(format!(
            "prediction has {} frames, reference {}",
            pred.len(),
            reference.len()
        )));
    }
    Ok(())
}

pub fn vad_metrics(pred: &[bool], reference: &[bool]) -> Result<SegmentationScore> {
    check_lengths(pred, reference)?;
    let (mut speech, mut fa, mut miss) = (0, 0, 0);
    for (&p, &r) in pred.iter().zip(reference) {
        speech += usize::from(r);
        fa += usize::from(p && !r);
        miss += usize::from(!p && r);
    }
    Ok(SegmentationScore::from_counts(pred.len(), speech, fa, miss))
}

/// Precision/recall/F1 in percent. Precision is `None` with no predicted
/// positives, recall is `None` with no reference positives; F1 is 0 unless
/// both are defined and nonzero in sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionScore {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: f64,
}

impl DetectionScore {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let precision = (tp + fp > 0).then(|| 100.0 * tp as f64 / (tp + fp) as f64);
        let recall = (tp + fn_ > 0).then(|| 100.0 * tp as f64 / (tp + fn_) as f64);
        let f1 = match (precision, recall) {
            (Some(p), Some(r)) if p + r > 0.0 => 2.0 * p * r / (p + r),
            _ => 0.0,
        };
        DetectionScore {
            tp,
            fp,
            fn_,
            precision,
            recall,
            f1,
        }
    }

    pub fn pooled(scores: &[DetectionScore]) -> Self {
        Self::from_counts(
            scores.iter().map(|s| s.tp).sum(),
            scores.iter().map(|s| s.fp).sum(),
            scores.iter().map(|s| s.fn_).sum(),
        )
    }
}

/// Frame-level scores for the overlap class.
pub fn osd_metrics(pred: &[bool], reference: &[bool]) -> Result<DetectionScore> {
    check_lengths(pred, reference)?;
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (&p, &r) in pred.iter().zip(reference) {
        tp += usize::from(p && r);
        fp += usize::from(p && !r);
        fn_ += usize::from(!p && r);
    }
    Ok(DetectionScore::from_counts(tp, fp, fn_))
}

/// Default threshold: twice the uniform weight.
pub fn default_tau(filter_count: usize) -> f64 {
    2.0 / filter_count as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationDecision {
    pub mean_weights: Vec<f64>,
    pub threshold: f64,
    pub selected: Vec<usize>,
}

/// Averages the `T × P` weight map over time and keeps filters with mean
/// weight at least `tau`.
pub fn localize(weights: ArrayView2<f64>, tau: f64) -> Result<LocalizationDecision> {
    let (t_count, p_count) = weights.dim();
    if t_count == 0 || p_count == 0 {
        return Err(Error::InvalidInput("cannot localize from an empty weight map".into()));
    }
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::InvalidInput(format!("threshold {tau} is outside [0, 1]")));
    }
    if let Some(t) = weights
        .outer_iter()
        .position(|r| (r.sum() - 1.0).abs() > ROW_SUM_TOL || r.iter().any(|w| *w < 0.0))
    {
        return Err(Error::InvalidInput(format!("weight row {t} is not a distribution")));
    }
    let mut mean = vec![0.0; p_count];
    for row in weights.outer_iter() {
        for (m, w) in mean.iter_mut().zip(row) {
            *m += w;
        }
    }
    mean.iter_mut().for_each(|m| *m /= t_count as f64);
    let selected = (0..p_count).filter(|&p| mean[p] >= tau).collect();
    Ok(LocalizationDecision {
        mean_weights: mean,
        threshold: tau,
        selected,
    })
}

/// True filter index for each source angle.
pub fn truth_indices(angles: &[f64], filter_count: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = angles.iter().map(|&a| nearest_steer_index(a, filter_count)).collect();
    idx.sort_unstable();
    idx.dedup();
    idx
}

/// Localization scores over all (scenario × filter) decisions. `f1` is the
/// macro average over the selected and not-selected classes; `positive`
/// holds the micro scores of the selected class alone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalizationScore {
    pub positive: DetectionScore,
    pub negative: DetectionScore,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn localization_metrics(
    decisions: &[Vec<usize>],
    truths: &[Vec<usize>],
    filter_count: usize,
) -> Result<LocalizationScore> {
    if decisions.len() != truths.len() {
        return Err(Error::Shape(format!(
            "{} decisions for {} scenarios",
            decisions.len(),
            truths.len()
        )));
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for (sel, truth) in decisions.iter().zip(truths) {
        if let Some(bad) = sel.iter().chain(truth).find(|&&p| p >= filter_count) {
            return Err(Error::InvalidInput(format!("filter index {bad} ≥ {filter_count}")));
        }
        for p in 0..filter_count {
            match (sel.contains(&p), truth.contains(&p)) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => tn += 1,
            }
        }
    }
    let positive = DetectionScore::from_counts(tp, fp, fn_);
    let negative = DetectionScore::from_counts(tn, fn_, fp);
    let mean = |a: Option<f64>, b: Option<f64>| (a.unwrap_or(0.0) + b.unwrap_or(0.0)) / 2.0;
    Ok(LocalizationScore {
        positive,
        negative,
        precision: mean(positive.precision, negative.precision),
        recall: mean(positive.recall, negative.recall),
        f1: (positive.f1 + negative.f1) / 2.0,
    })
}

/// Monte-Carlo chance level: each scenario has `sources` distinct true
/// filters and selects as many filters uniformly at random.
pub fn random_baseline<R: Rng>(
    scenarios: usize,
    sources: usize,
    filter_count: usize,
    rng: &mut R,
) -> Result<LocalizationScore> {
    if sources > filter_count {
        return Err(Error::InvalidInput(format!("{sources} sources exceed {filter_count} filters")));
    }
    let mut decisions = Vec::with_capacity(scenarios);
    let mut truths = Vec::with_capacity(scenarios);
    for _ in 0..scenarios {
        truths.push(sample(rng, filter_count, sources).into_vec());
        decisions.push(sample(rng, filter_count, sources).into_vec());
    }
    localization_metrics(&decisions, &truths, filter_count)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum OverlapOutcome {
    Assigned { speaker: String },
    /// Fewer than two speakers in the diarization.
    TooFewSpeakers,
    /// Every known speaker is already active during the overlap.
    NoCandidate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OverlapAssignment {
    /// Input diarization followed by the added second-speaker segments.
    pub segments: Vec<Segment>,
    /// One outcome per overlap segment.
    pub outcomes: Vec<OverlapOutcome>,
}

/// Gap between two intervals; zero when they touch or intersect.
fn interval_gap(a: &Segment, b: &Segment) -> f64 {
    (b.onset - a.offset()).max(a.onset - b.offset()).max(0.0)
}

/// For each overlap segment, labels as second speaker the speaker not already
/// active there whose activity lies closest in time. Ties go to the
/// lexicographically smaller label.
pub fn assign_overlap(diarization: &[Segment], overlaps: &[Segment]) -> OverlapAssignment {
    let mut speakers: Vec<&str> = diarization.iter().map(|s| s.speaker.as_str()).collect();
    speakers.sort_unstable();
    speakers.dedup();
    let mut segments = diarization.to_vec();
    let mut outcomes = Vec::with_capacity(overlaps.len());
    for ov in overlaps {
        if speakers.len() < 2 {
            outcomes.push(OverlapOutcome::TooFewSpeakers);
            continue;
        }
        let active = |sp: &str| {
            diarization
                .iter()
                .any(|s| s.speaker == sp && s.onset < ov.offset() && ov.onset < s.offset())
        };
        let mut best: Option<(f64, &str)> = None;
        for &sp in &speakers {
            if active(sp) {
                continue;
            }
            let gap = diarization
                .iter()
                .filter(|s| s.speaker == sp)
                .map(|s| interval_gap(s, ov))
                .fold(f64::INFINITY, f64::min);
            if best.is_none_or(|(g, _)| gap < g) {
                best = Some((gap, sp));
            }
        }
        match best {
            Some((_, sp)) => {
                segments.push(Segment::new(sp, ov.onset, ov.offset()));
                outcomes.push(OverlapOutcome::Assigned { speaker: sp.to_owned() });
            }
            None => outcomes.push(OverlapOutcome::NoCandidate),
        }
    }
    OverlapAssignment { segments, outcomes }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn vad_examples() {
        let r = vad_metrics(&[true, false, true], &[true, false, true]).unwrap();
        assert_eq!((r.fa_rate, r.miss_rate, r.ser), (Some(0.0), Some(0.0), Some(0.0)));
        let reference: Vec<bool> = (0..20).map(|i| i < 10).collect();
        let r = vad_metrics(&[true; 20], &reference).unwrap();
        assert_eq!((r.fa_rate, r.miss_rate), (Some(100.0), Some(0.0)));
        let silent = vad_metrics(&[true, false], &[false, false]).unwrap();
        assert!(!silent.has_reference_speech());
        assert_eq!(silent.ser, None);
        assert!(vad_metrics(&[true], &[true, false]).is_err());
    }

    #[test]
    fn osd_examples() {
        let r = osd_metrics(&[true, false, true], &[true, false, true]).unwrap();
        assert_eq!((r.precision, r.recall, r.f1), (Some(100.0), Some(100.0), 100.0));
        let r = osd_metrics(&[false; 3], &[true, false, true]).unwrap();
        assert_eq!((r.precision, r.recall, r.f1), (None, Some(0.0), 0.0));
        let r = osd_metrics(&[true, false], &[false, false]).unwrap();
        assert_eq!(r.recall, None);
    }

    #[test]
    fn localize_examples() {
        let mut one_hot = Array2::zeros((1, 8));
        one_hot[[0, 2]] = 1.0;
        assert_eq!(localize(one_hot.view(), 0.5).unwrap().selected, vec![2]);
        let uniform = Array2::from_elem((10, 8), 0.125);
        let d = localize(uniform.view(), 0.2).unwrap();
        assert!(d.selected.is_empty());
        assert!(d.mean_weights.iter().all(|w| (w - 0.125).abs() < 1e-15));
        assert!(localize(Array2::<f64>::zeros((0, 8)).view(), 0.2).is_err());
        assert!(localize(Array2::from_elem((2, 4), 0.3).view(), 0.2).is_err());
    }

    #[test]
    fn two_peak_map() {
        // half the frames favor filter 0, half filter 2
        let w = Array2::from_shape_fn((40, 8), |(t, p)| {
            let peak = if t < 20 { 0 } else { 2 };
            if p == peak {
                0.65
            } else {
                0.05
            }
        });
        let d = localize(w.view(), default_tau(8)).unwrap();
        assert_eq!(d.selected, vec![0, 2]);
        assert!((d.mean_weights[0] - 0.35).abs() < 1e-12);
        assert!((d.mean_weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn localize_ignores_frame_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut w = Array2::from_shape_fn((30, 6), |_| rng.random_range(0.0..1.0));
        crate::classifier::normalize_rows(&mut w);
        let mut rev = w.clone();
        rev.invert_axis(ndarray::Axis(0));
        let a = localize(w.view(), 0.2).unwrap();
        let b = localize(rev.view(), 0.2).unwrap();
        assert_eq!(a.selected, b.selected);
        for (x, y) in a.mean_weights.iter().zip(&b.mean_weights) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn localization_examples() {
        let truth = vec![vec![0, 4], vec![1, 2]];
        let perfect = localization_metrics(&truth, &truth, 8).unwrap();
        assert_eq!((perfect.positive.f1, perfect.f1), (100.0, 100.0));
        let antipodal = vec![vec![2, 6], vec![5, 6]];
        let bad = localization_metrics(&antipodal, &truth, 8).unwrap();
        assert_eq!((bad.positive.precision, bad.positive.recall), (Some(0.0), Some(0.0)));
        assert!(localization_metrics(&truth[..1], &truth, 8).is_err());
        assert!(localization_metrics(&[vec![9]], &[vec![0]], 8).is_err());
    }

    #[test]
    fn truth_indices_follow_nearest_filter() {
        let a = [3f64.to_radians(), 137f64.to_radians(), 359f64.to_radians()];
        assert_eq!(truth_indices(&a, 8), vec![0, 3]);
    }

    #[test]
    fn random_baseline_is_near_fifty() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = random_baseline(2000, 2, 8, &mut rng).unwrap();
        assert!((s.f1 - 50.0).abs() < 3.0, "F1 {}", s.f1);
        assert!((s.positive.f1 - 25.0).abs() < 3.0);
    }

    #[test]
    fn overlap_examples() {
        let diar = vec![
            Segment::new("A", 0.0, 20.0),
            Segment::new("B", 2.0, 9.0),
            Segment::new("C", 15.0, 18.0),
        ];
        let ov = Segment::new("overlap", 10.0, 10.0 + 1e-9);
        let out = assign_overlap(&diar, &[ov]);
        assert_eq!(out.outcomes, vec![OverlapOutcome::Assigned { speaker: "B".into() }]);
        assert_eq!(out.segments.last().unwrap().speaker, "B");

        let tie = vec![
            Segment::new("C", 0.0, 4.0),
            Segment::new("A", 4.0, 6.0),
            Segment::new("B", 8.0, 10.0),
        ];
        let out = assign_overlap(&tie, &[Segment::new("overlap", 5.0, 6.0)]);
        // C ends 1 s before, B starts 2 s after: C is closer
        assert_eq!(out.outcomes[0], OverlapOutcome::Assigned { speaker: "C".into() });
        let even = vec![
            Segment::new("C", 0.0, 4.0),
            Segment::new("A", 4.0, 8.0),
            Segment::new("B", 7.0, 10.0),
            Segment::new("B", 3.0, 3.5),
        ];
        let out = assign_overlap(&even, &[Segment::new("overlap", 5.0, 6.0)]);
        // B (from 7 s) and C (until 4 s) are both 1 s away: the smaller label wins
        assert_eq!(out.outcomes[0], OverlapOutcome::Assigned { speaker: "B".into() });
        let exact = vec![
            Segment::new("Z", 0.0, 2.0),
            Segment::new("M", 2.0, 5.0),
            Segment::new("D", 5.0, 7.0),
        ];
        let out = assign_overlap(&exact, &[Segment::new("overlap", 3.0, 4.0)]);
        assert_eq!(out.outcomes[0], OverlapOutcome::Assigned { speaker: "D".into() });

        let solo = vec![Segment::new("A", 0.0, 5.0)];
        let out = assign_overlap(&solo, &[Segment::new("overlap", 1.0, 2.0)]);
        assert_eq!(out.outcomes, vec![OverlapOutcome::TooFewSpeakers]);
        assert_eq!(out.segments, solo);
    }
}
