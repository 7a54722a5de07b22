//! Shoebox-room simulation: image-source impulse responses, spatialization
//! onto the array, a synthetic speech proxy, and the easy/hard localization
//! scenarios with their frame labels and manifest records.

use std::f64::consts::PI;
use std::path::Path;

use ndarray::Array2;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::array::{uniform_steer_angles, ArrayGeometry};
use crate::classifier::LabelSequence;
use crate::dsp::{MultichannelWave, StftConfig, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::segments::{speaker_counts, Segment};

/// Taps of the windowed-sinc fractional delay.
pub const SINC_TAPS: usize = 81;
pub const MAX_PLACEMENT_ATTEMPTS: usize = 100;
/// Peak level used when the mixture would clip.
pub const CLIP_PEAK: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomConfig {
    pub dims: [f64; 3],
    pub t60: f64,
    pub array_center: [f64; 3],
    pub geometry: ArrayGeometry,
    pub max_order: usize,
    /// Place arrivals with the windowed-sinc kernel; otherwise round to the
    /// nearest sample.
    pub fractional_delay: bool,
}

impl Default for RoomConfig {
    fn default() -> Self {
        RoomConfig {
            dims: [6.0, 5.0, 3.0],
            t60: 0.6,
            array_center: [3.0, 2.5, 1.2],
            geometry: ArrayGeometry::uniform_circular(8, 0.1).expect("valid default array"),
            max_order: 100,
            fractional_delay: true,
        }
    }
}

impl RoomConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
            return Err(Error::Config(format!("room dimensions {:?} must be positive", self.dims)));
        }
        if !(self.t60 >= 0.0 && self.t60.is_finite()) {
            return Err(Error::Config(format!("T60 {} must be nonnegative", self.t60)));
        }
        self.geometry.validate()?;
        for m in 0..self.geometry.mic_count() {
            if !self.inside(self.mic_position(m)) {
                return Err(Error::Config(format!("microphone {m} lies outside the room")));
            }
        }
        self.absorption().map(|_| ())
    }

    pub fn inside(&self, p: [f64; 3]) -> bool {
        p.iter().zip(&self.dims).all(|(x, d)| *x > 0.0 && x < d)
    }

    pub fn mic_position(&self, m: usize) -> [f64; 3] {
        let [x, y] = self.geometry.mic_position(m);
        [self.array_center[0] + x, self.array_center[1] + y, self.array_center[2]]
    }

    /// Wall absorption from Sabine's formula `T60 = 0.161 V / (S α)`; zero T60 means anechoic.
    pub fn absorption(&self) -> Result<f64> {
        if self.t60 == 0.0 {
            return Ok(1.0);
        }
        let [x, y, z] = self.dims;
        let volume = x * y * z;
        let surface = 2.0 * (x * y + x * z + y * z);
        let alpha = 0.161 * volume / (surface * self.t60);
        if alpha > 1.0 {
            return Err(Error::Config(format!(
                "T60 {} s is too short for a {x}×{y}×{z} m room (absorption {alpha:.2} > 1)",
                self.t60
            )));
        }
        Ok(alpha)
    }
}

fn distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Adds an arrival of `gain` at fractional sample `delay` into `h`.
fn place_arrival(h: &mut [f64], delay: f64, gain: f64, fractional: bool) {
    if !fractional {
        let n = delay.round() as usize;
        if n < h.len() {
            h[n] += gain;
        }
        return;
    }
    let half = (SINC_TAPS / 2) as isize;
    let center = delay.floor() as isize;
    let lo = (center - half).max(0);
    let hi = (center + half).min(h.len() as isize - 1);
    if lo > hi {
        return;
    }
    // with k = n − ⌊τ⌋, sin(π(n − τ)) = −(−1)ᵏ sin(π·frac); the window cosine advances by rotation
    let frac = delay - delay.floor();
    let s0 = (PI * frac).sin();
    let step = PI / (half as f64 + 1.0);
    let (sd, cd) = step.sin_cos();
    let x0 = lo as f64 - delay;
    let (mut sw, mut cw) = (step * x0).sin_cos();
    for n in lo..=hi {
        let x = n as f64 - delay;
        let sinc = if x.abs() < 1e-12 {
            1.0
        } else {
            let sign = if (n - center) % 2 == 0 { -1.0 } else { 1.0 };
            sign * s0 / (PI * x)
        };
        let window = 0.5 * (1.0 + cw);
        h[n as usize] += gain * sinc * window;
        let next_c = cw * cd - sw * sd;
        sw = sw * cd + cw * sd;
        cw = next_c;
    }
}

/// Image-source impulse responses from `source` to every microphone.
pub fn simulate_rirs(room: &RoomConfig, source: [f64; 3]) -> Result<Vec<Vec<f64>>> {
    room.validate()?;
    let mics: Vec<[f64; 3]> = (0..room.geometry.mic_count()).map(|m| room.mic_position(m)).collect();
    responses(room, source, &mics)
}

/// Impulse response from `source` to an arbitrary point `mic` in the room.
pub fn simulate_rir(room: &RoomConfig, source: [f64; 3], mic: [f64; 3]) -> Result<Vec<f64>> {
    room.validate()?;
    if !room.inside(mic) {
        return Err(Error::InvalidInput(format!("microphone {mic:?} lies outside the room")));
    }
    Ok(responses(room, source, &[mic])?.remove(0))
}

fn responses(room: &RoomConfig, source: [f64; 3], mics: &[[f64; 3]]) -> Result<Vec<Vec<f64>>> {
    if !room.inside(source) {
        return Err(Error::InvalidInput(format!("source {source:?} lies outside the room")));
    }
    let fs = SAMPLE_RATE as f64;
    let c = room.geometry.sound_speed();
    let half_taps = SINC_TAPS / 2 + 1;
    let direct: Vec<f64> = mics.iter().map(|m| distance(source, *m)).collect();
    if let Some(m) = direct.iter().position(|d| *d < 1e-9) {
        return Err(Error::InvalidInput(format!("source coincides with microphone {m}")));
    }
    let longest_direct = direct.iter().copied().fold(0.0, f64::max) * fs / c;
    let len = ((room.t60 * fs).ceil() as usize).max(longest_direct.ceil() as usize + half_taps);
    let beta = (1.0 - room.absorption()?).sqrt();
    let mut rirs = vec![vec![0.0; len]; mics.len()];

    if room.t60 == 0.0 {
        for (h, d) in rirs.iter_mut().zip(&direct) {
            place_arrival(h, d * fs / c, 1.0 / (4.0 * PI * d), room.fractional_delay);
        }
        return Ok(rirs);
    }

    let reach = len as f64 * c / fs;
    let bound = |dim: f64| (reach / (2.0 * dim)).ceil() as i64 + 1;
    let (lx, ly, lz) = (bound(room.dims[0]), bound(room.dims[1]), bound(room.dims[2]));
    let order_cap = room.max_order as i64;
    for l in -lx..=lx {
        for m in -ly..=ly {
            for n in -lz..=lz {
                for u in 0..2i64 {
                    for v in 0..2i64 {
                        for w in 0..2i64 {
                            let order = (2 * l - u).abs() + (2 * m - v).abs() + (2 * n - w).abs();
                            if order > order_cap {
                                continue;
                            }
                            let image = [
                                (1 - 2 * u) as f64 * source[0] + 2.0 * l as f64 * room.dims[0],
                                (1 - 2 * v) as f64 * source[1] + 2.0 * m as f64 * room.dims[1],
                                (1 - 2 * w) as f64 * source[2] + 2.0 * n as f64 * room.dims[2],
                            ];
                            let gain_num = beta.powi(order as i32);
                            for (h, mic) in rirs.iter_mut().zip(mics) {
                                let d = distance(image, *mic);
                                if d > reach {
                                    continue;
                                }
                                place_arrival(h, d * fs / c, gain_num / (4.0 * PI * d), room.fractional_delay);
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(rirs)
}

/// Linear convolution via zero-padded FFTs.
pub fn convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let out_len = a.len() + b.len() - 1;
    let n = out_len.next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let pad = |x: &[f64]| {
        let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        buf.resize(n, Complex64::new(0.0, 0.0));
        buf
    };
    let mut fa = pad(a);
    let mut fb = pad(b);
    fwd.process(&mut fa);
    fwd.process(&mut fb);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= y;
    }
    inv.process(&mut fa);
    fa.iter().take(out_len).map(|z| z.re / n as f64).collect()
}

/// A mono source placed at `onset` samples into the mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct PlacedSource {
    pub samples: Vec<f64>,
    pub onset: usize,
}

/// Sums each source convolved with its per-microphone responses into a
/// `length`-sample mixture; reverberant tails past the end are dropped.
/// Rescales to a peak of 0.9 if any sample would exceed full scale.
pub fn spatialize(sources: &[PlacedSource], rirs: &[Vec<Vec<f64>>], length: usize) -> Result<MultichannelWave> {
    if sources.len() != rirs.len() || sources.is_empty() {
        return Err(Error::Shape(format!(
            "{} sources but {} impulse-response sets",
            sources.len(),
            rirs.len()
        )));
    }
    let channels = rirs[0].len();
    if channels == 0 || rirs.iter().any(|r| r.len() != channels) {
        return Err(Error::Shape("every source needs one response per microphone".into()));
    }
    let mut out = Array2::<f64>::zeros((channels, length));
    for (src, set) in sources.iter().zip(rirs) {
        if src.onset + src.samples.len() > length {
            return Err(Error::InvalidInput(format!(
                "source of {} samples at onset {} overflows a {length}-sample mixture",
                src.samples.len(),
                src.onset
            )));
        }
        for (m, h) in set.iter().enumerate() {
            let y = convolve(&src.samples, h);
            let mut row = out.row_mut(m);
            for (i, v) in y.iter().enumerate() {
                let n = src.onset + i;
                if n >= length {
                    break;
                }
                row[n] += v;
            }
        }
    }
    clip_guard(&mut out);
    MultichannelWave::new(out, SAMPLE_RATE)
}

/// Peak-normalizes to [`CLIP_PEAK`] when the signal would clip.
pub fn clip_guard(x: &mut Array2<f64>) {
    let peak = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if peak > 1.0 {
        *x *= CLIP_PEAK / peak;
    }
}

/// A mono signal with known activity intervals in seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct ActiveSignal {
    pub samples: Vec<f64>,
    pub activity: Vec<(f64, f64)>,
}

/// RBJ band-pass biquad (0 dB peak gain).
struct Biquad {
    b: [f64; 3],
    a: [f64; 2],
    z: [f64; 2],
}

impl Biquad {
    fn bandpass(center: f64, q: f64, fs: f64) -> Self {
        let w0 = 2.0 * PI * center / fs;
        let alpha = w0.sin() / (2.0 * q);
        let a0 = 1.0 + alpha;
        Biquad {
            b: [alpha / a0, 0.0, -alpha / a0],
            a: [-2.0 * w0.cos() / a0, (1.0 - alpha) / a0],
            z: [0.0; 2],
        }
    }

    fn process(&mut self, x: f64) -> f64 {
        let y = self.b[0] * x + self.z[0];
        self.z[0] = self.b[1] * x - self.a[0] * y + self.z[1];
        self.z[1] = self.b[2] * x - self.a[1] * y;
        y
    }
}

/// Independent talk bursts for one source: 0.4–1.6 s bursts separated by
/// 0.2–0.9 s pauses.
pub fn burst_activity<R: Rng>(duration: f64, rng: &mut R) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let mut t = rng.random_range(0.0..0.6);
    while t < duration - 0.3 {
        let len = rng.random_range(0.4..1.6f64).min(duration - 0.05 - t);
        if len < 0.2 {
            break;
        }
        out.push((t, t + len));
        t += len + rng.random_range(0.2..0.9);
    }
    out
}

/// Turn-taking activity for `sources` talkers: 0.6–2 s turns passed to a
/// different talker each time, after a 0.1–0.6 s pause or, with
/// probability 0.3, starting 0.1–0.5 s before the previous turn ends.
pub fn conversation_activity<R: Rng>(sources: usize, duration: f64, rng: &mut R) -> Vec<Vec<(f64, f64)>> {
    let mut out = vec![Vec::new(); sources];
    if sources == 0 {
        return out;
    }
    let mut last_end = vec![f64::NEG_INFINITY; sources];
    let mut who = rng.random_range(0..sources);
    let mut t: f64 = rng.random_range(0.0..0.5);
    loop {
        t = t.max(last_end[who] + 0.1);
        if t >= duration - 0.3 {
            break;
        }
        let len = rng.random_range(0.6..2.0f64).min(duration - 0.05 - t);
        if len < 0.3 {
            break;
        }
        out[who].push((t, t + len));
        last_end[who] = t + len;
        t = if rng.random_bool(0.3) {
            t + len - rng.random_range(0.1..0.5)
        } else {
            t + len + rng.random_range(0.1..0.6)
        };
        if sources > 1 {
            who = (who + rng.random_range(1..sources)) % sources;
        }
    }
    out
}

/// Speech-like proxy over the given activity intervals: noise shaped by
/// three formant resonators and amplitude-modulated at a syllabic rate.
/// Intervals are snapped to samples; the output has unit RMS over the
/// active samples.
pub fn synthetic_speech_with_activity<R: Rng>(activity: &[(f64, f64)], duration: f64, rng: &mut R) -> ActiveSignal {
    let fs = SAMPLE_RATE as f64;
    let n = (duration * fs).round() as usize;
    let formants = [
        rng.random_range(300.0..900.0),
        rng.random_range(900.0..2200.0),
        rng.random_range(2200.0..3800.0),
    ];
    let mut samples = vec![0.0; n];
    let mut snapped = Vec::with_capacity(activity.len());
    for &(on, off) in activity {
        let (a, b) = (((on * fs).round() as usize).min(n), ((off * fs).round() as usize).min(n));
        if b <= a {
            continue;
        }
        let rate = rng.random_range(3.0..6.0);
        let phase = rng.random_range(0.0..2.0 * PI);
        let mut filters: Vec<Biquad> = formants.iter().map(|&f| Biquad::bandpass(f, 4.0, fs)).collect();
        let ramp = 0.01 * fs;
        for (i, s) in samples[a..b].iter_mut().enumerate() {
            let e: f64 = StandardNormal.sample(rng);
            let voiced: f64 = filters.iter_mut().map(|f| f.process(e)).sum();
            let tt = i as f64 / fs;
            let am = 1.0 - 0.6 * (0.5 + 0.5 * (2.0 * PI * rate * tt + phase).cos());
            let edge = (i as f64 / ramp).min((b - a - i) as f64 / ramp).min(1.0);
            *s = voiced * am * edge;
        }
        snapped.push((a as f64 / fs, b as f64 / fs));
    }
    let active: usize = snapped.iter().map(|(s, e)| ((e - s) * fs).round() as usize).sum();
    let energy: f64 = samples.iter().map(|x| x * x).sum();
    if energy > 0.0 {
        let g = (active as f64 / energy).sqrt();
        samples.iter_mut().for_each(|x| *x *= g);
    }
    ActiveSignal {
        samples,
        activity: snapped,
    }
}

/// Speech-like proxy with independent bursts; see [`burst_activity`].
pub fn synthetic_speech<R: Rng>(duration: f64, rng: &mut R) -> ActiveSignal {
    let activity = burst_activity(duration, rng);
    synthetic_speech_with_activity(&activity, duration, rng)
}

/// Activity intervals where the 25 ms frame level is at least `threshold_dbfs`.
pub fn energy_gate(samples: &[f64], sample_rate: u32, threshold_dbfs: f64) -> Vec<(f64, f64)> {
    let frame = (0.025 * sample_rate as f64).round() as usize;
    let fs = sample_rate as f64;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, chunk) in samples.chunks(frame).enumerate() {
        let rms = (chunk.iter().map(|x| x * x).sum::<f64>() / chunk.len() as f64).sqrt();
        if 20.0 * rms.max(1e-300).log10() < threshold_dbfs {
            continue;
        }
        let (s, e) = ((i * frame) as f64 / fs, (i * frame + chunk.len()) as f64 / fs);
        match out.last_mut() {
            Some(last) if (last.1 - s).abs() < 1e-12 => last.1 = e,
            _ => out.push((s, e)),
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioMode {
    /// Sources exactly on steering angles.
    Easy,
    /// Steering angle plus a uniform jitter.
    Hard,
}

/// How synthetic sources share the floor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TalkPattern {
    /// Every source talks in independent bursts; overlap is frequent.
    Bursts,
    /// Sources take turns with occasional short overlaps, as in meetings.
    Conversation,
}

impl std::str::FromStr for ScenarioMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "easy" => Ok(ScenarioMode::Easy),
            "hard" => Ok(ScenarioMode::Hard),
            _ => Err(Error::Config(format!("unknown scenario mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub num_sources: usize,
    pub mode: ScenarioMode,
    pub filter_count: usize,
    pub distance_range: (f64, f64),
    pub duration: f64,
    pub jitter_deg: f64,
    /// Additive white sensor noise relative to the mixture level.
    pub snr_db: Option<f64>,
    /// RMS of the mixture over all channels before sensor noise.
    pub level_rms: f64,
    /// Activity pattern of synthetic sources.
    pub talk: TalkPattern,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        ScenarioSpec {
            num_sources: 2,
            mode: ScenarioMode::Easy,
            filter_count: 8,
            distance_range: (1.0, 2.0),
            duration: 4.0,
            jitter_deg: 5.0,
            snr_db: None,
            level_rms: 0.05,
            talk: TalkPattern::Conversation,
        }
    }
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_sources == 0 || self.num_sources > self.filter_count {
            return Err(Error::Config(format!(
                "{} sources cannot occupy distinct directions of {} filters",
                self.num_sources, self.filter_count
            )));
        }
        let (lo, hi) = self.distance_range;
        if !(0.0 < lo && lo <= hi) {
            return Err(Error::Config(format!("invalid distance range {lo}..{hi}")));
        }
        if !(self.duration > 0.5) {
            return Err(Error::Config(format!("scenario duration {} s is too short", self.duration)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub wave: MultichannelWave,
    /// Radians.
    pub true_angles: Vec<f64>,
    pub true_filter_indices: Vec<usize>,
    pub distances: Vec<f64>,
    /// Per source, `(onset, offset)` seconds.
    pub activity: Vec<Vec<(f64, f64)>>,
    pub labels: LabelSequence,
}

impl Scenario {
    pub fn segments(&self) -> Vec<Segment> {
        self.activity
            .iter()
            .enumerate()
            .flat_map(|(i, acts)| acts.iter().map(move |&(s, e)| Segment::new(format!("spk{i}"), s, e)))
            .collect()
    }
}

/// Independent RNG stream for scenario `index`, so scenarios can be
/// generated in any order or in parallel.
pub fn scenario_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Frame labels from activity intervals by center-time speaker count.
pub fn frame_labels(activity: &[Vec<(f64, f64)>], stft: &StftConfig, frames: usize) -> LabelSequence {
    let segs: Vec<Segment> = activity
        .iter()
        .enumerate()
        .flat_map(|(i, a)| a.iter().map(move |&(s, e)| Segment::new(format!("spk{i}"), s, e)))
        .collect();
    LabelSequence::from_counts(&speaker_counts(&segs, stft, frames))
}

/// Scenario with synthetic proxy sources.
pub fn generate_scenario<R: Rng>(spec: &ScenarioSpec, room: &RoomConfig, rng: &mut R) -> Result<Scenario> {
    spec.validate()?;
    let activity = match spec.talk {
        TalkPattern::Bursts => (0..spec.num_sources).map(|_| burst_activity(spec.duration, rng)).collect(),
        TalkPattern::Conversation => conversation_activity(spec.num_sources, spec.duration, rng),
    };
    let sources: Vec<ActiveSignal> = activity
        .iter()
        .map(|a| synthetic_speech_with_activity(a, spec.duration, rng))
        .collect();
    assemble(spec, room, sources, rng)
}

/// Scenario from recorded mono sources (16 kHz, full scale ±1); activity
/// comes from a −40 dBFS energy gate. Sources are truncated to the duration.
pub fn generate_scenario_with_sources<R: Rng>(
    spec: &ScenarioSpec,
    room: &RoomConfig,
    recordings: &[Vec<f64>],
    rng: &mut R,
) -> Result<Scenario> {
    spec.validate()?;
    if recordings.len() != spec.num_sources {
        return Err(Error::InvalidInput(format!(
            "{} recordings for {} sources",
            recordings.len(),
            spec.num_sources
        )));
    }
    let n = (spec.duration * SAMPLE_RATE as f64).round() as usize;
    let sources = recordings
        .iter()
        .map(|r| {
            let samples: Vec<f64> = r.iter().take(n).copied().collect();
            let activity = energy_gate(&samples, SAMPLE_RATE, -40.0);
            ActiveSignal { samples, activity }
        })
        .collect();
    assemble(spec, room, sources, rng)
}

fn assemble<R: Rng>(spec: &ScenarioSpec, room: &RoomConfig, sources: Vec<ActiveSignal>, rng: &mut R) -> Result<Scenario> {
    room.validate()?;
    let steer = uniform_steer_angles(spec.filter_count);
    let mut pool: Vec<usize> = (0..spec.filter_count).collect();
    let mut indices = Vec::with_capacity(spec.num_sources);
    for _ in 0..spec.num_sources {
        let k = rng.random_range(0..pool.len());
        indices.push(pool.swap_remove(k));
    }
    let mut angles = Vec::new();
    let mut distances = Vec::new();
    let mut rirs = Vec::new();
    for &p in &indices {
        let jitter = match spec.mode {
            ScenarioMode::Easy => 0.0,
            ScenarioMode::Hard => rng.random_range(-spec.jitter_deg..=spec.jitter_deg).to_radians(),
        };
        let theta = steer[p] + jitter;
        let (lo, hi) = spec.distance_range;
        let mut placed = None;
        for _ in 0..MAX_PLACEMENT_ATTEMPTS {
            let d = if hi > lo { rng.random_range(lo..hi) } else { lo };
            let pos = [
                room.array_center[0] + d * theta.cos(),
                room.array_center[1] + d * theta.sin(),
                room.array_center[2],
            ];
            if room.inside(pos) {
                placed = Some((d, pos));
                break;
            }
        }
        let (d, pos) = placed.ok_or_else(|| {
            Error::InvalidInput(format!(
                "no feasible source position at {:.1}° within {lo}..{hi} m after {MAX_PLACEMENT_ATTEMPTS} attempts",
                theta.to_degrees()
            ))
        })?;
        angles.push(theta.rem_euclid(2.0 * PI));
        distances.push(d);
        rirs.push(simulate_rirs(room, pos)?);
    }
    let length = (spec.duration * SAMPLE_RATE as f64).round() as usize;
    let placed: Vec<PlacedSource> = sources
        .iter()
        .map(|s| PlacedSource {
            samples: s.samples.iter().take(length).copied().collect(),
            onset: 0,
        })
        .collect();
    let mut wave = spatialize(&placed, &rirs, length)?;
    let rms = (wave.samples.iter().map(|x| x * x).sum::<f64>() / wave.samples.len() as f64).sqrt();
    if rms > 0.0 {
        wave.samples *= spec.level_rms / rms;
    }
    if let Some(snr) = spec.snr_db {
        let sigma = spec.level_rms * 10f64.powf(-snr / 20.0);
        for x in wave.samples.iter_mut() {
            let e: f64 = StandardNormal.sample(rng);
            *x += sigma * e;
        }
    }
    clip_guard(&mut wave.samples);
    let stft = StftConfig::default();
    let activity: Vec<Vec<(f64, f64)>> = sources.into_iter().map(|s| s.activity).collect();
    let labels = frame_labels(&activity, &stft, stft.frame_count(length));
    Ok(Scenario {
        wave,
        true_angles: angles,
        true_filter_indices: indices,
        distances,
        activity,
        labels,
    })
}

/// One line of the scenario manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub wave: String,
    pub labels: String,
    pub mode: ScenarioMode,
    pub samples: usize,
    pub angles_deg: Vec<f64>,
    pub filter_indices: Vec<usize>,
    pub activity: Vec<Vec<(f64, f64)>>,
    pub config_hash: String,
}

pub fn manifest_to_string(records: &[ManifestRecord]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text)
}
