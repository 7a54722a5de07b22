//! STFT analysis, filter-bank application and the log-Mel projection.

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::{s, Array2, Array3, ArrayView2, Axis};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::array::SpatialFilterBank;
use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 16_000;
pub const LOG_FLOOR: f64 = 1e-10;
pub const MEL_BANDS: usize = 64;

/// Multichannel waveform, `samples` indexed `[m, n]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultichannelWave {
    pub samples: Array2<f64>,
    pub sample_rate: u32,
}

impl MultichannelWave {
    pub fn new(samples: Array2<f64>, sample_rate: u32) -> Result<Self> {
        if samples.ncols() == 0 || samples.nrows() == 0 {
            return Err(Error::InvalidInput("waveform must have samples and channels".into()));
        }
        Ok(MultichannelWave {
            samples,
            sample_rate,
        })
    }

    pub fn channels(&self) -> usize {
        self.samples.nrows()
    }

    pub fn len(&self) -> usize {
        self.samples.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.len() as f64 / self.sample_rate as f64
    }
}

/// Framing parameters in samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftConfig {
    pub sample_rate: u32,
    pub frame_len: usize,
    pub hop: usize,
    pub fft_size: usize,
}

impl Default for StftConfig {
    fn default() -> Self {
        StftConfig::from_ms(25.0, 10.0, SAMPLE_RATE)
    }
}

impl StftConfig {
    /// Frame and hop given in milliseconds; the FFT size is the next power
    /// of two at or above the frame length.
    pub fn from_ms(frame_ms: f64, hop_ms: f64, sample_rate: u32) -> Self {
        let frame_len = (frame_ms * sample_rate as f64 / 1000.0).round() as usize;
        let hop = (hop_ms * sample_rate as f64 / 1000.0).round() as usize;
        StftConfig {
            sample_rate,
            frame_len,
            hop,
            fft_size: frame_len.next_power_of_two(),
        }
    }

    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn bin_freqs(&self) -> Vec<f64> {
        (0..self.bins())
            .map(|k| k as f64 * self.sample_rate as f64 / self.fft_size as f64)
            .collect()
    }

    /// `floor((L − frame_len)/hop) + 1`, or 0 if the signal is shorter than a frame.
    pub fn frame_count(&self, len: usize) -> usize {
        if len < self.frame_len {
            0
        } else {
            (len - self.frame_len) / self.hop + 1
        }
    }

    /// Number of samples that produce exactly `frames` frames.
    pub fn samples_for_frames(&self, frames: usize) -> usize {
        if frames == 0 {
            0
        } else {
            self.frame_len + (frames - 1) * self.hop
        }
    }

    /// Center time of frame `t` in seconds.
    pub fn frame_center(&self, t: usize) -> f64 {
        (t * self.hop) as f64 / self.sample_rate as f64
            + self.frame_len as f64 / (2.0 * self.sample_rate as f64)
    }

    pub fn hop_seconds(&self) -> f64 {
        self.hop as f64 / self.sample_rate as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.frame_len == 0 || self.hop == 0 || self.fft_size < self.frame_len {
            return Err(Error::InvalidInput(format!("invalid STFT settings {self:?}")));
        }
        Ok(())
    }
}

/// Periodic Hann window.
pub fn hann_window(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos())
        .collect()
}

/// One-sided multichannel STFT, `bins` indexed `[m, t, f]`.
#[derive(Debug, Clone)]
pub struct Spectrogram {
    pub bins: Array3<Complex64>,
    pub config: StftConfig,
}

impl Spectrogram {
    pub fn channels(&self) -> usize {
        self.bins.len_of(Axis(0))
    }

    pub fn frames(&self) -> usize {
        self.bins.len_of(Axis(1))
    }

    pub fn bin_freqs(&self) -> Vec<f64> {
        self.config.bin_freqs()
    }
}

/// Reusable STFT analyzer (window and FFT plan).
#[derive(Clone)]
pub struct Stft {
    config: StftConfig,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Stft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Stft").field("config", &self.config).finish()
    }
}

impl Stft {
    pub fn new(config: StftConfig) -> Result<Self> {
        config.validate()?;
        let fft = FftPlanner::new().plan_fft_forward(config.fft_size);
        Ok(Stft {
            config,
            window: hann_window(config.frame_len),
            fft,
        })
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    /// Windowed, zero-padded one-sided spectrum of a single frame.
    pub fn frame_spectrum(&self, frame: &[f64]) -> Vec<Complex64> {
        let mut buf = vec![Complex64::new(0.0, 0.0); self.config.fft_size];
        for ((b, x), w) in buf.iter_mut().zip(frame).zip(&self.window) {
            b.re = x * w;
        }
        self.fft.process(&mut buf);
        buf.truncate(self.config.bins());
        buf
    }

    pub fn analyze(&self, wave: &MultichannelWave) -> Result<Spectrogram> {
        if wave.sample_rate != self.config.sample_rate {
            return Err(Error::InvalidInput(format!(
                "expected {} Hz audio, got {} Hz",
                self.config.sample_rate, wave.sample_rate
            )));
        }
        let frames = self.config.frame_count(wave.len());
        if frames == 0 {
            return Err(Error::InvalidInput(format!(
                "signal of {} samples is shorter than one {}-sample frame",
                wave.len(),
                self.config.frame_len
            )));
        }
        let m = wave.channels();
        let f = self.config.bins();
        let mut bins = Array3::zeros((m, frames, f));
        let mut frame = vec![0.0; self.config.frame_len];
        for ch in 0..m {
            let row = wave.samples.row(ch);
            for t in 0..frames {
                let start = t * self.config.hop;
                for (dst, src) in frame
                    .iter_mut()
                    .zip(row.slice(s![start..start + self.config.frame_len]))
                {
                    *dst = *src;
                }
                let spec = self.frame_spectrum(&frame);
                for (k, c) in spec.into_iter().enumerate() {
                    bins[[ch, t, k]] = c;
                }
            }
        }
        Ok(Spectrogram {
            bins,
            config: self.config,
        })
    }
}

/// STFT with 25 ms Hann frames, 10 ms hop, 512-point FFT at 16 kHz by default.
pub fn stft(wave: &MultichannelWave) -> Result<Spectrogram> {
    Stft::new(StftConfig::default())?.analyze(wave)
}

/// `Y_p(t, f) = w_p(f)ᴴ S(t, f)`, returned indexed `[t, p, f]`.
pub fn apply_filterbank(spec: &Spectrogram, bank: &SpatialFilterBank) -> Result<Array3<Complex64>> {
    let m = bank.geometry().mic_count();
    if spec.channels() != m {
        return Err(Error::Shape(format!(
            "spectrogram has {} channels, filter bank expects {m}",
            spec.channels()
        )));
    }
    let freqs = spec.bin_freqs();
    let same_bins = freqs.len() == bank.bin_freqs().len()
        && freqs
            .iter()
            .zip(bank.bin_freqs())
            .all(|(a, b)| (a - b).abs() <= 1e-9 * a.abs().max(1.0));
    if !same_bins {
        return Err(Error::Shape(format!(
            "spectrogram has {} bins that do not match the bank's {} bin frequencies",
            freqs.len(),
            bank.bin_freqs().len()
        )));
    }
    let p_count = bank.filter_count();
    let t_count = spec.frames();
    let f_count = freqs.len();
    let w = bank.weights();
    let mut out = Array3::zeros((t_count, p_count, f_count));
    for t in 0..t_count {
        for p in 0..p_count {
            for f in 0..f_count {
                let mut acc = Complex64::new(0.0, 0.0);
                for mic in 0..m {
                    acc += w[[p, f, mic]].conj() * spec.bins[[mic, t, f]];
                }
                out[[t, p, f]] = acc;
            }
        }
    }
    Ok(out)
}

/// Elementwise squared magnitude.
pub fn power(y: &Array3<Complex64>) -> Array3<f64> {
    y.mapv(|c| c.norm_sqr())
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// HTK-style triangular Mel filters over the one-sided FFT bins.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    /// `n_mels × F`, nonnegative.
    pub matrix: Array2<f64>,
    pub f_low: f64,
    pub f_high: f64,
    pub centers_hz: Vec<f64>,
}

impl MelFilterbank {
    pub fn new(n_mels: usize, stft: &StftConfig, f_low: f64, f_high: f64) -> Result<Self> {
        let nyquist = stft.sample_rate as f64 / 2.0;
        if n_mels == 0 || !(0.0 <= f_low && f_low < f_high && f_high <= nyquist) {
            return Err(Error::InvalidInput(format!(
                "invalid Mel settings: {n_mels} bands over [{f_low}, {f_high}] Hz"
            )));
        }
        let lo = hz_to_mel(f_low);
        let hi = hz_to_mel(f_high);
        let edges: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64))
            .collect();
        let freqs = stft.bin_freqs();
        let mut matrix = Array2::zeros((n_mels, freqs.len()));
        for b in 0..n_mels {
            let (left, center, right) = (edges[b], edges[b + 1], edges[b + 2]);
            for (k, &f) in freqs.iter().enumerate() {
                let rise = (f - left) / (center - left);
                let fall = (right - f) / (right - center);
                matrix[[b, k]] = rise.min(fall).max(0.0);
            }
        }
        let bank = MelFilterbank {
            matrix,
            f_low,
            f_high,
            centers_hz: edges[1..=n_mels].to_vec(),
        };
        if let Some(empty) = bank.matrix.outer_iter().position(|row| row.sum() <= 0.0) {
            return Err(Error::InvalidInput(format!(
                "Mel band {empty} covers no FFT bin; use fewer bands or a larger FFT"
            )));
        }
        Ok(bank)
    }

    /// The 64-band, 0–8 kHz filter bank used by the feature pipeline.
    pub fn standard(stft: &StftConfig) -> Result<Self> {
        Self::new(MEL_BANDS, stft, 0.0, stft.sample_rate as f64 / 2.0)
    }

    pub fn bands(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn bins(&self) -> usize {
        self.matrix.ncols()
    }
}

/// Log-Mel features, `T × bands`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub frames: Array2<f64>,
}

/// Mel energies before the log, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct MelCache {
    energies: Array2<f64>,
}

/// `log(mel · power + floor)` per frame.
pub fn mel_project(power_spec: ArrayView2<f64>, mel: &MelFilterbank) -> Result<FeatureSequence> {
    Ok(mel_project_cached(power_spec, mel)?.0)
}

pub fn mel_project_cached(
    power_spec: ArrayView2<f64>,
    mel: &MelFilterbank,
) -> Result<(FeatureSequence, MelCache)> {
    if power_spec.ncols() != mel.bins() {
        return Err(Error::Shape(format!(
            "power spectrum has {} bins, Mel bank expects {}",
            power_spec.ncols(),
            mel.bins()
        )));
    }
    let energies = power_spec.dot(&mel.matrix.t()) + LOG_FLOOR;
    let frames = energies.mapv(f64::ln);
    Ok((FeatureSequence { frames }, MelCache { energies }))
}

/// Gradient of a loss with respect to the power spectrum given its gradient
/// with respect to the log-Mel features.
pub fn mel_project_backward(cache: &MelCache, mel: &MelFilterbank, d_features: ArrayView2<f64>) -> Array2<f64> {
    let d_energy = &d_features / &cache.energies;
    d_energy.dot(&mel.matrix)
}
