//! The trainable stack: beam powers → SACC → log-Mel → TCN → class logits,
//! with its chained backward pass, the front-end that turns a multichannel
//! wave into beam powers, and a deterministic mini-batch trainer.

use ndarray::{concatenate, s, Array2, Array3, ArrayView3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::array::SpatialFilterBank;
use crate::classifier::{
    adam_step, cross_entropy, normalize_rows, sliding_window_average, AdamConfig, AdamState,
    FramePosteriors, LabelSequence, NUM_CLASSES,
};
use crate::dsp::{apply_filterbank, mel_project_backward, mel_project_cached, power, MelFilterbank, MultichannelWave, Stft, StftConfig};
use crate::error::{Error, Result};
use crate::params::Parameters;
use crate::sacc::{sacc_backward, sacc_forward, SaccParams};
use crate::tcn::{tcn_backward, tcn_forward, TcnConfig, TcnModel};

/// SACC and TCN parameters trained jointly.
#[derive(Debug, Clone, PartialEq)]
pub struct AsoboModel {
    pub sacc: SaccParams,
    pub tcn: TcnModel,
}

impl AsoboModel {
    pub fn init<R: Rng>(bins: usize, hidden: usize, tcn: TcnConfig, rng: &mut R) -> Result<Self> {
        let sacc = SaccParams::init(bins, hidden, rng);
        let tcn = TcnModel::init(tcn, rng)?;
        Ok(AsoboModel { sacc, tcn })
    }

    pub fn zeros_like(&self) -> Self {
        AsoboModel {
            sacc: SaccParams::zeros(self.sacc.bins(), self.sacc.hidden()),
            tcn: TcnModel::zeros(self.tcn.config),
        }
    }
}

impl Parameters for AsoboModel {
    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.sacc.visit(&mut |n, shape, d| f(&format!("sacc.{n}"), shape, d));
        self.tcn.visit(&mut |n, shape, d| f(&format!("tcn.{n}"), shape, d));
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.sacc.visit_mut(&mut |n, d| f(&format!("sacc.{n}"), d));
        self.tcn.visit_mut(&mut |n, d| f(&format!("tcn.{n}"), d));
    }
}

/// STFT, fixed beamformers and Mel bank: everything upstream of training.
#[derive(Debug, Clone)]
pub struct FrontEnd {
    stft: Stft,
    bank: SpatialFilterBank,
    mel: MelFilterbank,
}

impl FrontEnd {
    pub fn new(bank: SpatialFilterBank, stft: StftConfig) -> Result<Self> {
        let freqs = stft.bin_freqs();
        if freqs.len() != bank.bin_freqs().len()
            || freqs.iter().zip(bank.bin_freqs()).any(|(a, b)| (a - b).abs() > 1e-9)
        {
            return Err(Error::Incompatible(format!(
                "filter bank was designed for {} bins, STFT produces {}",
                bank.bin_freqs().len(),
                freqs.len()
            )));
        }
        let mel = MelFilterbank::standard(&stft)?;
        Ok(FrontEnd {
            stft: Stft::new(stft)?,
            bank,
            mel,
        })
    }

    pub fn bank(&self) -> &SpatialFilterBank {
        &self.bank
    }

    pub fn mel(&self) -> &MelFilterbank {
        &self.mel
    }

    pub fn stft_config(&self) -> &StftConfig {
        self.stft.config()
    }

    /// `|Y_p(t, f)|²`, `T × P × F`.
    pub fn beam_power(&self, wave: &MultichannelWave) -> Result<Array3<f64>> {
        let spec = self.stft.analyze(wave)?;
        Ok(power(&apply_filterbank(&spec, &self.bank)?))
    }
}

/// Caches of one forward pass, consumed by [`model_backward`].
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub logits: Array2<f64>,
    /// Per-frame channel combination weights, `T × P`.
    pub weights: Array2<f64>,
    sacc: crate::sacc::SaccCache,
    mel: crate::dsp::MelCache,
    tcn: crate::tcn::TcnCache,
}

impl ForwardPass {
    pub fn posteriors(&self) -> FramePosteriors {
        FramePosteriors::from_logits(self.logits.view())
    }
}

pub fn model_forward(y_pow: ArrayView3<f64>, mel: &MelFilterbank, model: &AsoboModel) -> Result<ForwardPass> {
    let sacc = sacc_forward(y_pow, &model.sacc)?;
    let (features, mel_cache) = mel_project_cached(sacc.combined.view(), mel)?;
    let (logits, tcn_cache) = tcn_forward(features.frames.view(), &model.tcn)?;
    Ok(ForwardPass {
        logits,
        weights: sacc.cache.combination_weights().clone(),
        sacc: sacc.cache,
        mel: mel_cache,
        tcn: tcn_cache,
    })
}

pub fn model_backward(
    pass: &ForwardPass,
    mel: &MelFilterbank,
    model: &AsoboModel,
    d_logits: ndarray::ArrayView2<f64>,
) -> Result<AsoboModel> {
    let (tcn, d_features) = tcn_backward(&pass.tcn, &model.tcn, d_logits)?;
    let d_combined = mel_project_backward(&pass.mel, mel, d_features.view());
    let sacc = sacc_backward(&pass.sacc, d_combined.view())?;
    Ok(AsoboModel { sacc, tcn })
}

/// Mean cross-entropy of one segment and its gradient.
pub fn loss_and_grad(
    y_pow: ArrayView3<f64>,
    labels: &LabelSequence,
    mel: &MelFilterbank,
    model: &AsoboModel,
) -> Result<(f64, AsoboModel)> {
    let pass = model_forward(y_pow, mel, model)?;
    let (loss, d_logits) = cross_entropy(pass.logits.view(), labels)?;
    let grads = model_backward(&pass, mel, model, d_logits.view())?;
    Ok((loss, grads))
}

/// Whole-file inference by averaging overlapping windows.
#[derive(Debug, Clone)]
pub struct Inference {
    pub posteriors: FramePosteriors,
    /// Window-averaged combination weights, `T × P`, rows sum to one.
    pub weights: Array2<f64>,
}

pub fn infer(
    y_pow: ArrayView3<f64>,
    mel: &MelFilterbank,
    model: &AsoboModel,
    window: usize,
    hop: usize,
) -> Result<Inference> {
    let (t_count, p_count, _) = y_pow.dim();
    let mut both = sliding_window_average(t_count, window, hop, NUM_CLASSES + p_count, |start, len| {
        let pass = model_forward(y_pow.slice(s![start..start + len, .., ..]), mel, model)?;
        Ok(concatenate(Axis(1), &[pass.posteriors().probs.view(), pass.weights.view()])
            .expect("matching row counts"))
    })?;
    let mut weights = both.slice(s![.., NUM_CLASSES..]).to_owned();
    both.slice_collapse(s![.., ..NUM_CLASSES]);
    let mut probs = both.as_standard_layout().into_owned();
    normalize_rows(&mut probs);
    normalize_rows(&mut weights);
    Ok(Inference {
        posteriors: FramePosteriors { probs },
        weights,
    })
}

/// One training file: beam powers (stored in single precision to keep
/// large corpora in memory) and aligned frame labels.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub power: Array3<f32>,
    pub labels: LabelSequence,
}

impl TrainSample {
    pub fn new(power: &Array3<f64>, labels: LabelSequence) -> Result<Self> {
        if power.dim().0 != labels.len() {
            return Err(Error::Shape(format!(
                "{} power frames but {} labels",
                power.dim().0,
                labels.len()
            )));
        }
        Ok(TrainSample {
            power: power.mapv(|v| v as f32),
            labels,
        })
    }

    pub fn frames(&self) -> usize {
        self.labels.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainerConfig {
    pub batch_size: usize,
    pub segment_frames: usize,
    pub adam: AdamConfig,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            batch_size: 64,
            segment_frames: 200,
            adam: AdamConfig::default(),
        }
    }
}

/// Single-owner training state. Step order, crop choice and updates depend
/// only on the seed and the sample list.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: AsoboModel,
    pub config: TrainerConfig,
    state: AdamState,
    rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(model: AsoboModel, config: TrainerConfig, seed: u64) -> Self {
        let state = AdamState::new(model.param_count());
        Trainer {
            model,
            config,
            state,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.state.step
    }

    /// Random crop of `segment_frames` (or the whole file if shorter).
    fn crop(&mut self, data: &[TrainSample]) -> (usize, usize, usize) {
        let idx = self.rng.random_range(0..data.len());
        let total = data[idx].frames();
        let len = self.config.segment_frames.min(total);
        let start = self.rng.random_range(0..=total - len);
        (idx, start, len)
    }

    /// One Adam step on a batch of random crops; returns the batch mean loss.
    pub fn step(&mut self, data: &[TrainSample], mel: &MelFilterbank) -> Result<f64> {
        if data.is_empty() || data.iter().any(|d| d.frames() == 0) {
            return Err(Error::InvalidInput("training needs nonempty samples".into()));
        }
        let batch = self.config.batch_size.max(1);
        let mut grads = self.model.zeros_like();
        let mut total = 0.0;
        for _ in 0..batch {
            let (idx, start, len) = self.crop(data);
            let sample = &data[idx];
            let y = sample.power.slice(s![start..start + len, .., ..]).mapv(f64::from);
            let labels = sample.labels.slice(start, len);
            let (loss, g) = loss_and_grad(y.view(), &labels, mel, &self.model)?;
            total += loss;
            grads.add_scaled(&g, 1.0 / batch as f64);
        }
        let loss = total / batch as f64;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!(
                "loss became {loss} at step {}; parameters left unchanged",
                self.state.step + 1
            )));
        }
        adam_step(&mut self.model, &grads, &mut self.state, &self.config.adam)?;
        Ok(loss)
    }
}
