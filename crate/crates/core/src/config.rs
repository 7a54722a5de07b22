//! Pipeline configuration: TOML file, dotted-key overrides and the config hash
//! stamped into every artifact.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::array::{design_filterbank, ArrayGeometry, SpatialFilterBank, DEFAULT_LOADING, DEFAULT_SOUND_SPEED};
use crate::classifier::AdamConfig;
use crate::dsp::{StftConfig, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::sacc::DEFAULT_HIDDEN;
use crate::simulate::{RoomConfig, ScenarioMode, ScenarioSpec, TalkPattern};
use crate::tcn::TcnConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArraySection {
    pub mics: usize,
    pub radius: f64,
    pub sound_speed: f64,
    pub filters: usize,
    pub loading: f64,
}

impl Default for ArraySection {
    fn default() -> Self {
        ArraySection {
            mics: 8,
            radius: 0.1,
            sound_speed: DEFAULT_SOUND_SPEED,
            filters: 8,
            loading: DEFAULT_LOADING,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StftSection {
    pub frame_ms: f64,
    pub hop_ms: f64,
}

impl Default for StftSection {
    fn default() -> Self {
        StftSection {
            frame_ms: 25.0,
            hop_ms: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    /// SACC projection width `D`.
    pub hidden: usize,
    pub tcn_hidden: usize,
    pub kernel_size: usize,
    pub blocks: usize,
    pub layers_per_block: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        let tcn = TcnConfig::default();
        ModelSection {
            hidden: DEFAULT_HIDDEN,
            tcn_hidden: tcn.hidden,
            kernel_size: tcn.kernel_size,
            blocks: tcn.blocks,
            layers_per_block: tcn.layers_per_block,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub lr: f64,
    pub batch_size: usize,
    pub segment_seconds: f64,
    pub epochs: usize,
    /// Hard cap on optimizer steps, for desk-scale runs.
    pub max_steps: Option<usize>,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            lr: 1e-3,
            batch_size: 64,
            segment_seconds: 2.0,
            epochs: 200,
            max_steps: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferSection {
    pub window_seconds: f64,
    pub hop_seconds: f64,
    pub vad_threshold: f64,
    pub osd_threshold: f64,
    /// Median smoothing window in frames; 0 or 1 disables it.
    pub median_frames: usize,
}

impl Default for InferSection {
    fn default() -> Self {
        InferSection {
            window_seconds: 2.0,
            hop_seconds: 0.5,
            vad_threshold: 0.5,
            osd_threshold: 0.5,
            median_frames: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoomSection {
    pub dims: [f64; 3],
    pub t60: f64,
    pub array_center: [f64; 3],
    pub max_order: usize,
}

impl Default for RoomSection {
    fn default() -> Self {
        let room = RoomConfig::default();
        RoomSection {
            dims: room.dims,
            t60: room.t60,
            array_center: room.array_center,
            max_order: room.max_order,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSection {
    pub sources: usize,
    pub mode: ScenarioMode,
    pub distance_min: f64,
    pub distance_max: f64,
    pub duration: f64,
    pub jitter_deg: f64,
    pub snr_db: Option<f64>,
    pub level_rms: f64,
    pub talk: TalkPattern,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        let s = ScenarioSpec::default();
        ScenarioSection {
            sources: s.num_sources,
            mode: s.mode,
            distance_min: s.distance_range.0,
            distance_max: s.distance_range.1,
            duration: s.duration,
            jitter_deg: s.jitter_deg,
            snr_db: s.snr_db,
            level_rms: s.level_rms,
            talk: s.talk,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Localization threshold; defaults to twice the uniform weight.
    pub tau: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub array: ArraySection,
    pub stft: StftSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub infer: InferSection,
    pub room: RoomSection,
    pub scenario: ScenarioSection,
    pub eval: EvalSection,
}

impl PipelineConfig {
    /// Parses TOML text, then applies `key.path=value` overrides in order.
    pub fn from_toml_with(text: &str, overrides: &[String]) -> Result<Self> {
        let mut value: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        for ov in overrides {
            apply_override(&mut value, ov)?;
        }
        let cfg: PipelineConfig = toml::Value::Table(value)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        Self::from_toml_with(text, &[])
    }

    /// Loads `path` if given (defaults otherwise) and applies overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
            None => String::new(),
        };
        Self::from_toml_with(&text, overrides)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry()?;
        self.stft_config().validate()?;
        self.tcn_config().validate()?;
        self.scenario_spec().validate()?;
        if self.array.filters == 0 || self.model.hidden == 0 {
            return Err(Error::Config("filters and hidden size must be positive".into()));
        }
        if !(self.train.lr > 0.0) || self.train.batch_size == 0 || !(self.train.segment_seconds > 0.0) {
            return Err(Error::Config("training needs a positive lr, batch size and segment length".into()));
        }
        if !(self.infer.window_seconds > 0.0 && self.infer.hop_seconds > 0.0) {
            return Err(Error::Config("inference window and hop must be positive".into()));
        }
        if let Some(tau) = self.eval.tau {
            if !(0.0..=1.0).contains(&tau) {
                return Err(Error::Config(format!("tau {tau} is outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        hex_digest(canonical.as_bytes())
    }

    pub fn geometry(&self) -> Result<ArrayGeometry> {
        ArrayGeometry::uniform_circular(self.array.mics, self.array.radius)?.with_sound_speed(self.array.sound_speed)
    }

    pub fn stft_config(&self) -> StftConfig {
        StftConfig::from_ms(self.stft.frame_ms, self.stft.hop_ms, SAMPLE_RATE)
    }

    pub fn tcn_config(&self) -> TcnConfig {
        TcnConfig {
            input_dim: crate::dsp::MEL_BANDS,
            hidden: self.model.tcn_hidden,
            kernel_size: self.model.kernel_size,
            blocks: self.model.blocks,
            layers_per_block: self.model.layers_per_block,
            num_classes: crate::classifier::NUM_CLASSES,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.train.lr,
            ..AdamConfig::default()
        }
    }

    pub fn room(&self) -> Result<RoomConfig> {
        let room = RoomConfig {
            dims: self.room.dims,
            t60: self.room.t60,
            array_center: self.room.array_center,
            geometry: self.geometry()?,
            max_order: self.room.max_order,
            fractional_delay: true,
        };
        room.validate()?;
        Ok(room)
    }

    pub fn scenario_spec(&self) -> ScenarioSpec {
        let s = &self.scenario;
        ScenarioSpec {
            num_sources: s.sources,
            mode: s.mode,
            filter_count: self.array.filters,
            distance_range: (s.distance_min, s.distance_max),
            duration: s.duration,
            jitter_deg: s.jitter_deg,
            snr_db: s.snr_db,
            level_rms: s.level_rms,
            talk: s.talk,
        }
    }

    pub fn tau(&self) -> f64 {
        self.eval.tau.unwrap_or_else(|| crate::eval::default_tau(self.array.filters))
    }

    fn frames(&self, seconds: f64) -> usize {
        (seconds / self.stft_config().hop_seconds()).round().max(1.0) as usize
    }

    /// Training crop length in frames (2 s → 200).
    pub fn segment_frames(&self) -> usize {
        self.frames(self.train.segment_seconds)
    }

    /// Inference window in frames: the frame count of a window-length signal
    /// (2 s → 198), so a 2 s file is exactly one window.
    pub fn window_frames(&self) -> usize {
        let stft = self.stft_config();
        let samples = (self.infer.window_seconds * stft.sample_rate as f64).round() as usize;
        stft.frame_count(samples).max(1)
    }

    pub fn hop_frames(&self) -> usize {
        self.frames(self.infer.hop_seconds)
    }

    pub fn design_bank(&self) -> Result<SpatialFilterBank> {
        design_filterbank(
            &self.geometry()?,
            self.array.filters,
            &self.stft_config().bin_freqs(),
            self.array.loading,
        )
    }
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {spec:?} is not key=value")))?;
    let value: toml::Value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_owned()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    let mut cur = table;
    for part in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("{part} in {key:?} is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_owned(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_recipe() {
        let c = PipelineConfig::default();
        assert_eq!((c.array.mics, c.array.filters, c.model.hidden), (8, 8, 256));
        assert_eq!((c.train.lr, c.train.batch_size, c.train.epochs), (1e-3, 64, 200));
        assert_eq!(c.tcn_config().receptive_field(), 187);
        assert_eq!(c.segment_frames(), 200);
        assert_eq!((c.window_frames(), c.hop_frames()), (198, 50));
        assert!((c.tau() - 0.25).abs() < 1e-15);
        c.validate().unwrap();
    }

    #[test]
    fn empty_file_gives_defaults_and_round_trips() {
        let c = PipelineConfig::from_toml("").unwrap();
        assert_eq!(c, PipelineConfig::default());
        let back = PipelineConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
    }

    #[test]
    fn overrides_take_precedence() {
        let text = "seed = 3\n[train]\nbatch_size = 16\n";
        let c = PipelineConfig::from_toml_with(
            text,
            &["train.batch_size=8".into(), "scenario.mode=hard".into(), "room.t60=0.3".into()],
        )
        .unwrap();
        assert_eq!((c.seed, c.train.batch_size, c.scenario.mode, c.room.t60), (3, 8, ScenarioMode::Hard, 0.3));
        assert_ne!(c.hash(), PipelineConfig::default().hash());
    }

    #[test]
    fn bad_configs_are_rejected() {
        assert!(PipelineConfig::from_toml("[train]\nbogus = 1\n").is_err());
        assert!(PipelineConfig::from_toml("[array]\nmics = 0\n").is_err());
        assert!(PipelineConfig::from_toml("[eval]\ntau = 2.0\n").is_err());
        assert!(PipelineConfig::from_toml_with("", &["noequals".into()]).is_err());
    }

    #[test]
    fn hash_is_stable_hex() {
        let h = PipelineConfig::default().hash();
        assert_eq!(h.len(), 64);
        assert!(h.chars().all(|c| c.is_ascii_hexdigit()));
        assert_eq!(hex_digest(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }
}
