//! File-level orchestration behind the `asobo` binary: filter design,
//! scenario simulation, training, inference and scoring. Every artifact
//! carries the hash of the configuration that produced it.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::array::SpatialFilterBank;
use crate::checkpoint::{bank_hash, BankRef, Checkpoint};
use crate::classifier::{derive_vad_osd, median_smooth, normalize_rows, LabelSequence};
use crate::config::PipelineConfig;
use crate::dsp::StftConfig;
use crate::error::{Error, Result};
use crate::eval::{
    localization_metrics, localize, osd_metrics, truth_indices, vad_metrics, DetectionScore, LocalizationScore,
    SegmentationScore,
};
use crate::io::{read_wav, write_wav};
use crate::model::{infer, AsoboModel, FrontEnd, TrainSample, Trainer, TrainerConfig};
use crate::segments::{center_counts, parse_rttm, speaker_counts, track_to_segments, write_rttm, Segment};
use crate::simulate::{generate_scenario, manifest_to_string, read_manifest, scenario_rng, ManifestRecord};

pub const BANK_FILE: &str = "filterbank.json";
pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const LOSS_FILE: &str = "loss.csv";

const HASH_KEY: &str = "config_hash";
const FRAMES_KEY: &str = "frames";

/// Maps `f` over `items` on up to `jobs` threads. Output order follows the
/// input; on failure the error of the lowest failing index is returned.
pub fn parallel_map<T, R, F>(items: &[T], jobs: usize, f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> Result<R> + Sync,
{
    let jobs = jobs.max(1).min(items.len().max(1));
    if jobs == 1 {
        return items.iter().map(&f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<R>>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                slots.lock().expect("no worker panicked")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("no worker panicked")
        .into_iter()
        .map(|r| r.expect("every slot filled"))
        .collect()
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn stem(path: &Path) -> Result<String> {
    path.file_stem()
        .and_then(|s| s.to_str())
        .map(str::to_owned)
        .ok_or_else(|| Error::InvalidInput(format!("{} has no usable file name", path.display())))
}

fn hash_comment(hash: &str) -> String {
    format!("{HASH_KEY}={hash}")
}

/// Writes the filter bank for `cfg` to `out/filterbank.json`.
pub fn cmd_design(cfg: &PipelineConfig, out: &Path) -> Result<PathBuf> {
    ensure_dir(out)?;
    let path = out.join(BANK_FILE);
    cfg.design_bank()?.save(&path, Some(&cfg.hash()))?;
    Ok(path)
}

/// Generates `count` scenarios into `out`: one WAV and one RTTM per
/// scenario plus `manifest.jsonl`. Scenario `i` uses its own RNG stream, so
/// the result does not depend on `jobs`.
pub fn cmd_simulate(cfg: &PipelineConfig, count: usize, out: &Path, jobs: usize) -> Result<PathBuf> {
    ensure_dir(out)?;
    let hash = cfg.hash();
    let room = cfg.room()?;
    let spec = cfg.scenario_spec();
    let indices: Vec<usize> = (0..count).collect();
    let records = parallel_map(&indices, jobs, |&i| {
        let scn = generate_scenario(&spec, &room, &mut scenario_rng(cfg.seed, i as u64))?;
        let id = format!("scn_{i:05}");
        let wave = format!("{id}.wav");
        let labels = format!("{id}.rttm");
        write_wav(&out.join(&wave), &scn.wave)?;
        let comments = [hash_comment(&hash), format!("{FRAMES_KEY}={}", scn.labels.len())];
        write_file(&out.join(&labels), write_rttm(&id, &scn.segments(), &comments))?;
        Ok(ManifestRecord {
            id,
            wave,
            labels,
            mode: spec.mode,
            samples: scn.wave.len(),
            angles_deg: scn.true_angles.iter().map(|a| a.to_degrees()).collect(),
            filter_indices: scn.true_filter_indices.clone(),
            activity: scn.activity.clone(),
            config_hash: hash.clone(),
        })
    })?;
    let path = out.join(MANIFEST_FILE);
    write_file(&path, manifest_to_string(&records)?)?;
    Ok(path)
}

/// Loads a bank and checks it against `cfg`'s STFT.
fn load_front_end(cfg: &PipelineConfig, bank_path: &Path) -> Result<FrontEnd> {
    let (bank, _) = SpatialFilterBank::load(bank_path)?;
    FrontEnd::new(bank, cfg.stft_config())
}

fn load_labels(path: &Path, cfg: &PipelineConfig, frames: usize) -> Result<LabelSequence> {
    let rttm = parse_rttm(&read_file(path)?)?;
    Ok(LabelSequence::from_counts(&speaker_counts(
        &rttm.segments(),
        &cfg.stft_config(),
        frames,
    )))
}

/// `path` expressed relative to directory `base`, so artifacts do not
/// depend on where the run happened.
fn relative_to(path: &Path, base: &Path) -> Result<PathBuf> {
    let path = path.canonicalize().map_err(|e| Error::io(path, e))?;
    let base = base.canonicalize().map_err(|e| Error::io(base, e))?;
    let (a, b): (Vec<_>, Vec<_>) = (path.components().collect(), base.components().collect());
    let common = a.iter().zip(&b).take_while(|(x, y)| x == y).count();
    let mut rel: PathBuf = b[common..].iter().map(|_| "..").collect();
    rel.extend(&a[common..]);
    Ok(rel)
}

fn manifest_dir(manifest: &Path) -> PathBuf {
    manifest.parent().map(Path::to_path_buf).unwrap_or_default()
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub losses: Vec<f64>,
}

/// Number of optimizer steps for `epochs` passes over `total_frames`.
pub fn planned_steps(cfg: &PipelineConfig, total_frames: usize) -> usize {
    let per_step = cfg.train.batch_size * cfg.segment_frames();
    let per_epoch = total_frames.div_ceil(per_step).max(1);
    let steps = cfg.train.epochs * per_epoch;
    cfg.train.max_steps.map_or(steps, |m| steps.min(m))
}

/// Trains on every scenario in `manifest` with the bank at `bank_path`.
/// `init` resumes from a checkpoint, which must have been trained with the
/// same bank. Writes `checkpoint.json` and `loss.csv` into `out`.
pub fn cmd_train(
    cfg: &PipelineConfig,
    manifest: &Path,
    bank_path: &Path,
    init: Option<&Path>,
    out: &Path,
    jobs: usize,
) -> Result<TrainOutcome> {
    let records = read_manifest(manifest)?;
    if records.is_empty() {
        return Err(Error::InvalidInput(format!("{} lists no scenarios", manifest.display())));
    }
    let front = load_front_end(cfg, bank_path)?;
    ensure_dir(out)?;
    let bref = BankRef {
        hash: bank_hash(front.bank())?,
        path: relative_to(bank_path, out)?.to_string_lossy().into_owned(),
    };
    let model = match init {
        Some(p) => {
            let ck = Checkpoint::load(p)?;
            ck.check_bank(front.bank())?;
            ck.model()?
        }
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            AsoboModel::init(front.stft_config().bins(), cfg.model.hidden, cfg.tcn_config(), &mut rng)?
        }
    };
    if model.sacc.bins() != front.stft_config().bins() {
        return Err(Error::Incompatible(format!(
            "model expects {} bins, the STFT yields {}",
            model.sacc.bins(),
            front.stft_config().bins()
        )));
    }

    let dir = manifest_dir(manifest);
    let data = parallel_map(&records, jobs, |r| {
        let wave = read_wav(&dir.join(&r.wave))?;
        let power = front.beam_power(&wave)?;
        let labels = load_labels(&dir.join(&r.labels), cfg, power.dim().0)?;
        TrainSample::new(&power, labels)
    })?;
    let total_frames: usize = data.iter().map(TrainSample::frames).sum();
    if total_frames == 0 {
        return Err(Error::InvalidInput("training scenarios hold no frames".into()));
    }

    let steps = planned_steps(cfg, total_frames);
    let tc = TrainerConfig {
        batch_size: cfg.train.batch_size,
        segment_frames: cfg.segment_frames(),
        adam: cfg.adam(),
    };
    let mut trainer = Trainer::new(model, tc, cfg.seed.wrapping_add(1));
    let mut losses = Vec::with_capacity(steps);
    for _ in 0..steps {
        losses.push(trainer.step(&data, front.mel())?);
    }

    let hash = cfg.hash();
    let ck = Checkpoint::new(&trainer.model, &hash, bref, cfg.seed, trainer.steps_taken());
    let path = out.join(CHECKPOINT_FILE);
    ck.save(&path)?;
    let mut csv = format!("# {}\nstep,loss\n", hash_comment(&hash));
    for (i, l) in losses.iter().enumerate() {
        writeln!(csv, "{},{l}", i + 1).expect("writing to a String");
    }
    write_file(&out.join(LOSS_FILE), csv)?;
    Ok(TrainOutcome { checkpoint: path, losses })
}

/// `frame,time,<prefix>0,...` rows; `time` is the frame center in seconds.
fn matrix_csv(hash: &str, prefix: &str, m: &Array2<f64>, stft: &StftConfig) -> String {
    let mut out = format!("# {}\nframe,time", hash_comment(hash));
    for c in 0..m.ncols() {
        write!(out, ",{prefix}{c}").expect("writing to a String");
    }
    out.push('\n');
    for (t, row) in m.outer_iter().enumerate() {
        write!(out, "{t},{:.4}", stft.frame_center(t)).expect("writing to a String");
        for v in row {
            write!(out, ",{v}").expect("writing to a String");
        }
        out.push('\n');
    }
    out
}

/// Reads a CSV written by [`cmd_infer`]: the embedded hash and the value
/// columns after `frame,time`.
pub fn read_matrix_csv(path: &Path) -> Result<(Option<String>, Array2<f64>)> {
    let text = read_file(path)?;
    let bad = |n: usize| Error::InvalidInput(format!("{}: malformed line {}", path.display(), n + 1));
    let mut hash = None;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut header_seen = false;
    for (n, line) in text.lines().enumerate() {
        if let Some(c) = line.strip_prefix('#') {
            if let Some(h) = c.trim().strip_prefix(HASH_KEY).and_then(|s| s.strip_prefix('=')) {
                hash = Some(h.to_owned());
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        if !header_seen {
            header_seen = true;
            continue;
        }
        let vals: Vec<f64> = line
            .split(',')
            .skip(2)
            .map(|v| v.trim().parse().map_err(|_| bad(n)))
            .collect::<Result<_>>()?;
        if rows.first().is_some_and(|r| r.len() != vals.len()) || vals.is_empty() {
            return Err(bad(n));
        }
        rows.push(vals);
    }
    let cols = rows.first().map_or(0, Vec::len);
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    let m = Array2::from_shape_vec((rows.len(), cols), flat).expect("rows have equal length");
    Ok((hash, m))
}

#[derive(Debug, Clone)]
pub struct InferOutcome {
    pub rttm: PathBuf,
    pub posteriors: PathBuf,
    pub weights: PathBuf,
    pub frames: usize,
}

/// Runs the checkpoint over each WAV. For `x.wav` this writes `x.rttm`
/// (`speech` and `overlap` segments), `x.posteriors.csv` and
/// `x.weights.csv`. Without `bank_path` the bank recorded in the checkpoint
/// is used, resolved relative to the checkpoint if the path is relative.
pub fn cmd_infer(
    cfg: &PipelineConfig,
    checkpoint: &Path,
    bank_path: Option<&Path>,
    wavs: &[PathBuf],
    out: &Path,
    jobs: usize,
) -> Result<Vec<InferOutcome>> {
    let ck = Checkpoint::load(checkpoint)?;
    let bank_path = match bank_path {
        Some(p) => p.to_path_buf(),
        None => {
            // recorded relative to the checkpoint's directory
            manifest_dir(checkpoint).join(&ck.filterbank.path)
        }
    };
    let front = load_front_end(cfg, &bank_path)?;
    ck.check_bank(front.bank())?;
    let model = ck.model()?;
    let mut stems: Vec<String> = wavs.iter().map(|w| stem(w)).collect::<Result<_>>()?;
    stems.sort();
    if stems.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::InvalidInput("input WAV files must have distinct names".into()));
    }
    ensure_dir(out)?;
    let hash = cfg.hash();
    parallel_map(wavs, jobs, |wav| {
        let id = stem(wav)?;
        let power = front.beam_power(&read_wav(wav)?)?;
        let frames = power.dim().0;
        if frames == 0 {
            return Err(Error::InvalidInput(format!("{} is shorter than one frame", wav.display())));
        }
        let res = infer(power.view(), front.mel(), &model, cfg.window_frames(), cfg.hop_frames())?;
        let (vad, osd) = derive_vad_osd(&res.posteriors, cfg.infer.vad_threshold, cfg.infer.osd_threshold)?;
        let stft = front.stft_config();
        let mut segs = track_to_segments(&median_smooth(&vad, cfg.infer.median_frames), stft, "speech");
        segs.extend(track_to_segments(&median_smooth(&osd, cfg.infer.median_frames), stft, "overlap"));
        let comments = [hash_comment(&hash), format!("{FRAMES_KEY}={frames}")];
        let outcome = InferOutcome {
            rttm: out.join(format!("{id}.rttm")),
            posteriors: out.join(format!("{id}.posteriors.csv")),
            weights: out.join(format!("{id}.weights.csv")),
            frames,
        };
        write_file(&outcome.rttm, write_rttm(&id, &segs, &comments))?;
        write_file(&outcome.posteriors, matrix_csv(&hash, "p", &res.posteriors.probs, stft))?;
        write_file(&outcome.weights, matrix_csv(&hash, "w", &res.weights, stft))?;
        Ok(outcome)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    /// VAD and OSD from RTTM files.
    Segmentation,
    /// Attention-weight localization against the manifest.
    Localization,
}

impl std::str::FromStr for EvalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "seg" => Ok(EvalMode::Segmentation),
            "loc" => Ok(EvalMode::Localization),
            _ => Err(Error::InvalidInput(format!("unknown eval mode {s:?}; expected seg or loc"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FileSegmentation {
    pub id: String,
    pub vad: SegmentationScore,
    pub osd: DetectionScore,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SegmentationReport {
    pub config_hash: String,
    pub files: usize,
    pub vad: SegmentationScore,
    pub osd: DetectionScore,
    pub per_file: Vec<FileSegmentation>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioLocalization {
    pub id: String,
    pub mean_weights: Vec<f64>,
    pub selected: Vec<usize>,
    pub truth: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalizationReport {
    pub config_hash: String,
    pub tau: f64,
    pub scenarios: usize,
    pub score: LocalizationScore,
    pub per_scenario: Vec<ScenarioLocalization>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EvalReport {
    Segmentation(SegmentationReport),
    Localization(LocalizationReport),
}

fn check_hash(what: &str, found: Option<&str>, expected: &str, force: bool) -> Result<()> {
    if force || found == Some(expected) {
        return Ok(());
    }
    Err(Error::Incompatible(format!(
        "{what} has config hash {}, expected {expected} (use --force to score anyway)",
        found.unwrap_or("<none>")
    )))
}

/// Files in `dir` ending in `suffix`, keyed by the name before the suffix.
fn files_with_suffix(dir: &Path, suffix: &str) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        if let Some(id) = name.strip_suffix(suffix) {
            if !id.is_empty() && !id.contains('.') {
                out.insert(id.to_owned(), path.clone());
            }
        }
    }
    Ok(out)
}

fn same_ids<'a>(pred: impl Iterator<Item = &'a String>, reference: impl Iterator<Item = &'a String>) -> Result<()> {
    let p: Vec<&String> = pred.collect();
    let r: Vec<&String> = reference.collect();
    if p != r {
        let missing: Vec<&&String> = r.iter().filter(|id| !p.contains(id)).collect();
        let extra: Vec<&&String> = p.iter().filter(|id| !r.contains(id)).collect();
        return Err(Error::InvalidInput(format!(
            "prediction and reference file lists differ (missing {missing:?}, unexpected {extra:?})"
        )));
    }
    if r.is_empty() {
        return Err(Error::InvalidInput("nothing to score".into()));
    }
    Ok(())
}

fn frames_of(rttm: &crate::segments::Rttm, path: &Path) -> Result<usize> {
    rttm.comment_value(FRAMES_KEY)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::InvalidInput(format!("{} lacks a `{FRAMES_KEY}=` comment", path.display())))
}

fn eval_segmentation(cfg: &PipelineConfig, pred: &Path, reference: &Path, force: bool) -> Result<SegmentationReport> {
    let hash = cfg.hash();
    let preds = files_with_suffix(pred, ".rttm")?;
    let refs = files_with_suffix(reference, ".rttm")?;
    same_ids(preds.keys(), refs.keys())?;
    let stft = cfg.stft_config();
    let mut per_file = Vec::with_capacity(refs.len());
    for (id, ref_path) in &refs {
        let pred_path = &preds[id];
        let r = parse_rttm(&read_file(ref_path)?)?;
        let p = parse_rttm(&read_file(pred_path)?)?;
        check_hash(&ref_path.display().to_string(), r.comment_value(HASH_KEY), &hash, force)?;
        check_hash(&pred_path.display().to_string(), p.comment_value(HASH_KEY), &hash, force)?;
        let frames = frames_of(&r, ref_path)?;
        let counts = speaker_counts(&r.segments(), &stft, frames);
        let ref_vad: Vec<bool> = counts.iter().map(|&c| c > 0).collect();
        let ref_osd: Vec<bool> = counts.iter().map(|&c| c > 1).collect();
        let track = |label: &str| -> Vec<bool> {
            let segs: Vec<Segment> = p.segments().into_iter().filter(|s| s.speaker == label).collect();
            center_counts(&segs, &stft, frames).iter().map(|&c| c > 0).collect()
        };
        per_file.push(FileSegmentation {
            id: id.clone(),
            vad: vad_metrics(&track("speech"), &ref_vad)?,
            osd: osd_metrics(&track("overlap"), &ref_osd)?,
        });
    }
    let vad: Vec<SegmentationScore> = per_file.iter().map(|f| f.vad).collect();
    let osd: Vec<DetectionScore> = per_file.iter().map(|f| f.osd).collect();
    Ok(SegmentationReport {
        config_hash: hash,
        files: per_file.len(),
        vad: SegmentationScore::pooled(&vad),
        osd: DetectionScore::pooled(&osd),
        per_file,
    })
}

fn eval_localization(cfg: &PipelineConfig, pred: &Path, reference: &Path, force: bool) -> Result<LocalizationReport> {
    let hash = cfg.hash();
    let manifest = reference.join(MANIFEST_FILE);
    let records = read_manifest(&manifest)?;
    let preds = files_with_suffix(pred, ".weights.csv")?;
    let mut ids: Vec<&String> = records.iter().map(|r| &r.id).collect();
    ids.sort();
    same_ids(preds.keys(), ids.into_iter())?;
    let tau = cfg.tau();
    let p_count = cfg.array.filters;
    let mut per_scenario = Vec::with_capacity(records.len());
    for r in &records {
        check_hash(&format!("manifest record {}", r.id), Some(&r.config_hash), &hash, force)?;
        let path = &preds[&r.id];
        let (found, mut weights) = read_matrix_csv(path)?;
        check_hash(&path.display().to_string(), found.as_deref(), &hash, force)?;
        if weights.ncols() != p_count {
            return Err(Error::Shape(format!(
                "{} has {} weight columns, configuration has {p_count} filters",
                path.display(),
                weights.ncols()
            )));
        }
        // undo the rounding of the text round trip
        normalize_rows(&mut weights);
        let d = localize(weights.view(), tau)?;
        let angles: Vec<f64> = r.angles_deg.iter().map(|a| a.to_radians()).collect();
        per_scenario.push(ScenarioLocalization {
            id: r.id.clone(),
            mean_weights: d.mean_weights,
            selected: d.selected,
            truth: truth_indices(&angles, p_count),
        });
    }
    let decisions: Vec<Vec<usize>> = per_scenario.iter().map(|s| s.selected.clone()).collect();
    let truths: Vec<Vec<usize>> = per_scenario.iter().map(|s| s.truth.clone()).collect();
    Ok(LocalizationReport {
        config_hash: hash,
        tau,
        scenarios: per_scenario.len(),
        score: localization_metrics(&decisions, &truths, p_count)?,
        per_scenario,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{x:.2}"))
}

fn segmentation_text(r: &SegmentationReport) -> String {
    let mut out = format!("{:<16} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}\n", "file", "FA%", "Miss%", "SER%", "OSD-P", "OSD-R", "OSD-F1");
    let mut line = |id: &str, v: &SegmentationScore, o: &DetectionScore| {
        writeln!(
            out,
            "{id:<16} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8.2}",
            opt(v.fa_rate),
            opt(v.miss_rate),
            opt(v.ser),
            opt(o.precision),
            opt(o.recall),
            o.f1
        )
        .expect("writing to a String");
    };
    for f in &r.per_file {
        line(&f.id, &f.vad, &f.osd);
    }
    line("pooled", &r.vad, &r.osd);
    out
}

fn localization_text(r: &LocalizationReport) -> String {
    let s = &r.score;
    format!(
        "scenarios {}\ntau       {:.4}\nP         {:.2}\nR         {:.2}\nF1        {:.2}\nselected-class P {} R {} F1 {:.2}\n",
        r.scenarios,
        r.tau,
        s.precision,
        s.recall,
        s.f1,
        opt(s.positive.precision),
        opt(s.positive.recall),
        s.positive.f1
    )
}

fn join<T: ToString>(v: &[T], sep: &str) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(sep)
}

fn localization_csv(r: &LocalizationReport) -> String {
    let mut out = format!("# {}\nid,mean_weights,selected,truth\n", hash_comment(&r.config_hash));
    for s in &r.per_scenario {
        writeln!(
            out,
            "{},{},{},{}",
            s.id,
            join(&s.mean_weights, ";"),
            join(&s.selected, ";"),
            join(&s.truth, ";")
        )
        .expect("writing to a String");
    }
    out
}

/// Scores predictions in `pred` against references in `reference` and
/// writes `metrics.json` and `metrics.txt` (plus `localization.csv` in
/// localization mode) into `out`. Artifacts whose config hash differs from
/// `cfg`'s are refused unless `force` is set.
pub fn cmd_eval(
    cfg: &PipelineConfig,
    pred: &Path,
    reference: &Path,
    mode: EvalMode,
    force: bool,
    out: &Path,
) -> Result<EvalReport> {
    let report = match mode {
        EvalMode::Segmentation => EvalReport::Segmentation(eval_segmentation(cfg, pred, reference, force)?),
        EvalMode::Localization => EvalReport::Localization(eval_localization(cfg, pred, reference, force)?),
    };
    ensure_dir(out)?;
    match &report {
        EvalReport::Segmentation(r) => {
            write_file(&out.join("metrics.json"), serde_json::to_string_pretty(r)?)?;
            write_file(&out.join("metrics.txt"), segmentation_text(r))?;
        }
        EvalReport::Localization(r) => {
            write_file(&out.join("metrics.json"), serde_json::to_string_pretty(r)?)?;
            write_file(&out.join("metrics.txt"), localization_text(r))?;
            write_file(&out.join("localization.csv"), localization_csv(r))?;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_map_keeps_order_and_first_error() {
        let items: Vec<usize> = (0..37).collect();
        let sq = parallel_map(&items, 4, |&i| Ok(i * i)).unwrap();
        assert_eq!(sq, items.iter().map(|i| i * i).collect::<Vec<_>>());
        let err = parallel_map(&items, 3, |&i| {
            if i % 10 == 7 {
                Err(Error::InvalidInput(format!("bad {i}")))
            } else {
                Ok(i)
            }
        })
        .unwrap_err();
        assert_eq!(err.to_string(), "invalid input: bad 7");
        assert!(parallel_map(&Vec::<usize>::new(), 8, |&i| Ok(i)).unwrap().is_empty());
    }

    #[test]
    fn matrix_csv_round_trips_exactly() {
        let m = Array2::from_shape_vec((2, 3), vec![0.1, 0.2, 0.7, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.weights.csv");
        write_file(&path, matrix_csv("abc", "w", &m, &StftConfig::default())).unwrap();
        let (hash, back) = read_matrix_csv(&path).unwrap();
        assert_eq!(hash.as_deref(), Some("abc"));
        assert_eq!(back, m);
    }

    #[test]
    fn planned_steps_cover_epochs() {
        let mut cfg = PipelineConfig::default();
        cfg.train.batch_size = 4;
        cfg.train.epochs = 3;
        // 4 crops of 200 frames per step; 1000 frames need two steps per epoch
        assert_eq!(planned_steps(&cfg, 1000), 6);
        cfg.train.max_steps = Some(5);
        assert_eq!(planned_steps(&cfg, 1000), 5);
    }

    #[test]
    fn relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("design"), dir.path().join("train"));
        std::fs::create_dir_all(&a).unwrap();
        std::fs::create_dir_all(&b).unwrap();
        std::fs::write(a.join("bank.json"), "").unwrap();
        assert_eq!(relative_to(&a.join("bank.json"), &b).unwrap(), Path::new("../design/bank.json"));
        assert_eq!(relative_to(&a.join("bank.json"), &a).unwrap(), Path::new("bank.json"));
    }

    #[test]
    fn eval_mode_parses() {
        assert_eq!("seg".parse::<EvalMode>().unwrap(), EvalMode::Segmentation);
        assert_eq!("loc".parse::<EvalMode>().unwrap(), EvalMode::Localization);
        assert!("der".parse::<EvalMode>().is_err());
    }
}
