//! Acceptance checks. Runs every criterion in turn, prints one PASS/FAIL
//! line each and exits nonzero if any fails.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::time::Instant;

use asobo::array::{
    design_filterbank, design_filterbank_with, steering_vector, uniform_steer_angles, ArrayGeometry, NoiseField,
    DEFAULT_LOADING,
};
use asobo::classifier::{derive_vad_osd, row_sums, LabelSequence};
use asobo::config::PipelineConfig;
use asobo::dsp::{hann_window, MelFilterbank, Stft, StftConfig};
use asobo::eval::{
    assign_overlap, localization_metrics, localize, osd_metrics, random_baseline, truth_indices, vad_metrics,
    OverlapOutcome,
};
use asobo::gradcheck;
use asobo::model::{infer, loss_and_grad, AsoboModel, FrontEnd, TrainSample, Trainer, TrainerConfig};
use asobo::params::Parameters;
use asobo::pipeline::{cmd_design, cmd_infer, cmd_simulate, cmd_train};
use asobo::sacc::{sacc_backward, sacc_forward, SaccParams};
use asobo::segments::Segment;
use asobo::simulate::{generate_scenario, scenario_rng, ScenarioMode};
use asobo::tcn::TcnConfig;
use ndarray::{Array2, Array3};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn bins_257() -> Vec<f64> {
    StftConfig::default().bin_freqs()
}

fn distortionless() -> Outcome {
    let t0 = Instant::now();
    let freqs = bins_257();
    let mut worst: f64 = 0.0;
    for filters in [4, 8] {
        for radius in [0.05, 0.1] {
            let geom = ArrayGeometry::uniform_circular(8, radius).unwrap();
            let bank = design_filterbank(&geom, filters, &freqs, DEFAULT_LOADING).unwrap();
            for (p, &theta) in uniform_steer_angles(filters).iter().enumerate() {
                for (f, &hz) in freqs.iter().enumerate() {
                    let v = steering_vector(&geom, theta, hz);
                    let resp: Complex64 = (0..8).map(|m| bank.weights()[[p, f, m]].conj() * v[m]).sum();
                    worst = worst.max((resp - 1.0).norm());
                }
            }
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    outcome(worst < 1e-9 && secs < 5.0, format!("max |w^H v - 1| = {worst:.2e}, {secs:.2} s"))
}

fn identity_covariance() -> Outcome {
    let freqs = bins_257();
    let mut worst: f64 = 0.0;
    for filters in [4, 8] {
        for radius in [0.05, 0.1] {
            let geom = ArrayGeometry::uniform_circular(8, radius).unwrap();
            let bank = design_filterbank_with(&geom, filters, &freqs, NoiseField::Identity).unwrap();
            for (p, &theta) in uniform_steer_angles(filters).iter().enumerate() {
                for (f, &hz) in freqs.iter().enumerate() {
                    let v = steering_vector(&geom, theta, hz);
                    for m in 0..8 {
                        worst = worst.max((bank.weights()[[p, f, m]] - v[m] / 8.0).norm());
                    }
                }
            }
        }
    }
    outcome(worst < 1e-12, format!("max |w - v/M| = {worst:.2e}"))
}

fn perturb<P: Parameters>(p: &mut P, scale: f64, rng: &mut ChaCha8Rng) {
    let flat: Vec<f64> = p.flatten().iter().map(|x| x + rng.random_range(-scale..scale)).collect();
    p.load_flat(&flat);
}

fn gradients() -> Outcome {
    let t0 = Instant::now();
    let (mut sacc_worst, mut e2e_worst): (f64, f64) = (0.0, 0.0);
    for i in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(7000 + i);

        // attention combinator alone under a smooth scalar loss of Ȳ
        let (t, p, f, d) = (
            rng.random_range(2..6),
            rng.random_range(2..5),
            rng.random_range(3..7),
            rng.random_range(2..5),
        );
        let mut params = SaccParams::init(f, d, &mut rng);
        perturb(&mut params, 0.3, &mut rng);
        let y = Array3::from_shape_fn((t, p, f), |_| rng.random_range(0.05..2.0));
        let g = Array2::from_shape_fn((t, f), |_| rng.random_range(-1.0..1.0));
        let loss = |prm: &SaccParams| {
            let out = sacc_forward(y.view(), prm).unwrap();
            (&out.combined * &g).sum() + 0.25 * out.combined.mapv(|v| v * v).sum()
        };
        let out = sacc_forward(y.view(), &params).unwrap();
        let d_comb = &g + &(out.combined.mapv(|v| 0.5 * v));
        let analytic = sacc_backward(&out.cache, d_comb.view()).unwrap();
        // smooth everywhere, so a wider step keeps roundoff on the exactly-zero
        // key-bias gradients below the tolerance
        sacc_worst = sacc_worst.max(gradcheck::check(&params, &analytic, 1e-4, loss).max_rel_error);

        // combinator, Mel projection, TCN and cross-entropy together
        let (t, p, f, bands) = (8, 3, 6, 5);
        let mel = MelFilterbank {
            matrix: Array2::from_shape_fn((bands, f), |_| rng.random_range(0.1..1.0)),
            f_low: 0.0,
            f_high: 1.0,
            centers_hz: vec![0.0; bands],
        };
        let tcn = TcnConfig {
            input_dim: bands,
            hidden: 4,
            kernel_size: 3,
            blocks: 2,
            layers_per_block: 2,
            num_classes: 3,
        };
        let mut model = AsoboModel::init(f, 4, tcn, &mut rng).unwrap();
        perturb(&mut model, 0.1, &mut rng);
        let y = Array3::from_shape_fn((t, p, f), |_| rng.random_range(0.05..2.0));
        let labels = LabelSequence::new((0..t).map(|_| rng.random_range(0..3u8)).collect()).unwrap();
        let (_, grads) = loss_and_grad(y.view(), &labels, &mel, &model).unwrap();
        let r = gradcheck::check(&model, &grads, 1e-5, |m| loss_and_grad(y.view(), &labels, &mel, m).unwrap().0);
        e2e_worst = e2e_worst.max(r.max_rel_error);
    }
    let secs = t0.elapsed().as_secs_f64();
    outcome(
        sacc_worst < 1e-4 && e2e_worst < 1e-3 && secs < 120.0,
        format!("worst relative error SACC {sacc_worst:.2e}, end-to-end {e2e_worst:.2e}, {secs:.1} s"),
    )
}

fn stft_oracle() -> Outcome {
    let cfg = StftConfig::default();
    let stft = Stft::new(cfg).unwrap();
    let win = hann_window(cfg.frame_len);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let frame: Vec<f64> = (0..cfg.frame_len).map(|_| rng.random_range(-1.0..1.0)).collect();
        let fast = stft.frame_spectrum(&frame);
        let naive: Vec<Complex64> = (0..cfg.bins())
            .map(|k| {
                (0..cfg.frame_len)
                    .map(|n| {
                        let ang = -2.0 * PI * (k * n) as f64 / cfg.fft_size as f64;
                        Complex64::from_polar(frame[n] * win[n], ang)
                    })
                    .sum()
            })
            .collect();
        let scale = naive.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let err = fast.iter().zip(&naive).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        worst = worst.max(err / scale);
    }
    outcome(worst < 1e-6, format!("max relative deviation {worst:.2e}"))
}

fn random_track(rng: &mut ChaCha8Rng, n: usize) -> Vec<bool> {
    let density = rng.random_range(0.0..1.0);
    (0..n).map(|_| rng.random_bool(density)).collect()
}

fn percent(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| 100.0 * num as f64 / den as f64)
}

fn f1_of(p: Option<f64>, r: Option<f64>) -> f64 {
    match (p, r) {
        (Some(p), Some(r)) if p + r > 0.0 => 2.0 * p * r / (p + r),
        _ => 0.0,
    }
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut bad = BTreeMap::new();

    for _ in 0..1000 {
        let n = rng.random_range(1..300);
        let (pred, reference) = (random_track(&mut rng, n), random_track(&mut rng, n));
        let speech: Vec<usize> = (0..n).filter(|&i| reference[i]).collect();
        let fa = (0..n).filter(|&i| pred[i] && !reference[i]).count();
        let miss = speech.iter().filter(|&&i| !pred[i]).count();
        let s = vad_metrics(&pred, &reference).unwrap();
        let want = (
            percent(fa, speech.len()),
            percent(miss, speech.len()),
            percent(fa, speech.len()).zip(percent(miss, speech.len())).map(|(a, b)| a + b),
        );
        if (s.fa_rate, s.miss_rate, s.ser) != want {
            *bad.entry("VAD").or_insert(0) += 1;
        }

        let pos: BTreeSet<usize> = (0..n).filter(|&i| pred[i]).collect();
        let truth: BTreeSet<usize> = (0..n).filter(|&i| reference[i]).collect();
        let tp = pos.intersection(&truth).count();
        let (p, r) = (percent(tp, pos.len()), percent(tp, truth.len()));
        let o = osd_metrics(&pred, &reference).unwrap();
        if (o.precision, o.recall, o.f1) != (p, r, f1_of(p, r)) {
            *bad.entry("OSD").or_insert(0) += 1;
        }
    }

    for _ in 0..1000 {
        let filters = rng.random_range(2..9);
        let scenarios = rng.random_range(1..6);
        let tau = rng.random_range(0.0..0.6);
        let mut decisions = Vec::new();
        let mut truths = Vec::new();
        let mut decision_ok = true;
        for _ in 0..scenarios {
            let t = rng.random_range(1..40);
            let mut w = Array2::from_shape_fn((t, filters), |_| rng.random_range(0.0..1.0f64).powi(4));
            for mut row in w.rows_mut() {
                let s = row.sum();
                row.mapv_inplace(|v| v / s);
            }
            let mut means = vec![0.0; filters];
            for (p, m) in means.iter_mut().enumerate() {
                for ti in 0..t {
                    *m += w[[ti, p]];
                }
                *m /= t as f64;
            }
            let want: Vec<usize> = (0..filters).filter(|&p| means[p] >= tau).collect();
            let got = localize(w.view(), tau).unwrap();
            decision_ok &= got.selected == want && got.mean_weights == means;
            decisions.push(want);
            let sources = rng.random_range(1..=filters);
            let mut all: Vec<usize> = (0..filters).collect();
            let mut truth = Vec::new();
            for _ in 0..sources {
                truth.push(all.swap_remove(rng.random_range(0..all.len())));
            }
            truths.push(truth);
        }
        let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
        for (sel, truth) in decisions.iter().zip(&truths) {
            let sel: BTreeSet<_> = sel.iter().collect();
            let truth: BTreeSet<_> = truth.iter().collect();
            tp += sel.intersection(&truth).count();
            fp += sel.difference(&truth).count();
            fn_ += truth.difference(&sel).count();
            tn += filters - sel.union(&truth).count();
        }
        let (pp, pr) = (percent(tp, tp + fp), percent(tp, tp + fn_));
        let (np, nr) = (percent(tn, tn + fn_), percent(tn, tn + fp));
        let macro_f1 = (f1_of(pp, pr) + f1_of(np, nr)) / 2.0;
        let s = localization_metrics(&decisions, &truths, filters).unwrap();
        if !decision_ok || s.f1 != macro_f1 || s.positive.f1 != f1_of(pp, pr) || s.negative.f1 != f1_of(np, nr) {
            *bad.entry("localization").or_insert(0) += 1;
        }
    }

    // Quarter-second grid keeps every interval endpoint exact.
    let grid = |rng: &mut ChaCha8Rng, lo: usize, hi: usize| rng.random_range(lo..hi) as f64 * 0.25;
    for _ in 0..1000 {
        let speakers = rng.random_range(1..5);
        let mut diar = Vec::new();
        for s in 0..speakers {
            for _ in 0..rng.random_range(1..4) {
                let on = grid(&mut rng, 0, 60);
                diar.push(Segment::new(format!("s{s}"), on, on + grid(&mut rng, 1, 12)));
            }
        }
        let overlaps: Vec<Segment> = (0..rng.random_range(1..4))
            .map(|_| {
                let on = grid(&mut rng, 0, 60);
                Segment::new("overlap", on, on + grid(&mut rng, 1, 8))
            })
            .collect();
        let labels: BTreeSet<&str> = diar.iter().map(|s| s.speaker.as_str()).collect();
        let mut want = Vec::new();
        for ov in &overlaps {
            if labels.len() < 2 {
                want.push(OverlapOutcome::TooFewSpeakers);
                continue;
            }
            // active: some eighth-second midpoint lies inside both intervals
            let covers = |s: &Segment, x: f64| s.onset < x && x < s.offset();
            let mut best: Option<(f64, &str)> = None;
            for &sp in &labels {
                let mine: Vec<&Segment> = diar.iter().filter(|s| s.speaker == sp).collect();
                let active = (0..600).map(|k| k as f64 * 0.125 + 0.0625).any(|x| covers(ov, x) && mine.iter().any(|s| covers(s, x)));
                if active {
                    continue;
                }
                let gap = mine
                    .iter()
                    .map(|s| {
                        if s.offset() < ov.onset {
                            ov.onset - s.offset()
                        } else if ov.offset() < s.onset {
                            s.onset - ov.offset()
                        } else {
                            0.0
                        }
                    })
                    .fold(f64::INFINITY, f64::min);
                if best.is_none_or(|(g, l)| (gap, sp) < (g, l)) {
                    best = Some((gap, sp));
                }
            }
            want.push(match best {
                Some((_, sp)) => OverlapOutcome::Assigned { speaker: sp.to_owned() },
                None => OverlapOutcome::NoCandidate,
            });
        }
        if assign_overlap(&diar, &overlaps).outcomes != want {
            *bad.entry("overlap").or_insert(0) += 1;
        }
    }

    let detail = if bad.is_empty() {
        "VAD, OSD, localization and overlap assignment match enumeration on 1000 cases each".to_string()
    } else {
        format!("mismatches: {bad:?}")
    };
    outcome(bad.is_empty(), detail)
}

fn random_baseline_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let s = random_baseline(20_000, 2, 8, &mut rng).unwrap();
    outcome((s.f1 - 49.9).abs() <= 1.5, format!("F1 {:.2} over 20000 scenarios", s.f1))
}

/// Desk-scale run shared by the localization and smoke criteria.
struct DeskRun {
    easy_f1: f64,
    hard_f1: f64,
    random_f1: f64,
    on_truth: f64,
    off_truth: f64,
    train_secs: f64,
    vad_accuracy: f64,
    worst_row_sum: f64,
}

const DESK_TRAIN: usize = 200;
const DESK_TEST: usize = 50;
const DESK_STEPS: usize = 1000;
const DESK_BATCH: usize = 8;

fn desk_run() -> DeskRun {
    let cfg = PipelineConfig::from_toml_with("", &["room.t60=0.3".into(), "scenario.snr_db=10.0".into()]).unwrap();
    let room = cfg.room().unwrap();
    let front = FrontEnd::new(cfg.design_bank().unwrap(), cfg.stft_config()).unwrap();
    let t0 = Instant::now();
    let train: Vec<TrainSample> = (0..DESK_TRAIN)
        .map(|i| {
            let mut spec = cfg.scenario_spec();
            spec.mode = if i % 2 == 0 { ScenarioMode::Easy } else { ScenarioMode::Hard };
            let scn = generate_scenario(&spec, &room, &mut scenario_rng(cfg.seed, i as u64)).unwrap();
            TrainSample::new(&front.beam_power(&scn.wave).unwrap(), scn.labels).unwrap()
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let model = AsoboModel::init(front.stft_config().bins(), cfg.model.hidden, cfg.tcn_config(), &mut rng).unwrap();
    let tc = TrainerConfig {
        batch_size: DESK_BATCH,
        segment_frames: cfg.segment_frames(),
        adam: cfg.adam(),
    };
    let mut trainer = Trainer::new(model, tc, cfg.seed + 1);
    for _ in 0..DESK_STEPS {
        trainer.step(&train, front.mel()).unwrap();
    }
    let train_secs = t0.elapsed().as_secs_f64();
    drop(train);

    let tau = cfg.tau();
    let filters = cfg.array.filters;
    let (mut correct, mut frames, mut worst_row_sum) = (0usize, 0usize, 0.0f64);
    let (mut on, mut off) = (0.0, 0.0);
    let mut f1 = [0.0; 2];
    for (k, mode) in [ScenarioMode::Easy, ScenarioMode::Hard].into_iter().enumerate() {
        let mut decisions = Vec::new();
        let mut truths = Vec::new();
        for i in 0..DESK_TEST {
            let mut spec = cfg.scenario_spec();
            spec.mode = mode;
            let idx = 1_000_000 + (k * DESK_TEST + i) as u64;
            let scn = generate_scenario(&spec, &room, &mut scenario_rng(cfg.seed, idx)).unwrap();
            let y = front.beam_power(&scn.wave).unwrap();
            let out = infer(y.view(), front.mel(), &trainer.model, cfg.window_frames(), cfg.hop_frames()).unwrap();
            for s in row_sums(&out.posteriors) {
                worst_row_sum = worst_row_sum.max((s - 1.0).abs());
            }
            let (vad, _) = derive_vad_osd(&out.posteriors, cfg.infer.vad_threshold, cfg.infer.osd_threshold).unwrap();
            let speech = scn.labels.speech();
            correct += vad.iter().zip(&speech).filter(|(a, b)| a == b).count();
            frames += speech.len();
            let d = localize(out.weights.view(), tau).unwrap();
            let truth = truth_indices(&scn.true_angles, filters);
            for (p, w) in d.mean_weights.iter().enumerate() {
                if truth.contains(&p) {
                    on += w / (truth.len() * 2 * DESK_TEST) as f64;
                } else {
                    off += w / ((filters - truth.len()) * 2 * DESK_TEST) as f64;
                }
            }
            decisions.push(d.selected);
            truths.push(truth);
        }
        f1[k] = localization_metrics(&decisions, &truths, filters).unwrap().f1;
    }
    let random_f1 = random_baseline(10_000, 2, filters, &mut ChaCha8Rng::seed_from_u64(14)).unwrap().f1;
    DeskRun {
        easy_f1: f1[0],
        hard_f1: f1[1],
        random_f1,
        on_truth: on,
        off_truth: off,
        train_secs,
        vad_accuracy: correct as f64 / frames as f64,
        worst_row_sum,
    }
}

fn localization_study(run: &DeskRun) -> Outcome {
    let pass = run.easy_f1 >= run.random_f1 + 15.0
        && run.easy_f1 > run.hard_f1
        && run.hard_f1 > run.random_f1
        && run.train_secs <= 1800.0;
    outcome(
        pass,
        format!(
            "F1 easy {:.1}, hard {:.1}, random {:.1}; mean weight on/off truth {:.3}/{:.3}; {} scenarios, {} steps, {:.0} s",
            run.easy_f1, run.hard_f1, run.random_f1, run.on_truth, run.off_truth, DESK_TRAIN, DESK_STEPS, run.train_secs
        ),
    )
}

fn training_smoke(run: &DeskRun) -> Outcome {
    outcome(
        run.vad_accuracy > 0.9 && run.worst_row_sum <= 1e-9,
        format!(
            "held-out VAD frame accuracy {:.1}%, max |row sum - 1| {:.1e}",
            100.0 * run.vad_accuracy,
            run.worst_row_sum
        ),
    )
}

fn files_under(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn seeded_run(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let overrides: Vec<String> = ["seed=5", "train.batch_size=2", "train.max_steps=20", "scenario.duration=3.0"]
        .map(String::from)
        .into();
    let cfg = PipelineConfig::from_toml_with("", &overrides).unwrap();
    let bank = cmd_design(&cfg, &root.join("design")).unwrap();
    let manifest = cmd_simulate(&cfg, 3, &root.join("sim"), 2).unwrap();
    let trained = cmd_train(&cfg, &manifest, &bank, None, &root.join("train"), 2).unwrap();
    assert_eq!(trained.losses.len(), 20);
    let mut wavs: Vec<PathBuf> = std::fs::read_dir(root.join("sim"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "wav"))
        .collect();
    wavs.sort();
    cmd_infer(&cfg, &trained.checkpoint, None, &wavs, &root.join("infer"), 2).unwrap();
    files_under(root)
}

fn determinism() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (fa, fb) = (seeded_run(a.path()), seeded_run(b.path()));
    let differing: Vec<String> = fa
        .keys()
        .chain(fb.keys())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .filter(|k| fa.get(*k) != fb.get(*k))
        .map(|k| k.display().to_string())
        .collect();
    outcome(
        differing.is_empty(),
        if differing.is_empty() {
            format!("{} artifacts byte-identical across runs", fa.len())
        } else {
            format!("differing artifacts: {differing:?}")
        },
    )
}

fn main() {
    let mut failed = 0;
    let mut report = |name: &str, o: Outcome| {
        println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    };
    report("distortionless constraint", distortionless());
    report("identity-covariance reduction", identity_covariance());
    report("gradient suite", gradients());
    report("STFT oracle", stft_oracle());
    report("metric oracles", metric_oracles());
    report("random baseline", random_baseline_check());
    report("determinism", determinism());
    let run = desk_run();
    report("desk-scale localization", localization_study(&run));
    report("training smoke", training_smoke(&run));
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
