//! Desk-scale pseudo-localization study: train the SACC+TCN stack on
//! simulated two-talker rooms, then threshold the time-averaged attention
//! weights on held-out easy and hard scenarios.
//!
//! cargo run --release --example localization_study -- [train] [test] [steps] [batch]

use std::time::Instant;

use asobo::config::PipelineConfig;
use asobo::eval::{localization_metrics, localize, random_baseline, truth_indices};
use asobo::model::{infer, AsoboModel, FrontEnd, TrainSample, Trainer, TrainerConfig};
use asobo::simulate::{generate_scenario, scenario_rng, ScenarioMode};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> asobo::Result<()> {
    let args: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let n_train = args.first().copied().unwrap_or(200);
    let n_test = args.get(1).copied().unwrap_or(50);
    let steps = args.get(2).copied().unwrap_or(300);
    let batch = args.get(3).copied().unwrap_or(8);

    // extra key=value overrides, comma separated, e.g. ASOBO_SET=scenario.snr_db=0
    let mut overrides = vec!["room.t60=0.3".to_string(), "scenario.snr_db=10.0".to_string()];
    if let Ok(extra) = std::env::var("ASOBO_SET") {
        overrides.extend(extra.split(',').filter(|s| !s.is_empty()).map(str::to_owned));
    }
    let cfg = PipelineConfig::from_toml_with("", &overrides)?;
    let room = cfg.room()?;
    let front = FrontEnd::new(cfg.design_bank()?, cfg.stft_config())?;

    let t0 = Instant::now();
    let mut train = Vec::with_capacity(n_train);
    for i in 0..n_train {
        let mut spec = cfg.scenario_spec();
        spec.mode = if i % 2 == 0 { ScenarioMode::Easy } else { ScenarioMode::Hard };
        let scn = generate_scenario(&spec, &room, &mut scenario_rng(cfg.seed, i as u64))?;
        train.push(TrainSample::new(&front.beam_power(&scn.wave)?, scn.labels)?);
    }
    println!("simulated {n_train} training scenarios in {:.1} s", t0.elapsed().as_secs_f64());

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let model = AsoboModel::init(front.stft_config().bins(), cfg.model.hidden, cfg.tcn_config(), &mut rng)?;
    let tc = TrainerConfig {
        batch_size: batch,
        segment_frames: cfg.segment_frames(),
        adam: cfg.adam(),
    };
    let mut trainer = Trainer::new(model, tc, cfg.seed);
    let t1 = Instant::now();
    for s in 0..steps {
        let loss = trainer.step(&train, front.mel())?;
        if s % 25 == 0 || s + 1 == steps {
            println!("step {s:4}  loss {loss:.4}  ({:.1} s)", t1.elapsed().as_secs_f64());
        }
    }

    let tau = cfg.tau();
    for mode in [ScenarioMode::Easy, ScenarioMode::Hard] {
        let mut decisions = Vec::new();
        let mut truths = Vec::new();
        let (mut on, mut off) = (0.0, 0.0);
        for i in 0..n_test {
            let mut spec = cfg.scenario_spec();
            spec.mode = mode;
            let idx = 1_000_000 + i as u64;
            let scn = generate_scenario(&spec, &room, &mut scenario_rng(cfg.seed, idx))?;
            let y = front.beam_power(&scn.wave)?;
            let out = infer(y.view(), front.mel(), &trainer.model, cfg.window_frames(), cfg.hop_frames())?;
            let d = localize(out.weights.view(), tau)?;
            if i < 3 {
                let w: Vec<String> = d.mean_weights.iter().map(|w| format!("{w:.3}")).collect();
                println!("{mode:?} {i}: truth {:?} selected {:?} w̄ [{}]", scn.true_filter_indices, d.selected, w.join(" "));
            }
            let truth = truth_indices(&scn.true_angles, cfg.array.filters);
            for (p, w) in d.mean_weights.iter().enumerate() {
                if truth.contains(&p) {
                    on += w / truth.len() as f64;
                } else {
                    off += w / (cfg.array.filters - truth.len()) as f64;
                }
            }
            decisions.push(d.selected);
            truths.push(truth);
        }
        let score = localization_metrics(&decisions, &truths, cfg.array.filters)?;
        println!(
            "{mode:?}: F1 {:.1} (P {:.1}, R {:.1}); selected-class F1 {:.1}; mean weight on/off truth {:.3}/{:.3}",
            score.f1,
            score.precision,
            score.recall,
            score.positive.f1,
            on / n_test as f64,
            off / n_test as f64
        );
    }
    let random = random_baseline(10_000, 2, cfg.array.filters, &mut rng)?;
    println!("random: F1 {:.1}", random.f1);
    Ok(())
}
