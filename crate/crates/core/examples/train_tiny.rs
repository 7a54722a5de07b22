//! End-to-end training on a handful of simulated rooms with a small model,
//! then VAD accuracy on held-out rooms.
//!
//! cargo run --release --example train_tiny -- [steps]

use asobo::classifier::{derive_vad_osd, frame_accuracy};
use asobo::config::PipelineConfig;
use asobo::model::{infer, AsoboModel, FrontEnd, TrainSample, Trainer, TrainerConfig};
use asobo::simulate::{generate_scenario, scenario_rng};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> asobo::Result<()> {
    let steps: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(60);
    let cfg = PipelineConfig::from_toml_with(
        "",
        &[
            "room.t60=0.3".into(),
            "scenario.snr_db=10.0".into(),
            "model.hidden=32".into(),
            "model.tcn_hidden=16".into(),
        ],
    )?;
    let room = cfg.room()?;
    let front = FrontEnd::new(cfg.design_bank()?, cfg.stft_config())?;
    let scenario = |i: u64| generate_scenario(&cfg.scenario_spec(), &room, &mut scenario_rng(cfg.seed, i));

    let mut train = Vec::new();
    for i in 0..8 {
        let s = scenario(i)?;
        train.push(TrainSample::new(&front.beam_power(&s.wave)?, s.labels)?);
    }
    let model = AsoboModel::init(
        front.stft_config().bins(),
        cfg.model.hidden,
        cfg.tcn_config(),
        &mut ChaCha8Rng::seed_from_u64(cfg.seed),
    )?;
    let tc = TrainerConfig {
        batch_size: 4,
        segment_frames: cfg.segment_frames(),
        adam: cfg.adam(),
    };
    let mut trainer = Trainer::new(model, tc, cfg.seed);
    for s in 0..steps {
        let loss = trainer.step(&train, front.mel())?;
        if s % 10 == 0 || s + 1 == steps {
            println!("step {s:3}  loss {loss:.4}");
        }
    }

    for i in 100..103 {
        let s = scenario(i)?;
        let y = front.beam_power(&s.wave)?;
        let out = infer(y.view(), front.mel(), &trainer.model, cfg.window_frames(), cfg.hop_frames())?;
        let (vad, _) = derive_vad_osd(&out.posteriors, cfg.infer.vad_threshold, cfg.infer.osd_threshold)?;
        println!("held-out room {i}: VAD frame accuracy {:.3}", frame_accuracy(&vad, &s.labels.speech()));
    }
    Ok(())
}
