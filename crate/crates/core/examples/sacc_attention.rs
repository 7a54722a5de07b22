//! Forward pass of the attention combinator on the beam powers of a single
//! talker, showing per-frame combination weights and their time average.
//! The projections are untrained, so the weights are near uniform; see
//! `localization_study` for trained behaviour.
//!
//! cargo run --release --example sacc_attention

use asobo::config::PipelineConfig;
use asobo::eval::localize;
use asobo::model::FrontEnd;
use asobo::sacc::{sacc_forward, SaccParams};
use asobo::simulate::{generate_scenario, scenario_rng};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> asobo::Result<()> {
    let cfg = PipelineConfig::from_toml_with("", &["scenario.sources=1".into(), "room.t60=0.3".into()])?;
    let front = FrontEnd::new(cfg.design_bank()?, cfg.stft_config())?;
    let scn = generate_scenario(&cfg.scenario_spec(), &cfg.room()?, &mut scenario_rng(cfg.seed, 0))?;
    let y = front.beam_power(&scn.wave)?;
    let (t, p, f) = y.dim();
    println!("beam powers: {t} frames x {p} beams x {f} bins; talker at beam {:?}", scn.true_filter_indices);

    let params = SaccParams::init(f, cfg.model.hidden, &mut ChaCha8Rng::seed_from_u64(0));
    let out = sacc_forward(y.view(), &params)?;
    let w = out.weights.combination_weights();
    for ti in (0..t).step_by(t / 6) {
        let row: Vec<String> = w.row(ti).iter().map(|v| format!("{v:.3}")).collect();
        println!("  frame {ti:4}: {}", row.join(" "));
    }
    let d = localize(w.view(), cfg.tau())?;
    let mean: Vec<String> = d.mean_weights.iter().map(|v| format!("{v:.3}")).collect();
    println!("time-averaged: {}  (selected at tau {:.2}: {:?})", mean.join(" "), d.threshold, d.selected);
    println!("combined spectrogram: {:?}", out.combined.dim());
    Ok(())
}
