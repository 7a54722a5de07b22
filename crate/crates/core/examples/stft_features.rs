//! STFT and 64-band log-Mel features of a synthetic speech proxy on one
//! channel, with a per-band summary.
//!
//! cargo run --release --example stft_features

use asobo::dsp::{mel_project, power, MelFilterbank, MultichannelWave, Stft, StftConfig};
use asobo::simulate::synthetic_speech;
use ndarray::{Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> asobo::Result<()> {
    let sig = synthetic_speech(3.0, &mut ChaCha8Rng::seed_from_u64(7));
    let n = sig.samples.len();
    let wave = MultichannelWave::new(Array2::from_shape_vec((1, n), sig.samples).expect("one row"), 16_000)?;

    let cfg = StftConfig::default();
    let spec = Stft::new(cfg)?.analyze(&wave)?;
    println!(
        "{n} samples -> {} frames x {} bins (frame {} / hop {} / FFT {})",
        spec.frames(),
        cfg.bins(),
        cfg.frame_len,
        cfg.hop,
        cfg.fft_size
    );

    // [M, T, F] with M = 1
    let pow = power(&spec.bins).index_axis(Axis(0), 0).to_owned();
    let mel = MelFilterbank::standard(&cfg)?;
    let feats = mel_project(pow.view(), &mel)?;
    let mean = feats.frames.mean_axis(Axis(0)).expect("nonempty");
    println!("mean log-Mel energy per band:");
    for (b, chunk) in mean.as_slice().expect("contiguous").chunks(16).enumerate() {
        let row: Vec<String> = chunk.iter().map(|v| format!("{v:6.1}")).collect();
        println!("  bands {:2}-{:2}: {}", b * 16, b * 16 + 15, row.join(""));
    }
    let active = sig.activity.iter().map(|(s, e)| e - s).sum::<f64>();
    println!("speech proxy active for {active:.2} s of 3 s");
    Ok(())
}
