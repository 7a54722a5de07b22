//! Design the default 8-beam super-directive bank for an 8-mic, 10 cm UCA,
//! check the distortionless constraint and write the bank to disk.
//!
//! cargo run --release --example design_filterbank -- [out.json]

use asobo::array::{design_filterbank, steering_vector, ArrayGeometry};
use asobo::dsp::StftConfig;

fn main() -> asobo::Result<()> {
    let geom = ArrayGeometry::uniform_circular(8, 0.1)?;
    let freqs = StftConfig::default().bin_freqs();
    let bank = design_filterbank(&geom, 8, &freqs, 1e-3)?;

    let mut worst: f64 = 0.0;
    for (p, &theta) in bank.steer_angles().iter().enumerate() {
        for (f, &hz) in freqs.iter().enumerate() {
            let v = steering_vector(&geom, theta, hz);
            let w = bank.weights().slice(ndarray::s![p, f, ..]);
            let r: num_complex::Complex64 = w.iter().zip(&v).map(|(w, v)| w.conj() * v).sum();
            worst = worst.max((r - 1.0).norm());
        }
    }
    println!(
        "{} filters x {} bins x {} mics; max |w^H v - 1| = {worst:.2e}",
        bank.filter_count(),
        freqs.len(),
        geom.mic_count()
    );
    let steer: Vec<String> = bank.steer_angles().iter().map(|a| format!("{:.0}", a.to_degrees())).collect();
    println!("steering angles (deg): {}", steer.join(" "));

    if let Some(path) = std::env::args().nth(1) {
        bank.save(path.as_ref(), None)?;
        println!("wrote {path}");
    }
    Ok(())
}
