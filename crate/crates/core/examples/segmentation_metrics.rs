//! Frame-level VAD and OSD scores from a 3-class posterior track, with the
//! decision thresholds applied.
//!
//! cargo run --release --example segmentation_metrics

use asobo::classifier::{derive_vad_osd, FramePosteriors, LabelSequence};
use asobo::eval::{osd_metrics, vad_metrics};
use ndarray::Array2;

fn main() -> asobo::Result<()> {
    // reference: silence, one talker, overlap, one talker, silence
    let reference = LabelSequence::new([vec![0; 20], vec![1; 30], vec![2; 15], vec![1; 25], vec![0; 10]].concat())?;
    // a detector that is late on onsets and short on overlap
    let mut probs = Array2::zeros((reference.len(), 3));
    for (t, &l) in reference.as_slice().iter().enumerate() {
        let guess = match (l, t) {
            (1, 20..=23) => 0,
            (2, 50..=54) => 1,
            (0, 90..=92) => 1,
            _ => l,
        };
        probs[[t, guess as usize]] = 0.8;
        for c in 0..3 {
            if c != guess as usize {
                probs[[t, c]] = 0.1;
            }
        }
    }
    let post = FramePosteriors { probs };
    let (vad, osd) = derive_vad_osd(&post, 0.5, 0.5)?;
    let v = vad_metrics(&vad, &reference.speech())?;
    let o = osd_metrics(&osd, &reference.overlap())?;
    let pct = |x: Option<f64>| x.map_or("n/a".to_string(), |x| format!("{x:.2}"));
    println!("VAD: FA {} %  Miss {} %  SER {} %", pct(v.fa_rate), pct(v.miss_rate), pct(v.ser));
    println!("OSD: P {}  R {}  F1 {:.2}", pct(o.precision), pct(o.recall), o.f1);
    Ok(())
}
