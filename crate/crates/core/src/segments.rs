//! Time segments, RTTM-style label files and conversion between segments
//! and frame tracks.

use serde::{Deserialize, Serialize};

use crate::dsp::StftConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub speaker: String,
    pub onset: f64,
    pub duration: f64,
}

impl Segment {
    pub fn new(speaker: impl Into<String>, onset: f64, offset: f64) -> Self {
        Segment {
            speaker: speaker.into(),
            onset,
            duration: offset - onset,
        }
    }

    pub fn offset(&self) -> f64 {
        self.onset + self.duration
    }

    pub fn contains(&self, t: f64) -> bool {
        self.onset <= t && t < self.offset()
    }
}

/// One `SPEAKER` line per segment. `comment` lines are emitted first,
/// prefixed with `;;`.
pub fn write_rttm(file_id: &str, segments: &[Segment], comments: &[String]) -> String {
    let mut out = String::new();
    for c in comments {
        out.push_str(";; ");
        out.push_str(c);
        out.push('\n');
    }
    for s in segments {
        out.push_str(&format!(
            "SPEAKER {file_id} 1 {:.3} {:.3} <NA> <NA> {} <NA> <NA>\n",
            s.onset, s.duration, s.speaker
        ));
    }
    out
}

/// Parsed RTTM content: `(file id, segment)` pairs and the `;;` comments.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Rttm {
    pub comments: Vec<String>,
    pub records: Vec<(String, Segment)>,
}

impl Rttm {
    pub fn segments(&self) -> Vec<Segment> {
        self.records.iter().map(|(_, s)| s.clone()).collect()
    }

    /// Value of a `key=value` comment, if present.
    pub fn comment_value(&self, key: &str) -> Option<&str> {
        self.comments
            .iter()
            .find_map(|c| c.strip_prefix(key)?.strip_prefix('='))
    }
}

pub fn parse_rttm(text: &str) -> Result<Rttm> {
    let mut rttm = Rttm::default();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(c) = line.strip_prefix(";;").or_else(|| line.strip_prefix('#')) {
            rttm.comments.push(c.trim().to_owned());
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        let bad = || Error::InvalidInput(format!("malformed RTTM line {}: {line}", n + 1));
        if f.len() < 8 || f[0] != "SPEAKER" {
            return Err(bad());
        }
        let onset: f64 = f[3].parse().map_err(|_| bad())?;
        let duration: f64 = f[4].parse().map_err(|_| bad())?;
        if !(onset >= 0.0 && duration >= 0.0) {
            return Err(bad());
        }
        rttm.records.push((
            f[1].to_owned(),
            Segment {
                speaker: f[7].to_owned(),
                onset,
                duration,
            },
        ));
    }
    Ok(rttm)
}

/// Number of segments active at each frame's center time.
pub fn center_counts(segments: &[Segment], stft: &StftConfig, frames: usize) -> Vec<usize> {
    (0..frames)
        .map(|t| {
            let c = stft.frame_center(t);
            segments.iter().filter(|s| s.contains(c)).count()
        })
        .collect()
}

/// Per-frame count of distinct speakers active at the frame center.
pub fn speaker_counts(segments: &[Segment], stft: &StftConfig, frames: usize) -> Vec<usize> {
    let mut speakers: Vec<&str> = segments.iter().map(|s| s.speaker.as_str()).collect();
    speakers.sort_unstable();
    speakers.dedup();
    (0..frames)
        .map(|t| {
            let c = stft.frame_center(t);
            speakers
                .iter()
                .filter(|sp| segments.iter().any(|s| s.speaker == **sp && s.contains(c)))
                .count()
        })
        .collect()
}

/// Runs of `true` frames as segments. Frame `t` covers half a hop either
/// side of its center, so [`center_counts`] recovers the track exactly.
pub fn track_to_segments(track: &[bool], stft: &StftConfig, label: &str) -> Vec<Segment> {
    let half = stft.hop_seconds() / 2.0;
    let mut out = Vec::new();
    let mut t = 0;
    while t < track.len() {
        if !track[t] {
            t += 1;
            continue;
        }
        let start = t;
        while t < track.len() && track[t] {
            t += 1;
        }
        out.push(Segment::new(
            label,
            stft.frame_center(start) - half,
            stft.frame_center(t - 1) + half,
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rttm_round_trip() {
        let segs = vec![Segment::new("spk0", 0.5, 1.25), Segment::new("spk1", 1.0, 3.0)];
        let text = write_rttm("mix_001", &segs, &["config_hash=abc".into()]);
        assert!(text.contains("SPEAKER mix_001 1 0.500 0.750 <NA> <NA> spk0 <NA> <NA>"));
        let back = parse_rttm(&text).unwrap();
        assert_eq!(back.comment_value("config_hash"), Some("abc"));
        assert_eq!(back.segments(), segs);
        assert!(parse_rttm("SPEAKER x 1 a b <NA> <NA> s").is_err());
        assert!(parse_rttm("NOISE x 1 0 1 <NA> <NA> s").is_err());
    }

    #[test]
    fn counts_use_frame_centers() {
        let stft = StftConfig::default();
        // frame centers are 12.5 ms + 10 ms·t
        let segs = vec![Segment::new("a", 0.0, 0.03), Segment::new("b", 0.02, 0.05)];
        assert_eq!(center_counts(&segs, &stft, 5), vec![1, 2, 1, 1, 0]);
        let same_speaker = vec![Segment::new("a", 0.0, 0.03), Segment::new("a", 0.02, 0.05)];
        assert_eq!(speaker_counts(&same_speaker, &stft, 5), vec![1, 1, 1, 1, 0]);
    }

    proptest! {
        #[test]
        fn track_round_trips_through_segments(track in proptest::collection::vec(any::<bool>(), 0..200)) {
            let stft = StftConfig::default();
            let segs = track_to_segments(&track, &stft, "speech");
            let back: Vec<bool> = center_counts(&segs, &stft, track.len()).iter().map(|&c| c > 0).collect();
            prop_assert_eq!(back, track);
        }
    }
}
