//! Second-speaker assignment for detected overlaps: each overlap gets the
//! speaker, not already active there, whose speech lies closest in time.
//!
//! cargo run --release --example overlap_assignment

use asobo::eval::{assign_overlap, OverlapOutcome};
use asobo::segments::Segment;

fn main() {
    let diarization = vec![
        Segment::new("alice", 0.0, 4.0),
        Segment::new("bob", 5.0, 8.0),
        Segment::new("carol", 9.5, 12.0),
        Segment::new("alice", 12.5, 15.0),
    ];
    let overlaps = vec![
        Segment::new("overlap", 3.2, 3.9),
        Segment::new("overlap", 7.5, 8.0),
        Segment::new("overlap", 13.0, 13.4),
    ];
    let res = assign_overlap(&diarization, &overlaps);
    for (ov, outcome) in overlaps.iter().zip(&res.outcomes) {
        let what = match outcome {
            OverlapOutcome::Assigned { speaker } => format!("adds {speaker}"),
            OverlapOutcome::TooFewSpeakers => "fewer than two speakers".into(),
            OverlapOutcome::NoCandidate => "no free speaker".into(),
        };
        println!("overlap {:.1}-{:.1} s: {what}", ov.onset, ov.offset());
    }
    println!("{} segments after assignment", res.segments.len());
}
