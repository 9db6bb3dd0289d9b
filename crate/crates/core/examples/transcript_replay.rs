//! Persists a run transcript, reads it back and re-scores it.
//!
//! cargo run --example transcript_replay

use dds_sim::metrics::RunMetrics;
use dds_sim::transcript::Transcript;
use dds_sim::{sim, Mode, ScenarioConfig};

fn main() {
    let cfg = ScenarioConfig {
        devices: 40,
        ..ScenarioConfig::default()
    };
    let out = sim::run(&cfg, Mode::Centralized).unwrap();
    let text = out.transcript.to_text();
    let path = std::env::temp_dir().join("dds-sim-transcript.tsv");
    std::fs::write(&path, &text).unwrap();
    println!(
        "{} entries, {} bytes -> {}",
        out.transcript.entries.len(),
        text.len(),
        path.display()
    );
    for line in text.lines().take(8) {
        println!("  {line}");
    }

    let back = Transcript::parse(&std::fs::read_to_string(&path).unwrap()).unwrap();
    let rescored = RunMetrics::from_transcript(&back);
    assert_eq!(rescored, out.metrics);
    println!(
        "re-scored: {} decisions, {} ms, {} msgs, {} rounds",
        rescored.cost.decisions,
        rescored.cost.total_ms,
        rescored.overhead.messages,
        rescored.rounds.opened
    );
}
