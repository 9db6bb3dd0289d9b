//! Runs the default 500-device scenario in both modes and prints the
//! headline metrics side by side.
//!
//! cargo run --release --example compare_modes [seed]

use dds_sim::sim::Scenario;
use dds_sim::{compare_modes, Mode, ScenarioConfig};

fn main() {
    let seed = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(42);
    let cfg = ScenarioConfig {
        seed,
        ..ScenarioConfig::default()
    };
    let scenario = Scenario::build(&cfg).unwrap();
    let c = scenario.run(Mode::Centralized).metrics;
    let d = scenario.run(Mode::Distributed).metrics;
    println!(
        "{:<12} {:>12} {:>10} {:>8} {:>10} {:>6}",
        "mode", "cost ms", "mean ms", "msgs", "bytes", "flagged"
    );
    for m in [&c, &d] {
        println!(
            "{:<12} {:>12} {:>10.3} {:>8} {:>10} {:>6}",
            m.mode,
            m.cost.total_ms,
            m.cost.mean_per_decision_ms,
            m.overhead.messages,
            m.overhead.bytes,
            m.detections.true_detections
        );
    }
    let r = compare_modes(&c, &d);
    println!(
        "cost reduction {:.2}%, overhead reduction {:.2}%",
        r.cost_reduction_pct, r.overhead_reduction_pct
    );
}
