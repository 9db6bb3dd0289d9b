//! Device-count sweep written to a CSV file, the same one `dds-sim sweep`
//! produces.
//!
//! cargo run --release --example sweep [out-dir]

use std::path::PathBuf;

use dds_sim::cli::{cmd_sweep, DEFAULT_SWEEP};
use dds_sim::{Mode, ScenarioConfig};

fn main() {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "out".into()));
    let rows = cmd_sweep(&ScenarioConfig::default(), &DEFAULT_SWEEP, &dir, false).unwrap();
    for pair in rows.chunks(2) {
        let (c, d) = (&pair[0], &pair[1]);
        assert_eq!(c.mode, Mode::Centralized);
        println!(
            "{:>4} devices: cost {:>8} vs {:>8} ms, bytes {:>9} vs {:>9}",
            c.devices, c.cost.total_ms, d.cost.total_ms, c.overhead.bytes, d.overhead.bytes
        );
    }
    println!("wrote {}", dir.join("sweep.csv").display());
}
