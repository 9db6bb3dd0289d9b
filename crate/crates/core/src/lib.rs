//! Deterministic simulator of distributed zero-day diagnosis in IoT fleets.
//!
//! Devices share a six-field strategic context every diagnosis period. A
//! central diagnosis system (CDS), optionally helped by local (LDS) and semi
//! (SDS) diagnosis nodes, turns each report into a context graph and flags a
//! device whenever any view disagrees with the registered model. Flagged
//! devices go through alarm, patch and revalidation before they are either
//! re-registered or eliminated.
//!
//! ```
//! use dds_sim::{config::ScenarioConfig, sim, config::Mode};
//!
//! let cfg = ScenarioConfig { devices: 20, ..ScenarioConfig::default() };
//! let out = sim::run(&cfg, Mode::Distributed).unwrap();
//! assert!(out.violations().is_empty());
//! assert_eq!(out.metrics.detections.false_positives, 0);
//! ```

pub mod cli;
pub mod config;
pub mod context;
pub mod detection;
pub mod metrics;
pub mod protocol;
pub mod roles;
pub mod sim;
pub mod transcript;

mod rng;

pub use config::{Mode, ModeSelection, ScenarioConfig};
pub use metrics::{compare_modes, ModeDeltas, RunMetrics};
pub use sim::{run, RunOutput, Scenario};
