//! Batch commands behind the `dds-sim` binary. Each writes plot-ready CSV
//! into an output directory and returns what it wrote.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ConfigError, Mode, ScenarioConfig};
use crate::metrics::{compare_modes, ModeDeltas, RunMetrics};
use crate::sim::{RunOutput, Scenario, SimError};

/// Column order of every metrics CSV. Never reordered.
pub const CSV_HEADER: [&str; 12] = [
    "mode",
    "devices",
    "seed",
    "cost_total_ms",
    "cost_mean_ms",
    "msgs",
    "bytes",
    "detected",
    "missed",
    "false_pos",
    "re_registered",
    "eliminated",
];

pub const DEFAULT_SWEEP: [usize; 10] = [50, 100, 150, 200, 250, 300, 350, 400, 450, 500];

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("{mode} run with {devices} devices broke invariants: {}", .violations.join("; "))]
    Invariant {
        mode: Mode,
        devices: usize,
        violations: Vec<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CsvRow {
    pub mode: &'static str,
    pub devices: usize,
    pub seed: u64,
    pub cost_total_ms: u64,
    pub cost_mean_ms: String,
    pub msgs: u64,
    pub bytes: u64,
    pub detected: u64,
    pub missed: u64,
    pub false_pos: u64,
    pub re_registered: u64,
    pub eliminated: u64,
}

impl From<&RunMetrics> for CsvRow {
    fn from(m: &RunMetrics) -> Self {
        CsvRow {
            mode: m.mode.as_str(),
            devices: m.devices,
            seed: m.seed,
            cost_total_ms: m.cost.total_ms,
            // Fixed precision keeps the file byte-stable across platforms.
            cost_mean_ms: format!("{:.3}", m.cost.mean_per_decision_ms),
            msgs: m.overhead.messages,
            bytes: m.overhead.bytes,
            detected: m.detections.true_detections,
            missed: m.detections.missed,
            false_pos: m.detections.false_positives,
            re_registered: m.rounds.re_registered,
            eliminated: m.rounds.eliminated,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn write_csv(path: &Path, metrics: &[RunMetrics]) -> Result<(), CliError> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)?;
    w.write_record(CSV_HEADER)?;
    for m in metrics {
        w.serialize(CsvRow::from(m))?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

fn checked(out: RunOutput) -> Result<RunOutput, CliError> {
    let violations = out.violations();
    if violations.is_empty() {
        Ok(out)
    } else {
        Err(CliError::Invariant {
            mode: out.metrics.mode,
            devices: out.metrics.devices,
            violations,
        })
    }
}

fn save_transcript(dir: &Path, name: &str, out: &RunOutput) -> Result<PathBuf, CliError> {
    let path = dir.join(name);
    fs::write(&path, out.transcript.to_text()).map_err(io_err(&path))?;
    Ok(path)
}

/// Runs every mode selected by `config.mode` and writes `run.csv`, one row
/// per mode, plus `transcript-<mode>.tsv` when asked.
pub fn cmd_run(
    config: &ScenarioConfig,
    out_dir: &Path,
    transcript: bool,
) -> Result<Vec<RunMetrics>, CliError> {
    ensure_dir(out_dir)?;
    let scenario = Scenario::build(config)?;
    let mut rows = Vec::new();
    for mode in config.mode.modes() {
        let out = checked(scenario.run(*mode))?;
        if transcript {
            save_transcript(out_dir, &format!("transcript-{mode}.tsv"), &out)?;
        }
        rows.push(out.metrics);
    }
    write_csv(&out_dir.join("run.csv"), &rows)?;
    Ok(rows)
}

/// Runs both modes on one scenario, writes `compare.csv` (centralized row
/// first) and `deltas.csv`, and returns the reductions.
pub fn cmd_compare(
    config: &ScenarioConfig,
    out_dir: &Path,
    transcript: bool,
) -> Result<ModeDeltas, CliError> {
    ensure_dir(out_dir)?;
    let scenario = Scenario::build(config)?;
    let outs: Vec<RunOutput> = [Mode::Centralized, Mode::Distributed]
        .par_iter()
        .map(|m| checked(scenario.run(*m)))
        .collect::<Result<_, _>>()?;
    if transcript {
        for out in &outs {
            save_transcript(
                out_dir,
                &format!("transcript-{}.tsv", out.metrics.mode),
                out,
            )?;
        }
    }
    let rows: Vec<RunMetrics> = outs.into_iter().map(|o| o.metrics).collect();
    write_csv(&out_dir.join("compare.csv"), &rows)?;
    let deltas = compare_modes(&rows[0], &rows[1]);
    let path = out_dir.join("deltas.csv");
    let text = format!(
        "cost_reduction_pct,overhead_reduction_pct,mean_cost_reduction_pct,message_reduction_pct\n\
         {:.3},{:.3},{:.3},{:.3}\n",
        deltas.cost_reduction_pct,
        deltas.overhead_reduction_pct,
        deltas.mean_cost_reduction_pct,
        deltas.message_reduction_pct
    );
    fs::write(&path, text).map_err(io_err(&path))?;
    Ok(deltas)
}

/// Runs each device count in `points` under every selected mode, in
/// parallel, and writes `sweep.csv` sorted by device count then mode.
pub fn cmd_sweep(
    config: &ScenarioConfig,
    points: &[usize],
    out_dir: &Path,
    transcript: bool,
) -> Result<Vec<RunMetrics>, CliError> {
    ensure_dir(out_dir)?;
    let jobs: Vec<(usize, Mode)> = points
        .iter()
        .flat_map(|n| config.mode.modes().iter().map(move |m| (*n, *m)))
        .collect();
    let mut rows: Vec<RunMetrics> = jobs
        .par_iter()
        .map(|(n, mode)| {
            let cfg = ScenarioConfig {
                devices: *n,
                ..config.clone()
            };
            let out = checked(Scenario::build(&cfg)?.run(*mode))?;
            if transcript {
                save_transcript(out_dir, &format!("transcript-{mode}-{n}.tsv"), &out)?;
            }
            Ok(out.metrics)
        })
        .collect::<Result<_, CliError>>()?;
    rows.sort_by_key(|m| (m.devices, m.mode.is_distributed()));
    write_csv(&out_dir.join("sweep.csv"), &rows)?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_matches_row_fields() {
        let m = crate::sim::run(
            &ScenarioConfig {
                devices: 4,
                duration_ms: 20_000,
                ..ScenarioConfig::default()
            },
            Mode::Distributed,
        )
        .unwrap()
        .metrics;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.csv");
        write_csv(&path, &[m]).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), CSV_HEADER.join(","));
        let row = lines.next().unwrap();
        assert_eq!(row.split(',').count(), CSV_HEADER.len());
        assert!(row.starts_with("distributed,4,42,"));
    }
}
