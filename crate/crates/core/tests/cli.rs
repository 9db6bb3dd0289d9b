use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use dds_sim::cli::CSV_HEADER;
use dds_sim::metrics::RunMetrics;
use dds_sim::transcript::Transcript;

fn dds_sim(out: &Path, args: &[&str]) -> Output {
    let output = Command::new(env!("CARGO_BIN_EXE_dds-sim"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("DDS_SIM_OUT")
        .output()
        .unwrap();
    assert!(
        output.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    output
}

#[test]
fn compare_prints_reductions_and_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dds_sim(dir.path(), &["compare"]);
    let stdout = String::from_utf8(out.stdout).unwrap();
    let pct: Vec<f64> = stdout
        .lines()
        .map(|l| l.split_once('=').unwrap().1.parse().unwrap())
        .collect();
    assert_eq!(pct.len(), 2, "{stdout}");
    assert!(stdout.starts_with("cost_reduction_pct="));
    assert!(pct.iter().all(|p| *p > 0.0));

    let csv = fs::read_to_string(dir.path().join("compare.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], CSV_HEADER.join(","));
    assert!(lines[1].starts_with("centralized,500,42,"));
    assert!(lines[2].starts_with("distributed,500,42,"));
    assert_eq!(lines.len(), 3);
    assert!(dir.path().join("deltas.csv").exists());
}

#[test]
fn default_sweep_writes_twenty_rows() {
    let dir = tempfile::tempdir().unwrap();
    dds_sim(dir.path(), &["sweep"]);
    let csv = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let rows: Vec<Vec<&str>> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').collect())
        .collect();
    assert_eq!(rows.len(), 20);
    for (i, pair) in rows.chunks(2).enumerate() {
        let n = (50 * (i + 1)).to_string();
        assert_eq!((pair[0][0], pair[0][1]), ("centralized", n.as_str()));
        assert_eq!((pair[1][0], pair[1][1]), ("distributed", n.as_str()));
    }
}

#[test]
fn same_seed_gives_identical_csv() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    dds_sim(a.path(), &["run", "--seed", "7"]);
    dds_sim(b.path(), &["run", "--seed", "7"]);
    let read = |d: &Path| fs::read(d.join("run.csv")).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
    assert_eq!(
        String::from_utf8(read(a.path())).unwrap().lines().count(),
        3
    );
}

#[test]
fn transcripts_rescore_to_the_csv_row() {
    let dir = tempfile::tempdir().unwrap();
    dds_sim(
        dir.path(),
        &[
            "run",
            "--mode",
            "distributed",
            "--devices",
            "60",
            "--transcript",
        ],
    );
    let text = fs::read_to_string(dir.path().join("transcript-distributed.tsv")).unwrap();
    let m = RunMetrics::from_transcript(&Transcript::parse(&text).unwrap());
    let csv = fs::read_to_string(dir.path().join("run.csv")).unwrap();
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[0], "distributed");
    assert_eq!(row[3].parse::<u64>().unwrap(), m.cost.total_ms);
    assert_eq!(row[6].parse::<u64>().unwrap(), m.overhead.bytes);
}

#[test]
fn config_file_and_bad_values() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.cfg");
    fs::write(&cfg, "# tiny fleet\ndevices = 12\nmode = centralized\n").unwrap();
    dds_sim(dir.path(), &["run", "--config", cfg.to_str().unwrap()]);
    let csv = fs::read_to_string(dir.path().join("run.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert!(csv.lines().nth(1).unwrap().starts_with("centralized,12,"));

    fs::write(&cfg, "attacker_fraction=1.5\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_dds-sim"))
        .args(["run", "--config", cfg.to_str().unwrap(), "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("attacker_fraction"));
}
