use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dds_sim::cli::{self, CliError, DEFAULT_SWEEP};
use dds_sim::{ModeSelection, ScenarioConfig};

#[derive(Parser)]
#[command(
    name = "dds-sim",
    version,
    about = "Distributed zero-day diagnosis simulator"
)]
struct Args {
    /// Scenario file in key=value form.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// centralized, distributed or both.
    #[arg(long, global = true)]
    mode: Option<ModeSelection>,
    #[arg(long, global = true)]
    devices: Option<usize>,
    #[arg(long, global = true, env = "DDS_SIM_OUT", default_value = "out")]
    out: PathBuf,
    /// Also write the run transcript(s).
    #[arg(long, global = true)]
    transcript: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the selected mode(s) once.
    Run,
    /// Run both modes on the same scenario and report the reductions.
    Compare,
    /// Vary the device count.
    Sweep {
        /// Comma-separated device counts.
        #[arg(long, value_delimiter = ',')]
        points: Option<Vec<usize>>,
    },
}

fn config(args: &Args) -> Result<ScenarioConfig, CliError> {
    let mut cfg = match &args.config {
        Some(p) => ScenarioConfig::load(p)?,
        None => ScenarioConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(m) = args.mode {
        cfg.mode = m;
    }
    if let Some(n) = args.devices {
        cfg.devices = n;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let args = Args::parse();
    let result = config(&args).and_then(|cfg| match &args.command {
        Command::Run => cli::cmd_run(&cfg, &args.out, args.transcript).map(|rows| {
            for m in rows {
                println!(
                    "{}: cost {} ms total, {:.3} ms mean, {} msgs, {} bytes",
                    m.mode,
                    m.cost.total_ms,
                    m.cost.mean_per_decision_ms,
                    m.overhead.messages,
                    m.overhead.bytes
                );
            }
        }),
        Command::Compare => cli::cmd_compare(&cfg, &args.out, args.transcript).map(|d| {
            println!("cost_reduction_pct={:.2}", d.cost_reduction_pct);
            println!("overhead_reduction_pct={:.2}", d.overhead_reduction_pct);
        }),
        Command::Sweep { points } => {
            let points = points.clone().unwrap_or_else(|| DEFAULT_SWEEP.to_vec());
            cli::cmd_sweep(&cfg, &points, &args.out, args.transcript)
                .map(|rows| println!("{} rows written", rows.len()))
        }
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dds-sim: {e}");
            ExitCode::FAILURE
        }
    }
}
