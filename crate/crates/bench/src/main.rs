use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sensibench::artifacts::RunData;
use sensibench::{score, BenchError, ExperimentConfig, Mode};

#[derive(Parser)]
#[command(name = "sensibench", version, about = "Measure how much faults shift a replicated ledger's latency distribution")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one experiment and write its run directory.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_parser = ["sim", "live-local"])]
        mode: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score an altered run against a baseline run.
    Score {
        #[arg(long)]
        baseline: PathBuf,
        #[arg(long)]
        altered: PathBuf,
        #[arg(long, default_value = "exact", value_parser = ["exact", "grid"])]
        mode: String,
        #[arg(long)]
        grid_step_ms: Option<f64>,
        #[arg(long)]
        common_support: bool,
    },
    /// Run every protocol against every fault preset.
    Suite {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Regenerate ecdf.csv and throughput.csv for a run directory.
    PlotData {
        #[arg(long)]
        run: PathBuf,
    },
}

fn main() -> ExitCode {
    match real_main(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn real_main(cli: Cli) -> Result<(), BenchError> {
    match cli.cmd {
        Cmd::Run { config, seed, mode, out } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.run.seed = s;
            }
            match mode.as_deref() {
                Some("live-local") => cfg.run.mode = Mode::LiveLocal,
                Some(_) => cfg.run.mode = Mode::Sim,
                None => {}
            }
            let m = sensibench::run(&cfg, &out)?;
            println!("{}", serde_json::to_string_pretty(&m).expect("manifest serializes"));
        }
        Cmd::Score { baseline, altered, mode, grid_step_ms, common_support } => {
            let opts = score::options(&mode, grid_step_ms, common_support)?;
            let s = score::score_dirs(&baseline, &altered, opts)?;
            println!("{}", serde_json::to_string_pretty(&s).expect("score serializes"));
        }
        Cmd::Suite { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let report = sensibench::run_suite(&cfg, &out)?;
            print!("{}", report.radar_csv());
        }
        Cmd::PlotData { run } => {
            RunData::load(&run)?.write_plot_data()?;
            println!("{}", run.display());
        }
    }
    Ok(())
}
