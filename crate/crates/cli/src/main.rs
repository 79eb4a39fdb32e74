use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gridshield::cli::{cmd_calibrate, cmd_run, cmd_sweep, CliError, ExitStatus, RangeSpec};

#[derive(Parser)]
#[command(name = "gridshield", version, about = "Microgrid cyber-attack simulation")]
struct Args {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario and write its time series, events and summary.
    Run {
        /// Scenario file, or the name of a bundled scenario.
        scenario: String,
        /// Output directory.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// KEY=VALUE, e.g. sim.duration=0.2 or attacks[0].magnitude=3
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Sweep additive magnitude against scaling factor.
    Sweep {
        scenario: String,
        /// Additive magnitudes a_a, in pu.
        #[arg(long, value_name = "MIN:MAX:N", allow_hyphen_values = true)]
        additive: String,
        /// Scaling factors; 1 means no scaling.
        #[arg(long, value_name = "MIN:MAX:N", allow_hyphen_values = true)]
        scaling: String,
        /// Worker threads.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Output directory for heatmap.csv.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Learn attack-free detector baselines.
    Calibrate {
        scenario: String,
        /// Baseline JSON file to write.
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
}

fn dispatch(cmd: Cmd) -> Result<ExitStatus, CliError> {
    match cmd {
        Cmd::Run {
            scenario,
            out,
            overrides,
        } => {
            let summary = cmd_run(&scenario, &out, &overrides)?;
            print!("{}", summary.to_text());
            Ok(summary.exit_status)
        }
        Cmd::Sweep {
            scenario,
            additive,
            scaling,
            jobs,
            out,
            overrides,
        } => {
            let additive = RangeSpec::parse(&additive)?;
            let scaling = RangeSpec::parse(&scaling)?;
            let result = cmd_sweep(&scenario, additive, scaling, &out, jobs, &overrides)?;
            let diverged = result.cells.iter().filter(|c| c.diverged).count();
            println!(
                "{} cells ({} diverged) -> {}",
                result.cells.len(),
                diverged,
                out.join("heatmap.csv").display()
            );
            Ok(ExitStatus::Clean)
        }
        Cmd::Calibrate {
            scenario,
            out,
            overrides,
        } => {
            let baselines = cmd_calibrate(&scenario, &out, &overrides)?;
            println!("{} baselines -> {}", baselines.len(), out.display());
            Ok(ExitStatus::Clean)
        }
    }
}

fn main() -> ExitCode {
    env_logger::init();
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(ExitStatus::Usage.code() as u8)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match dispatch(args.command) {
        Ok(status) => ExitCode::from(status.code() as u8),
        Err(e) => {
            eprintln!("gridshield: {e}");
            ExitCode::from(e.exit_status().code() as u8)
        }
    }
}
