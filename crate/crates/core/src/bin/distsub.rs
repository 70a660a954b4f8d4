use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use distsub::harness::{execute, ExperimentConfig, Mode, SweepSpec, SweepValue};

const EXIT_INVALID: u8 = 1;
const EXIT_VIOLATION: u8 = 2;

#[derive(Parser)]
#[command(name = "distsub", version, about = "Distributed subgradient experiments with bound verification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML experiment config.
    config: PathBuf,
    /// Output directory for traces and summaries.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate and write trace.csv and summary.json.
    Run(Common),
    /// Simulate, check every bound, and exit with status 2 on any violation.
    Verify(Common),
    /// Verify once per value of one parameter and write sweep.csv.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// One of Q, alpha, n, B, eta, k_max.
        #[arg(long)]
        axis: Option<String>,
        /// Comma-separated values, e.g. `1,10,100,inf`.
        #[arg(long, value_delimiter = ',')]
        values: Vec<String>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_INVALID) } else { ExitCode::SUCCESS };
        }
    };
    let (common, mode, sweep) = match cli.command {
        Command::Run(c) => (c, Mode::Run, None),
        Command::Verify(c) => (c, Mode::Verify, None),
        Command::Sweep { common, axis, values } => (common, Mode::Sweep, Some((axis, values))),
    };

    let mut config = match ExperimentConfig::from_path(&common.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_INVALID);
        }
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    config.mode = mode;
    if let Some((axis, values)) = sweep {
        match (axis, values.is_empty()) {
            (Some(axis), false) => {
                config.sweep = Some(SweepSpec {
                    axis,
                    values: values.into_iter().map(SweepValue::Str).collect(),
                })
            }
            (None, true) => {}
            _ => {
                eprintln!("error: --axis and --values must be given together");
                return ExitCode::from(EXIT_INVALID);
            }
        }
    }

    match execute(&config, &common.out) {
        Ok(0) => {
            println!("ok: artifacts written to {}", common.out.display());
            ExitCode::SUCCESS
        }
        Ok(v) => {
            eprintln!("{v} bound violation(s); see {}", common.out.display());
            ExitCode::from(EXIT_VIOLATION)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_INVALID)
        }
    }
}
