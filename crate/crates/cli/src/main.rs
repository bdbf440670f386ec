//! `graspkit` command-line tool.

mod commands;
mod error;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use error::{CliError, Kind};
use settings::Settings;

#[derive(Parser)]
#[command(name = "graspkit", version, about = "Grasp generation, dataset building and capsule network tools")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// `key = value` file; overrides built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output path. A `<out>.manifest` is written next to it.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads, 0 for one per core.
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Anneal grasps on sampled centers of an `.xyz` cloud.
    GenGrasps { cloud: PathBuf },
    /// Build a dataset from a directory of `.xyz` clouds and a
    /// `object = label` file.
    BuildDataset { cloud_dir: PathBuf, labels: PathBuf },
    /// Evaluate the training loss on a JSON prediction/target record.
    EvalLoss { record: PathBuf },
    /// Compare analytic loss gradients with finite differences.
    GradCheck,
    /// Run the network on a cloud and report output shapes.
    Forward { cloud: PathBuf },
    /// Smooth an `x y z value` field over its k-NN graph.
    Smooth { field: PathBuf },
    /// Classify a cloud by voting over random subsets.
    Classify { cloud: PathBuf },
}

fn run(cli: Cli) -> Result<i32, CliError> {
    let c = &cli.common;
    let settings = Settings::resolve(c.config.as_deref(), c.seed, c.jobs)?;
    let out = c.out.as_deref();
    match &cli.command {
        Command::GenGrasps { cloud } => commands::gen_grasps(&settings, cloud, out).map(|_| 0),
        Command::BuildDataset { cloud_dir, labels } => commands::build_dataset(&settings, cloud_dir, labels, out),
        Command::EvalLoss { record } => commands::eval_loss(&settings, record, out).map(|_| 0),
        Command::GradCheck => commands::grad_check(&settings, out),
        Command::Forward { cloud } => commands::forward_cmd(&settings, cloud, out).map(|_| 0),
        Command::Smooth { field } => commands::smooth(&settings, field, out).map(|_| 0),
        Command::Classify { cloud } => commands::classify(&settings, cloud, out).map(|_| 0),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                e.exit();
            }
            let _ = e.print();
            return ExitCode::from(Kind::Validation.exit_code() as u8);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.kind.exit_code() as u8)
        }
    }
}
