mod commands;
mod plots;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hdsr::ArchId;

/// Handwritten year-string recognition: synthesis, training and evaluation.
#[derive(Debug, Parser)]
#[command(name = "hdsr", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Master seed; synthesis, initialisation and training seeds derive from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// TOML file with [synthesis], [training] and [model] tables.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Replace existing outputs.
    #[arg(long, global = true)]
    pub force: bool,
    /// specific_task, crnn or vgg16_native.
    #[arg(long, global = true, default_value = "specific_task")]
    pub arch: ArchId,
    /// Dataset root holding `strings/` and `glyphs/`.
    #[arg(long, global = true, env = "HDSR_DATA_ROOT", default_value = "data")]
    pub data_root: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a procedurally drawn stand-in dataset (glyphs and string crops).
    Fixture(commands::FixtureArgs),
    /// Top every class up with glyph-composed strings and write the manifest.
    Synthesize(commands::SynthesizeArgs),
    /// Train one architecture on real plus synthetic strings.
    Train(commands::TrainArgs),
    /// Score a trained bundle on the real test split.
    Evaluate(commands::EvaluateArgs),
    /// Tabulate and plot two or more evaluation reports.
    Compare(commands::CompareArgs),
    /// Print and plot a single evaluation report.
    Report(commands::ReportArgs),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fixture(a) => commands::fixture(&cli.global, a),
        Command::Synthesize(a) => commands::synthesize(&cli.global, a),
        Command::Train(a) => commands::train(&cli.global, a),
        Command::Evaluate(a) => commands::evaluate(&cli.global, a),
        Command::Compare(a) => commands::compare(&cli.global, a),
        Command::Report(a) => commands::report(&cli.global, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
