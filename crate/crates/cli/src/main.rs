use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use simwise_cli::commands::{cmd_ablate_subcarriers, cmd_meta_train, cmd_proximity, cmd_synth, cmd_tune_eval};
use simwise_cli::config::{Baseline, Overrides, RunConfig};
use simwise_cli::report::cmd_report;
use simwise_cli::CliError;

/// Multi-subject Wi-Fi CSI sensing experiments on synthetic captures.
///
/// Settings come from defaults, then `--config`, then flags. `SIMWISE_OUT`
/// supplies the output directory when neither the file nor `--out-dir` does.
/// Exit codes: 0 success, 2 config error, 3 data error, 4 failed gate.
#[derive(Debug, Parser)]
#[command(name = "simwise", version)]
struct Cli {
    /// TOML config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed for simulation, initialization and sampling.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Dataset directory [default: <out-dir>/dataset].
    #[arg(long, global = true)]
    dataset: Option<PathBuf>,
    /// Checkpoint file [default: <out-dir>/checkpoint.swnn].
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    baseline: Option<Baseline>,
    /// Worker threads for independent grid cells.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate captures and labels for every monitor.
    Synth,
    /// Meta-train the embedding network and head on the home split.
    MetaTrain,
    /// Adapt to the target split and evaluate the selected baseline(s).
    TuneEval,
    /// Accuracy as a function of the number of subcarriers.
    AblateSubcarriers,
    /// Per-monitor accuracy against every subject's activities.
    Proximity {
        /// Exit with code 4 when a monitor's own subject does not dominate.
        #[arg(long)]
        gate: bool,
    },
    /// Summarize the experiment CSVs in the output directory.
    Report,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let overrides = Overrides {
        seed: cli.seed,
        out_dir: cli.out_dir,
        env_out_dir: std::env::var_os("SIMWISE_OUT").filter(|v| !v.is_empty()).map(PathBuf::from),
        dataset: cli.dataset,
        checkpoint: cli.checkpoint,
        baseline: cli.baseline,
        jobs: cli.jobs,
        gate: matches!(cli.command, Command::Proximity { gate: true }),
    };
    let cfg = RunConfig::resolve(cli.config.as_deref(), &overrides)?;
    match cli.command {
        Command::Synth => cmd_synth(&cfg).map(drop),
        Command::MetaTrain => cmd_meta_train(&cfg).map(drop),
        Command::TuneEval => cmd_tune_eval(&cfg).map(drop),
        Command::AblateSubcarriers => cmd_ablate_subcarriers(&cfg).map(drop),
        Command::Proximity { .. } => cmd_proximity(&cfg).map(drop),
        Command::Report => cmd_report(&cfg).map(drop),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).format_indent(None).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
