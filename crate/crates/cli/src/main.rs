use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use stancebench_cli::{run_command, validate_config, Command};

#[derive(Parser)]
#[command(
    name = "stancebench",
    about = "Corpus-to-verdict pipeline for source-level political stance classification",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: CliCommand,

    /// Run-configuration file (JSON).
    #[arg(long, global = true, default_value = "config.json")]
    config: PathBuf,

    /// Resume a partially completed run where the stage supports it.
    #[arg(long, global = true)]
    resume: bool,

    /// Override every stage seed with one value.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum CliCommand {
    /// Load the manifest and attach distant-supervision labels to articles.
    Ingest,
    /// Length-filter and remove per-source boilerplate.
    Clean,
    /// Fit per-language topic models and assign dominant topics.
    Topics,
    /// Keep articles whose coarse or fine topic is selected.
    Filter,
    /// Draw the balanced train/validation split and the held-out test set.
    Split,
    /// Train the stance classifier and keep the best checkpoint.
    Train,
    /// Predict the test articles and aggregate per-source statistics.
    Eval,
    /// Collect generations from a text-generation endpoint.
    Probe {
        /// Endpoint URL override.
        #[arg(long)]
        endpoint: Option<String>,
        /// Run tag override.
        #[arg(long)]
        run_tag: Option<String>,
        /// Requests per second override.
        #[arg(long)]
        rate: Option<f64>,
        /// Retry budget override.
        #[arg(long)]
        max_attempts: Option<u32>,
    },
    /// Render the per-source verdict tables.
    Report,
    /// Run every stage in order.
    Pipeline,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut cfg = match validate_config(&cli.config) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(2);
        }
    };
    if let Some(seed) = cli.seed {
        cfg.override_seed(seed);
    }

    let command = match &cli.command {
        CliCommand::Ingest => Command::Ingest,
        CliCommand::Clean => Command::Clean,
        CliCommand::Topics => Command::Topics,
        CliCommand::Filter => Command::Filter,
        CliCommand::Split => Command::Split,
        CliCommand::Train => Command::Train,
        CliCommand::Eval => Command::Eval,
        CliCommand::Report => Command::Report,
        CliCommand::Pipeline => Command::Pipeline,
        CliCommand::Probe {
            endpoint,
            run_tag,
            rate,
            max_attempts,
        } => {
            match cfg.probe.as_mut() {
                Some(probe) => {
                    if let Some(endpoint) = endpoint {
                        probe.endpoint = endpoint.clone();
                    }
                    if let Some(run_tag) = run_tag {
                        probe.run_tag = run_tag.clone();
                    }
                    if let Some(rate) = rate {
                        probe.rate_per_sec = *rate;
                    }
                    if let Some(max_attempts) = max_attempts {
                        probe.max_attempts = *max_attempts;
                    }
                }
                None => {
                    eprintln!("config error: probe command needs a `probe` section");
                    return ExitCode::from(2);
                }
            }
            Command::Probe
        }
    };

    match run_command(command, &cfg, cli.resume) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
