//! Experiment front end. All logic lives in the library; this binary parses
//! arguments, dispatches, and maps errors to exit codes (2 for configuration
//! problems, 1 for runtime failures).

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use layerprompt::cli::commands;
use layerprompt::cli::config::RunConfig;

#[derive(Parser)]
#[command(
    name = "layerprompt",
    about = "Class-incremental learning with layer-guided expandable prompt pools",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Commands,
}

#[derive(Subcommand)]
enum Commands {
    /// Run the experiment described by a JSON config, once per seed
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Dotted-key config overrides, e.g. --set train.epochs=8
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Override the config's output directory
        #[arg(long)]
        output: Option<String>,
        /// Save resumable state to this path (with --stop-after-task)
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Pause after this many tasks of the current seed
        #[arg(long)]
        stop_after_task: Option<usize>,
        /// Run seeds on parallel threads (they share no state)
        #[arg(long)]
        parallel: bool,
    },
    /// Run pipeline variants (1)..(4) on one seed and print the comparison
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        output: Option<String>,
    },
    /// Verify a checkpoint's integrity and describe its contents
    Checkpoint {
        #[arg(long)]
        state: PathBuf,
    },
    /// Resume an interrupted run from a checkpoint and finish it
    Resume {
        #[arg(long)]
        state: PathBuf,
    },
    /// Summarize a report.json and emit the plotting CSV
    Report {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        curves: Option<PathBuf>,
    },
}

fn load_config(
    path: &std::path::Path,
    overrides: &[String],
    output: Option<String>,
) -> layerprompt::Result<RunConfig> {
    let mut all = overrides.to_vec();
    if let Some(dir) = output {
        all.push(format!("output_dir={dir}"));
    }
    RunConfig::load(path, &all)
}

fn dispatch(cli: Cli) -> layerprompt::Result<()> {
    match cli.command {
        Commands::Run {
            config,
            overrides,
            output,
            checkpoint,
            stop_after_task,
            parallel,
        } => {
            let config = load_config(&config, &overrides, output)?;
            match commands::cmd_run(&config, checkpoint.as_deref(), stop_after_task, parallel)? {
                Some(report) => {
                    print!("{}", report.render());
                    println!("report written to {}", config.output_dir);
                }
                None => {
                    let path = checkpoint.expect("pause requires a checkpoint path");
                    println!("paused; state saved to {}", path.display());
                }
            }
        }
        Commands::Ablate {
            config,
            overrides,
            output,
        } => {
            let config = load_config(&config, &overrides, output)?;
            let ablation = commands::cmd_ablate(&config)?;
            print!("{}", ablation.render());
            println!("details written to {}/ablation.json", config.output_dir);
        }
        Commands::Checkpoint { state } => {
            println!("{}", commands::cmd_checkpoint(&state)?);
        }
        Commands::Resume { state } => {
            let report = commands::cmd_resume(&state)?;
            print!("{}", report.render());
        }
        Commands::Report { report, curves } => {
            print!("{}", commands::cmd_report(&report, curves.as_deref())?);
        }
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    if let Err(error) = dispatch(cli) {
        eprintln!("error: {error}");
        std::process::exit(error.exit_code());
    }
}
