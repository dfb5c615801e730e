mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{ConfigError, GlobalArgs};

#[derive(Parser, Debug)]
#[command(
    name = "dqhp",
    version,
    about = "Hardness-decoupled text-to-SQL workflow"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Label every gold query with its hardness
    Label {
        /// Compare against a published distribution
        #[arg(long, value_enum)]
        expect: Option<commands::Expected>,
    },
    /// Write the stage-1 file, one stage-2 file per level and a manifest
    Split {
        /// Labeled records from `label`; the dataset is labeled afresh when omitted
        #[arg(long)]
        labeled: Option<PathBuf>,
        /// Identifier of the stage-1 model recorded in the manifest
        #[arg(long, default_value = "stage1-base")]
        base_model_id: String,
    },
    /// Build the filtered model input for every sample
    Serialize {
        /// `lexical` or a scores file written by an external ranker
        #[arg(long, default_value = "lexical")]
        rank: String,
    },
    /// Score schema items with the lexical baseline
    Rank,
    /// Recognize hardness and generate SQL with the level's generator
    Route {
        /// oracle, constant:<level> or an http(s) URL
        #[arg(long)]
        recognizer: Option<String>,
        /// e.g. all=echo-gold or easy=http://...,medium=...
        #[arg(long)]
        generators: Option<String>,
        /// Scores file; lexical ranking when omitted
        #[arg(long)]
        scores: Option<PathBuf>,
    },
    /// Score routed records by EM and EX
    Eval {
        /// Records file; defaults to records_<mode>.jsonl in the output directory
        #[arg(long)]
        records: Option<PathBuf>,
    },
    /// Render the text report from evaluation outputs
    Report,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match commands::run(&cli.global, cli.command) {
        Ok(commands::Status::Ok) => ExitCode::SUCCESS,
        Ok(commands::Status::Partial) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ConfigError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
