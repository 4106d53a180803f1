//! `statelens` command-line entry point.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error, 3 verification
//! failure. Failures print one line `error[<category>]: <message>` to stderr.

mod commands;
mod config;
mod error;
mod output;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use commands::{ablate, bound, eval, gen, train};
use error::{category_of, Category};

#[derive(Debug, Parser)]
#[command(name = "statelens", version, about = "Confidence probes over transformer internal states")]
struct Cli {
    /// File of `key = value` lines supplying default flag values; flags on
    /// the command line win.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate labeled state corpora.
    #[command(subcommand)]
    Gen(gen::GenCommand),
    /// Train a probe on a corpus (70/10/20 split) and report on its test part.
    #[command(args_override_self = true)]
    Train(train::TrainArgs),
    /// Evaluate a trained probe on a corpus.
    #[command(args_override_self = true)]
    Eval(eval::EvalArgs),
    /// Train and compare probe variants.
    #[command(subcommand)]
    Ablate(ablate::AblateCommand),
    /// Information-theoretic bound checks.
    #[command(subcommand)]
    Bound(bound::BoundCommand),
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Gen(c) => gen::run(c),
        Command::Train(a) => train::run(a),
        Command::Eval(a) => eval::run(a),
        Command::Ablate(c) => ablate::run(c),
        Command::Bound(c) => bound::run(c),
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() {
    let raw: Vec<OsString> = std::env::args_os().collect();
    let args = match config::expand(raw) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error[{}]: {}", category_of(&e), one_line(&format!("{e:#}")));
            std::process::exit(category_of(&e).exit_code());
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand) {
                let _ = e.print();
                std::process::exit(if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand { 2 } else { 0 });
            }
            // clap's message runs up to the usage block; fold it onto one line.
            let rendered = e.render().to_string();
            let (message, rest) = rendered.split_once("\nUsage:").map_or((rendered.as_str(), ""), |(m, r)| (m, r));
            eprintln!("error[{}]: {}", Category::Usage, one_line(message.trim_start_matches("error: ")));
            if !rest.is_empty() {
                eprintln!("\nUsage:{}", rest.trim_end());
            }
            std::process::exit(Category::Usage.exit_code());
        }
    };
    if let Err(e) = run(cli) {
        let category = category_of(&e);
        eprintln!("error[{category}]: {}", one_line(&format!("{e:#}")));
        std::process::exit(category.exit_code());
    }
}
