//! `diffpath`: extract pathways, render parts and saliency, and run the
//! distance, ANOVA, adversarial and transform studies from the shell.
//!
//! Exit status: 0 on success, 1 on runtime or validation errors, 2 on usage
//! errors.

mod args;
mod cli;
mod commands;
mod output;

use std::process::ExitCode;

use clap::Parser;
use diffpath::data::transform::TransformKind;

use cli::{Cli, Command};

fn run(cli: Cli) -> commands::Res<()> {
    if let Some(n) = cli.command.threads() {
        if n == 0 {
            return Err("--threads must be at least 1".into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| format!("thread pool: {e}"))?;
    }
    match &cli.command {
        Command::MakeModel(a) => commands::make_model(a),
        Command::Classify(a) => commands::classify(a),
        Command::Pathways(a) => commands::pathways(a),
        Command::Parts(a) => commands::parts(a),
        Command::Saliency(a) => commands::saliency(a),
        Command::PortionHot(a) => commands::portion_hot_cmd(a),
        Command::Distances(a) => commands::distances(a),
        Command::Centers(a) => commands::centers(a),
        Command::Anova(a) => commands::anova(a),
        Command::StudyAdversarial(a) => commands::study_adversarial(a),
        Command::StudyRotate(a) => commands::study_transform(a, TransformKind::Rotate),
        Command::StudyOcclude(a) => commands::study_transform(a, TransformKind::Occlude),
        Command::Gradcam(a) => commands::gradcam(a),
        Command::Overlap(a) => commands::overlap(a),
        Command::M2nist(a) => commands::m2nist(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
