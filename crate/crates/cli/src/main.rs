mod batch;
mod cmd;
mod config;

use std::process::ExitCode;

use clap::{CommandFactory, Parser, Subcommand};

use crate::config::UsageError;

#[derive(Parser)]
#[command(name = "pmp", version, about = "Pseudo-mask synthesis from point annotations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Grow point blots with perturbed random-walker segmentation.
    Blot(cmd::blot::BlotArgs),
    /// Compute distance-field stacks at any stage.
    Fields(cmd::fields::FieldsArgs),
    /// Refine score maps with pixel-adaptive convolutions.
    Refine(cmd::refine::RefineArgs),
    /// Run the full pipeline and write a pseudo-mask.
    Pseudomask(cmd::pseudomask::PseudomaskArgs),
    /// Score predicted masks against ground truth.
    Eval(cmd::eval::EvalArgs),
    /// Multi-epoch ablation study on synthetic scenes.
    Simulate(cmd::simulate::SimulateArgs),
    /// Render a mask overlay or a field heatmap.
    Overlay(cmd::overlay::OverlayArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Blot(_) => "blot",
            Command::Fields(_) => "fields",
            Command::Refine(_) => "refine",
            Command::Pseudomask(_) => "pseudomask",
            Command::Eval(_) => "eval",
            Command::Simulate(_) => "simulate",
            Command::Overlay(_) => "overlay",
        }
    }
}

/// 1 for bad input or invocation, 2 for everything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<pmp_core::Error>() {
            return if e.is_input_error() { 1 } else { 2 };
        }
        if let Some(e) = cause.downcast_ref::<std::io::Error>() {
            use std::io::ErrorKind::*;
            return match e.kind() {
                NotFound | PermissionDenied | InvalidData | InvalidInput => 1,
                _ => 2,
            };
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let name = cli.command.name();
    let result = match cli.command {
        Command::Blot(a) => cmd::blot::run(a),
        Command::Fields(a) => cmd::fields::run(a),
        Command::Refine(a) => cmd::refine::run(a),
        Command::Pseudomask(a) => cmd::pseudomask::run(a),
        Command::Eval(a) => cmd::eval::run(a),
        Command::Simulate(a) => cmd::simulate::run(a),
        Command::Overlay(a) => cmd::overlay::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.chain().any(|c| c.is::<UsageError>()) {
                if let Some(sub) = Cli::command().find_subcommand_mut(name) {
                    eprintln!("\n{}", sub.render_usage());
                }
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
