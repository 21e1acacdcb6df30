//! `tempo`: alignment scoring, condition tokens, synthetic corpora and the
//! toy diffusion model from the command line.
//!
//! Exit codes: 0 success, 2 bad input or usage, 3 audio and video durations
//! too far apart to truncate, 4 numeric failure.

mod args;
mod commands;
mod config_file;

use std::ffi::OsString;
use std::process::ExitCode;

use clap::{CommandFactory, Parser};
use tempo_core::Exec;

use args::{Cli, Command};

fn parse(argv: Vec<OsString>) -> Result<Cli, i32> {
    let argv = match config_file::config_path(&argv) {
        Some(path) => config_file::merge(&argv, &path, &Cli::command()).map_err(|e| {
            eprintln!("error: {e}");
            2
        })?,
        None => argv,
    };
    Ok(Cli::parse_from(argv))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match parse(std::env::args_os().collect()) {
        Ok(cli) => cli,
        Err(code) => return ExitCode::from(code as u8),
    };
    let exec = if cli.sequential { Exec::Sequential } else { Exec::default() };
    let mut out = std::io::stdout().lock();
    let result = match &cli.command {
        Command::AvAlign(a) => commands::av_align(a, exec, &mut out),
        Command::Tokens(a) => commands::tokens(a, &mut out),
        Command::GenSynth(a) => commands::gen_synth(a, exec, &mut out),
        Command::TrainToy(a) => commands::train_toy(a, exec, &mut out),
        Command::Generate(a) => commands::generate(a, &mut out),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(commands::exit_code(&e) as u8)
        }
    }
}
