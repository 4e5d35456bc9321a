//! `depthsweep`: run pipeline stages from a `key = value` config file.
//!
//! Exit codes: 0 on success, 1 on invalid configuration or missing inputs,
//! 2 when a stage fails while running.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use depthsweep::pipeline::{read_config, run_stage, Failure, PipelineConfig, Stage};
use depthsweep::Error;

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Command {
    Synth,
    Train,
    Infer,
    Filter,
    Fuse,
    Eval,
    Pipeline,
    /// Print the effective configuration and exit.
    Config,
}

#[derive(Debug, Parser)]
#[command(
    name = "depthsweep",
    version,
    about = "Plane-sweep multi-view stereo pipeline"
)]
struct Cli {
    command: Command,
    /// Config file; defaults apply to keys it does not set.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Per-key overrides: `--key value` or `--key=value`.
    #[arg(
        trailing_var_arg = true,
        allow_hyphen_values = true,
        value_name = "OVERRIDES"
    )]
    overrides: Vec<String>,
}

fn invalid(message: String) -> Failure {
    Failure::Invalid(Error::InvalidArgument(message))
}

/// Splits `--key value` / `--key=value` pairs, normalizing `-` to `_`.
fn parse_overrides(args: &[String]) -> Result<Vec<(String, String)>, Failure> {
    let mut out = Vec::new();
    let mut it = args.iter();
    while let Some(arg) = it.next() {
        let flag = arg
            .strip_prefix("--")
            .ok_or_else(|| invalid(format!("expected --key, found '{arg}'")))?;
        let (key, value) = match flag.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let v = it
                    .next()
                    .ok_or_else(|| invalid(format!("--{flag} needs a value")))?;
                (flag.to_string(), v.clone())
            }
        };
        out.push((key.replace('-', "_"), value));
    }
    Ok(out)
}

fn load(cli: &Cli) -> Result<PipelineConfig, Failure> {
    let mut overrides = parse_overrides(&cli.overrides)?;
    let mut config_path = cli.config.clone();
    if let Some(pos) = overrides.iter().position(|(k, _)| k == "config") {
        config_path = Some(overrides.remove(pos).1.into());
    }
    let mut cfg = match &config_path {
        Some(path) if !path.exists() => {
            return Err(invalid(format!(
                "config file not found: {}",
                path.display()
            )));
        }
        Some(path) => read_config(path).map_err(Failure::Invalid)?,
        None => PipelineConfig::default(),
    };
    for (key, value) in &overrides {
        cfg.set(key, value)
            .map_err(|e| invalid(format!("--{key}: {e}")))?;
    }
    cfg.validate().map_err(Failure::Invalid)?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let cfg = load(cli)?;
    let stage = match cli.command {
        Command::Synth => Stage::Synth,
        Command::Train => Stage::Train,
        Command::Infer => Stage::Infer,
        Command::Filter => Stage::Filter,
        Command::Fuse => Stage::Fuse,
        Command::Eval => Stage::Eval,
        Command::Pipeline => Stage::Pipeline,
        Command::Config => {
            print!("{}", cfg.to_text());
            return Ok(());
        }
    };
    run_stage(stage, &cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            log::error!("{f}");
            ExitCode::from(f.exit_code() as u8)
        }
    }
}
