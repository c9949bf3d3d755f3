mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use config::{describe_keys, RunConfig};

/// Simulate and probe regime-switching diffusions with built-in models.
///
/// Settings come from an optional flat `key = value` file, then `--set`
/// overrides, then the dedicated flags. `hybridsim keys` lists every key.
#[derive(Parser, Debug)]
#[command(name = "hybridsim", version)]
struct Cli {
    /// simulate | ensemble | certify | moments | tau-tail | feller | oracle | list-models | keys.
    /// Overrides `command` from the config file.
    command: Option<String>,

    #[arg(long)]
    config: Option<PathBuf>,

    #[arg(long)]
    seed: Option<u64>,

    /// Output path prefix.
    #[arg(long)]
    out: Option<String>,

    /// Worker threads; 0 uses every available core.
    #[arg(long)]
    threads: Option<usize>,

    /// Extra `key=value` settings, applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

fn resolve(cli: &Cli) -> Result<RunConfig, config::ParseError> {
    let mut cfg = RunConfig::defaults();
    if let Some(path) = &cli.config {
        let text = std::fs::read_to_string(path).map_err(|e| config::ParseError(format!("{}: {e}", path.display())))?;
        cfg.apply_text(&text)?;
    }
    for kv in &cli.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| config::ParseError(format!("--set expects key=value, got '{kv}'")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(c) = &cli.command {
        cfg.set("command", c)?;
    }
    if let Some(seed) = cli.seed {
        cfg.set("seed", &seed.to_string())?;
    }
    if let Some(out) = &cli.out {
        cfg.set("out", out)?;
    }
    if let Some(t) = cli.threads {
        cfg.set("threads", &t.to_string())?;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command.as_deref() {
        Some("list-models") => {
            print!("{}", hybridsim::builtin::list_models());
            return ExitCode::SUCCESS;
        }
        Some("keys") => {
            print!("{}", describe_keys());
            return ExitCode::SUCCESS;
        }
        _ => {}
    }
    let outcome = resolve(&cli).map_err(run::Failure::Parse).and_then(|cfg| run::execute(&cfg));
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("hybridsim: {f}");
            ExitCode::from(f.code())
        }
    }
}
