use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use pevo_cli::config::{validate, RunConfig};
use pevo_cli::runner::{self, load_configs, RunError};

const EXIT_INVALID: u8 = 2;
const EXIT_BLOW_UP: u8 = 3;

#[derive(Parser)]
#[command(name = "pevo", version, about = "Run p-evolution experiments from JSON configs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one config and write its record directory.
    Run { config: PathBuf },
    /// Run every `*.json` config of a directory.
    Sweep {
        dir: PathBuf,
        #[arg(long, default_value_t = 1)]
        parallel: usize,
    },
    /// Check a config and print the resolved grids without running it.
    Validate { config: PathBuf },
}

fn read_config(path: &PathBuf) -> anyhow::Result<Result<RunConfig, serde_json::Error>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(RunConfig::from_json(&text))
}

fn exit_for(err: &RunError) -> u8 {
    match err {
        RunError::Invalid(_) => EXIT_INVALID,
        _ => 1,
    }
}

fn main() -> anyhow::Result<ExitCode> {
    let cli = Cli::parse();
    match cli.command {
        Command::Validate { config } => {
            let cfg = match read_config(&config)? {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: config: {e}");
                    return Ok(ExitCode::from(EXIT_INVALID));
                }
            };
            let d = validate(&cfg);
            for item in &d.items {
                eprintln!("{item}");
            }
            println!("{}", serde_json::to_string_pretty(&d)?);
            Ok(if d.is_ok() { ExitCode::SUCCESS } else { ExitCode::from(EXIT_INVALID) })
        }
        Command::Run { config } => {
            let cfg = match read_config(&config)? {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: config: {e}");
                    return Ok(ExitCode::from(EXIT_INVALID));
                }
            };
            let root = runner::output_root(&cfg);
            match runner::run_in(&cfg, &root) {
                Ok(rec) => {
                    println!("{}", root.join(rec.dir_name()).display());
                    Ok(if rec.partial { ExitCode::from(EXIT_BLOW_UP) } else { ExitCode::SUCCESS })
                }
                Err(e) => {
                    eprintln!("{e}");
                    Ok(ExitCode::from(exit_for(&e)))
                }
            }
        }
        Command::Sweep { dir, parallel } => {
            let mut code = 0u8;
            let mut configs = Vec::new();
            for (name, parsed) in load_configs(&dir).with_context(|| format!("reading {}", dir.display()))? {
                match parsed {
                    Ok(c) => configs.push((name, c)),
                    Err(e) => {
                        eprintln!("error: {name}: {e}");
                        code = EXIT_INVALID;
                    }
                }
            }
            let root = configs.first().map_or_else(|| PathBuf::from(runner::DEFAULT_OUTPUT_ROOT), |(_, c)| runner::output_root(c));
            let entries = runner::sweep(configs, &root, parallel)?;
            let mut manifest = Vec::new();
            let (mut blown, mut failed) = (false, false);
            for e in &entries {
                match &e.result {
                    Ok(rec) => {
                        blown |= rec.partial;
                        manifest.push(serde_json::json!({ "source": e.source, "dir": rec.dir_name(), "partial": rec.partial }));
                    }
                    Err(err) => {
                        eprintln!("error: {}: {err}", e.source);
                        match exit_for(err) {
                            EXIT_INVALID => code = EXIT_INVALID,
                            _ => failed = true,
                        }
                        manifest.push(serde_json::json!({ "source": e.source, "error": err.to_string() }));
                    }
                }
            }
            println!("{}", serde_json::to_string_pretty(&manifest)?);
            if code == 0 && blown {
                code = EXIT_BLOW_UP;
            } else if code == 0 && failed {
                code = 1;
            }
            Ok(ExitCode::from(code))
        }
    }
}
