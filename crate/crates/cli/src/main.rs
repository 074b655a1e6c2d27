use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use bundleflow::checkpoint::{CheckpointError, CheckpointFile};
use bundleflow::config::{emit_config, parse_with_overrides, ConfigError, RunConfig};
use bundleflow::run::{execute, fields_csv, write_outputs};
use clap::{Args, Parser, Subcommand};

/// Reduced Ricci flow experiments on twisted abelian bundles.
#[derive(Parser)]
#[command(name = "bundleflow", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Output directory (overrides `output.dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for perturbations (overrides `seed`).
    #[arg(long)]
    seed: Option<u64>,
    /// Replace one config entry; repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured experiment.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Check a config file or a checkpoint.
    Validate {
        path: PathBuf,
    },
    /// Continue a flow run from a checkpoint.
    Resume {
        checkpoint: PathBuf,
        /// Config to use instead of the one stored in the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Dump the fields of a checkpoint as CSV.
    Export {
        checkpoint: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Errors that mean "bad input" rather than "the experiment failed".
fn is_usage_error(e: &anyhow::Error) -> bool {
    e.chain().any(|c| c.is::<ConfigError>() || c.is::<CheckpointError>() || c.is::<std::io::Error>())
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn load_config(text: &str, common: &Common, forced: &[String]) -> Result<RunConfig> {
    let mut overrides = common.overrides.clone();
    if let Some(seed) = common.seed {
        overrides.push(format!("seed={seed}"));
    }
    if let Some(out) = &common.out {
        overrides.push(format!("output.dir={}", out.display()));
    }
    overrides.extend_from_slice(forced);
    Ok(parse_with_overrides(text, &overrides)?)
}

fn run_config(cfg: &RunConfig) -> Result<bool> {
    let outcome = execute(cfg)?;
    write_outputs(&cfg.output_dir, cfg, &outcome)?;
    for v in &outcome.report.verdicts {
        println!(
            "[{}] criterion {}: {} (measured {:e}, tolerance {:e})",
            if v.passed { "PASS" } else { "FAIL" },
            v.criterion,
            v.check,
            v.measured,
            v.tolerance
        );
    }
    Ok(outcome.report.passed())
}

fn dispatch(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run { config, common } => {
            let cfg = load_config(&read(&config)?, &common, &[])?;
            run_config(&cfg)
        }
        Command::Validate { path } => {
            let text = read(&path)?;
            if text.trim_start().starts_with('{') {
                let file = CheckpointFile::from_json(&text, &path.display().to_string())?;
                let report = file.state.validate();
                println!("{}", serde_json::to_string_pretty(&report)?);
                Ok(report.is_valid())
            } else {
                let cfg = parse_with_overrides(&text, &[])?;
                print!("{}", emit_config(&cfg));
                Ok(true)
            }
        }
        Command::Resume { checkpoint, config, common } => {
            let mut forced = vec![
                "experiment=flow".to_string(),
                "initial.kind=checkpoint".to_string(),
                format!("initial.path={}", checkpoint.display()),
            ];
            let text = match config {
                Some(p) => read(&p)?,
                None => {
                    // The stored config names the original output directory; keep
                    // the resumed run from overwriting it.
                    if common.out.is_none() && !common.overrides.iter().any(|o| o.trim_start().starts_with("output.dir")) {
                        let parent = checkpoint.parent().unwrap_or(Path::new("."));
                        forced.push(format!("output.dir={}", parent.join("resumed").display()));
                    }
                    CheckpointFile::load(&checkpoint)?.config
                }
            };
            let cfg = load_config(&text, &common, &forced)?;
            run_config(&cfg)
        }
        Command::Export { checkpoint, out } => {
            let file = CheckpointFile::load(&checkpoint)?;
            let dir = out.unwrap_or_else(|| PathBuf::from("."));
            fs::create_dir_all(&dir)?;
            let target = dir.join("fields.csv");
            fs::write(&target, fields_csv(&file.state))?;
            println!("wrote {}", target.display());
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if is_usage_error(&e) { 2 } else { 1 })
        }
    }
}
