//! telres: config-driven experiment harness over the telres-core numerics.
//!
//! ```text
//! telres run --config <file> --out <dir> [--seed N] [--trials N]
//! telres list
//! ```
//!
//! Exit codes: 0 when every asserted identity passed, 1 on identity failure
//! or experiment error, 2 on config errors.

mod config;
mod experiments;
mod report;

use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use config::{Config, ConfigError};
use experiments::RunOptions;

#[derive(Debug)]
pub enum CliError {
    Config(ConfigError),
    Experiment {
        context: String,
        source: telres_core::Error,
    },
    Io(io::Error),
}

impl CliError {
    pub fn experiment(context: impl Into<String>, source: telres_core::Error) -> Self {
        Self::Experiment {
            context: context.into(),
            source,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Config(e) => write!(f, "{e}"),
            Self::Experiment { context, source } => {
                write!(f, "experiment error ({context}): {source}")
            }
            Self::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

const USAGE: &str = "\
usage:
  telres run --config <file> --out <dir> [--seed N] [--trials N]
  telres list

`run` executes the experiment described by the config file, writing CSV
artifacts and report.json into the output directory. `list` prints the
available experiments with their config keys.";

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    match args.first().map(String::as_str) {
        None | Some("list") => {
            print_experiments();
            ExitCode::SUCCESS
        }
        Some("run") => match run_command(&args[1..]) {
            Ok(pass) => {
                if pass {
                    ExitCode::SUCCESS
                } else {
                    ExitCode::from(1)
                }
            }
            Err(e) => {
                eprintln!("{e}");
                match e {
                    CliError::Config(_) => ExitCode::from(2),
                    _ => ExitCode::from(1),
                }
            }
        },
        Some(other) => {
            eprintln!("unknown subcommand `{other}`\n{USAGE}");
            ExitCode::from(2)
        }
    }
}

/// Write to stdout, tolerating a closed pipe (`telres list | head`).
fn emit(text: &str) {
    use io::Write;
    let _ = io::stdout().write_all(text.as_bytes());
}

fn print_experiments() {
    let mut text = String::from("experiments:\n");
    for (name, _) in experiments::EXPERIMENTS {
        text.push_str(&format!("  {name}\n"));
    }
    text.push_str(&format!(
        "\nconfig schema:\n{}\n",
        experiments::EXPERIMENT_SCHEMA
    ));
    for (_, schema) in experiments::EXPERIMENTS {
        text.push_str(schema);
        text.push('\n');
    }
    emit(&text);
}

fn run_command(args: &[String]) -> Result<bool, CliError> {
    let mut config_path: Option<PathBuf> = None;
    let mut out_dir: Option<PathBuf> = None;
    let mut seed_override: Option<u64> = None;
    let mut trials_override: Option<usize> = None;
    let mut iter = args.iter();
    while let Some(flag) = iter.next() {
        let mut value = |name: &str| -> Result<&String, CliError> {
            iter.next()
                .ok_or_else(|| CliError::Config(ConfigError::new(format!("{name} needs a value"))))
        };
        match flag.as_str() {
            "--config" => config_path = Some(PathBuf::from(value("--config")?)),
            "--out" => out_dir = Some(PathBuf::from(value("--out")?)),
            "--seed" => {
                seed_override =
                    Some(value("--seed")?.parse().map_err(|_| {
                        CliError::Config(ConfigError::new("--seed must be an integer"))
                    })?)
            }
            "--trials" => {
                trials_override = Some(value("--trials")?.parse().map_err(|_| {
                    CliError::Config(ConfigError::new("--trials must be an integer"))
                })?)
            }
            other => {
                return Err(CliError::Config(ConfigError::new(format!(
                    "unknown flag `{other}`\n{USAGE}"
                ))))
            }
        }
    }
    let config_path =
        config_path.ok_or_else(|| CliError::Config(ConfigError::new("--config is required")))?;
    let out_dir = out_dir.ok_or_else(|| CliError::Config(ConfigError::new("--out is required")))?;

    let text = fs::read_to_string(&config_path).map_err(|e| {
        CliError::Config(ConfigError::new(format!("{}: {e}", config_path.display())))
    })?;
    let config = Config::parse(&text).map_err(CliError::Config)?;
    fs::create_dir_all(&out_dir).map_err(|e| {
        CliError::Config(ConfigError::new(format!(
            "cannot create output dir {}: {e}",
            out_dir.display()
        )))
    })?;

    let config_dir = config_path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."))
        .to_path_buf();
    let report = experiments::run(
        &config,
        &RunOptions {
            config_dir: &config_dir,
            out_dir: &out_dir,
            seed_override,
            trials_override,
        },
    )?;
    report
        .write_json(&out_dir.join("report.json"))
        .map_err(CliError::Io)?;

    let mut summary = format!(
        "experiment {} (field {}, seed {})\n",
        report.experiment, report.field, report.seed
    );
    for check in &report.checks {
        summary.push_str(&format!(
            "  {} {} (residual {:.3e}, tolerance {:.3e})\n",
            if check.pass { "PASS" } else { "FAIL" },
            check.name,
            check.residual,
            check.tolerance
        ));
    }
    summary.push_str(&format!(
        "{} checks, {} outputs, {:.2}s -> {}\n",
        report.checks.len(),
        report.outputs.len(),
        report.wall_time_seconds,
        out_dir.display()
    ));
    emit(&summary);
    Ok(report.pass)
}
