//! Experiment dispatch: one runner per module, each generic over the scalar
//! field chosen in the config.

pub mod common;
mod compress;
mod dropout;
mod gkpca;
mod interpolate;
mod telescope;
mod treesplit;

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use nalgebra::Complex;

use crate::config::{Config, ConfigError};
use crate::experiments::common::Field;
use crate::report::{Check, RunReport};
use crate::CliError;

/// What every experiment runner produces: its identity checks, free-form
/// diagnostics, and the names of the artifacts it wrote.
pub type ExperimentOutput = (Vec<Check>, BTreeMap<String, String>, Vec<String>);

pub const EXPERIMENTS: &[(&str, &str)] = &[
    ("telescope", telescope::SCHEMA),
    ("interpolate", interpolate::SCHEMA),
    ("dropout", dropout::SCHEMA),
    ("treesplit", treesplit::SCHEMA),
    ("compress", compress::SCHEMA),
    ("gkpca", gkpca::SCHEMA),
];

pub const EXPERIMENT_SCHEMA: &str = "\
  [experiment]
    kind = telescope|interpolate|dropout|treesplit|compress|gkpca
    seed = <int>                        mandatory; drives every random draw
    field = real|complex                scalar field (default real)";

pub struct RunOptions<'a> {
    pub config_dir: &'a Path,
    pub out_dir: &'a Path,
    pub seed_override: Option<u64>,
    pub trials_override: Option<usize>,
}

pub fn run(config: &Config, opts: &RunOptions) -> Result<RunReport, CliError> {
    let exp = config.section("experiment").map_err(CliError::Config)?;
    let kind = exp.str("kind").map_err(CliError::Config)?.to_string();
    let field = Field::parse(exp.str_opt("field").unwrap_or("real")).map_err(CliError::Config)?;
    let seed = match opts.seed_override {
        Some(seed) => {
            exp.u64_opt("seed").map_err(CliError::Config)?; // consume if present
            seed
        }
        None => exp
            .u64_opt("seed")
            .map_err(CliError::Config)?
            .ok_or_else(|| CliError::Config(ConfigError::new("missing [experiment] seed")))?,
    };

    let started = Instant::now();
    macro_rules! dispatch {
        ($module:ident) => {
            match field {
                Field::Real => $module::run::<f64>(
                    config,
                    seed,
                    opts.trials_override,
                    opts.out_dir,
                    opts.config_dir,
                )?,
                Field::Complex => $module::run::<Complex<f64>>(
                    config,
                    seed,
                    opts.trials_override,
                    opts.out_dir,
                    opts.config_dir,
                )?,
            }
        };
    }
    let (checks, diagnostics, mut outputs) = match kind.as_str() {
        "telescope" => dispatch!(telescope),
        "interpolate" => dispatch!(interpolate),
        "dropout" => dispatch!(dropout),
        "treesplit" => dispatch!(treesplit),
        "compress" => dispatch!(compress),
        "gkpca" => dispatch!(gkpca),
        other => {
            return Err(CliError::Config(ConfigError::new(format!(
                "unknown experiment kind `{other}`"
            ))))
        }
    };
    // strict parsing: nothing in the file may go unread
    config.finish().map_err(CliError::Config)?;

    outputs.push("report.json".to_string());
    let mut report = RunReport {
        experiment: kind,
        field: field.name().to_string(),
        seed,
        config: config.echo(),
        checks,
        diagnostics,
        outputs,
        wall_time_seconds: started.elapsed().as_secs_f64(),
        pass: false,
    };
    report.pass = report.all_passed();
    Ok(report)
}
