//! Bernoulli-gated projection dynamics with the geometric-rate comparison.

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use telres_core::dropout::{
    coercivity_constant, dropout_path, geometric_rate_check, DropoutConfig, ProjectionSource,
    RateBound,
};
use telres_core::hilbert::{random_rank_one_projection, random_vector, Scalar, Vector};
use telres_core::telescope::Schedule;

use crate::config::{Config, ConfigError};
use crate::experiments::common::{
    ensure_schedule_covers, kernel_from, positive_usize, random_points, schedule_from,
};
use crate::report::{fmt_f64, Check, CsvWriter};
use crate::CliError;

pub const SCHEMA: &str = "\
  [dropout]
    dropout.p = <float in (0,1]>        gate probability
    dropout.source = iid_coordinate|iid_rkhs|fixed_random
    dropout.dim = <int>                 model dimension (coordinate/fixed)
    dropout.horizon = <int>
    dropout.trials = <int>
    dropout.fixed_coords = [..]         optional coordinates spanning M
    schedule.kind = constant|one_over_n|one_over_n_sq|custom_list
    schedule.value / schedule.values
    kernel.* , support.count, support.dim   for iid_rkhs sources";

pub fn run<T: Scalar>(
    config: &Config,
    seed: u64,
    trials_override: Option<usize>,
    out_dir: &Path,
    _config_dir: &Path,
) -> Result<crate::experiments::ExperimentOutput, CliError> {
    let s = config.section("dropout").map_err(CliError::Config)?;
    let p = s.f64("dropout.p").map_err(CliError::Config)?;
    if !(p > 0.0 && p <= 1.0) {
        return Err(CliError::Config(ConfigError::new(
            "dropout.p must lie in (0, 1]",
        )));
    }
    let horizon = s.usize("dropout.horizon").map_err(CliError::Config)?;
    let trials = trials_override
        .or(s.usize_opt("dropout.trials").map_err(CliError::Config)?)
        .unwrap_or(1000);
    let schedule = schedule_from(&s).map_err(CliError::Config)?;
    ensure_schedule_covers(&schedule, horizon).map_err(CliError::Config)?;
    let source_kind = s.str("dropout.source").map_err(CliError::Config)?;
    let fixed_coords = s
        .vec_usize_opt("dropout.fixed_coords")
        .map_err(CliError::Config)?
        .unwrap_or_default();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (source, dim): (ProjectionSource<T>, usize) = match source_kind {
        "iid_coordinate" => {
            let dim = positive_usize(&s, "dropout.dim").map_err(CliError::Config)?;
            let active: Vec<usize> = (0..dim).filter(|i| !fixed_coords.contains(i)).collect();
            if active.is_empty() {
                return Err(CliError::Config(ConfigError::new(
                    "dropout.fixed_coords leaves no active coordinate",
                )));
            }
            (ProjectionSource::IidCoordinate { dim, active }, dim)
        }
        "iid_rkhs" => {
            let kernel = kernel_from::<T>(&s).map_err(CliError::Config)?;
            let count = positive_usize(&s, "support.count").map_err(CliError::Config)?;
            let sdim = positive_usize(&s, "support.dim").map_err(CliError::Config)?;
            let support = random_points(count, sdim, &mut rng);
            let weights = vec![1.0; count];
            (
                ProjectionSource::IidRkhsSample {
                    kernel,
                    support,
                    weights,
                },
                count,
            )
        }
        "fixed_random" => {
            let dim = positive_usize(&s, "dropout.dim").map_err(CliError::Config)?;
            let pool: Vec<_> = (0..horizon.max(1))
                .map(|_| random_rank_one_projection::<T, _>(dim, &mut rng))
                .collect();
            (ProjectionSource::FixedSequence(pool), dim)
        }
        other => {
            return Err(CliError::Config(ConfigError::new(format!(
                "unknown dropout.source `{other}`"
            ))))
        }
    };
    let m_basis: Vec<Vector<T>> = fixed_coords
        .iter()
        .map(|&i| {
            let mut e = Vector::<T>::zeros(dim);
            if i >= dim {
                return Err(CliError::Config(ConfigError::new(
                    "dropout.fixed_coords index out of range",
                )));
            }
            e[i] = T::one();
            Ok(e)
        })
        .collect::<Result<_, _>>()?;

    let cfg = DropoutConfig {
        p,
        schedule: schedule.clone(),
        source,
        m_basis,
        seed,
    };
    let x0 = random_vector::<T, _>(dim, &mut rng);

    // single-path audit: the pathwise identity must hold exactly
    let trace =
        dropout_path(&cfg, &x0, horizon, 0).map_err(|e| CliError::experiment("dropout", e))?;
    let mut checks = vec![Check::residual(
        "pathwise energy identity",
        trace.pathwise_identity_residual(),
        1e-9,
    )];
    let mut monotone = true;
    let mut prev = trace.initial_energy;
    for step in &trace.steps {
        if step.energy > prev + 1e-12 * trace.initial_energy.max(1.0) {
            monotone = false;
        }
        prev = step.energy;
    }
    checks.push(Check::bound(
        "pathwise energy nonincreasing",
        trace.initial_energy - trace.final_energy(),
        monotone,
    ));

    let mut diagnostics = BTreeMap::new();
    let constant_lambda = matches!(schedule, Schedule::Constant(_));
    let rate_available = cfg.source.is_iid() && constant_lambda;

    let mut csv = CsvWriter::new("n,empirical_mean_err_sq,theory_bound,mc_stderr");
    if rate_available {
        let beta =
            coercivity_constant(&cfg, 20_000).map_err(|e| CliError::experiment("coercivity", e))?;
        diagnostics.insert("beta".into(), fmt_f64(beta));
        let report = geometric_rate_check(&cfg, &x0, horizon, trials, RateBound::Beta(beta))
            .map_err(|e| CliError::experiment("rate check", e))?;
        let mut worst_margin = f64::INFINITY;
        for n in 0..=horizon {
            worst_margin =
                worst_margin.min(report.bound[n] + 3.0 * report.stderr[n] - report.empirical[n]);
            csv.row(&[
                n.to_string(),
                fmt_f64(report.empirical[n]),
                fmt_f64(report.bound[n]),
                fmt_f64(report.stderr[n]),
            ]);
        }
        checks.push(Check::bound(
            "mean error within geometric bound",
            worst_margin,
            report.pass,
        ));
        diagnostics.insert(
            "final_mean_error_sq".into(),
            fmt_f64(report.empirical[horizon]),
        );
    } else {
        // fixed or variable-step sources: report the empirical trajectory
        // without a closed-form bound
        let len = horizon + 1;
        let mut sum = vec![0.0; len];
        let mut sum_sq = vec![0.0; len];
        for trial in 0..trials {
            let t = dropout_path(&cfg, &x0, horizon, trial as u64)
                .map_err(|e| CliError::experiment("dropout", e))?;
            sum[0] += t.initial_error;
            sum_sq[0] += t.initial_error * t.initial_error;
            for (n, step) in t.steps.iter().enumerate() {
                sum[n + 1] += step.error_to_limit;
                sum_sq[n + 1] += step.error_to_limit * step.error_to_limit;
            }
        }
        let tf = trials as f64;
        for (n, (&total, &total_sq)) in sum.iter().zip(&sum_sq).enumerate() {
            let mean = total / tf;
            let stderr = if trials < 2 {
                0.0
            } else {
                (((total_sq / tf - mean * mean) * tf / (tf - 1.0)).max(0.0) / tf).sqrt()
            };
            csv.row(&[n.to_string(), fmt_f64(mean), String::new(), fmt_f64(stderr)]);
        }
        diagnostics.insert("final_mean_error_sq".into(), fmt_f64(sum[horizon] / tf));
    }
    csv.write(&out_dir.join("dropout_trace.csv"))
        .map_err(CliError::Io)?;

    Ok((checks, diagnostics, vec!["dropout_trace.csv".into()]))
}
