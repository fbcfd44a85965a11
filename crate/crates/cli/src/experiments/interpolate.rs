//! Kaczmarz interpolation runs, noiseless and noisy.

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use telres_core::hilbert::Scalar;
use telres_core::interpolate::{
    kaczmarz_run, noise_floor_bound, noisy_kaczmarz_run, residual_series_bound_check,
    InterpolationProblem,
};
use telres_core::rkhs::RkhsFunction;

use crate::config::Config;
use crate::experiments::common::{
    ensure_schedule_covers, kernel_from, noise_from, positive_usize, random_points, schedule_from,
};
use crate::report::{fmt_f64, Check, CsvWriter};
use crate::CliError;

pub const SCHEMA: &str = "\
  [interpolate]
    kernel.kind = gaussian|linear|polynomial
    kernel.gamma = <float>              for gaussian
    kernel.degree = <int>               for polynomial
    kernel.c = <float>                  for polynomial (default 1)
    schedule.kind = constant|one_over_n|one_over_n_sq|custom_list
    schedule.value / schedule.values
    points.count = <int>                sample points (random, seeded)
    points.dim = <int>
    truth.anchors = <int>               anchors of the planted truth
    noise.sigma = <float>               optional; enables the noisy run
    noise.law = gaussian_real|gaussian_complex|uniform_bounded
    run.horizon = <int>
    run.trials = <int>                  Monte Carlo trials for the noisy run
    run.seed = <int>                    optional seed override for this run
    run.kappa = <float>                 optional diagonal lower bound";

pub fn run<T: Scalar>(
    config: &Config,
    seed: u64,
    trials_override: Option<usize>,
    out_dir: &Path,
    _config_dir: &Path,
) -> Result<crate::experiments::ExperimentOutput, CliError> {
    let s = config.section("interpolate").map_err(CliError::Config)?;
    let kernel = kernel_from::<T>(&s).map_err(CliError::Config)?;
    let schedule = schedule_from(&s).map_err(CliError::Config)?;
    let count = positive_usize(&s, "points.count").map_err(CliError::Config)?;
    let dim = positive_usize(&s, "points.dim").map_err(CliError::Config)?;
    let anchors = s.usize("truth.anchors").map_err(CliError::Config)?;
    let horizon = s.usize("run.horizon").map_err(CliError::Config)?;
    let trials = trials_override
        .or(s.usize_opt("run.trials").map_err(CliError::Config)?)
        .unwrap_or(1);
    let seed = s
        .u64_opt("run.seed")
        .map_err(CliError::Config)?
        .unwrap_or(seed);
    let noise = noise_from(&s, seed ^ 0x6e6f6973).map_err(CliError::Config)?;
    let kappa_cfg = s.f64_opt("run.kappa").map_err(CliError::Config)?;
    ensure_schedule_covers(&schedule, horizon).map_err(CliError::Config)?;
    if horizon > count {
        return Err(CliError::Config(crate::config::ConfigError::new(
            "run.horizon exceeds points.count",
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let anchor_points = random_points(anchors, dim, &mut rng);
    let coeffs: Vec<T> = (0..anchors).map(|_| T::standard_normal(&mut rng)).collect();
    let truth = RkhsFunction::new(kernel.clone(), anchor_points, coeffs)
        .map_err(|e| CliError::experiment("truth", e))?;
    let points = random_points(count, dim, &mut rng);
    let prob = InterpolationProblem::from_truth(truth.clone(), points, schedule);
    let truth_norm_sq = truth.norm_squared();

    let trace = kaczmarz_run(&prob, &RkhsFunction::zero(kernel.clone()), horizon)
        .map_err(|e| CliError::experiment("kaczmarz", e))?;
    let mut csv = CsvWriter::new("step,residual_abs,dissipated,running_error_sq");
    let errors = trace.error_norms.as_ref().expect("truth present");
    for (i, step) in trace.steps.iter().enumerate() {
        csv.row(&[
            (i + 1).to_string(),
            fmt_f64(step.residual.modulus()),
            fmt_f64(step.dissipated),
            fmt_f64(errors[i + 1] * errors[i + 1]),
        ]);
    }
    csv.write(&out_dir.join("interpolate_trace.csv"))
        .map_err(CliError::Io)?;
    let mut outputs = vec!["interpolate_trace.csv".to_string()];

    let mut checks = vec![Check::residual(
        "kaczmarz energy balance",
        trace.energy_balance_residual().unwrap_or(f64::INFINITY),
        1e-8,
    )];
    let bound_ok = residual_series_bound_check(&trace, truth_norm_sq)
        .map_err(|e| CliError::experiment("residual bound", e))?;
    checks.push(Check::bound(
        "residual series bounded by truth energy",
        truth_norm_sq - trace.total_dissipated(),
        bound_ok,
    ));
    let monotone = errors.windows(2).all(|w| w[1] <= w[0] + 1e-10);
    checks.push(Check::bound(
        "error norms nonincreasing",
        errors[0] - errors[errors.len() - 1],
        monotone,
    ));

    let mut diagnostics = BTreeMap::new();
    diagnostics.insert("truth_norm_sq".into(), fmt_f64(truth_norm_sq));
    diagnostics.insert(
        "final_error_sq".into(),
        fmt_f64(errors[horizon] * errors[horizon]),
    );

    if let Some(noise) = noise.filter(|n| n.sigma > 0.0) {
        let report = noisy_kaczmarz_run(&prob, &noise, horizon, trials)
            .map_err(|e| CliError::experiment("noisy kaczmarz", e))?;
        let kappa = kappa_cfg.unwrap_or_else(|| {
            prob.samples
                .iter()
                .take(horizon)
                .map(|(x, _)| prob.kernel.diag(x))
                .fold(f64::INFINITY, f64::min)
        });
        let mut csv = CsvWriter::new("step,mean_error_sq,noise_floor_bound,mc_stderr");
        let mut worst_margin = f64::INFINITY;
        let mut bound_pass = true;
        for n in 0..=horizon {
            let bound = noise_floor_bound(&prob, &noise, kappa, n)
                .map_err(|e| CliError::experiment("noise floor", e))?;
            let ceiling = bound + 3.0 * report.error_sq_stderr[n] + 1e-12 * bound.max(1.0);
            if report.mean_error_sq[n] > ceiling {
                bound_pass = false;
            }
            worst_margin = worst_margin.min(ceiling - report.mean_error_sq[n]);
            csv.row(&[
                n.to_string(),
                fmt_f64(report.mean_error_sq[n]),
                fmt_f64(bound),
                fmt_f64(report.error_sq_stderr[n]),
            ]);
        }
        csv.write(&out_dir.join("interpolate_noisy.csv"))
            .map_err(CliError::Io)?;
        outputs.push("interpolate_noisy.csv".into());
        checks.push(Check::residual(
            "noisy pathwise identity",
            report.pathwise_identity_max_residual,
            1e-9,
        ));
        checks.push(Check::bound(
            "mean error within noise floor bound",
            worst_margin,
            bound_pass,
        ));
        let cross_ok = (0..=horizon)
            .all(|n| report.cross_term_mean[n].abs() <= 3.0 * report.cross_term_stderr[n] + 1e-12);
        checks.push(Check::bound(
            "cross terms average to zero",
            report.cross_term_mean[horizon].abs(),
            cross_ok,
        ));
        diagnostics.insert(
            "noisy_final_mean_error_sq".into(),
            fmt_f64(report.mean_error_sq[horizon]),
        );
        diagnostics.insert("kappa".into(), fmt_f64(kappa));
    }

    Ok((checks, diagnostics, outputs))
}
