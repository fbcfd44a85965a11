//! Greedy KPCA: dictionary selection, eigenwork, embeddings, and the
//! deflation/noise diagnostics.

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use telres_core::gkpca::{
    convergence_and_noise_report, deflation_run, embed, fit_kpca, fit_kpca_by_variance,
    greedy_select,
};
use telres_core::hilbert::Scalar;
use telres_core::rkhs::RkhsFunction;

use crate::config::{Config, ConfigError};
use crate::experiments::common::{
    ensure_schedule_covers, kernel_from, load_points_csv, noise_from, positive_usize,
    random_points, schedule_from,
};
use crate::report::{fmt_f64, Check, CsvWriter};
use crate::CliError;

pub const SCHEMA: &str = "\
  [gkpca]
    kernel.kind = gaussian|linear|polynomial (+ kernel.gamma/degree/c)
    data.path = <csv>                   points, one row per point; or
    data.count, data.dim                random points (seeded)
    dict.epsilon = <float>              admission threshold (required)
    components = <int>                  optional component count
    components.theta = <float>          optional variance fraction
    schedule.kind / schedule.value(s)
    deflation.horizon = <int>           deflation steps (default 30)
    truth.anchors = <int>               anchors of the planted truth
    noise.sigma, noise.law              optional noise stability part
    run.horizon = <int>                 noise-run horizon
    run.trials = <int>                  noise-run trials
    run.seed = <int>                    optional seed override";

fn fmt_scalar<T: Scalar>(v: T) -> String {
    if v.imaginary() == 0.0 {
        fmt_f64(v.real())
    } else if v.imaginary() < 0.0 {
        format!("{}-{}i", fmt_f64(v.real()), fmt_f64(-v.imaginary()))
    } else {
        format!("{}+{}i", fmt_f64(v.real()), fmt_f64(v.imaginary()))
    }
}

pub fn run<T: Scalar>(
    config: &Config,
    seed: u64,
    trials_override: Option<usize>,
    out_dir: &Path,
    config_dir: &Path,
) -> Result<crate::experiments::ExperimentOutput, CliError> {
    let s = config.section("gkpca").map_err(CliError::Config)?;
    let kernel = kernel_from::<T>(&s).map_err(CliError::Config)?;
    let eps_admit = s.f64("dict.epsilon").map_err(CliError::Config)?;
    if eps_admit <= 0.0 {
        return Err(CliError::Config(ConfigError::new(
            "dict.epsilon must be positive",
        )));
    }
    let schedule = schedule_from(&s).map_err(CliError::Config)?;
    let deflation_horizon = s
        .usize_or("deflation.horizon", 30)
        .map_err(CliError::Config)?;
    let truth_anchors = s.usize_or("truth.anchors", 4).map_err(CliError::Config)?;
    let seed = s
        .u64_opt("run.seed")
        .map_err(CliError::Config)?
        .unwrap_or(seed);
    let noise = noise_from(&s, seed ^ 0x6e6f6973).map_err(CliError::Config)?;
    let run_horizon = s.usize_or("run.horizon", 100).map_err(CliError::Config)?;
    if run_horizon < 2 {
        return Err(CliError::Config(ConfigError::new(
            "run.horizon must be at least 2",
        )));
    }
    let run_trials = trials_override
        .or(s.usize_opt("run.trials").map_err(CliError::Config)?)
        .unwrap_or(200);
    ensure_schedule_covers(&schedule, deflation_horizon.max(run_horizon))
        .map_err(CliError::Config)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let training = match s.str_opt("data.path") {
        Some(rel) => load_points_csv(&config_dir.join(rel))?,
        None => {
            let count = positive_usize(&s, "data.count").map_err(CliError::Config)?;
            let dim = positive_usize(&s, "data.dim").map_err(CliError::Config)?;
            random_points(count, dim, &mut rng)
        }
    };

    // dictionary selection and eigenwork
    let dict = greedy_select(kernel.clone(), &training, eps_admit);
    if dict.is_empty() {
        return Err(CliError::experiment(
            "selection",
            telres_core::Error::EmptyDictionary,
        ));
    }
    let factor_residual = {
        let recomposed = dict.chol_factor() * dict.chol_factor().adjoint();
        (recomposed - dict.gram()).norm() / dict.gram().norm().max(1.0)
    };
    let dict_len = dict.len();
    let dict_points = dict.points().to_vec();
    let gram = dict.gram().clone();
    let model = match (
        s.usize_opt("components").map_err(CliError::Config)?,
        s.f64_opt("components.theta").map_err(CliError::Config)?,
    ) {
        (Some(p), None) => fit_kpca(dict, p),
        (None, Some(theta)) => fit_kpca_by_variance(dict, theta),
        (None, None) => fit_kpca(dict, dict_len),
        (Some(_), Some(_)) => {
            return Err(CliError::Config(ConfigError::new(
                "components and components.theta are mutually exclusive",
            )))
        }
    }
    .map_err(|e| CliError::experiment("eigendecomposition", e))?;

    let mut worst_eigen_residual: f64 = 0.0;
    let lead = model.eigenvalues().first().copied().unwrap_or(0.0).max(1.0);
    for j in 0..model.num_components() {
        let v = model.eigenvectors().column(j);
        let residual = (&gram * v - v * T::from_real(model.eigenvalues()[j])).norm();
        worst_eigen_residual = worst_eigen_residual.max(residual / lead);
    }

    // outputs: dictionary membership, spectrum, embeddings
    let mut csv = CsvWriter::new("dict_index,training_index");
    for (i, d) in dict_points.iter().enumerate() {
        let training_index = training
            .iter()
            .position(|p| p == d)
            .expect("dictionary points come from the training set");
        csv.row(&[i.to_string(), training_index.to_string()]);
    }
    csv.write(&out_dir.join("gkpca_dictionary.csv"))
        .map_err(CliError::Io)?;

    let mut csv = CsvWriter::new("component,eigenvalue");
    for (j, &l) in model.eigenvalues().iter().enumerate() {
        csv.row(&[j.to_string(), fmt_f64(l)]);
    }
    csv.write(&out_dir.join("gkpca_eigenvalues.csv"))
        .map_err(CliError::Io)?;

    let mut header = String::from("point_index");
    for j in 0..model.num_components() {
        header.push_str(&format!(",f{j}"));
    }
    let mut csv = CsvWriter::new(&header);
    for (i, x) in training.iter().enumerate() {
        let coords = embed(&model, x).map_err(|e| CliError::experiment("embedding", e))?;
        let mut cells = vec![i.to_string()];
        cells.extend(coords.iter().map(|&v| fmt_scalar(v)));
        csv.row(&cells);
    }
    csv.write(&out_dir.join("gkpca_embeddings.csv"))
        .map_err(CliError::Io)?;

    let mut checks = vec![
        Check::residual("dictionary factor identity", factor_residual, 1e-8),
        Check::residual("gram eigen residuals", worst_eigen_residual, 1e-8),
    ];

    // deflation over the training head with a planted truth
    let truth_points = random_points(truth_anchors, training[0].dim(), &mut rng);
    let coeffs: Vec<T> = (0..truth_anchors)
        .map(|_| T::standard_normal(&mut rng))
        .collect();
    let truth = RkhsFunction::new(kernel.clone(), truth_points, coeffs)
        .map_err(|e| CliError::experiment("truth", e))?;
    let deflation_points: Vec<_> = (0..deflation_horizon)
        .map(|n| training[n % training.len()].clone())
        .collect();
    let run = deflation_run(&kernel, &deflation_points, &schedule, &truth)
        .map_err(|e| CliError::experiment("deflation", e))?;
    let norm_sq = truth.norm_squared();
    let mut partial = 0.0;
    let mut worst_decomposition: f64 = 0.0;
    let mut worst_route_gap: f64 = 0.0;
    for (n, step) in run.ledger.steps.iter().enumerate() {
        partial += step.dissipated;
        worst_decomposition = worst_decomposition
            .max(((norm_sq - step.running_energy) - partial).abs() / norm_sq.max(1e-14));
        worst_route_gap = worst_route_gap.max(
            (run.projection_energies[n] - run.evaluation_energies[n]).abs() / norm_sq.max(1e-14),
        );
    }
    checks.push(Check::residual(
        "deflation energy decomposition",
        worst_decomposition,
        1e-8,
    ));
    checks.push(Check::residual(
        "projection and evaluation energy routes agree",
        worst_route_gap,
        1e-10,
    ));

    let mut diagnostics = BTreeMap::new();
    diagnostics.insert("dictionary_size".into(), dict_len.to_string());
    diagnostics.insert("components".into(), model.num_components().to_string());
    diagnostics.insert("truth_norm_sq".into(), fmt_f64(norm_sq));

    // convergence and noise stability through the gkpca runner
    let report = convergence_and_noise_report(
        &kernel,
        &truth,
        &training,
        &schedule,
        noise.as_ref().filter(|n| n.sigma > 0.0),
        run_horizon,
        run_trials,
        None,
    )
    .map_err(|e| CliError::experiment("convergence report", e))?;
    checks.push(Check::residual(
        "step-difference bound",
        report.max_step_bound_excess.max(0.0),
        1e-10,
    ));
    checks.push(Check::bound(
        "deflation energy monotone",
        0.0,
        report.energy_monotone,
    ));
    diagnostics.insert("cauchy_tail".into(), fmt_f64(report.cauchy_tail));
    if let Some(stability) = report.noise {
        let mut worst_margin = f64::INFINITY;
        for n in 0..=run_horizon {
            worst_margin = worst_margin.min(
                stability.bound[n] + 3.0 * stability.report.error_sq_stderr[n] + 1e-12
                    - stability.report.mean_error_sq[n],
            );
        }
        checks.push(Check::bound(
            "noise stability bound",
            worst_margin,
            stability.pass,
        ));
        checks.push(Check::residual(
            "noisy pathwise identity",
            stability.report.pathwise_identity_max_residual,
            1e-9,
        ));
    }

    Ok((
        checks,
        diagnostics,
        vec![
            "gkpca_dictionary.csv".into(),
            "gkpca_eigenvalues.csv".into(),
            "gkpca_embeddings.csv".into(),
        ],
    ))
}
