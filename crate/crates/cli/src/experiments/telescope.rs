//! Relaxed projection product with its exact energy ledger.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;
use rand_chacha::ChaCha8Rng;

use rand::SeedableRng;
use telres_core::hilbert::{random_rank_one_projection, random_unit_vector, Scalar};
use telres_core::telescope::{
    effectiveness_diagnostic, run_product, summability_criterion, ContractionStep,
};

use crate::config::Config;
use crate::experiments::common::{ensure_schedule_covers, positive_usize, schedule_from};
use crate::report::{fmt_f64, Check, CsvWriter};
use crate::CliError;

pub const SCHEMA: &str = "\
  [telescope]
    dim = <int>                         model space dimension
    steps = <int>                       number of relaxed projection factors
    probes = <int>                      effectiveness probes (default 3)
    eps = <float>                       optional Cauchy-tail assertion threshold
    schedule.kind = constant|one_over_n|one_over_n_sq|custom_list
    schedule.value = <float>            for constant
    schedule.values = [..]              for custom_list";

pub fn run<T: Scalar>(
    config: &Config,
    seed: u64,
    _trials_override: Option<usize>,
    out_dir: &Path,
    _config_dir: &Path,
) -> Result<crate::experiments::ExperimentOutput, CliError> {
    let s = config.section("telescope").map_err(CliError::Config)?;
    let dim = positive_usize(&s, "dim").map_err(CliError::Config)?;
    let num_steps = positive_usize(&s, "steps").map_err(CliError::Config)?;
    let num_probes = s.usize_or("probes", 3).map_err(CliError::Config)?;
    let eps = s.f64_opt("eps").map_err(CliError::Config)?;
    let schedule = schedule_from(&s).map_err(CliError::Config)?;
    ensure_schedule_covers(&schedule, num_steps).map_err(CliError::Config)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let steps: Vec<ContractionStep<T>> = (1..=num_steps)
        .map(|n| {
            let projection = random_rank_one_projection::<T, _>(dim, &mut rng);
            ContractionStep::relaxed(projection, schedule.lambda(n))
                .map_err(|e| CliError::experiment("telescope step", e))
        })
        .collect::<Result<_, _>>()?;
    let x = random_unit_vector::<T, _>(dim, &mut rng);

    let (_, ledger) = run_product(&steps, &x).map_err(|e| CliError::experiment("product", e))?;
    let mut csv = CsvWriter::new("step,dissipated,running_energy");
    for step in &ledger.steps {
        csv.row(&[
            step.step_index.to_string(),
            fmt_f64(step.dissipated),
            fmt_f64(step.running_energy),
        ]);
    }
    csv.write(&out_dir.join("telescope_trace.csv"))
        .map_err(CliError::Io)?;

    let mut checks = vec![
        Check::residual(
            "telescoping energy identity",
            ledger.identity_residual() / ledger.initial_energy.max(1e-14),
            1e-9,
        ),
        Check::bound(
            "ledger monotone and nonnegative",
            ledger.initial_energy - ledger.final_energy(),
            ledger.verify(1e-9),
        ),
    ];

    // operator form of the identity stays cheap at desk dimensions
    if dim <= 12 {
        let id = DMatrix::<T>::identity(dim, dim);
        let mut t = id.clone();
        let mut sum = DMatrix::<T>::zeros(dim, dim);
        for step in &steps {
            let d = step.defect_matrix();
            sum += t.adjoint() * (&d * &d) * &t;
            t = step.a_matrix() * t;
        }
        let residual = (&id - t.adjoint() * &t - sum).norm();
        checks.push(Check::residual(
            "telescoping operator identity",
            residual,
            1e-8,
        ));
    }

    // effectiveness is a finite-horizon diagnostic; it becomes an asserted
    // check only when the config names a threshold
    let probes: Vec<_> = (0..num_probes)
        .map(|_| random_unit_vector::<T, _>(dim, &mut rng))
        .collect();
    let effectiveness = effectiveness_diagnostic(&steps, &probes, eps.unwrap_or(f64::INFINITY))
        .map_err(|e| CliError::experiment("probes", e))?;
    let max_tail = effectiveness
        .cauchy_tails
        .iter()
        .copied()
        .fold(0.0_f64, f64::max);
    if let Some(eps) = eps {
        checks.push(Check {
            name: "effectiveness Cauchy tail below eps".into(),
            residual: max_tail,
            tolerance: eps,
            pass: effectiveness.effective_numerically,
        });
    }

    let summability = summability_criterion(&schedule, num_steps, None);
    let mut diagnostics = BTreeMap::new();
    diagnostics.insert("cauchy_tail_max".into(), fmt_f64(max_tail));
    diagnostics.insert(
        "summability_partial_sum".into(),
        fmt_f64(summability.partial_sum),
    );
    diagnostics.insert("final_energy".into(), fmt_f64(ledger.final_energy()));
    diagnostics.insert(
        "total_dissipated".into(),
        fmt_f64(ledger.total_dissipated()),
    );

    Ok((checks, diagnostics, vec!["telescope_trace.csv".into()]))
}
