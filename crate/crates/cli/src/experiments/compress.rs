//! Greedy compression runs with ridge stability audits per step.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use telres_core::compress::{
    ridge_stability_check, stopping_rule, GreedyState, RidgeProblem, StopRule,
};
use telres_core::hilbert::Scalar;
use telres_core::treesplit::{truncated_gram, FeatureMap, PrefixSet};

use crate::config::{Config, ConfigError};
use crate::experiments::common::{family_from, kernel_from, positive_usize, random_points};
use crate::report::{fmt_f64, Check, CsvWriter};
use crate::CliError;

pub const SCHEMA: &str = "\
  [compress]
    family.*                            as in [treesplit]
    depth = <int>                       tree depth N
    kernel.* , sample.count, sample.dim base kernel and sample
    compress.budget = <int>             greedy step budget
    compress.tolerance = <float>        optional trace-gap stopping tolerance
    ridge.lambda = <float>              ridge regularization
    ridge.eps = <float>                 optional stopping-rule epsilon";

pub fn run<T: Scalar>(
    config: &Config,
    seed: u64,
    _trials_override: Option<usize>,
    out_dir: &Path,
    _config_dir: &Path,
) -> Result<crate::experiments::ExperimentOutput, CliError> {
    let s = config.section("compress").map_err(CliError::Config)?;
    let depth = positive_usize(&s, "depth").map_err(CliError::Config)?;
    let count = positive_usize(&s, "sample.count").map_err(CliError::Config)?;
    let sample_dim = positive_usize(&s, "sample.dim").map_err(CliError::Config)?;
    let budget = s.usize_opt("compress.budget").map_err(CliError::Config)?;
    let tolerance = s.f64_opt("compress.tolerance").map_err(CliError::Config)?;
    let reg = s.f64("ridge.lambda").map_err(CliError::Config)?;
    if reg <= 0.0 {
        return Err(CliError::Config(ConfigError::new(
            "ridge.lambda must be positive",
        )));
    }
    let eps = s.f64_opt("ridge.eps").map_err(CliError::Config)?;
    let stop = match (budget, tolerance) {
        (_, Some(tol)) => StopRule::Tolerance(tol),
        (Some(b), None) => StopRule::Budget(b),
        (None, None) => {
            return Err(CliError::Config(ConfigError::new(
                "one of compress.budget or compress.tolerance is required",
            )))
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kernel = kernel_from::<T>(&s).map_err(CliError::Config)?;
    let points = random_points(count, sample_dim, &mut rng);
    let phi0 = FeatureMap::gram_factor(kernel, points.clone())
        .map_err(|e| CliError::experiment("feature map", e))?;
    let family = family_from::<T, _>(&s, Some(phi0.feature_dim()), &mut rng)?;
    let labels = DVector::<T>::from_fn(count, |_, _| T::standard_normal(&mut rng));
    let ridge = RidgeProblem::new(labels, reg);

    let mut state = GreedyState::with_seed(
        family.clone(),
        phi0.clone(),
        points.clone(),
        depth,
        PrefixSet::root(),
    )
    .map_err(|e| CliError::experiment("greedy seed", e))?;
    let initial_gap = state.trace_gap();
    state
        .run(stop)
        .map_err(|e| CliError::experiment("greedy", e))?;

    // replay the history against fresh Gram matrices per snapshot
    let k0 = truncated_gram(
        &state
            .truncated_kernel()
            .map_err(|e| CliError::experiment("kernel", e))?,
        &points,
    )
    .map_err(|e| CliError::experiment("gram", e))?
    .k0;
    let mut csv = CsvWriter::new("t,word,energy,trace_gap,ridge_lhs,ridge_bound");
    let mut kept = PrefixSet::root();
    let mut previous_gap = initial_gap;
    let mut worst_decrease: f64 = 0.0;
    let mut chain_pass = true;
    for (t, record) in state.history().iter().enumerate() {
        kept.insert(record.chosen.clone())
            .map_err(|e| CliError::experiment("history replay", e))?;
        let snapshot = telres_core::treesplit::TruncatedKernel::new(
            family.clone(),
            phi0.clone(),
            kept.clone(),
            depth,
        )
        .map_err(|e| CliError::experiment("snapshot", e))?;
        let tg = truncated_gram(&snapshot, &points).map_err(|e| CliError::experiment("gram", e))?;
        let stability = ridge_stability_check(&k0, &tg.ks, &ridge)
            .map_err(|e| CliError::experiment("ridge", e))?;
        if !stability.pass {
            chain_pass = false;
        }
        worst_decrease = worst_decrease.max(
            (record.trace_gap_after - (previous_gap - record.energy)).abs()
                / state.trace_k0().max(1e-14),
        );
        previous_gap = record.trace_gap_after;
        csv.row(&[
            (t + 1).to_string(),
            record.chosen.to_string(),
            fmt_f64(record.energy),
            fmt_f64(record.trace_gap_after),
            fmt_f64(stability.lhs),
            fmt_f64(stability.trace_bound),
        ]);
    }
    csv.write(&out_dir.join("compress_trace.csv"))
        .map_err(CliError::Io)?;

    let mut checks = vec![
        Check::residual("exact per-step trace decrease", worst_decrease, 1e-9),
        Check::bound(
            "ridge deviation chain at every step",
            initial_gap - state.trace_gap(),
            chain_pass,
        ),
    ];
    if let Some(eps) = eps {
        let fired = stopping_rule(&state, eps, &ridge);
        if fired {
            let tg = truncated_gram(
                &state
                    .truncated_kernel()
                    .map_err(|e| CliError::experiment("kernel", e))?,
                &points,
            )
            .map_err(|e| CliError::experiment("gram", e))?;
            let stability = ridge_stability_check(&k0, &tg.ks, &ridge)
                .map_err(|e| CliError::experiment("ridge", e))?;
            let limit = eps * ridge.labels.norm() * (1.0 + 1e-8);
            checks.push(Check::bound(
                "stopping rule guarantees ridge deviation",
                limit - stability.lhs,
                stability.lhs <= limit,
            ));
        }
    }

    let mut diagnostics = BTreeMap::new();
    diagnostics.insert("initial_trace_gap".into(), fmt_f64(initial_gap));
    diagnostics.insert("final_trace_gap".into(), fmt_f64(state.trace_gap()));
    diagnostics.insert("kept_nodes".into(), state.kept().len().to_string());

    Ok((checks, diagnostics, vec!["compress_trace.csv".into()]))
}
