//! Tree-splitting energies and kernel truncation diagnostics.

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use telres_core::hilbert::{random_vector, Scalar};
use telres_core::treesplit::{
    isometry_check, tree_energies, truncated_gram, FeatureMap, PrefixSet, TruncatedKernel,
};

use crate::config::Config;
use crate::experiments::common::{family_from, kernel_from, positive_usize, random_points};
use crate::report::{fmt_f64, Check, CsvWriter};
use crate::CliError;

pub const SCHEMA: &str = "\
  [treesplit]
    family.kind = scaled_rotations|scaled_unitaries|random_contraction|literal
    family.c = <float>                  column bound for scaled kinds
    family.d = <int>                    channel count
    family.angles = [..]                scaled_rotations
    family.dim = <int>                  generated family dimension
    family.norm_cap = <float>           random_contraction
    family.channel.<i> = [[..],[..]]    literal channels
    family.certify_c = <float>          optional certified column bound
    depth = <int>                       tree depth N
    probes = <int>                      vector-level probes (default 2)
    truncate.depth = <int>              keep = all words of depth < M
    kernel.* , sample.count, sample.dim optional kernel-level part";

pub fn run<T: Scalar>(
    config: &Config,
    seed: u64,
    _trials_override: Option<usize>,
    out_dir: &Path,
    _config_dir: &Path,
) -> Result<crate::experiments::ExperimentOutput, CliError> {
    let s = config.section("treesplit").map_err(CliError::Config)?;
    let depth = s.usize("depth").map_err(CliError::Config)?;
    let num_probes = s.usize_or("probes", 2).map_err(CliError::Config)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let family = family_from::<T, _>(&s, None, &mut rng)?;
    let dim = family.dim();

    let mut checks = Vec::new();
    let mut diagnostics = BTreeMap::new();

    // vector level: node energies of the first probe, identities on all
    let probes: Vec<_> = (0..num_probes.max(1))
        .map(|_| random_vector::<T, _>(dim, &mut rng))
        .collect();
    let mut worst_split: f64 = 0.0;
    let mut monotone = true;
    let mut worst_decay: f64 = 0.0;
    for (i, probe) in probes.iter().enumerate() {
        let energies =
            tree_energies(&family, probe, depth).map_err(|e| CliError::experiment("tree", e))?;
        let scale = probe.norm_squared().max(1e-14);
        worst_split = worst_split.max(energies.splitting_identity_residual() / scale);
        for w in energies.levels.windows(2) {
            if w[1] > w[0] + 1e-12 * scale {
                monotone = false;
            }
        }
        if let Some(c) = family.contraction_bound() {
            for (n, &l) in energies.levels.iter().enumerate() {
                let bound = c.powi(n as i32) * probe.norm_squared();
                worst_decay = worst_decay.max((l - bound * (1.0 + 1e-9)).max(0.0) / scale);
            }
        }
        if i == 0 {
            let mut csv = CsvWriter::new("word,depth,E,Delta");
            for node in &energies.nodes {
                csv.row(&[
                    node.word.to_string(),
                    node.word.depth().to_string(),
                    fmt_f64(node.energy),
                    node.defect_energy.map(fmt_f64).unwrap_or_default(),
                ]);
            }
            csv.write(&out_dir.join("treesplit_trace.csv"))
                .map_err(CliError::Io)?;
        }
    }
    checks.push(Check::residual(
        "tree splitting identity",
        worst_split,
        1e-9,
    ));
    checks.push(Check::bound("level energies nonincreasing", 0.0, monotone));
    if family.contraction_bound().is_some() {
        checks.push(Check::residual(
            "geometric level decay under certified bound",
            worst_decay,
            0.0,
        ));
    }
    let isometry = isometry_check(&family, depth.min(6), &probes)
        .map_err(|e| CliError::experiment("isometry", e))?;
    checks.push(Check::residual(
        "coordinate map isometry",
        isometry
            .max_norm_residual
            .max(isometry.max_polarization_residual),
        1e-9,
    ));

    // kernel level on a Gram-factor feature map, when a sample is configured
    let mut outputs = vec!["treesplit_trace.csv".to_string()];
    if let Some(count) = s.usize_opt("sample.count").map_err(CliError::Config)? {
        let sample_dim = positive_usize(&s, "sample.dim").map_err(CliError::Config)?;
        let truncate_depth = s
            .usize_or("truncate.depth", depth.saturating_sub(1))
            .map_err(CliError::Config)?;
        let kernel = kernel_from::<T>(&s).map_err(CliError::Config)?;
        let points = random_points(count, sample_dim, &mut rng);
        let phi0 = FeatureMap::gram_factor(kernel, points.clone())
            .map_err(|e| CliError::experiment("feature map", e))?;
        let kernel_family = family_from::<T, _>(&s, Some(phi0.feature_dim()), &mut rng)?;
        let keep = PrefixSet::depth_truncation(truncate_depth, kernel_family.num_channels());
        let tk = TruncatedKernel::new(kernel_family, phi0, keep, depth)
            .map_err(|e| CliError::experiment("truncated kernel", e))?;
        let tg = truncated_gram(&tk, &points).map_err(|e| CliError::experiment("gram", e))?;
        checks.push(Check::residual(
            "trace identity of the Gram gap",
            tg.trace_identity_residual,
            1e-8,
        ));
        checks.push(Check::bound(
            "Gram gap positive semidefinite",
            tg.gap_min_eigenvalue,
            tg.gap_min_eigenvalue >= -1e-9 * tg.trace_gap.max(1e-12),
        ));
        checks.push(Check::bound(
            "Gram gap below trace bound",
            tg.trace_gap * (1.0 + 1e-8) - tg.gap_max_eigenvalue,
            tg.gap_max_eigenvalue <= tg.trace_gap * (1.0 + 1e-8) + 1e-12,
        ));
        // pointwise Cauchy-Schwarz bound across the sample
        let mut worst_cs: f64 = f64::INFINITY;
        let mut cs_pass = true;
        for x in &points {
            let r_x = tk
                .residual_energy(x)
                .map_err(|e| CliError::experiment("residual", e))?;
            for y in &points {
                let gap = (tk
                    .phi0()
                    .kernel0(x, y)
                    .map_err(|e| CliError::experiment("kernel0", e))?
                    - tk.eval(x, y).map_err(|e| CliError::experiment("eval", e))?)
                .modulus();
                let r_y = tk
                    .residual_energy(y)
                    .map_err(|e| CliError::experiment("residual", e))?;
                let bound = (r_x * r_y).sqrt() + 1e-10;
                if gap > bound {
                    cs_pass = false;
                }
                worst_cs = worst_cs.min(bound - gap);
            }
        }
        checks.push(Check::bound(
            "off-diagonal Cauchy-Schwarz bound",
            worst_cs,
            cs_pass,
        ));
        diagnostics.insert("trace_gap".into(), fmt_f64(tg.trace_gap));
        let mut csv = CsvWriter::new("j,k0_diag,ks_diag,residual_energy");
        for (j, x) in points.iter().enumerate() {
            csv.row(&[
                j.to_string(),
                fmt_f64(tg.k0.entries()[(j, j)].real()),
                fmt_f64(tg.ks.entries()[(j, j)].real()),
                fmt_f64(
                    tk.residual_energy(x)
                        .map_err(|e| CliError::experiment("residual", e))?,
                ),
            ]);
        }
        csv.write(&out_dir.join("treesplit_gram.csv"))
            .map_err(CliError::Io)?;
        outputs.push("treesplit_gram.csv".into());
    }

    Ok((checks, diagnostics, outputs))
}
