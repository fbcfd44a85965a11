//! Shared builders: scalars, kernels, schedules, noise, points, families.

use std::fs;
use std::path::Path;

use rand::{Rng, RngExt};
use telres_core::hilbert::Scalar;
use telres_core::interpolate::{NoiseLaw, NoiseModel};
use telres_core::rkhs::{Kernel, Point};
use telres_core::telescope::Schedule;
use telres_core::treesplit::{
    random_contraction_family, scaled_rotation_family, scaled_unitary_family, ChannelFamily,
};

use crate::config::{ConfigError, SectionReader};
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Field {
    Real,
    Complex,
}

impl Field {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        match text {
            "real" => Ok(Self::Real),
            "complex" => Ok(Self::Complex),
            other => Err(ConfigError::new(format!(
                "unknown field `{other}` (expected real|complex)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Real => "real",
            Self::Complex => "complex",
        }
    }
}

/// A `usize` key that must be at least one (counts and dimensions).
pub fn positive_usize(s: &SectionReader, key: &str) -> Result<usize, ConfigError> {
    let value = s.usize(key)?;
    if value == 0 {
        return Err(ConfigError::new(format!("`{key}` must be at least 1")));
    }
    Ok(value)
}

/// Custom schedules must cover the run horizon; built-in schedules always do.
pub fn ensure_schedule_covers(schedule: &Schedule, steps: usize) -> Result<(), ConfigError> {
    if let Schedule::Custom(values) = schedule {
        if values.len() < steps {
            return Err(ConfigError::new(format!(
                "schedule.values holds {} entries but the run needs {steps}",
                values.len()
            )));
        }
    }
    Ok(())
}

/// Builds a kernel from `kernel.kind`, `kernel.gamma`, `kernel.degree`,
/// `kernel.c`.
pub fn kernel_from<T: Scalar>(s: &SectionReader) -> Result<Kernel<T>, ConfigError> {
    match s.str("kernel.kind")? {
        "gaussian" => {
            let gamma = s.f64("kernel.gamma")?;
            if gamma <= 0.0 {
                return Err(ConfigError::new("kernel.gamma must be positive"));
            }
            Ok(Kernel::Gaussian { gamma })
        }
        "linear" => Ok(Kernel::Linear),
        "polynomial" => {
            let degree = s.usize("kernel.degree")? as u32;
            let c = s.f64_or("kernel.c", 1.0)?;
            Ok(Kernel::Polynomial { degree, c })
        }
        other => Err(ConfigError::new(format!(
            "unknown kernel.kind `{other}` (expected gaussian|linear|polynomial)"
        ))),
    }
}

/// Builds a schedule from `schedule.kind` plus `schedule.value` or
/// `schedule.values`.
pub fn schedule_from(s: &SectionReader) -> Result<Schedule, ConfigError> {
    match s.str("schedule.kind")? {
        "constant" => {
            let value = s.f64("schedule.value")?;
            Schedule::constant(value)
                .map_err(|e| ConfigError::new(format!("schedule.value: {e}")))
        }
        "one_over_n" => Ok(Schedule::OneOverN),
        "one_over_n_sq" => Ok(Schedule::OneOverNSquared),
        "custom_list" => {
            let values = s.vec_f64("schedule.values")?;
            Schedule::custom(values)
                .map_err(|e| ConfigError::new(format!("schedule.values: {e}")))
        }
        other => Err(ConfigError::new(format!(
            "unknown schedule.kind `{other}` (expected constant|one_over_n|one_over_n_sq|custom_list)"
        ))),
    }
}

/// Optional noise model from `noise.sigma` and `noise.law`.
pub fn noise_from(s: &SectionReader, seed: u64) -> Result<Option<NoiseModel>, ConfigError> {
    let sigma = match s.f64_opt("noise.sigma")? {
        None => return Ok(None),
        Some(sigma) => sigma,
    };
    if sigma < 0.0 {
        return Err(ConfigError::new("noise.sigma must be nonnegative"));
    }
    let law = match s.str_opt("noise.law").unwrap_or("gaussian_real") {
        "gaussian_real" => NoiseLaw::GaussianReal,
        "gaussian_complex" => NoiseLaw::GaussianComplex,
        "uniform_bounded" => NoiseLaw::UniformBounded,
        other => {
            return Err(ConfigError::new(format!(
            "unknown noise.law `{other}` (expected gaussian_real|gaussian_complex|uniform_bounded)"
        )))
        }
    };
    Ok(Some(NoiseModel { sigma, law, seed }))
}

pub fn random_points<R: Rng>(count: usize, dim: usize, rng: &mut R) -> Vec<Point> {
    (0..count)
        .map(|_| Point::new((0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()))
        .collect()
}

/// Points from a CSV file, one row per point, comma-separated coordinates.
pub fn load_points_csv(path: &Path) -> Result<Vec<Point>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(ConfigError::new(format!("{}: {e}", path.display()))))?;
    let mut points = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let coords: Option<Vec<f64>> = line.split(',').map(|c| c.trim().parse().ok()).collect();
        let coords = coords.ok_or_else(|| {
            CliError::Config(ConfigError::at(
                format!("{}: bad point row", path.display()),
                idx + 1,
            ))
        })?;
        points.push(Point::new(coords));
    }
    if points.is_empty() {
        return Err(CliError::Config(ConfigError::new(format!(
            "{}: no points",
            path.display()
        ))));
    }
    Ok(points)
}

/// Builds a channel family from the `family.*` keys. When `dim_override` is
/// set (kernel-level experiments operating on a Gram-factor feature space),
/// generated families are produced at that dimension and rotation families
/// fall back to scaled unitaries of the same column bound.
pub fn family_from<T: Scalar, R: Rng + ?Sized>(
    s: &SectionReader,
    dim_override: Option<usize>,
    rng: &mut R,
) -> Result<ChannelFamily<T>, CliError> {
    let kind = s.str("family.kind").map_err(CliError::Config)?;
    let family = match kind {
        "scaled_rotations" => {
            let c = s.f64("family.c").map_err(CliError::Config)?;
            let angles = s.vec_f64("family.angles").map_err(CliError::Config)?;
            match dim_override {
                None | Some(2) => scaled_rotation_family::<T>(c, &angles)
                    .map_err(|e| CliError::experiment("family", e))?,
                Some(dim) => scaled_unitary_family::<T, R>(c, angles.len(), dim, rng)
                    .map_err(|e| CliError::experiment("family", e))?,
            }
        }
        "scaled_unitaries" => {
            let c = s.f64("family.c").map_err(CliError::Config)?;
            let d = s.usize("family.d").map_err(CliError::Config)?;
            let dim = match dim_override {
                Some(dim) => dim,
                None => s.usize("family.dim").map_err(CliError::Config)?,
            };
            scaled_unitary_family::<T, R>(c, d, dim, rng)
                .map_err(|e| CliError::experiment("family", e))?
        }
        "random_contraction" => {
            let cap = s.f64("family.norm_cap").map_err(CliError::Config)?;
            let d = s.usize("family.d").map_err(CliError::Config)?;
            let dim = match dim_override {
                Some(dim) => dim,
                None => s.usize("family.dim").map_err(CliError::Config)?,
            };
            random_contraction_family::<T, R>(d, dim, cap, rng)
                .map_err(|e| CliError::experiment("family", e))?
        }
        "literal" => {
            let d = s.usize("family.d").map_err(CliError::Config)?;
            let mut channels = Vec::with_capacity(d);
            for i in 1..=d {
                let rows = s
                    .matrix_opt(&format!("family.channel.{i}"))
                    .map_err(CliError::Config)?
                    .ok_or_else(|| {
                        CliError::Config(ConfigError::new(format!("missing family.channel.{i}")))
                    })?;
                let nrows = rows.len();
                let ncols = rows.first().map_or(0, Vec::len);
                let flat: Vec<T> = rows.iter().flatten().map(|&v| T::from_real(v)).collect();
                channels.push(nalgebra::DMatrix::from_row_slice(nrows, ncols, &flat));
            }
            ChannelFamily::new(channels).map_err(|e| CliError::experiment("family", e))?
        }
        other => {
            return Err(CliError::Config(ConfigError::new(format!(
                "unknown family.kind `{other}`"
            ))))
        }
    };
    match s.f64_opt("family.certify_c").map_err(CliError::Config)? {
        Some(c) => family
            .with_contraction_bound(c)
            .map_err(|e| CliError::experiment("family.certify_c", e)),
        None => Ok(family),
    }
}
