//! Contraction products and telescoping energy ledgers.
//!
//! A contraction `A` dissipates `‖D_A x‖²` per application, where
//! `D_A = (I - A*A)^{1/2}`. Running a product `T_N = A_N ⋯ A_1` therefore
//! satisfies, exactly,
//!
//! ```text
//! ‖x‖² = ‖T_N x‖² + Σ_{n≤N} ‖D_{A_n} T_{n-1} x‖²
//! ```
//!
//! and the [`EnergyLedger`] records every term so the identity can be
//! reconstructed and audited after the run. Relaxed factors `A = I - λP`
//! carry their defect in closed form, `D = √(λ(2-λ))·P`, avoiding
//! eigensolver noise in identity checks.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::hilbert::{psd_sqrt, spectral_norm_estimate, Operator, Projection, Scalar, Vector};
use crate::{Error, Result};

/// Slack accepted on the spectral-norm estimate when validating contractions.
pub const TOL_CONTRACT: f64 = 1e-8;

/// Absolute floor for relative energy comparisons.
pub const ENERGY_FLOOR: f64 = 1e-14;

/// How the defect operator of a step is represented.
#[derive(Debug, Clone)]
enum DefectForm<T: Scalar> {
    /// Explicit PSD square root of `I - A*A`.
    Dense { a: Operator<T>, defect: Operator<T> },
    /// `A = I - λP` with `D = √(λ(2-λ))·P` in closed form.
    Relaxed {
        lambda: f64,
        projection: Projection<T>,
    },
}

/// One contraction factor together with its defect operator.
#[derive(Debug, Clone)]
pub struct ContractionStep<T: Scalar> {
    form: DefectForm<T>,
    dim: usize,
}

impl<T: Scalar> ContractionStep<T> {
    /// Builds a step from a general contraction, computing
    /// `D = (I - A*A)^{1/2}` by eigendecomposition.
    pub fn from_operator(a: Operator<T>) -> Result<Self> {
        let norm = spectral_norm_estimate(&a);
        if norm > 1.0 + TOL_CONTRACT {
            return Err(Error::NotContraction { norm });
        }
        let dim = a.nrows();
        let m = Operator::<T>::identity(dim, dim) - a.adjoint() * &a;
        // Rounding in A*A scales with ‖A‖², not with ‖I - A*A‖, so the
        // clamping tolerance must not collapse for near-isometries.
        let tol_neg = 1e-10 * (1.0 + a.norm_squared());
        let defect = psd_sqrt(&m, tol_neg)?;
        Ok(Self {
            form: DefectForm::Dense { a, defect },
            dim,
        })
    }

    /// Builds the relaxed factor `A = I - λP` for `0 < λ < 2`.
    pub fn relaxed(projection: Projection<T>, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda < 2.0) {
            return Err(Error::LambdaOutOfRange { lambda });
        }
        let dim = projection.dim();
        Ok(Self {
            form: DefectForm::Relaxed { lambda, projection },
            dim,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lambda(&self) -> Option<f64> {
        match &self.form {
            DefectForm::Dense { .. } => None,
            DefectForm::Relaxed { lambda, .. } => Some(*lambda),
        }
    }

    pub fn projection(&self) -> Option<&Projection<T>> {
        match &self.form {
            DefectForm::Dense { .. } => None,
            DefectForm::Relaxed { projection, .. } => Some(projection),
        }
    }

    /// Applies `A` without materializing it for relaxed steps.
    pub fn apply(&self, x: &Vector<T>) -> Vector<T> {
        match &self.form {
            DefectForm::Dense { a, .. } => a * x,
            DefectForm::Relaxed { lambda, projection } => {
                x - projection.apply(x) * T::from_real(*lambda)
            }
        }
    }

    /// Applies the defect operator `D`.
    pub fn defect_apply(&self, x: &Vector<T>) -> Vector<T> {
        match &self.form {
            DefectForm::Dense { defect, .. } => defect * x,
            DefectForm::Relaxed { lambda, projection } => {
                projection.apply(x) * T::from_real((lambda * (2.0 - lambda)).sqrt())
            }
        }
    }

    /// Energy dissipated by this step at `x`: `‖Dx‖²`, which for relaxed
    /// steps is `λ(2-λ)‖Px‖²`.
    pub fn dissipated(&self, x: &Vector<T>) -> f64 {
        match &self.form {
            DefectForm::Dense { defect, .. } => (defect * x).norm_squared(),
            DefectForm::Relaxed { lambda, projection } => {
                lambda * (2.0 - lambda) * projection.apply(x).norm_squared()
            }
        }
    }

    /// Materializes `A` as a matrix.
    pub fn a_matrix(&self) -> Operator<T> {
        match &self.form {
            DefectForm::Dense { a, .. } => a.clone(),
            DefectForm::Relaxed { lambda, projection } => {
                Operator::<T>::identity(self.dim, self.dim)
                    - projection.matrix() * T::from_real(*lambda)
            }
        }
    }

    /// Materializes `D` as a matrix.
    pub fn defect_matrix(&self) -> Operator<T> {
        match &self.form {
            DefectForm::Dense { defect, .. } => defect.clone(),
            DefectForm::Relaxed { lambda, projection } => {
                projection.matrix() * T::from_real((lambda * (2.0 - lambda)).sqrt())
            }
        }
    }
}

/// Per-step record of a product run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LedgerStep {
    pub step_index: usize,
    pub dissipated: f64,
    pub running_energy: f64,
}

/// Exact energy bookkeeping for a product run: `initial_energy` equals the
/// final running energy plus everything dissipated along the way.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnergyLedger {
    pub initial_energy: f64,
    pub steps: Vec<LedgerStep>,
}

impl EnergyLedger {
    pub fn new(initial_energy: f64) -> Self {
        Self {
            initial_energy,
            steps: Vec::new(),
        }
    }

    pub fn push(&mut self, dissipated: f64, running_energy: f64) {
        let step_index = self.steps.len() + 1;
        self.steps.push(LedgerStep {
            step_index,
            dissipated,
            running_energy,
        });
    }

    pub fn total_dissipated(&self) -> f64 {
        self.steps.iter().map(|s| s.dissipated).sum()
    }

    pub fn final_energy(&self) -> f64 {
        self.steps
            .last()
            .map_or(self.initial_energy, |s| s.running_energy)
    }

    /// `|initial - final - Σ dissipated|`.
    pub fn identity_residual(&self) -> f64 {
        (self.initial_energy - self.final_energy() - self.total_dissipated()).abs()
    }

    /// Checks the telescoping identity at relative tolerance `rel_tol`,
    /// nonnegative dissipation, and nonincreasing running energy.
    pub fn verify(&self, rel_tol: f64) -> bool {
        let scale = self.initial_energy.max(ENERGY_FLOOR);
        if self.identity_residual() > rel_tol * scale {
            return false;
        }
        let mut prev = self.initial_energy;
        for step in &self.steps {
            if step.dissipated < 0.0 {
                return false;
            }
            if step.running_energy > prev + rel_tol * scale {
                return false;
            }
            prev = step.running_energy;
        }
        true
    }

    /// Writes `step,dissipated,running_energy` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "step,dissipated,running_energy")?;
        for s in &self.steps {
            writeln!(
                w,
                "{},{:.16e},{:.16e}",
                s.step_index, s.dissipated, s.running_energy
            )?;
        }
        Ok(())
    }
}

/// Relaxation schedule with every value in `(0, 2)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Schedule {
    Constant(f64),
    OneOverN,
    OneOverNSquared,
    Custom(Vec<f64>),
}

impl Schedule {
    pub fn constant(lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda < 2.0) {
            return Err(Error::LambdaOutOfRange { lambda });
        }
        Ok(Self::Constant(lambda))
    }

    pub fn custom(values: Vec<f64>) -> Result<Self> {
        for &lambda in &values {
            if !(lambda > 0.0 && lambda < 2.0) {
                return Err(Error::LambdaOutOfRange { lambda });
            }
        }
        Ok(Self::Custom(values))
    }

    /// λ_n for 1-based step index `n`.
    pub fn lambda(&self, n: usize) -> f64 {
        assert!(n >= 1, "schedule index is 1-based");
        match self {
            Self::Constant(l) => *l,
            Self::OneOverN => 1.0 / n as f64,
            Self::OneOverNSquared => 1.0 / (n as f64 * n as f64),
            Self::Custom(v) => v[n - 1],
        }
    }
}

/// Runs `T_N x = A_N ⋯ A_1 x`, recording the exact energy ledger.
pub fn run_product<T: Scalar>(
    steps: &[ContractionStep<T>],
    x: &Vector<T>,
) -> Result<(Vector<T>, EnergyLedger)> {
    let mut current = x.clone();
    let mut ledger = EnergyLedger::new(current.norm_squared());
    for step in steps {
        if step.dim() != current.nrows() {
            return Err(Error::DimensionMismatch {
                expected: current.nrows(),
                found: step.dim(),
            });
        }
        let dissipated = step.dissipated(&current);
        current = step.apply(&current);
        ledger.push(dissipated, current.norm_squared());
    }
    Ok((current, ledger))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SummabilityVerdict {
    /// The caller asserted an analytic tail bound, so Σ λ_n/(2-λ_n) < ∞ and
    /// the schedule is sufficient for strong convergence of the products.
    SufficientIfSummable,
    /// No tail information: the partial sum alone proves nothing.
    Inconclusive,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummabilityReport {
    pub partial_sum: f64,
    pub verdict: SummabilityVerdict,
    pub tail_tag: Option<String>,
}

/// Partial sum of `Σ λ_n/(2-λ_n)` up to `horizon`. The criterion is
/// sufficient only; the verdict never claims divergence, and it upgrades to
/// [`SummabilityVerdict::SufficientIfSummable`] only when the caller supplies
/// a closed-form tail tag asserting summability of the full series.
pub fn summability_criterion(
    schedule: &Schedule,
    horizon: usize,
    tail_bound_tag: Option<&str>,
) -> SummabilityReport {
    assert!(horizon >= 1);
    let partial_sum = (1..=horizon)
        .map(|n| {
            let l = schedule.lambda(n);
            l / (2.0 - l)
        })
        .sum();
    SummabilityReport {
        partial_sum,
        verdict: match tail_bound_tag {
            Some(_) => SummabilityVerdict::SufficientIfSummable,
            None => SummabilityVerdict::Inconclusive,
        },
        tail_tag: tail_bound_tag.map(str::to_owned),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EffectivenessReport {
    /// `Σ_{n > N/2} ‖T_n x - T_{n-1} x‖` per probe.
    pub cauchy_tails: Vec<f64>,
    pub effective_numerically: bool,
}

/// Numerical surrogate for strong convergence of the products: sums step
/// differences over the last half of the available horizon for each probe.
/// This diagnoses, it does not prove; strong convergence is an
/// infinite-horizon property.
pub fn effectiveness_diagnostic<T: Scalar>(
    steps: &[ContractionStep<T>],
    probes: &[Vector<T>],
    eps: f64,
) -> Result<EffectivenessReport> {
    assert!(!steps.is_empty() && !probes.is_empty());
    let tail_start = steps.len() / 2; // steps with 1-based index > N/2
    let mut cauchy_tails = Vec::with_capacity(probes.len());
    for probe in probes {
        let mut current = probe.clone();
        let mut tail = 0.0;
        for (i, step) in steps.iter().enumerate() {
            if step.dim() != current.nrows() {
                return Err(Error::DimensionMismatch {
                    expected: current.nrows(),
                    found: step.dim(),
                });
            }
            let next = step.apply(&current);
            if i >= tail_start {
                tail += (&next - &current).norm();
            }
            current = next;
        }
        cauchy_tails.push(tail);
    }
    let effective_numerically = cauchy_tails.iter().all(|&t| t < eps);
    Ok(EffectivenessReport {
        cauchy_tails,
        effective_numerically,
    })
}
