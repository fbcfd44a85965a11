//! Relaxed Kaczmarz interpolation in an RKHS.
//!
//! The update
//!
//! ```text
//! f_n = f_{n-1} + λ_n (y_n - f_{n-1}(x_n)) k_{x_n} / k(x_n, x_n)
//! ```
//!
//! dissipates `λ_n(2-λ_n)|y_n - f_{n-1}(x_n)|²/k(x_n,x_n)` of squared error
//! per step, and when the data admit an interpolant `f*` the balance
//! `‖f* - f_N‖² = ‖f* - f_0‖² - Σ dissipated` holds exactly. The noisy
//! variant keeps the same update with `y_n = f*(x_n) + ε_n` and tracks the
//! squared-error recursion with cross terms retained, so the bias-variance
//! decomposition can be audited per path and in the Monte Carlo mean.

use std::io::{self, Write};

use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::rkhs::{Kernel, Point, RkhsFunction};
use crate::telescope::Schedule;
use crate::{Error, Result, Scalar};

/// A sequence of interpolation constraints with an optional ground truth.
#[derive(Debug, Clone)]
pub struct InterpolationProblem<T: Scalar> {
    pub kernel: Kernel<T>,
    pub samples: Vec<(Point, T)>,
    pub truth: Option<RkhsFunction<T>>,
    pub schedule: Schedule,
}

impl<T: Scalar> InterpolationProblem<T> {
    /// Builds the noiseless problem for a known truth: `y_n = f*(x_n)`.
    pub fn from_truth(truth: RkhsFunction<T>, points: Vec<Point>, schedule: Schedule) -> Self {
        let samples = points
            .into_iter()
            .map(|x| {
                let y = truth.evaluate(&x);
                (x, y)
            })
            .collect();
        Self {
            kernel: truth.kernel().clone(),
            samples,
            truth: Some(truth),
            schedule,
        }
    }

    pub fn truth_norm_squared(&self) -> Result<f64> {
        self.truth
            .as_ref()
            .map(RkhsFunction::norm_squared)
            .ok_or(Error::MissingTruth)
    }
}

/// Noise law applied to the observations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NoiseLaw {
    GaussianReal,
    GaussianComplex,
    UniformBounded,
}

/// Mean-zero noise with second moment at most `sigma²`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoiseModel {
    pub sigma: f64,
    pub law: NoiseLaw,
    pub seed: u64,
}

impl NoiseModel {
    pub fn sample<T: Scalar, R: Rng + ?Sized>(&self, rng: &mut R) -> Result<T> {
        if self.sigma == 0.0 {
            return Ok(T::zero());
        }
        match self.law {
            NoiseLaw::GaussianReal => {
                let z: f64 = StandardNormal.sample(rng);
                Ok(T::from_real(self.sigma * z))
            }
            NoiseLaw::GaussianComplex => {
                let re: f64 = StandardNormal.sample(rng);
                let im: f64 = StandardNormal.sample(rng);
                let s = self.sigma * std::f64::consts::FRAC_1_SQRT_2;
                T::try_from_re_im(s * re, s * im).ok_or(Error::ComplexNoiseInRealMode)
            }
            NoiseLaw::UniformBounded => {
                let u: f64 = rng.random_range(-1.0..1.0);
                Ok(T::from_real(self.sigma * 3.0_f64.sqrt() * u))
            }
        }
    }
}

/// Per-step record of a Kaczmarz run.
#[derive(Debug, Clone)]
pub struct KaczmarzStep<T: Scalar> {
    /// `y_n - f_{n-1}(x_n)`
    pub residual: T,
    /// `k(x_n, x_n)`
    pub diag: f64,
    pub lambda: f64,
    /// `λ_n(2-λ_n)|residual|²/diag`
    pub dissipated: f64,
}

/// Full trace of a (noiseless) run.
#[derive(Debug, Clone)]
pub struct KaczmarzTrace<T: Scalar> {
    pub steps: Vec<KaczmarzStep<T>>,
    pub final_function: RkhsFunction<T>,
    /// `‖f* - f_n‖` for n = 0..=N, present when the problem carries a truth.
    pub error_norms: Option<Vec<f64>>,
    /// `‖f* - f_0‖²` when the truth is present.
    pub initial_error_sq: Option<f64>,
}

impl<T: Scalar> KaczmarzTrace<T> {
    pub fn total_dissipated(&self) -> f64 {
        self.steps.iter().map(|s| s.dissipated).sum()
    }

    /// Residual of the exact energy balance
    /// `‖e_N‖² = ‖e_0‖² - Σ dissipated`, relative to `‖e_0‖²`.
    pub fn energy_balance_residual(&self) -> Option<f64> {
        let errs = self.error_norms.as_ref()?;
        let init = self.initial_error_sq?;
        let last = errs.last()?;
        let lhs = last * last;
        let rhs = init - self.total_dissipated();
        Some((lhs - rhs).abs() / init.max(1e-14))
    }

    /// Writes `step,residual_abs,dissipated,running_error_sq` rows; the last
    /// column is empty when no truth was supplied.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "step,residual_abs,dissipated,running_error_sq")?;
        for (i, s) in self.steps.iter().enumerate() {
            let err_col = match &self.error_norms {
                Some(errs) => {
                    let e = errs[i + 1];
                    format!("{:.16e}", e * e)
                }
                None => String::new(),
            };
            writeln!(
                w,
                "{},{:.16e},{:.16e},{}",
                i + 1,
                s.residual.modulus(),
                s.dissipated,
                err_col
            )?;
        }
        Ok(())
    }
}

/// One Kaczmarz update in place; shared by the noiseless and noisy drivers so
/// the two paths are bit-identical when the noise vanishes.
fn kaczmarz_update<T: Scalar>(
    f: &mut RkhsFunction<T>,
    x: &Point,
    y: T,
    lambda: f64,
) -> Result<KaczmarzStep<T>> {
    let diag = f.kernel().diag_checked(x)?;
    let residual = y - f.evaluate(x);
    f.add_scaled_section(x, T::from_real(lambda / diag) * residual);
    Ok(KaczmarzStep {
        residual,
        diag,
        lambda,
        dissipated: lambda * (2.0 - lambda) * residual.modulus_squared() / diag,
    })
}

/// Runs the relaxed Kaczmarz iteration for `horizon` steps starting from
/// `start` (use the zero function for the standard dynamics). When the
/// problem carries a truth, error norms are computed exactly through
/// expansion inner products.
pub fn kaczmarz_run<T: Scalar>(
    prob: &InterpolationProblem<T>,
    start: &RkhsFunction<T>,
    horizon: usize,
) -> Result<KaczmarzTrace<T>> {
    if horizon > prob.samples.len() {
        return Err(Error::HorizonTooLong {
            horizon,
            samples: prob.samples.len(),
        });
    }
    if start.kernel() != &prob.kernel {
        return Err(Error::KernelMismatch);
    }
    let mut f = start.clone();
    let mut error_tracker = match &prob.truth {
        Some(truth) => {
            let e0 = truth.linear_combination(T::one(), start, -T::one())?;
            let init_sq = e0.norm_squared();
            Some((e0, vec![init_sq.max(0.0).sqrt()], init_sq))
        }
        None => None,
    };
    let mut steps = Vec::with_capacity(horizon);
    for n in 1..=horizon {
        let (x, y) = prob.samples[n - 1].clone();
        let lambda = prob.schedule.lambda(n);
        let step = kaczmarz_update(&mut f, &x, y, lambda)?;
        if let Some((e, norms, _)) = error_tracker.as_mut() {
            // e_n = e_{n-1} - λ(r/diag)k_x, mirroring the update on f
            e.add_scaled_section(&x, -(T::from_real(lambda / step.diag) * step.residual));
            norms.push(e.norm_squared().max(0.0).sqrt());
        }
        steps.push(step);
    }
    let (error_norms, initial_error_sq) = match error_tracker {
        Some((_, norms, init)) => (Some(norms), Some(init)),
        None => (None, None),
    };
    Ok(KaczmarzTrace {
        steps,
        final_function: f,
        error_norms,
        initial_error_sq,
    })
}

/// Checks the residual-series bound `Σ dissipated ≤ ‖f*‖²`.
pub fn residual_series_bound_check<T: Scalar>(
    trace: &KaczmarzTrace<T>,
    f_star_norm_sq: f64,
) -> Result<bool> {
    if trace.error_norms.is_none() {
        return Err(Error::MissingTruth);
    }
    Ok(trace.total_dissipated() <= f_star_norm_sq * (1.0 + 1e-8) + 1e-14)
}

/// Single noisy path with the exact squared-error recursion.
#[derive(Debug, Clone)]
pub struct NoisyPath<T: Scalar> {
    pub residuals: Vec<T>,
    pub dissipated: Vec<f64>,
    /// `‖e_n‖²` for n = 0..=N from the pathwise recursion
    /// `‖e_n‖² = ‖u_n‖² + ‖v_n‖² - 2Re⟨u_n,v_n⟩` (cross terms retained).
    pub error_sq: Vec<f64>,
    /// cumulative `Σ λ(2-λ)‖P e‖²`
    pub cumulative_dissipation: Vec<f64>,
    /// cumulative `Σ λ²|ε|²/k(x,x)`
    pub cumulative_noise: Vec<f64>,
    /// cumulative `Σ (-2Re⟨u,v⟩)`
    pub cumulative_cross: Vec<f64>,
    pub final_function: RkhsFunction<T>,
}

/// Runs one noisy trial. The per-trial noise stream is
/// `ChaCha8(seed = noise.seed, stream = trial)`, so trials are independent
/// and reproducible.
pub fn noisy_kaczmarz_path<T: Scalar>(
    prob: &InterpolationProblem<T>,
    noise: &NoiseModel,
    horizon: usize,
    trial: u64,
) -> Result<NoisyPath<T>> {
    if horizon > prob.samples.len() {
        return Err(Error::HorizonTooLong {
            horizon,
            samples: prob.samples.len(),
        });
    }
    let truth = prob.truth.as_ref().ok_or(Error::MissingTruth)?;
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    rng.set_stream(trial);

    let mut f = RkhsFunction::zero(prob.kernel.clone());
    let mut e_sq = truth.norm_squared();
    let mut residuals = Vec::with_capacity(horizon);
    let mut dissipated = Vec::with_capacity(horizon);
    let mut error_sq = vec![e_sq];
    let mut cum_diss = vec![0.0];
    let mut cum_noise = vec![0.0];
    let mut cum_cross = vec![0.0];

    for n in 1..=horizon {
        let x = &prob.samples[n - 1].0;
        let lambda = prob.schedule.lambda(n);
        let diag = prob.kernel.diag_checked(x)?;
        let clean = truth.evaluate(x);
        let f_eval = f.evaluate(x);
        let e_eval = clean - f_eval;
        let eps: T = noise.sample(&mut rng)?;
        let y = if noise.sigma == 0.0 {
            clean
        } else {
            clean + eps
        };
        let step = kaczmarz_update(&mut f, x, y, lambda)?;

        // exact expansion of ‖e_n‖² = ‖u_n - v_n‖² with
        //   u_n = (I - λP)e_{n-1},  v_n = λ ε k_x / k(x,x)
        let proj_energy = e_eval.modulus_squared() / diag;
        let diss = lambda * (2.0 - lambda) * proj_energy;
        let u_sq = e_sq - diss;
        let v_sq = lambda * lambda * eps.modulus_squared() / diag;
        let cross = -2.0 * (eps * e_eval.conjugate()).real() * lambda * (1.0 - lambda) / diag;
        e_sq = u_sq + v_sq + cross;

        residuals.push(step.residual);
        dissipated.push(step.dissipated);
        error_sq.push(e_sq);
        cum_diss.push(cum_diss[n - 1] + diss);
        cum_noise.push(cum_noise[n - 1] + v_sq);
        cum_cross.push(cum_cross[n - 1] + cross);
    }

    Ok(NoisyPath {
        residuals,
        dissipated,
        error_sq,
        cumulative_dissipation: cum_diss,
        cumulative_noise: cum_noise,
        cumulative_cross: cum_cross,
        final_function: f,
    })
}

/// Monte Carlo aggregate of noisy runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoisyKaczmarzReport {
    /// Empirical `E‖e_n‖²` for n = 0..=N.
    pub mean_error_sq: Vec<f64>,
    /// Mean cumulative dissipation term of the bias-variance decomposition.
    pub dissipated_mean: Vec<f64>,
    /// Mean cumulative noise term `Σ λ²E|ε|²/k`.
    pub noise_term: Vec<f64>,
    /// Mean cumulative cross term; averages toward zero under the mean-zero
    /// noise assumption.
    pub cross_term_mean: Vec<f64>,
    pub error_sq_stderr: Vec<f64>,
    pub cross_term_stderr: Vec<f64>,
    /// Max relative defect of the per-path identity
    /// `‖e_n‖² = ‖f*‖² - Σdiss + Σnoise + Σcross` across all trials/steps.
    pub pathwise_identity_max_residual: f64,
    pub truth_norm_sq: f64,
}

/// Runs `trials` independent noisy paths and aggregates the squared-error
/// trajectory and the terms of its decomposition.
pub fn noisy_kaczmarz_run<T: Scalar>(
    prob: &InterpolationProblem<T>,
    noise: &NoiseModel,
    horizon: usize,
    trials: usize,
) -> Result<NoisyKaczmarzReport> {
    assert!(trials >= 1);
    let truth_norm_sq = prob.truth_norm_squared()?;
    let len = horizon + 1;
    let mut sum = vec![0.0; len];
    let mut sum_sq = vec![0.0; len];
    let mut diss_sum = vec![0.0; len];
    let mut noise_sum = vec![0.0; len];
    let mut cross_sum = vec![0.0; len];
    let mut cross_sq = vec![0.0; len];
    let mut max_identity_residual = 0.0_f64;

    for trial in 0..trials {
        let path = noisy_kaczmarz_path(prob, noise, horizon, trial as u64)?;
        for n in 0..len {
            let e = path.error_sq[n];
            sum[n] += e;
            sum_sq[n] += e * e;
            diss_sum[n] += path.cumulative_dissipation[n];
            noise_sum[n] += path.cumulative_noise[n];
            let c = path.cumulative_cross[n];
            cross_sum[n] += c;
            cross_sq[n] += c * c;
            let reconstructed = truth_norm_sq - path.cumulative_dissipation[n]
                + path.cumulative_noise[n]
                + path.cumulative_cross[n];
            let residual = (e - reconstructed).abs() / truth_norm_sq.max(1e-14);
            max_identity_residual = max_identity_residual.max(residual);
        }
    }

    let t = trials as f64;
    let stderr = |sums: &[f64], sq: &[f64], n: usize| -> f64 {
        if trials < 2 {
            return 0.0;
        }
        let mean = sums[n] / t;
        let var = ((sq[n] / t - mean * mean) * t / (t - 1.0)).max(0.0);
        (var / t).sqrt()
    };

    Ok(NoisyKaczmarzReport {
        mean_error_sq: (0..len).map(|n| sum[n] / t).collect(),
        dissipated_mean: (0..len).map(|n| diss_sum[n] / t).collect(),
        noise_term: (0..len).map(|n| noise_sum[n] / t).collect(),
        cross_term_mean: (0..len).map(|n| cross_sum[n] / t).collect(),
        error_sq_stderr: (0..len).map(|n| stderr(&sum, &sum_sq, n)).collect(),
        cross_term_stderr: (0..len).map(|n| stderr(&cross_sum, &cross_sq, n)).collect(),
        pathwise_identity_max_residual: max_identity_residual,
        truth_norm_sq,
    })
}

/// Right side of the noise-floor bound
/// `E‖e_N‖² ≤ ‖f*‖² + (σ²/κ) Σ_{n≤N} λ_n²`, after checking that every
/// sampled diagonal clears `kappa`.
pub fn noise_floor_bound<T: Scalar>(
    prob: &InterpolationProblem<T>,
    noise: &NoiseModel,
    kappa: f64,
    horizon: usize,
) -> Result<f64> {
    let truth_norm_sq = prob.truth_norm_squared()?;
    for (x, _) in prob.samples.iter().take(horizon) {
        let diag = prob.kernel.diag(x);
        if diag < kappa {
            return Err(Error::KappaViolated { diag, kappa });
        }
    }
    let lambda_sq_sum: f64 = (1..=horizon)
        .map(|n| {
            let l = prob.schedule.lambda(n);
            l * l
        })
        .sum();
    Ok(truth_norm_sq + noise.sigma * noise.sigma / kappa * lambda_sq_sum)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{Projection, Vector};
    use crate::rkhs::{gram, isometric_span_factor, span_coordinates};
    use crate::telescope::{run_product, ContractionStep};
    use rand::RngExt;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_point<R: Rng>(dim: usize, rng: &mut R) -> Point {
        Point::new((0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    fn random_truth<R: Rng>(
        kernel: &Kernel<f64>,
        anchors: usize,
        dim: usize,
        rng: &mut R,
    ) -> RkhsFunction<f64> {
        let pts: Vec<_> = (0..anchors).map(|_| random_point(dim, rng)).collect();
        let coeffs: Vec<f64> = (0..anchors).map(|_| rng.random_range(-1.0..1.0)).collect();
        RkhsFunction::new(kernel.clone(), pts, coeffs).unwrap()
    }

    #[test]
    fn orthogonal_sections_interpolated_in_two_steps() {
        let kernel = Kernel::<f64>::Linear;
        let e1 = Point::new(vec![1.0, 0.0]);
        let e2 = Point::new(vec![0.0, 1.0]);
        let prob = InterpolationProblem {
            kernel: kernel.clone(),
            samples: vec![(e1.clone(), 1.0), (e2.clone(), 2.0)],
            truth: None,
            schedule: Schedule::Constant(1.0),
        };
        let trace = kaczmarz_run(&prob, &RkhsFunction::zero(kernel), 2).unwrap();
        assert!((trace.final_function.evaluate(&e1) - 1.0).abs() < 1e-14);
        assert!((trace.final_function.evaluate(&e2) - 2.0).abs() < 1e-14);
    }

    #[test]
    fn zero_horizon_returns_start() {
        let kernel = Kernel::<f64>::gaussian(1.0);
        let mut r = rng(1);
        let start = random_truth(&kernel, 3, 2, &mut r);
        let prob = InterpolationProblem {
            kernel: kernel.clone(),
            samples: vec![(random_point(2, &mut r), 0.0)],
            truth: None,
            schedule: Schedule::Constant(1.0),
        };
        let trace = kaczmarz_run(&prob, &start, 0).unwrap();
        assert!(trace.steps.is_empty());
        assert!(start.distance_squared(&trace.final_function).unwrap().abs() < 1e-14);
    }

    #[test]
    fn horizon_beyond_samples_rejected() {
        let kernel = Kernel::<f64>::gaussian(1.0);
        let prob = InterpolationProblem {
            kernel: kernel.clone(),
            samples: vec![(Point::new(vec![0.0]), 0.0)],
            truth: None,
            schedule: Schedule::Constant(1.0),
        };
        assert!(matches!(
            kaczmarz_run(&prob, &RkhsFunction::zero(kernel), 2),
            Err(Error::HorizonTooLong { .. })
        ));
    }

    /// Energy balance with both sides computed independently: the left from
    /// per-step residuals, the right from Gram quadratic forms.
    #[test]
    fn exact_energy_balance_gaussian() {
        let kernel = Kernel::<f64>::gaussian(0.6);
        let mut r = rng(4);
        let truth = random_truth(&kernel, 5, 2, &mut r);
        let points: Vec<_> = (0..30).map(|_| random_point(2, &mut r)).collect();
        let prob = InterpolationProblem::from_truth(truth.clone(), points, Schedule::Constant(1.0));
        let trace = kaczmarz_run(&prob, &RkhsFunction::zero(kernel.clone()), 30).unwrap();

        // left side: per-step dissipation sum (residual route)
        let lhs = trace.total_dissipated();
        // right side: ‖f*‖² - ‖f* - f_30‖² via Gram quadratic forms
        let err = truth
            .linear_combination(1.0, &trace.final_function, -1.0)
            .unwrap();
        let rhs = truth.norm_squared() - err.norm_squared();
        assert!((lhs - rhs).abs() <= 1e-8 * truth.norm_squared().max(1e-14));
        assert!(trace.energy_balance_residual().unwrap() <= 1e-8);
        assert!(residual_series_bound_check(&trace, truth.norm_squared()).unwrap());
    }

    #[test]
    fn monotone_error_norms() {
        let kernel = Kernel::<f64>::gaussian(1.1);
        let mut r = rng(6);
        let truth = random_truth(&kernel, 4, 2, &mut r);
        let points: Vec<_> = (0..20).map(|_| random_point(2, &mut r)).collect();
        let prob = InterpolationProblem::from_truth(truth, points, Schedule::OneOverN);
        let trace = kaczmarz_run(&prob, &RkhsFunction::zero(kernel), 20).unwrap();
        let errs = trace.error_norms.unwrap();
        for w in errs.windows(2) {
            assert!(w[1] <= w[0] + 1e-10);
        }
    }

    #[test]
    fn residual_bound_zero_truth() {
        let kernel = Kernel::<f64>::gaussian(1.0);
        let truth = RkhsFunction::zero(kernel.clone());
        let mut r = rng(8);
        let points: Vec<_> = (0..5).map(|_| random_point(2, &mut r)).collect();
        let prob = InterpolationProblem::from_truth(truth, points, Schedule::Constant(1.0));
        let trace = kaczmarz_run(&prob, &RkhsFunction::zero(kernel), 5).unwrap();
        assert!(trace.total_dissipated().abs() < 1e-20);
        assert!(residual_series_bound_check(&trace, 0.0).unwrap());
    }

    /// All samples at one point: the bound still holds (adversarial horizon).
    #[test]
    fn residual_bound_identical_points() {
        let kernel = Kernel::<f64>::gaussian(0.5);
        let mut r = rng(9);
        let truth = random_truth(&kernel, 3, 2, &mut r);
        let x = random_point(2, &mut r);
        let points = vec![x; 40];
        let prob = InterpolationProblem::from_truth(truth.clone(), points, Schedule::Constant(0.7));
        let trace = kaczmarz_run(&prob, &RkhsFunction::zero(kernel), 40).unwrap();
        assert!(residual_series_bound_check(&trace, truth.norm_squared()).unwrap());
        // repeated anchors stay merged
        assert!(trace.final_function.num_anchors() <= 1);
    }

    #[test]
    fn missing_truth_is_reported() {
        let kernel = Kernel::<f64>::gaussian(1.0);
        let prob = InterpolationProblem {
            kernel: kernel.clone(),
            samples: vec![(Point::new(vec![0.1]), 0.3)],
            truth: None,
            schedule: Schedule::Constant(1.0),
        };
        let trace = kaczmarz_run(&prob, &RkhsFunction::zero(kernel), 1).unwrap();
        assert!(matches!(
            residual_series_bound_check(&trace, 1.0),
            Err(Error::MissingTruth)
        ));
        let noise = NoiseModel {
            sigma: 0.1,
            law: NoiseLaw::GaussianReal,
            seed: 0,
        };
        assert!(matches!(
            noisy_kaczmarz_run(&prob, &noise, 1, 2),
            Err(Error::MissingTruth)
        ));
    }

    /// The σ = 0 noisy path is bit-identical to the noiseless run.
    #[test]
    fn zero_noise_path_bit_identical() {
        let kernel = Kernel::<f64>::gaussian(0.8);
        let mut r = rng(12);
        let truth = random_truth(&kernel, 4, 2, &mut r);
        let points: Vec<_> = (0..25).map(|_| random_point(2, &mut r)).collect();
        let prob = InterpolationProblem::from_truth(truth, points, Schedule::OneOverN);
        let noise = NoiseModel {
            sigma: 0.0,
            law: NoiseLaw::GaussianReal,
            seed: 99,
        };
        let clean = kaczmarz_run(&prob, &RkhsFunction::zero(kernel), 25).unwrap();
        let noisy = noisy_kaczmarz_path(&prob, &noise, 25, 0).unwrap();
        for n in 0..25 {
            assert_eq!(noisy.residuals[n], clean.steps[n].residual);
            assert_eq!(noisy.dissipated[n], clean.steps[n].dissipated);
        }
        assert_eq!(noisy.final_function.coeffs(), clean.final_function.coeffs());
        // the recursion and the Gram quadratic form agree to rounding
        let errs = clean.error_norms.unwrap();
        for (e, path_sq) in errs.iter().zip(&noisy.error_sq) {
            assert!((path_sq - e * e).abs() <= 1e-10 * noisy.error_sq[0].max(1.0));
        }
    }

    /// Tiny λ with large σ: the mean squared error stays near ‖f*‖².
    #[test]
    fn small_lambda_large_noise_flat() {
        let kernel = Kernel::<f64>::gaussian(1.0);
        let mut r = rng(14);
        let truth = random_truth(&kernel, 3, 2, &mut r);
        let points: Vec<_> = (0..50).map(|_| random_point(2, &mut r)).collect();
        let prob =
            InterpolationProblem::from_truth(truth.clone(), points, Schedule::Constant(1e-4));
        let noise = NoiseModel {
            sigma: 2.0,
            law: NoiseLaw::GaussianReal,
            seed: 5,
        };
        let report = noisy_kaczmarz_run(&prob, &noise, 50, 200).unwrap();
        let last = *report.mean_error_sq.last().unwrap();
        let band = 3.0 * report.error_sq_stderr.last().unwrap() + 1e-3;
        assert!((last - truth.norm_squared()).abs() <= band);
    }

    /// Monte Carlo check of the noise-floor bound (Gaussian kernel, κ = 1).
    #[test]
    fn noise_floor_bound_holds_in_mean() {
        let kernel = Kernel::<f64>::gaussian(1.0);
        let mut r = rng(16);
        let truth = random_truth(&kernel, 4, 2, &mut r);
        let points: Vec<_> = (0..100).map(|_| random_point(2, &mut r)).collect();
        let prob = InterpolationProblem::from_truth(truth, points, Schedule::OneOverN);
        let noise = NoiseModel {
            sigma: 0.1,
            law: NoiseLaw::GaussianReal,
            seed: 3,
        };
        let report = noisy_kaczmarz_run(&prob, &noise, 100, 300).unwrap();
        assert!(report.pathwise_identity_max_residual <= 1e-10);
        for &n in &[10usize, 50, 100] {
            let bound = noise_floor_bound(&prob, &noise, 1.0, n).unwrap();
            let band = 3.0 * report.error_sq_stderr[n];
            assert!(
                report.mean_error_sq[n] <= bound + band,
                "n={n}: {} vs {}",
                report.mean_error_sq[n],
                bound + band
            );
            // cross terms average toward zero
            assert!(report.cross_term_mean[n].abs() <= 3.0 * report.cross_term_stderr[n] + 1e-12);
        }
    }

    #[test]
    fn noise_floor_bound_values() {
        let kernel = Kernel::<f64>::gaussian(1.0);
        let mut r = rng(18);
        let truth = random_truth(&kernel, 3, 2, &mut r);
        let points: Vec<_> = (0..100).map(|_| random_point(2, &mut r)).collect();
        let prob = InterpolationProblem::from_truth(truth.clone(), points, Schedule::OneOverN);
        let silent = NoiseModel {
            sigma: 0.0,
            law: NoiseLaw::GaussianReal,
            seed: 0,
        };
        let b0 = noise_floor_bound(&prob, &silent, 1.0, 100).unwrap();
        assert!((b0 - truth.norm_squared()).abs() < 1e-14);

        let noisy = NoiseModel {
            sigma: 0.1,
            law: NoiseLaw::GaussianReal,
            seed: 0,
        };
        let b1 = noise_floor_bound(&prob, &noisy, 1.0, 100).unwrap();
        let expected: f64 = (1..=100).map(|n| 1.0 / ((n * n) as f64)).sum::<f64>() * 0.01;
        assert!((b1 - truth.norm_squared() - expected).abs() < 1e-14);

        // bound is monotone in the horizon
        let mut prev = 0.0;
        for h in [10, 20, 50, 100] {
            let b = noise_floor_bound(&prob, &noisy, 1.0, h).unwrap();
            assert!(b >= prev);
            prev = b;
        }
    }

    #[test]
    fn kappa_violation_detected() {
        let kernel = Kernel::<f64>::gaussian(1.0);
        let mut r = rng(20);
        let truth = random_truth(&kernel, 2, 2, &mut r);
        // Gaussian diag ≡ 1 < κ = 1.5
        let points: Vec<_> = (0..5).map(|_| random_point(2, &mut r)).collect();
        let prob = InterpolationProblem::from_truth(truth, points, Schedule::Constant(1.0));
        let noise = NoiseModel {
            sigma: 0.1,
            law: NoiseLaw::GaussianReal,
            seed: 0,
        };
        assert!(matches!(
            noise_floor_bound(&prob, &noise, 1.5, 5),
            Err(Error::KappaViolated { .. })
        ));
    }

    #[test]
    fn complex_noise_rejected_in_real_mode() {
        let noise = NoiseModel {
            sigma: 0.5,
            law: NoiseLaw::GaussianComplex,
            seed: 1,
        };
        let mut r = rng(0);
        let drawn: Result<f64> = noise.sample(&mut r);
        assert!(matches!(drawn, Err(Error::ComplexNoiseInRealMode)));
        let ok: Result<nalgebra::Complex<f64>> = noise.sample(&mut r);
        assert!(ok.is_ok());
    }

    #[test]
    fn noise_model_moments() {
        let mut r = rng(30);
        for law in [NoiseLaw::GaussianReal, NoiseLaw::UniformBounded] {
            let noise = NoiseModel {
                sigma: 0.3,
                law,
                seed: 0,
            };
            let n = 20_000;
            let mut mean = 0.0;
            let mut second = 0.0;
            for _ in 0..n {
                let e: f64 = noise.sample(&mut r).unwrap();
                mean += e;
                second += e * e;
            }
            mean /= n as f64;
            second /= n as f64;
            assert!(mean.abs() < 0.01);
            assert!(second <= 0.3 * 0.3 * 1.05);
            assert!(second >= 0.3 * 0.3 * 0.9);
        }
    }

    /// The whole pipeline in the complex field: a genuinely complex Hermitian
    /// kernel, complex coefficients, and the exact energy balance.
    #[test]
    fn complex_kernel_energy_balance() {
        use nalgebra::Complex;
        use std::sync::Arc;
        // k(x,y) = e^{i(x-y)}·e^{-(x-y)²/2}: a product of the rank-one kernel
        // φ(x) = e^{ix} with a Gaussian, hence positive definite with unit
        // diagonal
        let eval = Arc::new(|x: &Point, y: &Point| {
            let d = x.coords()[0] - y.coords()[0];
            Complex::new(d.cos(), d.sin()) * (-0.5 * d * d).exp()
        });
        let kernel = Kernel::Custom { id: 7, eval };
        let mut r = rng(77);
        let anchors: Vec<_> = (0..4).map(|_| random_point(1, &mut r)).collect();
        let coeffs: Vec<Complex<f64>> = (0..4)
            .map(|_| Complex::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)))
            .collect();
        let truth = RkhsFunction::new(kernel.clone(), anchors, coeffs).unwrap();
        let points: Vec<_> = (0..20).map(|_| random_point(1, &mut r)).collect();
        let prob = InterpolationProblem::from_truth(truth.clone(), points, Schedule::Constant(0.9));
        let trace = kaczmarz_run(&prob, &RkhsFunction::zero(kernel), 20).unwrap();
        assert!(trace.energy_balance_residual().unwrap() <= 1e-8);
        assert!(residual_series_bound_check(&trace, truth.norm_squared()).unwrap());
        let errs = trace.error_norms.unwrap();
        for w in errs.windows(2) {
            assert!(w[1] <= w[0] + 1e-10);
        }
        // noisy complex path with complex noise keeps the decomposition exact
        let noise = NoiseModel {
            sigma: 0.05,
            law: NoiseLaw::GaussianComplex,
            seed: 78,
        };
        let report = noisy_kaczmarz_run(&prob, &noise, 20, 50).unwrap();
        assert!(report.pathwise_identity_max_residual <= 1e-10);
    }

    /// Cross-module oracle: the interpolation error e_n equals the telescope
    /// product T_n f* applied to the embedded truth, where the embedding maps
    /// the joint anchor set isometrically onto a dense model space.
    #[test]
    fn error_equals_telescope_product() {
        let mut r = rng(22);
        for trial in 0..8 {
            let kernel = Kernel::<f64>::gaussian(0.5 + 0.1 * trial as f64);
            let truth = random_truth(&kernel, 4, 2, &mut r);
            let points: Vec<_> = (0..12).map(|_| random_point(2, &mut r)).collect();
            let schedule = Schedule::OneOverN;
            let prob = InterpolationProblem::from_truth(truth.clone(), points.clone(), schedule);

            // span = truth anchors ∪ sample points, embedded via the PSD
            // square root of the joint Gram
            let mut span: Vec<Point> = truth.anchors().to_vec();
            for p in &points {
                if !span.contains(p) {
                    span.push(p.clone());
                }
            }
            let factor = isometric_span_factor(&kernel, &span).unwrap();
            let embed = |f: &RkhsFunction<f64>| -> Vector<f64> {
                &factor * span_coordinates(f, &span).unwrap()
            };

            // telescope side: rank-one projections onto normalized sections
            let steps: Vec<_> = points
                .iter()
                .enumerate()
                .map(|(i, x)| {
                    let idx = span.iter().position(|p| p == x).unwrap();
                    let g = factor.column(idx).into_owned();
                    let proj = Projection::rank_one(&g).unwrap();
                    ContractionStep::relaxed(proj, prob.schedule.lambda(i + 1)).unwrap()
                })
                .collect();
            let (t_n_fstar, _) = run_product(&steps, &embed(&truth)).unwrap();

            // interpolate side: e_N = f* - f_N as an expansion, embedded
            let trace = kaczmarz_run(&prob, &RkhsFunction::zero(kernel.clone()), 12).unwrap();
            let e_n = truth
                .linear_combination(1.0, &trace.final_function, -1.0)
                .unwrap();
            let gap = (embed(&e_n) - t_n_fstar).norm();
            assert!(
                gap <= 1e-8 * truth.norm_squared().sqrt().max(1e-14),
                "trial {trial}: gap {gap}"
            );
        }
    }

    /// The same oracle expressed in norms only: ‖e_n‖ from the trace matches
    /// ‖T_n f*‖ from the ledger at every step.
    #[test]
    fn error_norm_matches_ledger_trajectory() {
        let mut r = rng(25);
        let kernel = Kernel::<f64>::gaussian(0.9);
        let truth = random_truth(&kernel, 3, 2, &mut r);
        let points: Vec<_> = (0..10).map(|_| random_point(2, &mut r)).collect();
        let prob = InterpolationProblem::from_truth(
            truth.clone(),
            points.clone(),
            Schedule::Constant(0.8),
        );

        let mut span: Vec<Point> = truth.anchors().to_vec();
        for p in &points {
            if !span.contains(p) {
                span.push(p.clone());
            }
        }
        let factor = isometric_span_factor(&kernel, &span).unwrap();
        let steps: Vec<_> = points
            .iter()
            .map(|x| {
                let idx = span.iter().position(|p| p == x).unwrap();
                let g = factor.column(idx).into_owned();
                ContractionStep::relaxed(Projection::rank_one(&g).unwrap(), 0.8).unwrap()
            })
            .collect();
        let x0 = &factor * span_coordinates(&truth, &span).unwrap();
        let (_, ledger) = run_product(&steps, &x0).unwrap();

        let trace = kaczmarz_run(&prob, &RkhsFunction::zero(kernel), 10).unwrap();
        let errs = trace.error_norms.unwrap();
        for (n, step) in ledger.steps.iter().enumerate() {
            let lhs = errs[n + 1] * errs[n + 1];
            assert!((lhs - step.running_energy).abs() <= 1e-8 * errs[0].max(1.0));
        }
        // sanity: the Gram-quadratic-form norm of f* matches the embedded norm
        let g = gram(&prob.kernel, &span);
        assert!(g.min_eigenvalue() > -1e-9 * g.trace());
    }
}
