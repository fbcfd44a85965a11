//! Greedy kernel PCA.
//!
//! A dictionary of sample points is grown online: a candidate joins when its
//! feature-space residual `δ = k(x,x) - κ_x* G^{-1} κ_x` against the current
//! dictionary span exceeds an admission threshold. Classical KPCA eigenwork
//! then happens on the small dictionary Gram matrix. Deflation runs realize
//! the same contraction flow as the interpolation dynamics with `y ≡ 0`,
//! carrying an exact per-step energy decomposition in the ledger.

use nalgebra::{DMatrix, DVector};

use crate::interpolate::{
    noisy_kaczmarz_run, InterpolationProblem, NoiseModel, NoisyKaczmarzReport,
};
use crate::rkhs::{Kernel, Point, RkhsFunction};
use crate::telescope::{summability_criterion, EnergyLedger, Schedule, SummabilityReport};
use crate::{Error, Result, Scalar};

/// Greedily selected subset of sample points with an incrementally
/// maintained triangular factor of its Gram matrix.
#[derive(Debug, Clone)]
pub struct Dictionary<T: Scalar> {
    kernel: Kernel<T>,
    points: Vec<Point>,
    gram: DMatrix<T>,
    /// Lower-triangular `L` with `G = L L*`, grown one row per admission.
    chol: DMatrix<T>,
    eps_admit: f64,
}

impl<T: Scalar> Dictionary<T> {
    pub fn empty(kernel: Kernel<T>, eps_admit: f64) -> Self {
        assert!(eps_admit > 0.0, "the admission threshold must be positive");
        Self {
            kernel,
            points: Vec::new(),
            gram: DMatrix::zeros(0, 0),
            chol: DMatrix::zeros(0, 0),
            eps_admit,
        }
    }

    pub fn kernel(&self) -> &Kernel<T> {
        &self.kernel
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn eps_admit(&self) -> f64 {
        self.eps_admit
    }

    pub fn gram(&self) -> &DMatrix<T> {
        &self.gram
    }

    pub fn chol_factor(&self) -> &DMatrix<T> {
        &self.chol
    }

    /// Cross-kernel vector `κ_x = (k(dᵢ, x))ᵢ`.
    fn kappa(&self, x: &Point) -> DVector<T> {
        DVector::from_iterator(
            self.points.len(),
            self.points.iter().map(|d| self.kernel.eval(d, x)),
        )
    }

    /// Feature-space residual of `x` against the dictionary span:
    /// `δ = k(x,x) - ‖L^{-1}κ_x‖²` (Schur complement through the maintained
    /// factor). Empty dictionaries give `δ = k(x,x)`.
    pub fn residual_delta(&self, x: &Point) -> f64 {
        let diag = self.kernel.diag(x);
        if self.points.is_empty() {
            return diag;
        }
        let w = self
            .chol
            .solve_lower_triangular(&self.kappa(x))
            .expect("admission keeps the factor nonsingular");
        diag - w.norm_squared()
    }

    /// Admits `x` when its residual clears the threshold; returns whether it
    /// was added. The factor update appends the row `(w*, √δ)`.
    pub fn try_admit(&mut self, x: &Point) -> bool {
        let diag = self.kernel.diag(x);
        let (w, delta) = if self.points.is_empty() {
            (DVector::zeros(0), diag)
        } else {
            let kappa = self.kappa(x);
            let w = self
                .chol
                .solve_lower_triangular(&kappa)
                .expect("admission keeps the factor nonsingular");
            let delta = diag - w.norm_squared();
            (w, delta)
        };
        if delta <= self.eps_admit {
            return false;
        }
        let l = self.points.len();
        let kappa = self.kappa(x);
        let mut gram = DMatrix::<T>::zeros(l + 1, l + 1);
        gram.view_mut((0, 0), (l, l)).copy_from(&self.gram);
        for i in 0..l {
            gram[(i, l)] = kappa[i];
            gram[(l, i)] = kappa[i].conjugate();
        }
        gram[(l, l)] = T::from_real(diag);
        let mut chol = DMatrix::<T>::zeros(l + 1, l + 1);
        chol.view_mut((0, 0), (l, l)).copy_from(&self.chol);
        for i in 0..l {
            chol[(l, i)] = w[i].conjugate();
        }
        chol[(l, l)] = T::from_real(delta.sqrt());
        self.gram = gram;
        self.chol = chol;
        self.points.push(x.clone());
        true
    }
}

/// Single-pass greedy subset selection in the given order: `x` is admitted
/// iff `δ > eps_admit` at its turn.
pub fn greedy_select<T: Scalar>(
    kernel: Kernel<T>,
    training: &[Point],
    eps_admit: f64,
) -> Dictionary<T> {
    let mut dict = Dictionary::empty(kernel, eps_admit);
    for x in training {
        dict.try_admit(x);
    }
    dict
}

/// Eigenwork of the dictionary Gram matrix: top `p` eigenpairs, eigenvalues
/// descending.
#[derive(Debug, Clone)]
pub struct KpcaModel<T: Scalar> {
    dict: Dictionary<T>,
    eigenvalues: Vec<f64>,
    /// Columns are the top-p orthonormal eigenvectors of `G`.
    eigenvectors: DMatrix<T>,
}

impl<T: Scalar> KpcaModel<T> {
    pub fn dictionary(&self) -> &Dictionary<T> {
        &self.dict
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &DMatrix<T> {
        &self.eigenvectors
    }

    pub fn num_components(&self) -> usize {
        self.eigenvalues.len()
    }
}

/// Decomposes the dictionary Gram matrix and keeps the top `p` eigenpairs.
pub fn fit_kpca<T: Scalar>(dict: Dictionary<T>, p: usize) -> Result<KpcaModel<T>> {
    let l = dict.len();
    if l == 0 {
        return Err(Error::EmptyDictionary);
    }
    if p == 0 || p > l {
        return Err(Error::ComponentCountOutOfRange { p, dict_len: l });
    }
    let eig = dict.gram.clone().hermitian_part().symmetric_eigen();
    let mut order: Vec<usize> = (0..l).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .expect("finite eigenvalues")
    });
    let eigenvalues: Vec<f64> = order.iter().take(p).map(|&i| eig.eigenvalues[i]).collect();
    let mut eigenvectors = DMatrix::<T>::zeros(l, p);
    for (j, &i) in order.iter().take(p).enumerate() {
        eigenvectors.set_column(j, &eig.eigenvectors.column(i));
    }
    Ok(KpcaModel {
        dict,
        eigenvalues,
        eigenvectors,
    })
}

/// Variance-fraction variant: keeps the smallest `p` whose eigenvalue mass
/// reaches `theta` of the total.
pub fn fit_kpca_by_variance<T: Scalar>(dict: Dictionary<T>, theta: f64) -> Result<KpcaModel<T>> {
    assert!(theta > 0.0 && theta <= 1.0);
    let l = dict.len();
    if l == 0 {
        return Err(Error::EmptyDictionary);
    }
    let full = fit_kpca(dict, l)?;
    let total: f64 = full.eigenvalues.iter().sum();
    let mut cumulative = 0.0;
    let mut p = l;
    for (i, &lambda) in full.eigenvalues.iter().enumerate() {
        cumulative += lambda;
        if cumulative >= theta * total {
            p = i + 1;
            break;
        }
    }
    Ok(KpcaModel {
        eigenvalues: full.eigenvalues[..p].to_vec(),
        eigenvectors: full.eigenvectors.columns(0, p).into_owned(),
        dict: full.dict,
    })
}

/// Embedding coordinates `f_j(x) = Σᵢ (v_j)ᵢ k(dᵢ, x) / √k(x,x)`.
pub fn embed<T: Scalar>(model: &KpcaModel<T>, x: &Point) -> Result<DVector<T>> {
    let diag = model.dict.kernel().diag_checked(x)?;
    let kappa = model.dict.kappa(x);
    let coords = model.eigenvectors.transpose() * kappa;
    Ok(coords.unscale(diag.sqrt()))
}

/// Deflation run `f ← (I - λ_n P_{x_n}) f` with its exact energy ledger and
/// the two equal-by-construction per-step energy routes.
#[derive(Debug, Clone)]
pub struct DeflationRun<T: Scalar> {
    pub ledger: EnergyLedger,
    /// `‖P_n T_{n-1} f‖²` computed through the projected expansion.
    pub projection_energies: Vec<f64>,
    /// `|(T_{n-1}f)(x_n)|² / k(x_n,x_n)` computed from point evaluations.
    pub evaluation_energies: Vec<f64>,
    pub final_function: RkhsFunction<T>,
}

/// Runs the deflation flow over `points` under `schedule`. With λ ≡ 1 this is
/// classical deflation: each processed evaluation is annihilated.
pub fn deflation_run<T: Scalar>(
    kernel: &Kernel<T>,
    points: &[Point],
    schedule: &Schedule,
    f: &RkhsFunction<T>,
) -> Result<DeflationRun<T>> {
    if f.kernel() != kernel {
        return Err(Error::KernelMismatch);
    }
    let mut current = f.clone();
    let mut ledger = EnergyLedger::new(current.norm_squared());
    let mut projection_energies = Vec::with_capacity(points.len());
    let mut evaluation_energies = Vec::with_capacity(points.len());
    for (n, x) in points.iter().enumerate() {
        let lambda = schedule.lambda(n + 1);
        let diag = kernel.diag_checked(x)?;
        let value = current.evaluate(x);
        // route one: project, then measure the projected expansion
        let projected = crate::rkhs::section_projection_apply(&current, x)?;
        projection_energies.push(projected.norm_squared());
        // route two: the evaluation formula
        let eval_energy = value.modulus_squared() / diag;
        evaluation_energies.push(eval_energy);

        current.add_scaled_section(x, -(T::from_real(lambda / diag) * value));
        ledger.push(
            lambda * (2.0 - lambda) * eval_energy,
            current.norm_squared(),
        );
    }
    Ok(DeflationRun {
        ledger,
        projection_energies,
        evaluation_energies,
        final_function: current,
    })
}

/// Convergence and noise-stability diagnostics of the greedy flow.
#[derive(Debug, Clone)]
pub struct ConvergenceReport {
    pub summability: SummabilityReport,
    /// `Σ ‖T_n f - T_{n-1} f‖` over the last half of the horizon.
    pub cauchy_tail: f64,
    pub energy_monotone: bool,
    /// Worst violation of the per-step bound
    /// `‖T_{n-1}f - T_nf‖² ≤ (λ_n/(2-λ_n))(‖T_{n-1}f‖² - ‖T_nf‖²)`.
    pub max_step_bound_excess: f64,
    /// Noisy Kaczmarz Monte Carlo, present when a noise model was supplied.
    pub noise: Option<NoiseStability>,
}

#[derive(Debug, Clone)]
pub struct NoiseStability {
    pub report: NoisyKaczmarzReport,
    /// `‖f*‖² + (σ²/κ) Σ_{m≤n} λ_m²` per step.
    pub bound: Vec<f64>,
    /// Mean error within `bound + 3·stderr` at every step.
    pub pass: bool,
}

/// Runs the deflation flow over `points` cycled up to `horizon` and checks
/// (a) the Cauchy tail of the step differences, (b) monotone energy decay,
/// (c) the per-step difference bound, and optionally (d) the noisy mean
/// error against the noise-floor bound via Monte Carlo.
#[allow(clippy::too_many_arguments)]
pub fn convergence_and_noise_report<T: Scalar>(
    kernel: &Kernel<T>,
    truth: &RkhsFunction<T>,
    points: &[Point],
    schedule: &Schedule,
    noise: Option<&NoiseModel>,
    horizon: usize,
    trials: usize,
    tail_tag: Option<&str>,
) -> Result<ConvergenceReport> {
    assert!(!points.is_empty() && horizon >= 2);
    let cycled: Vec<Point> = (0..horizon)
        .map(|n| points[n % points.len()].clone())
        .collect();
    let run = deflation_run(kernel, &cycled, schedule, truth)?;

    let mut cauchy_tail = 0.0;
    let mut max_step_bound_excess = 0.0_f64;
    let mut prev_energy = run.ledger.initial_energy;
    for (n, step) in run.ledger.steps.iter().enumerate() {
        let lambda = schedule.lambda(n + 1);
        // ‖T_n f - T_{n-1} f‖ = λ‖P_n T_{n-1} f‖
        let diff_sq = lambda * lambda * run.evaluation_energies[n];
        if n >= horizon / 2 {
            cauchy_tail += diff_sq.max(0.0).sqrt();
        }
        let drop = prev_energy - step.running_energy;
        let bound = lambda / (2.0 - lambda) * drop;
        max_step_bound_excess = max_step_bound_excess.max(diff_sq - bound);
        prev_energy = step.running_energy;
    }
    let energy_monotone = run.ledger.verify(1e-8);

    let noise_stability = match noise {
        None => None,
        Some(model) => {
            let kappa = cycled
                .iter()
                .map(|x| kernel.diag(x))
                .fold(f64::INFINITY, f64::min);
            if kappa <= 0.0 {
                return Err(Error::DegenerateDiagonal { value: kappa });
            }
            let prob =
                InterpolationProblem::from_truth(truth.clone(), cycled.clone(), schedule.clone());
            let report = noisy_kaczmarz_run(&prob, model, horizon, trials)?;
            let truth_norm_sq = truth.norm_squared();
            let mut bound = Vec::with_capacity(horizon + 1);
            let mut lambda_sq_sum = 0.0;
            bound.push(truth_norm_sq);
            for n in 1..=horizon {
                let l = schedule.lambda(n);
                lambda_sq_sum += l * l;
                bound.push(truth_norm_sq + model.sigma * model.sigma / kappa * lambda_sq_sum);
            }
            let pass = (0..=horizon).all(|n| {
                report.mean_error_sq[n] <= bound[n] + 3.0 * report.error_sq_stderr[n] + 1e-12
            });
            Some(NoiseStability {
                report,
                bound,
                pass,
            })
        }
    };

    Ok(ConvergenceReport {
        summability: summability_criterion(schedule, horizon, tail_tag),
        cauchy_tail,
        energy_monotone,
        max_step_bound_excess,
        noise: noise_stability,
    })
}
