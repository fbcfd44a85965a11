//! Intermittent (Bernoulli-gated) relaxed projection dynamics.
//!
//! The update `x_n = x_{n-1} - λ_n η_n P_n x_{n-1}` keeps the telescoping
//! energy identity pathwise: every realized gate `η_n ∈ {0,1}` dissipates
//! `η_n λ_n(2-λ_n)‖P_n x_{n-1}‖²` exactly. Under a fixed annihilated
//! subspace `M` (every projection kills it) and a coercivity constant `β`
//! for the gated conditional mean `E[η P]` on `M^⊥`, the mean squared error
//! to `P_M x₀` contracts geometrically; the Monte Carlo checks here compare
//! empirical trajectories against that bound.
//!
//! Seeding discipline: each trial owns two ChaCha streams derived from
//! `(seed, trial)`, one for projection draws and one for the gates, so
//! paired comparisons across gate probabilities hold the projection stream
//! fixed.

use nalgebra::DMatrix;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::hilbert::{Operator, Projection, Scalar, Vector};
use crate::rkhs::{gram, isometric_span_factor, Kernel, Point, RkhsFunction};
use crate::telescope::Schedule;
use crate::{Error, Result};

/// Tolerance for "a projection annihilates the fixed subspace".
pub const TOL_ASSUMPTION_M: f64 = 1e-10;

/// Where the random projections come from.
#[derive(Debug, Clone)]
pub enum ProjectionSource<T: Scalar> {
    /// Deterministic sequence, cycled; consumes no randomness.
    FixedSequence(Vec<Projection<T>>),
    /// Uniform draw among coordinate projections `eᵢeᵢ*` for `i ∈ active`.
    IidCoordinate { dim: usize, active: Vec<usize> },
    /// I.i.d. draw of normalized kernel sections over a finite weighted
    /// support, embedded isometrically through the Gram factor.
    IidRkhsSample {
        kernel: Kernel<T>,
        support: Vec<Point>,
        weights: Vec<f64>,
    },
}

impl<T: Scalar> ProjectionSource<T> {
    /// All coordinates active.
    pub fn iid_coordinate(dim: usize) -> Self {
        Self::IidCoordinate {
            dim,
            active: (0..dim).collect(),
        }
    }

    pub fn is_iid(&self) -> bool {
        !matches!(self, Self::FixedSequence(_))
    }
}

/// Configuration of one dropout experiment.
#[derive(Debug, Clone)]
pub struct DropoutConfig<T: Scalar> {
    /// Bernoulli on-probability in `(0, 1]`.
    pub p: f64,
    pub schedule: Schedule,
    pub source: ProjectionSource<T>,
    /// Spanning vectors of the fixed subspace `M` (often empty: `M = {0}`).
    pub m_basis: Vec<Vector<T>>,
    pub seed: u64,
}

/// Realized projection pool plus the draw rule.
enum DrawRule<T: Scalar> {
    Cycle(Vec<Projection<T>>),
    Uniform(Vec<Projection<T>>),
    Weighted {
        projections: Vec<Projection<T>>,
        cdf: Vec<f64>,
    },
}

impl<T: Scalar> DrawRule<T> {
    fn draw(&self, step: usize, rng: &mut ChaCha8Rng) -> &Projection<T> {
        match self {
            Self::Cycle(pool) => &pool[step % pool.len()],
            Self::Uniform(pool) => &pool[rng.random_range(0..pool.len())],
            Self::Weighted { projections, cdf } => {
                let u: f64 = rng.random();
                let idx = cdf.partition_point(|&c| c < u).min(projections.len() - 1);
                &projections[idx]
            }
        }
    }

    fn pool(&self) -> &[Projection<T>] {
        match self {
            Self::Cycle(pool) | Self::Uniform(pool) => pool,
            Self::Weighted { projections, .. } => projections,
        }
    }
}

impl<T: Scalar> DropoutConfig<T> {
    pub fn dim(&self) -> usize {
        match &self.source {
            ProjectionSource::FixedSequence(pool) => pool.first().map_or(0, Projection::dim),
            ProjectionSource::IidCoordinate { dim, .. } => *dim,
            ProjectionSource::IidRkhsSample { support, .. } => support.len(),
        }
    }

    /// Two independent ChaCha streams for one trial: projections on stream
    /// `2·trial`, gates on `2·trial + 1`.
    fn trial_streams(&self, trial: u64) -> (ChaCha8Rng, ChaCha8Rng) {
        let mut proj = ChaCha8Rng::seed_from_u64(self.seed);
        proj.set_stream(2 * trial);
        let mut gate = ChaCha8Rng::seed_from_u64(self.seed);
        gate.set_stream(2 * trial + 1);
        (proj, gate)
    }

    fn draw_rule(&self) -> Result<DrawRule<T>> {
        assert!(self.p > 0.0 && self.p <= 1.0, "p must lie in (0, 1]");
        let rule = match &self.source {
            ProjectionSource::FixedSequence(pool) => {
                assert!(!pool.is_empty());
                DrawRule::Cycle(pool.clone())
            }
            ProjectionSource::IidCoordinate { dim, active } => {
                assert!(!active.is_empty());
                let pool = active
                    .iter()
                    .map(|&i| {
                        assert!(i < *dim);
                        let mut e = Vector::<T>::zeros(*dim);
                        e[i] = T::one();
                        Projection::rank_one(&e).expect("coordinate vector is nonzero")
                    })
                    .collect();
                DrawRule::Uniform(pool)
            }
            ProjectionSource::IidRkhsSample {
                kernel,
                support,
                weights,
            } => {
                assert_eq!(support.len(), weights.len());
                let projections = embedded_section_projections(kernel, support)?;
                let total: f64 = weights.iter().sum();
                assert!(total > 0.0);
                let mut cdf = Vec::with_capacity(weights.len());
                let mut acc = 0.0;
                for &w in weights {
                    assert!(w >= 0.0);
                    acc += w / total;
                    cdf.push(acc);
                }
                DrawRule::Weighted { projections, cdf }
            }
        };
        // Assumption M: every projection in the pool annihilates the basis.
        for projection in rule.pool() {
            for v in &self.m_basis {
                let overlap = projection.apply(v).norm();
                if overlap > TOL_ASSUMPTION_M * v.norm().max(1.0) {
                    return Err(Error::AssumptionMViolated { overlap });
                }
            }
        }
        Ok(rule)
    }

    /// Orthogonal projection onto `M`.
    pub fn limit_projection(&self) -> Projection<T> {
        Projection::onto_span(&self.m_basis, self.dim())
    }
}

/// Rank-one projections onto the normalized kernel sections of `support`,
/// realized in the Gram-factor model space.
pub fn embedded_section_projections<T: Scalar>(
    kernel: &Kernel<T>,
    support: &[Point],
) -> Result<Vec<Projection<T>>> {
    let factor = isometric_span_factor(kernel, support)?;
    support
        .iter()
        .enumerate()
        .map(|(i, x)| {
            kernel.diag_checked(x)?;
            Projection::rank_one(&factor.column(i).into_owned())
        })
        .collect()
}

/// Per-step record of one dropout path.
#[derive(Debug, Clone)]
pub struct DropoutStep {
    pub eta: bool,
    /// `η λ(2-λ)‖P x_{n-1}‖²`
    pub dissipated: f64,
    /// `‖x_n‖²`
    pub energy: f64,
    /// `‖x_n - P_M x₀‖²`
    pub error_to_limit: f64,
}

/// One realized path with its exact pathwise energy ledger.
#[derive(Debug, Clone)]
pub struct DropoutTrace<T: Scalar> {
    pub initial_energy: f64,
    pub initial_error: f64,
    pub steps: Vec<DropoutStep>,
    pub final_state: Vector<T>,
    pub limit: Vector<T>,
}

impl<T: Scalar> DropoutTrace<T> {
    pub fn total_dissipated(&self) -> f64 {
        self.steps.iter().map(|s| s.dissipated).sum()
    }

    pub fn final_energy(&self) -> f64 {
        self.steps.last().map_or(self.initial_energy, |s| s.energy)
    }

    /// `|‖x₀‖² - ‖x_N‖² - Σ dissipated|` relative to `‖x₀‖²`.
    pub fn pathwise_identity_residual(&self) -> f64 {
        (self.initial_energy - self.final_energy() - self.total_dissipated()).abs()
            / self.initial_energy.max(1e-14)
    }
}

fn run_path<T: Scalar>(
    cfg: &DropoutConfig<T>,
    rule: &DrawRule<T>,
    x0: &Vector<T>,
    horizon: usize,
    trial: u64,
    limit: &Vector<T>,
) -> DropoutTrace<T> {
    let (mut proj_rng, mut gate_rng) = cfg.trial_streams(trial);
    let mut x = x0.clone();
    let initial_energy = x.norm_squared();
    let initial_error = (&x - limit).norm_squared();
    let mut steps = Vec::with_capacity(horizon);
    for n in 0..horizon {
        let projection = rule.draw(n, &mut proj_rng);
        let eta = gate_rng.random_bool(cfg.p);
        let lambda = cfg.schedule.lambda(n + 1);
        let dissipated = if eta {
            let d = lambda * (2.0 - lambda) * projection.apply(&x).norm_squared();
            x = &x - projection.apply(&x) * T::from_real(lambda);
            d
        } else {
            0.0
        };
        steps.push(DropoutStep {
            eta,
            dissipated,
            energy: x.norm_squared(),
            error_to_limit: (&x - limit).norm_squared(),
        });
    }
    DropoutTrace {
        initial_energy,
        initial_error,
        steps,
        final_state: x,
        limit: limit.clone(),
    }
}

/// Runs the gated path of one specific trial index.
pub fn dropout_path<T: Scalar>(
    cfg: &DropoutConfig<T>,
    x0: &Vector<T>,
    horizon: usize,
    trial: u64,
) -> Result<DropoutTrace<T>> {
    if x0.nrows() != cfg.dim() {
        return Err(Error::DimensionMismatch {
            expected: cfg.dim(),
            found: x0.nrows(),
        });
    }
    let rule = cfg.draw_rule()?;
    let limit = cfg.limit_projection().apply(x0);
    Ok(run_path(cfg, &rule, x0, horizon, trial, &limit))
}

/// Runs one gated path (trial 0 of the configured seed).
pub fn dropout_run<T: Scalar>(
    cfg: &DropoutConfig<T>,
    x0: &Vector<T>,
    horizon: usize,
) -> Result<DropoutTrace<T>> {
    dropout_path(cfg, x0, horizon, 0)
}

/// Exact conditional mean `E[P]` of an i.i.d. source (the dense averaging
/// oracle); `None` for fixed sequences.
pub fn exact_mean_projection<T: Scalar>(
    source: &ProjectionSource<T>,
) -> Result<Option<Operator<T>>> {
    match source {
        ProjectionSource::FixedSequence(_) => Ok(None),
        ProjectionSource::IidCoordinate { dim, active } => {
            let mut mean = Operator::<T>::zeros(*dim, *dim);
            let w = T::from_real(1.0 / active.len() as f64);
            for &i in active {
                mean[(i, i)] = w;
            }
            Ok(Some(mean))
        }
        ProjectionSource::IidRkhsSample {
            kernel,
            support,
            weights,
        } => {
            let projections = embedded_section_projections(kernel, support)?;
            let total: f64 = weights.iter().sum();
            let mut mean = Operator::<T>::zeros(support.len(), support.len());
            for (projection, &w) in projections.iter().zip(weights) {
                mean += projection.matrix() * T::from_real(w / total);
            }
            Ok(Some(mean))
        }
    }
}

/// Smallest eigenvalue of `mean` restricted to the orthogonal complement of
/// `span(m_basis)`; infinite when the complement is trivial.
pub fn restricted_min_eigenvalue<T: Scalar>(mean: &Operator<T>, m_basis: &[Vector<T>]) -> f64 {
    let dim = mean.nrows();
    // Orthonormal basis of M^⊥: complete span(m_basis) with coordinate
    // vectors, keeping only directions orthogonal to M.
    let mut m_ortho: Vec<Vector<T>> = Vec::new();
    for v in m_basis {
        let mut w = v.clone();
        for q in &m_ortho {
            let c = q.dotc(&w);
            w -= q * c;
        }
        let n = w.norm();
        if n > 1e-12 {
            m_ortho.push(w.unscale(n));
        }
    }
    let mut complement: Vec<Vector<T>> = Vec::new();
    for i in 0..dim {
        let mut w = Vector::<T>::zeros(dim);
        w[i] = T::one();
        for _ in 0..2 {
            for q in m_ortho.iter().chain(complement.iter()) {
                let c = q.dotc(&w);
                w -= q * c;
            }
        }
        let n = w.norm();
        if n > 1e-8 {
            complement.push(w.unscale(n));
        }
    }
    if complement.is_empty() {
        return f64::INFINITY;
    }
    let k = complement.len();
    let mut basis = Operator::<T>::zeros(dim, k);
    for (j, q) in complement.iter().enumerate() {
        basis.set_column(j, q);
    }
    let restricted = (basis.adjoint() * mean * &basis).hermitian_part();
    let eig = restricted.symmetric_eigen();
    let mut min = f64::INFINITY;
    for &l in eig.eigenvalues.iter() {
        min = min.min(l);
    }
    min
}

/// Coercivity constant `β` of the gated update: `p` times the smallest
/// eigenvalue of `E[P]` on `M^⊥`. Coordinate sources are evaluated
/// analytically; section sources by averaging `n_mc` sampled projections on
/// a dedicated estimation stream.
pub fn coercivity_constant<T: Scalar>(cfg: &DropoutConfig<T>, n_mc: usize) -> Result<f64> {
    match &cfg.source {
        ProjectionSource::FixedSequence(_) => Err(Error::NotIid),
        ProjectionSource::IidCoordinate { .. } => {
            let mean = exact_mean_projection(&cfg.source)?.expect("iid source");
            Ok(cfg.p * restricted_min_eigenvalue(&mean, &cfg.m_basis))
        }
        ProjectionSource::IidRkhsSample { .. } => {
            assert!(n_mc >= 1);
            let rule = cfg.draw_rule()?;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(u64::MAX); // estimation stream, disjoint from trials
            let dim = cfg.dim();
            let mut mean = Operator::<T>::zeros(dim, dim);
            for n in 0..n_mc {
                mean += rule.draw(n, &mut rng).matrix();
            }
            mean.unscale_mut(n_mc as f64);
            Ok(cfg.p * restricted_min_eigenvalue(&mean, &cfg.m_basis))
        }
    }
}

/// Which geometric bound to compare against.
#[derive(Debug, Clone, Copy)]
pub enum RateBound {
    /// `(1 - β λ(2-λ))^n`; requires a constant schedule.
    Beta(f64),
    /// `(1 - γ)^n` for a supplied per-step coercivity of the full gated,
    /// relaxed update.
    Gamma(f64),
}

/// Monte Carlo comparison of the mean squared error against its geometric
/// bound.
#[derive(Debug, Clone)]
pub struct RateReport {
    /// Mean `‖x_n - P_M x₀‖²` for n = 0..=horizon.
    pub empirical: Vec<f64>,
    pub bound: Vec<f64>,
    pub stderr: Vec<f64>,
    pub pass: bool,
}

/// Runs `trials` paths and checks
/// `empirical(n) ≤ bound(n) + 3·stderr(n)` for all `n`.
pub fn geometric_rate_check<T: Scalar>(
    cfg: &DropoutConfig<T>,
    x0: &Vector<T>,
    horizon: usize,
    trials: usize,
    rate: RateBound,
) -> Result<RateReport> {
    assert!(trials >= 1);
    if x0.nrows() != cfg.dim() {
        return Err(Error::DimensionMismatch {
            expected: cfg.dim(),
            found: x0.nrows(),
        });
    }
    let factor = match rate {
        RateBound::Beta(beta) => match cfg.schedule {
            Schedule::Constant(lambda) => 1.0 - beta * lambda * (2.0 - lambda),
            _ => panic!("RateBound::Beta requires a constant schedule"),
        },
        RateBound::Gamma(gamma) => 1.0 - gamma,
    };
    let rule = cfg.draw_rule()?;
    let limit = cfg.limit_projection().apply(x0);
    let len = horizon + 1;
    let mut sum = vec![0.0; len];
    let mut sum_sq = vec![0.0; len];
    for trial in 0..trials {
        let trace = run_path(cfg, &rule, x0, horizon, trial as u64, &limit);
        sum[0] += trace.initial_error;
        sum_sq[0] += trace.initial_error * trace.initial_error;
        for (n, step) in trace.steps.iter().enumerate() {
            sum[n + 1] += step.error_to_limit;
            sum_sq[n + 1] += step.error_to_limit * step.error_to_limit;
        }
    }
    let t = trials as f64;
    let initial_error = (x0 - &limit).norm_squared();
    let mut empirical = Vec::with_capacity(len);
    let mut bound = Vec::with_capacity(len);
    let mut stderr = Vec::with_capacity(len);
    for n in 0..len {
        let mean = sum[n] / t;
        empirical.push(mean);
        bound.push(factor.max(0.0).powi(n as i32) * initial_error);
        let sd = if trials < 2 {
            0.0
        } else {
            (((sum_sq[n] / t - mean * mean) * t / (t - 1.0)).max(0.0) / t).sqrt()
        };
        stderr.push(sd);
    }
    let pass = (0..len).all(|n| empirical[n] <= bound[n] + 3.0 * stderr[n] + 1e-12);
    Ok(RateReport {
        empirical,
        bound,
        stderr,
        pass,
    })
}

/// Mean-square trajectory of the intermittent RKHS interpolation update
/// toward the norm-minimal interpolant of the truth on the sampling support.
#[derive(Debug, Clone)]
pub struct RkhsDropoutReport<T: Scalar> {
    /// Mean `‖f_n - P_{M^⊥} f*‖²` for n = 0..=horizon.
    pub mean_error_sq: Vec<f64>,
    pub stderr: Vec<f64>,
    /// The projected truth: the RKHS-norm-minimal interpolant of `f*` on the
    /// support, via the Gram solve.
    pub projected_truth: RkhsFunction<T>,
}

/// Runs the gated RKHS update `f ← f + λη (y - f(x))k_x/k(x,x)` over an
/// i.i.d. weighted finite support with noiseless data `y = f*(x)`, starting
/// from `f₀ = 0`.
#[allow(clippy::too_many_arguments)]
pub fn rkhs_dropout_run<T: Scalar>(
    kernel: &Kernel<T>,
    truth: &RkhsFunction<T>,
    support: &[Point],
    weights: &[f64],
    p: f64,
    lambda: f64,
    horizon: usize,
    trials: usize,
    seed: u64,
) -> Result<RkhsDropoutReport<T>> {
    assert!(!support.is_empty() && support.len() == weights.len());
    assert!(trials >= 1);
    assert!(p > 0.0 && p <= 1.0);
    if !(lambda > 0.0 && lambda < 2.0) {
        return Err(Error::LambdaOutOfRange { lambda });
    }
    if truth.kernel() != kernel {
        return Err(Error::KernelMismatch);
    }
    for x in support {
        kernel.diag_checked(x)?;
    }
    let g = gram(kernel, support);
    // Norm-minimal interpolant h of f* on the support: G a = (f*(zᵢ))ᵢ,
    // solved through a clamped eigen-pseudoinverse (G may be singular).
    let values = nalgebra::DVector::<T>::from_iterator(
        support.len(),
        support.iter().map(|z| truth.evaluate(z)),
    );
    let coeffs = psd_pseudo_solve(g.entries(), &values);
    let projected_truth = RkhsFunction::new(
        kernel.clone(),
        support.to_vec(),
        coeffs.iter().copied().collect(),
    )?;

    let cdf = {
        let total: f64 = weights.iter().sum();
        assert!(total > 0.0);
        let mut acc = 0.0;
        weights
            .iter()
            .map(|&w| {
                acc += w / total;
                acc
            })
            .collect::<Vec<f64>>()
    };

    let len = horizon + 1;
    let mut sum = vec![0.0; len];
    let mut sum_sq = vec![0.0; len];
    let h_norm_sq = projected_truth.norm_squared();
    for trial in 0..trials {
        let mut proj_rng = ChaCha8Rng::seed_from_u64(seed);
        proj_rng.set_stream(2 * trial as u64);
        let mut gate_rng = ChaCha8Rng::seed_from_u64(seed);
        gate_rng.set_stream(2 * trial as u64 + 1);

        // e = f - h stays supported on the sample; track coefficients and
        // the value vector G·c so each step costs O(m).
        let mut e_coeffs = -coeffs.clone();
        let mut e_values = g.entries() * &e_coeffs;
        let mut e_sq = h_norm_sq;
        sum[0] += e_sq;
        sum_sq[0] += e_sq * e_sq;
        for n in 1..=horizon {
            let u: f64 = proj_rng.random();
            let idx = cdf.partition_point(|&c| c < u).min(support.len() - 1);
            let eta = gate_rng.random_bool(p);
            if eta {
                let value = e_values[idx];
                let diag = g.entries()[(idx, idx)].real();
                let change = -(T::from_real(lambda / diag) * value);
                e_coeffs[idx] += change;
                let column = g.entries().column(idx).into_owned();
                e_values += column * change;
                e_sq -= lambda * (2.0 - lambda) * value.modulus_squared() / diag;
            }
            sum[n] += e_sq;
            sum_sq[n] += e_sq * e_sq;
        }
    }
    let t = trials as f64;
    let mut mean_error_sq = Vec::with_capacity(len);
    let mut stderr = Vec::with_capacity(len);
    for n in 0..len {
        let mean = sum[n] / t;
        mean_error_sq.push(mean);
        let sd = if trials < 2 {
            0.0
        } else {
            (((sum_sq[n] / t - mean * mean) * t / (t - 1.0)).max(0.0) / t).sqrt()
        };
        stderr.push(sd);
    }
    Ok(RkhsDropoutReport {
        mean_error_sq,
        stderr,
        projected_truth,
    })
}

/// Minimum-norm solution of `G a = y` for Hermitian PSD `G` through an
/// eigen-pseudoinverse with a relative clamping threshold.
fn psd_pseudo_solve<T: Scalar>(g: &DMatrix<T>, y: &nalgebra::DVector<T>) -> nalgebra::DVector<T> {
    let eig = g.clone().hermitian_part().symmetric_eigen();
    let trace: f64 = eig.eigenvalues.iter().sum();
    let tol = 1e-12 * trace.max(1.0);
    let mut a = nalgebra::DVector::<T>::zeros(y.nrows());
    for i in 0..y.nrows() {
        let l = eig.eigenvalues[i];
        if l > tol {
            let v = eig.eigenvectors.column(i);
            let coef = v.dotc(y) * T::from_real(1.0 / l);
            a += v * coef;
        }
    }
    a
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{random_rank_one_projection, random_vector};
    use crate::telescope::{run_product, ContractionStep};
    use rand::Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_point<R: Rng>(dim: usize, rng: &mut R) -> Point {
        Point::new((0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    #[test]
    fn p_one_reduces_to_run_product() {
        let mut r = rng(1);
        let dim = 5;
        let projections: Vec<_> = (0..30)
            .map(|_| random_rank_one_projection::<f64, _>(dim, &mut r))
            .collect();
        let cfg = DropoutConfig {
            p: 1.0,
            schedule: Schedule::Constant(0.8),
            source: ProjectionSource::FixedSequence(projections.clone()),
            m_basis: vec![],
            seed: 7,
        };
        let x0 = random_vector::<f64, _>(dim, &mut r);
        let trace = dropout_run(&cfg, &x0, 30).unwrap();
        let steps: Vec<_> = projections
            .into_iter()
            .map(|p| ContractionStep::relaxed(p, 0.8).unwrap())
            .collect();
        let (product_out, ledger) = run_product(&steps, &x0).unwrap();
        assert_eq!(trace.final_state, product_out);
        for (a, b) in trace.steps.iter().zip(&ledger.steps) {
            assert_eq!(a.dissipated, b.dissipated);
            assert_eq!(a.energy, b.running_energy);
        }
    }

    #[test]
    fn frozen_dynamics_when_gates_never_fire() {
        let mut r = rng(2);
        let cfg = DropoutConfig {
            p: 1e-12,
            schedule: Schedule::Constant(1.0),
            source: ProjectionSource::iid_coordinate(4),
            m_basis: vec![],
            seed: 3,
        };
        let x0 = random_vector::<f64, _>(4, &mut r);
        let trace = dropout_run(&cfg, &x0, 100).unwrap();
        assert_eq!(trace.final_state, x0);
        assert_eq!(trace.total_dissipated(), 0.0);
    }

    #[test]
    fn pathwise_identity_iid_coordinate() {
        let mut r = rng(3);
        let cfg = DropoutConfig {
            p: 0.5,
            schedule: Schedule::Constant(1.0),
            source: ProjectionSource::iid_coordinate(4),
            m_basis: vec![],
            seed: 11,
        };
        let x0 = random_vector::<f64, _>(4, &mut r);
        let trace = dropout_run(&cfg, &x0, 200).unwrap();
        assert!(trace.pathwise_identity_residual() <= 1e-9);
        // energy is nonincreasing pathwise
        let mut prev = trace.initial_energy;
        for step in &trace.steps {
            assert!(step.energy <= prev + 1e-12 * trace.initial_energy);
            prev = step.energy;
        }
    }

    #[test]
    fn assumption_m_enforced() {
        let mut e3 = Vector::<f64>::zeros(3);
        e3[2] = 1.0;
        // all coordinates active: the e₃ projection moves M = span(e₃)
        let bad = DropoutConfig {
            p: 0.5,
            schedule: Schedule::Constant(1.0),
            source: ProjectionSource::iid_coordinate(3),
            m_basis: vec![e3.clone()],
            seed: 0,
        };
        let x0 = random_vector::<f64, _>(3, &mut rng(4));
        assert!(matches!(
            dropout_run(&bad, &x0, 10),
            Err(Error::AssumptionMViolated { .. })
        ));
        // restricting to the first two coordinates satisfies it
        let good = DropoutConfig {
            p: 0.5,
            schedule: Schedule::Constant(1.0),
            source: ProjectionSource::IidCoordinate {
                dim: 3,
                active: vec![0, 1],
            },
            m_basis: vec![e3],
            seed: 0,
        };
        assert!(dropout_run(&good, &x0, 10).is_ok());
    }

    #[test]
    fn range_orthogonality_of_sampled_projections() {
        let mut e3 = Vector::<f64>::zeros(3);
        e3[2] = 1.0;
        let cfg = DropoutConfig {
            p: 1.0,
            schedule: Schedule::Constant(1.0),
            source: ProjectionSource::IidCoordinate {
                dim: 3,
                active: vec![0, 1],
            },
            m_basis: vec![e3.clone()],
            seed: 5,
        };
        let rule = cfg.draw_rule().unwrap();
        let mut r = rng(6);
        for projection in rule.pool() {
            for _ in 0..5 {
                let z = random_vector::<f64, _>(3, &mut r);
                let overlap = projection.apply(&z).dotc(&e3).abs();
                assert!(overlap <= 1e-10 * z.norm() * e3.norm());
            }
        }
    }

    #[test]
    fn coercivity_coordinate_exact() {
        let cfg: DropoutConfig<f64> = DropoutConfig {
            p: 0.5,
            schedule: Schedule::Constant(1.0),
            source: ProjectionSource::iid_coordinate(4),
            m_basis: vec![],
            seed: 0,
        };
        assert!((coercivity_constant(&cfg, 1).unwrap() - 0.125).abs() < 1e-15);
        let cfg2: DropoutConfig<f64> = DropoutConfig {
            p: 1.0,
            schedule: Schedule::Constant(1.0),
            source: ProjectionSource::iid_coordinate(2),
            m_basis: vec![],
            seed: 0,
        };
        assert!((coercivity_constant(&cfg2, 1).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn coercivity_not_iid_rejected() {
        let p = random_rank_one_projection::<f64, _>(3, &mut rng(7));
        let cfg = DropoutConfig {
            p: 0.5,
            schedule: Schedule::Constant(1.0),
            source: ProjectionSource::FixedSequence(vec![p]),
            m_basis: vec![],
            seed: 0,
        };
        assert!(matches!(coercivity_constant(&cfg, 10), Err(Error::NotIid)));
    }

    #[test]
    fn coercivity_rkhs_sections_vs_exact_oracle() {
        // three equiprobable orthonormal sections spanning ℝ³: linear kernel
        // on the coordinate axes gives G = I
        let kernel = Kernel::<f64>::Linear;
        let support = vec![
            Point::new(vec![1.0, 0.0, 0.0]),
            Point::new(vec![0.0, 1.0, 0.0]),
            Point::new(vec![0.0, 0.0, 1.0]),
        ];
        let cfg = DropoutConfig {
            p: 0.75,
            schedule: Schedule::Constant(1.0),
            source: ProjectionSource::IidRkhsSample {
                kernel,
                support,
                weights: vec![1.0, 1.0, 1.0],
            },
            m_basis: vec![],
            seed: 13,
        };
        let estimate = coercivity_constant(&cfg, 100_000).unwrap();
        let mean = exact_mean_projection(&cfg.source).unwrap().unwrap();
        let exact = cfg.p * restricted_min_eigenvalue(&mean, &cfg.m_basis);
        assert!((exact - 0.25).abs() < 1e-12);
        assert!(
            (estimate - exact).abs() <= 0.02,
            "estimate {estimate} vs exact {exact}"
        );
    }

    #[test]
    fn geometric_rate_r2_half_rate() {
        // ℝ², coordinate draws, λ = 1, p = 1: β = 1/2 and the mean error
        // contracts by exactly 1/2 per step in expectation
        let cfg = DropoutConfig {
            p: 1.0,
            schedule: Schedule::Constant(1.0),
            source: ProjectionSource::iid_coordinate(2),
            m_basis: vec![],
            seed: 17,
        };
        let x0 = Vector::<f64>::from_vec(vec![1.0, -1.0]);
        let report = geometric_rate_check(&cfg, &x0, 40, 2000, RateBound::Beta(0.5)).unwrap();
        assert!(report.pass);
        // the bound is strictly positive for λ ∈ (0,2), β < 1
        assert!(report.bound.iter().all(|&b| b > 0.0));
    }

    #[test]
    fn geometric_rate_with_dropout_and_subspace() {
        let mut e3 = Vector::<f64>::zeros(3);
        e3[2] = 1.0;
        let cfg = DropoutConfig {
            p: 0.5,
            schedule: Schedule::Constant(1.0),
            source: ProjectionSource::IidCoordinate {
                dim: 3,
                active: vec![0, 1],
            },
            m_basis: vec![e3],
            seed: 19,
        };
        let x0 = Vector::<f64>::from_vec(vec![0.8, -0.6, 0.4]);
        let beta = coercivity_constant(&cfg, 1).unwrap();
        assert!((beta - 0.25).abs() < 1e-14);
        let report = geometric_rate_check(&cfg, &x0, 60, 2000, RateBound::Beta(beta)).unwrap();
        assert!(report.pass);
        // the limit is P_M x₀ = (0, 0, 0.4): empirical error decays to zero
        assert!(report.empirical[60] < 1e-4);
        // the M-component never moves: e_n stays in M^⊥ along every path
        let trace = dropout_path(&cfg, &x0, 60, 5).unwrap();
        assert!((trace.final_state[2] - x0[2]).abs() < 1e-12);
        // supermartingale surrogate: mean error nonincreasing up to MC slack
        for n in 1..=60 {
            assert!(report.empirical[n] <= report.empirical[n - 1] + report.stderr[n - 1] + 1e-12);
        }
        // gamma form of the same bound
        let gamma = beta * 1.0 * (2.0 - 1.0);
        let gamma_report =
            geometric_rate_check(&cfg, &x0, 60, 500, RateBound::Gamma(gamma)).unwrap();
        assert!(gamma_report.pass);
    }

    #[test]
    fn dropout_never_speeds_up_convergence() {
        // paired projection streams: at matched step count, p = 0.25 cannot
        // beat p = 1
        let x0 = Vector::<f64>::from_vec(vec![1.0, 0.5, -0.75, 0.25]);
        let mut empiricals = Vec::new();
        for &p in &[1.0, 0.25] {
            let cfg = DropoutConfig {
                p,
                schedule: Schedule::Constant(1.0),
                source: ProjectionSource::iid_coordinate(4),
                m_basis: vec![],
                seed: 23,
            };
            let report =
                geometric_rate_check(&cfg, &x0, 50, 1500, RateBound::Beta(p / 4.0)).unwrap();
            empiricals.push((report.empirical, report.stderr));
        }
        let (full, full_err) = &empiricals[0];
        let (quarter, quarter_err) = &empiricals[1];
        for n in 1..=50 {
            let slack = 3.0 * (full_err[n] + quarter_err[n]);
            assert!(quarter[n] + slack >= full[n], "step {n}");
        }
    }

    #[test]
    fn rkhs_dropout_converges_to_truth_on_support() {
        let kernel = Kernel::<f64>::gaussian(0.8);
        let mut r = rng(29);
        let anchors: Vec<_> = (0..4).map(|_| random_point(2, &mut r)).collect();
        let coeffs: Vec<f64> = (0..4).map(|_| r.random_range(-1.0..1.0)).collect();
        let truth = RkhsFunction::new(kernel.clone(), anchors.clone(), coeffs).unwrap();
        let weights = vec![1.0; anchors.len()];
        let report =
            rkhs_dropout_run(&kernel, &truth, &anchors, &weights, 1.0, 1.0, 150, 200, 31).unwrap();
        // support = anchors determines f*, so P_{M^⊥}f* = f* and the error
        // must vanish
        assert!(
            truth
                .distance_squared(&report.projected_truth)
                .unwrap()
                .abs()
                <= 1e-8 * truth.norm_squared().max(1e-14)
        );
        let last = *report.mean_error_sq.last().unwrap();
        assert!(last <= 3.0 * report.stderr.last().unwrap() + 1e-6, "{last}");
    }

    #[test]
    fn rkhs_dropout_paired_p_comparison() {
        let kernel = Kernel::<f64>::gaussian(0.8);
        let mut r = rng(37);
        let anchors: Vec<_> = (0..5).map(|_| random_point(2, &mut r)).collect();
        let coeffs: Vec<f64> = (0..5).map(|_| r.random_range(-1.0..1.0)).collect();
        let truth = RkhsFunction::new(kernel.clone(), anchors.clone(), coeffs).unwrap();
        let weights = vec![1.0; anchors.len()];
        let full =
            rkhs_dropout_run(&kernel, &truth, &anchors, &weights, 1.0, 1.0, 100, 400, 41).unwrap();
        let quarter =
            rkhs_dropout_run(&kernel, &truth, &anchors, &weights, 0.25, 1.0, 100, 400, 41).unwrap();
        for n in [25usize, 50, 100] {
            let slack = 3.0 * (full.stderr[n] + quarter.stderr[n]);
            assert!(quarter.mean_error_sq[n] + slack >= full.mean_error_sq[n]);
        }
    }

    #[test]
    fn rkhs_dropout_zero_truth() {
        let kernel = Kernel::<f64>::gaussian(1.0);
        let truth = RkhsFunction::zero(kernel.clone());
        let support = vec![Point::new(vec![0.1, 0.2]), Point::new(vec![-0.3, 0.4])];
        let report =
            rkhs_dropout_run(&kernel, &truth, &support, &[0.5, 0.5], 0.5, 1.0, 50, 10, 1).unwrap();
        for &e in &report.mean_error_sq {
            assert!(e.abs() < 1e-20);
        }
    }

    #[test]
    fn pseudo_solve_handles_singular_gram() {
        // duplicate support point makes G singular; the interpolant must
        // still match the truth on the support
        let kernel = Kernel::<f64>::gaussian(0.8);
        let mut r = rng(43);
        let z = random_point(2, &mut r);
        let truth = RkhsFunction::new(kernel.clone(), vec![z.clone()], vec![0.7]).unwrap();
        let support = vec![z.clone(), z.clone(), random_point(2, &mut r)];
        let g = gram(&kernel, &support);
        let values =
            nalgebra::DVector::<f64>::from_iterator(3, support.iter().map(|x| truth.evaluate(x)));
        let a = psd_pseudo_solve(g.entries(), &values);
        let reconstructed = g.entries() * &a;
        assert!((reconstructed - values).norm() <= 1e-9);
    }
}
