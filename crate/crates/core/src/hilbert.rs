//! Finite-dimensional model Hilbert space numerics.
//!
//! Vectors and operators are dense `nalgebra` types over a scalar field that
//! is fixed once per experiment: either `f64` or `Complex<f64>`. The inner
//! product is conjugate-linear in the first argument, matching
//! [`DVector::dotc`], so `v.dotc(&w)` is the pairing used everywhere.

use nalgebra::{Complex, ComplexField, DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::{Error, Result};

/// Scalar field of the model space: `f64` or `Complex<f64>`.
pub trait Scalar: ComplexField<RealField = f64> + Copy + 'static {
    /// Whether the field has a nonzero imaginary axis.
    const COMPLEX: bool;

    /// Builds `re + i·im`, or `None` when the field cannot represent it.
    fn try_from_re_im(re: f64, im: f64) -> Option<Self>;

    /// Standard draw with unit second moment: `N(0,1)` in real mode,
    /// `(N(0,1/2) + i N(0,1/2))` in complex mode.
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;
}

impl Scalar for f64 {
    const COMPLEX: bool = false;

    fn try_from_re_im(re: f64, im: f64) -> Option<Self> {
        (im == 0.0).then_some(re)
    }

    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        StandardNormal.sample(rng)
    }
}

impl Scalar for Complex<f64> {
    const COMPLEX: bool = true;

    fn try_from_re_im(re: f64, im: f64) -> Option<Self> {
        Some(Complex::new(re, im))
    }

    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        Complex::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
    }
}

pub type Vector<T> = DVector<T>;
pub type Operator<T> = DMatrix<T>;

/// Absolute tolerance for self-adjointness and idempotence checks, on the
/// Frobenius norm. User-supplied projections may come from noisy
/// constructions.
pub const TOL_PROJ: f64 = 1e-8;

/// Residual-norm threshold below which Gram-Schmidt drops a vector as
/// dependent.
pub const TOL_GS: f64 = 1e-10;

/// Frobenius deviation of `m` from its adjoint.
pub fn self_adjoint_deviation<T: Scalar>(m: &Operator<T>) -> f64 {
    (m - m.adjoint()).norm()
}

/// Symmetric/Hermitian PSD square root via full eigendecomposition.
///
/// Eigenvalues in `[-tol_neg, 0)` are clamped to zero; anything below
/// `-tol_neg` is rejected as genuinely indefinite.
pub fn psd_sqrt<T: Scalar>(m: &Operator<T>, tol_neg: f64) -> Result<Operator<T>> {
    let deviation = self_adjoint_deviation(m);
    if deviation > TOL_PROJ {
        return Err(Error::NotSelfAdjoint { deviation });
    }
    let eig = m.clone().hermitian_part().symmetric_eigen();
    let mut min_eig = f64::INFINITY;
    for &l in eig.eigenvalues.iter() {
        min_eig = min_eig.min(l);
    }
    if min_eig < -tol_neg {
        return Err(Error::NotPsd {
            min_eigenvalue: min_eig,
        });
    }
    let sqrt_diag = eig.eigenvalues.map(|l| T::from_real(l.max(0.0).sqrt()));
    Ok(&eig.eigenvectors * Operator::from_diagonal(&sqrt_diag) * eig.eigenvectors.adjoint())
}

/// Default clamping tolerance for [`psd_sqrt`], relative to the matrix scale.
pub fn default_psd_tol<T: Scalar>(m: &Operator<T>) -> f64 {
    1e-10 * m.norm()
}

/// Spectral norm estimate: power iteration on `A*A` (50 iterations, relative
/// tolerance 1e-10), falling back to the Frobenius upper bound when the
/// iteration degenerates.
pub fn spectral_norm_estimate<T: Scalar>(a: &Operator<T>) -> f64 {
    let n = a.ncols();
    if n == 0 {
        return 0.0;
    }
    let gram = a.adjoint() * a;
    // Deterministic start with unequal entries so it is not orthogonal to the
    // top eigenspace for simple structured matrices.
    let mut v = Vector::<T>::from_fn(n, |i, _| T::from_real(1.0 + (i as f64) / (n as f64 + 1.0)));
    v.unscale_mut(v.norm());
    let mut estimate = 0.0_f64;
    for _ in 0..50 {
        let w = &gram * &v;
        let norm = w.norm();
        if norm <= f64::MIN_POSITIVE {
            return 0.0; // A*A v vanished: restrict of A to the cycle is zero
        }
        let next = norm; // Rayleigh growth factor since ‖v‖ = 1
        let done = (next - estimate).abs() <= 1e-10 * next.max(1.0);
        estimate = next;
        v = w.unscale(norm);
        if done {
            break;
        }
    }
    if estimate > 0.0 {
        estimate.sqrt()
    } else {
        a.norm()
    }
}

/// Validated orthogonal projection: self-adjoint and idempotent within
/// [`TOL_PROJ`].
#[derive(Debug, Clone, PartialEq)]
pub struct Projection<T: Scalar> {
    op: Operator<T>,
}

impl<T: Scalar> Projection<T> {
    /// Wraps an operator after checking `P = P*` and `P² = P`.
    pub fn from_operator(op: Operator<T>) -> Result<Self> {
        let deviation = self_adjoint_deviation(&op);
        if deviation > TOL_PROJ {
            return Err(Error::NotSelfAdjoint { deviation });
        }
        let idem = (&op * &op - &op).norm();
        if idem > TOL_PROJ {
            return Err(Error::NotPsd {
                min_eigenvalue: -idem,
            });
        }
        Ok(Self { op })
    }

    /// Rank-one projection onto the line spanned by `g`: `Px = ⟨g,x⟩ g / ‖g‖²`.
    pub fn rank_one(g: &Vector<T>) -> Result<Self> {
        let norm_sq = g.norm_squared();
        if norm_sq <= 0.0 {
            return Err(Error::ZeroVector);
        }
        let unit = g.unscale(norm_sq.sqrt());
        let op = &unit * unit.adjoint();
        Ok(Self { op })
    }

    /// Orthogonal projection onto `span(vectors)` in a `dim`-dimensional
    /// space, via Gram-Schmidt with one re-orthogonalization pass.
    /// Rank-deficient input is handled by dropping vectors whose residual
    /// norm falls below [`TOL_GS`]; an empty list yields the zero operator.
    pub fn onto_span(vectors: &[Vector<T>], dim: usize) -> Self {
        let mut basis: Vec<Vector<T>> = Vec::new();
        for v in vectors {
            let scale = v.norm().max(1.0);
            let mut w = v.clone();
            for _ in 0..2 {
                for q in &basis {
                    let c = q.dotc(&w);
                    w -= q * c;
                }
            }
            let norm = w.norm();
            if norm > TOL_GS * scale {
                basis.push(w.unscale(norm));
            }
        }
        let mut op = Operator::<T>::zeros(dim, dim);
        for q in &basis {
            op += q * q.adjoint();
        }
        Self { op }
    }

    pub fn matrix(&self) -> &Operator<T> {
        &self.op
    }

    pub fn dim(&self) -> usize {
        self.op.nrows()
    }

    pub fn apply(&self, x: &Vector<T>) -> Vector<T> {
        &self.op * x
    }

    /// `(I - P)x` without forming the complement matrix.
    pub fn complement_apply(&self, x: &Vector<T>) -> Vector<T> {
        x - self.apply(x)
    }

    pub fn trace(&self) -> f64 {
        self.op.diagonal().iter().map(|d| d.real()).sum()
    }
}

/// Vector with independent standard-normal entries (complex entries have
/// unit second moment).
pub fn random_vector<T: Scalar, R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vector<T> {
    Vector::from_fn(dim, |_, _| T::standard_normal(rng))
}

/// Matrix with independent standard-normal entries.
pub fn random_matrix<T: Scalar, R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    rng: &mut R,
) -> Operator<T> {
    Operator::from_fn(rows, cols, |_, _| T::standard_normal(rng))
}

/// Random unit vector.
pub fn random_unit_vector<T: Scalar, R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vector<T> {
    loop {
        let v = random_vector::<T, R>(dim, rng);
        let norm = v.norm();
        if norm > 1e-6 {
            return v.unscale(norm);
        }
    }
}

/// Random strict contraction: a normal matrix rescaled so that its exact
/// largest singular value sits at `cap`.
pub fn random_contraction<T: Scalar, R: Rng + ?Sized>(
    dim: usize,
    cap: f64,
    rng: &mut R,
) -> Operator<T> {
    let b = random_matrix::<T, R>(dim, dim, rng);
    let top = b
        .clone()
        .singular_values()
        .iter()
        .copied()
        .fold(0.0_f64, f64::max)
        .max(f64::MIN_POSITIVE);
    b * T::from_real(cap / top)
}

/// Random rank-one orthogonal projection.
pub fn random_rank_one_projection<T: Scalar, R: Rng + ?Sized>(
    dim: usize,
    rng: &mut R,
) -> Projection<T> {
    let g = random_unit_vector::<T, R>(dim, rng);
    Projection::rank_one(&g).expect("unit vector is nonzero")
}

/// Random unitary via QR of a normal matrix.
pub fn random_unitary<T: Scalar, R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Operator<T> {
    let qr = random_matrix::<T, R>(dim, dim, rng).qr();
    qr.q()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn psd_sqrt_identity() {
        let m = Operator::<f64>::identity(3, 3);
        let s = psd_sqrt(&m, 1e-10).unwrap();
        assert!((s - Operator::<f64>::identity(3, 3)).norm() < 1e-12);
    }

    #[test]
    fn psd_sqrt_diagonal() {
        let m = Operator::<f64>::from_diagonal(&Vector::from_vec(vec![4.0, 0.0]));
        let s = psd_sqrt(&m, 1e-10).unwrap();
        let expected = Operator::<f64>::from_diagonal(&Vector::from_vec(vec![2.0, 0.0]));
        assert!((s - expected).norm() < 1e-12);
    }

    #[test]
    fn psd_sqrt_gram_squares_back() {
        let mut r = rng(7);
        let b = random_matrix::<f64, _>(5, 5, &mut r);
        let m = b.transpose() * &b;
        let s = psd_sqrt(&m, default_psd_tol(&m)).unwrap();
        assert!((&s * &s - &m).norm() <= 1e-10 * m.norm().max(1.0));
        // and against a complex Gram as well
        let bc = random_matrix::<Complex<f64>, _>(5, 5, &mut r);
        let mc = bc.adjoint() * &bc;
        let sc = psd_sqrt(&mc, default_psd_tol(&mc)).unwrap();
        assert!((&sc * &sc - &mc).norm() <= 1e-10 * mc.norm().max(1.0));
    }

    #[test]
    fn psd_sqrt_desk_scale_dimensions() {
        let mut r = rng(29);
        for dim in [16usize, 32] {
            let b = random_matrix::<f64, _>(dim, dim, &mut r);
            let m = b.transpose() * &b;
            let s = psd_sqrt(&m, default_psd_tol(&m)).unwrap();
            assert!((&s * &s - &m).norm() <= (dim as f64) * 1e-10 * m.norm());
        }
    }

    #[test]
    fn psd_sqrt_rejects_indefinite() {
        let m = Operator::<f64>::from_diagonal(&Vector::from_vec(vec![1.0, -0.5]));
        assert!(matches!(psd_sqrt(&m, 1e-10), Err(Error::NotPsd { .. })));
        let ns = Operator::<f64>::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        assert!(matches!(
            psd_sqrt(&ns, 1e-10),
            Err(Error::NotSelfAdjoint { .. })
        ));
    }

    #[test]
    fn rank_one_on_axis() {
        let p = Projection::rank_one(&Vector::<f64>::from_vec(vec![1.0, 0.0])).unwrap();
        let expected = Operator::<f64>::from_diagonal(&Vector::from_vec(vec![1.0, 0.0]));
        assert!((p.matrix() - expected).norm() < 1e-15);
    }

    #[test]
    fn rank_one_diagonal_direction() {
        let g = Vector::<f64>::from_vec(vec![1.0, 1.0]).unscale(2.0_f64.sqrt());
        let p = Projection::rank_one(&g).unwrap();
        let expected = Operator::<f64>::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5]);
        assert!((p.matrix() - expected).norm() < 1e-12);
    }

    #[test]
    fn rank_one_zero_vector_rejected() {
        let z = Vector::<f64>::zeros(3);
        assert!(matches!(Projection::rank_one(&z), Err(Error::ZeroVector)));
    }

    #[test]
    fn rank_one_idempotent_self_adjoint() {
        let mut r = rng(11);
        let g = random_vector::<Complex<f64>, _>(6, &mut r);
        let p = Projection::rank_one(&g).unwrap();
        let m = p.matrix();
        assert!((m * m - m).norm() < 1e-12);
        assert!(self_adjoint_deviation(m) < 1e-12);
        assert!((p.trace() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rank_one_scale_invariant() {
        let mut r = rng(13);
        let g = random_vector::<f64, _>(5, &mut r);
        let p1 = Projection::rank_one(&g).unwrap();
        let p2 = Projection::rank_one(&(&g * -3.7)).unwrap();
        assert!((p1.matrix() - p2.matrix()).norm() < 1e-12);
    }

    #[test]
    fn span_projection_empty_is_zero() {
        let p = Projection::<f64>::onto_span(&[], 4);
        assert_eq!(p.matrix(), &Operator::<f64>::zeros(4, 4));
    }

    #[test]
    fn span_projection_coordinate_subspace() {
        let e2 = Vector::<f64>::from_vec(vec![0.0, 1.0, 0.0]);
        let p = Projection::onto_span(&[e2], 3);
        let expected = Operator::<f64>::from_diagonal(&Vector::from_vec(vec![0.0, 1.0, 0.0]));
        assert!((p.matrix() - expected).norm() < 1e-14);
    }

    #[test]
    fn span_projection_rank_matches_svd() {
        let mut r = rng(17);
        let v1 = random_vector::<f64, _>(5, &mut r);
        let v2 = random_vector::<f64, _>(5, &mut r);
        let p = Projection::onto_span(&[v1.clone(), v2.clone(), v1.clone() + &v2], 5);
        let m = p.matrix();
        assert!((m * m - m).norm() < 1e-10);
        let rank = m
            .clone()
            .singular_values()
            .iter()
            .filter(|&&s| s > 1e-8)
            .count();
        assert_eq!(rank, 2);
    }

    #[test]
    fn spectral_norm_matches_singular_value() {
        let mut r = rng(23);
        for _ in 0..10 {
            let a = random_matrix::<f64, _>(6, 6, &mut r);
            let est = spectral_norm_estimate(&a);
            let exact = a.clone().singular_values()[0];
            assert!((est - exact).abs() <= 1e-6 * exact.max(1.0));
        }
    }

    proptest! {
        #[test]
        fn pythagoras_for_projections(seed in 0u64..500, dim in 2usize..8) {
            let mut r = rng(seed);
            let p = random_rank_one_projection::<f64, _>(dim, &mut r);
            let x = random_vector::<f64, _>(dim, &mut r);
            let px = p.apply(&x);
            let qx = p.complement_apply(&x);
            let lhs = x.norm_squared();
            let rhs = px.norm_squared() + qx.norm_squared();
            prop_assert!((lhs - rhs).abs() <= 1e-10 * lhs.max(1e-14));
        }

        #[test]
        fn psd_sqrt_squares_to_input(seed in 0u64..200, dim in 2usize..8) {
            let mut r = rng(seed);
            let b = random_matrix::<f64, _>(dim, dim, &mut r);
            let m = b.transpose() * &b;
            let s = psd_sqrt(&m, default_psd_tol(&m)).unwrap();
            prop_assert!(self_adjoint_deviation(&s) < 1e-9 * m.norm().max(1.0));
            prop_assert!((&s * &s - &m).norm() <= (dim as f64) * 1e-10 * m.norm().max(1.0));
        }
    }
}
