//! Positive-definite kernels and finite kernel expansions.
//!
//! An [`RkhsFunction`] is a finite expansion `f = Σ cᵢ k_{zᵢ}` whose inner
//! products are evaluated exactly through the kernel,
//! `⟨f,g⟩ = Σᵢⱼ conj(cᵢ) dⱼ k(zᵢ,wⱼ)`, with the inner product
//! conjugate-linear in the first argument so that `f(x) = ⟨k_x, f⟩`.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::hilbert::Scalar;
use crate::{Error, Result};

/// Strict positivity threshold for kernel diagonals `k(x,x)`.
pub const TOL_DIAG: f64 = 1e-12;

/// Input-space point in ℝᵖ.
///
/// Equality is exact coordinate equality: Kaczmarz sweeps revisit identical
/// sample points, and fuzzy merging would silently change the dynamics.
#[derive(Debug, Clone, PartialEq)]
pub struct Point(pub Vec<f64>);

impl Point {
    pub fn new(coords: Vec<f64>) -> Self {
        assert!(!coords.is_empty(), "points live in ℝᵖ with p ≥ 1");
        Self(coords)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    fn dist_squared(&self, other: &Self) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    fn dot(&self, other: &Self) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }
}

/// Evaluation hook of a user-provided kernel.
pub type KernelFn<T> = Arc<dyn Fn(&Point, &Point) -> T + Send + Sync>;

/// Positive-definite kernel on points, evaluating into the scalar field `T`.
#[derive(Clone)]
pub enum Kernel<T: Scalar> {
    /// `k(x,y) = exp(-γ‖x-y‖²)`
    Gaussian { gamma: f64 },
    /// `k(x,y) = ⟨x,y⟩`
    Linear,
    /// `k(x,y) = (⟨x,y⟩ + c)^degree`
    Polynomial { degree: u32, c: f64 },
    /// User hook; `id` identifies the kernel for mismatch checks.
    Custom { id: u64, eval: KernelFn<T> },
}

impl<T: Scalar> fmt::Debug for Kernel<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Gaussian { gamma } => write!(f, "Gaussian {{ gamma: {gamma} }}"),
            Self::Linear => write!(f, "Linear"),
            Self::Polynomial { degree, c } => {
                write!(f, "Polynomial {{ degree: {degree}, c: {c} }}")
            }
            Self::Custom { id, .. } => write!(f, "Custom {{ id: {id} }}"),
        }
    }
}

impl<T: Scalar> PartialEq for Kernel<T> {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Self::Gaussian { gamma: a }, Self::Gaussian { gamma: b }) => a == b,
            (Self::Linear, Self::Linear) => true,
            (Self::Polynomial { degree: d1, c: c1 }, Self::Polynomial { degree: d2, c: c2 }) => {
                d1 == d2 && c1 == c2
            }
            (Self::Custom { id: a, .. }, Self::Custom { id: b, .. }) => a == b,
            _ => false,
        }
    }
}

impl<T: Scalar> Kernel<T> {
    pub fn gaussian(gamma: f64) -> Self {
        assert!(gamma > 0.0);
        Self::Gaussian { gamma }
    }

    pub fn polynomial(degree: u32, c: f64) -> Self {
        Self::Polynomial { degree, c }
    }

    pub fn eval(&self, x: &Point, y: &Point) -> T {
        match self {
            Self::Gaussian { gamma } => T::from_real((-gamma * x.dist_squared(y)).exp()),
            Self::Linear => T::from_real(x.dot(y)),
            Self::Polynomial { degree, c } => T::from_real((x.dot(y) + c).powi(*degree as i32)),
            Self::Custom { eval, .. } => eval(x, y),
        }
    }

    /// `k(x,x)` as a real number (the Hermitian diagonal is real).
    pub fn diag(&self, x: &Point) -> f64 {
        self.eval(x, x).real()
    }

    /// `k(x,x)` validated strictly positive.
    pub fn diag_checked(&self, x: &Point) -> Result<f64> {
        let value = self.diag(x);
        if value <= TOL_DIAG {
            return Err(Error::DegenerateDiagonal { value });
        }
        Ok(value)
    }
}

/// Gram matrix `K_{jl} = k(x_j, x_l)` on a fixed point list.
#[derive(Debug, Clone)]
pub struct GramMatrix<T: Scalar> {
    points: Vec<Point>,
    entries: DMatrix<T>,
}

/// Builds the Gram matrix, computing the upper triangle and mirroring the
/// conjugate so the result is Hermitian by construction.
pub fn gram<T: Scalar>(kernel: &Kernel<T>, points: &[Point]) -> GramMatrix<T> {
    assert!(!points.is_empty(), "gram requires at least one point");
    let m = points.len();
    let mut entries = DMatrix::<T>::zeros(m, m);
    for j in 0..m {
        for l in j..m {
            let v = kernel.eval(&points[j], &points[l]);
            entries[(j, l)] = v;
            entries[(l, j)] = v.conjugate();
        }
    }
    GramMatrix {
        points: points.to_vec(),
        entries,
    }
}

impl<T: Scalar> GramMatrix<T> {
    /// Wraps an already-computed Hermitian matrix with its point list.
    pub fn from_parts(points: Vec<Point>, entries: DMatrix<T>) -> Self {
        assert_eq!(points.len(), entries.nrows());
        assert_eq!(entries.nrows(), entries.ncols());
        Self { points, entries }
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn entries(&self) -> &DMatrix<T> {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn trace(&self) -> f64 {
        self.entries.diagonal().iter().map(|d| d.real()).sum()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let eig = self.entries.clone().hermitian_part().symmetric_eigen();
        let mut min = f64::INFINITY;
        for &l in eig.eigenvalues.iter() {
            min = min.min(l);
        }
        min
    }

    pub fn max_eigenvalue(&self) -> f64 {
        let eig = self.entries.clone().hermitian_part().symmetric_eigen();
        let mut max = f64::NEG_INFINITY;
        for &l in eig.eigenvalues.iter() {
            max = max.max(l);
        }
        max
    }
}

/// Finite expansion `f = Σ cᵢ k_{zᵢ}` over anchor points.
#[derive(Debug, Clone)]
pub struct RkhsFunction<T: Scalar> {
    kernel: Kernel<T>,
    anchors: Vec<Point>,
    coeffs: Vec<T>,
}

impl<T: Scalar> RkhsFunction<T> {
    pub fn new(kernel: Kernel<T>, anchors: Vec<Point>, coeffs: Vec<T>) -> Result<Self> {
        if anchors.len() != coeffs.len() {
            return Err(Error::DimensionMismatch {
                expected: anchors.len(),
                found: coeffs.len(),
            });
        }
        Ok(Self {
            kernel,
            anchors,
            coeffs,
        })
    }

    pub fn zero(kernel: Kernel<T>) -> Self {
        Self {
            kernel,
            anchors: Vec::new(),
            coeffs: Vec::new(),
        }
    }

    /// The kernel section `k_x`.
    pub fn section(kernel: Kernel<T>, x: Point) -> Self {
        Self {
            kernel,
            anchors: vec![x],
            coeffs: vec![T::one()],
        }
    }

    /// The normalized section `g = k_x / √k(x,x)`.
    pub fn normalized_section(kernel: Kernel<T>, x: Point) -> Result<Self> {
        let diag = kernel.diag_checked(&x)?;
        Ok(Self {
            kernel,
            anchors: vec![x],
            coeffs: vec![T::from_real(1.0 / diag.sqrt())],
        })
    }

    pub fn kernel(&self) -> &Kernel<T> {
        &self.kernel
    }

    pub fn anchors(&self) -> &[Point] {
        &self.anchors
    }

    pub fn coeffs(&self) -> &[T] {
        &self.coeffs
    }

    pub fn num_anchors(&self) -> usize {
        self.anchors.len()
    }

    /// `f(x) = Σ cᵢ k(x, zᵢ)`.
    pub fn evaluate(&self, x: &Point) -> T {
        let mut acc = T::zero();
        for (z, &c) in self.anchors.iter().zip(&self.coeffs) {
            acc += c * self.kernel.eval(x, z);
        }
        acc
    }

    /// Adds `c·k_x`, merging with an existing anchor on exact coordinate
    /// equality so that repeated sample points do not grow the expansion.
    pub fn add_scaled_section(&mut self, x: &Point, c: T) {
        if let Some(idx) = self.anchors.iter().position(|z| z == x) {
            self.coeffs[idx] += c;
        } else {
            self.anchors.push(x.clone());
            self.coeffs.push(c);
        }
    }

    /// `⟨f, g⟩ = Σᵢⱼ conj(cᵢ) dⱼ k(zᵢ, wⱼ)`, conjugate-linear in `self`.
    pub fn inner(&self, other: &Self) -> Result<T> {
        if self.kernel != other.kernel {
            return Err(Error::KernelMismatch);
        }
        let mut acc = T::zero();
        for (z, &c) in self.anchors.iter().zip(&self.coeffs) {
            for (w, &d) in other.anchors.iter().zip(&other.coeffs) {
                acc += c.conjugate() * d * self.kernel.eval(z, w);
            }
        }
        Ok(acc)
    }

    /// `‖f‖² = ⟨f,f⟩`, returned as a real number.
    pub fn norm_squared(&self) -> f64 {
        self.inner(self)
            .expect("a function always matches its own kernel")
            .real()
    }

    /// `‖f - g‖²` through expansion inner products.
    pub fn distance_squared(&self, other: &Self) -> Result<f64> {
        let ff = self.inner(self)?.real();
        let gg = other.inner(other)?.real();
        let fg = self.inner(other)?;
        Ok(ff + gg - 2.0 * fg.real())
    }

    /// Difference `a·self + b·other` as a single expansion.
    pub fn linear_combination(&self, a: T, other: &Self, b: T) -> Result<Self> {
        if self.kernel != other.kernel {
            return Err(Error::KernelMismatch);
        }
        let mut out = Self {
            kernel: self.kernel.clone(),
            anchors: self.anchors.clone(),
            coeffs: self.coeffs.iter().map(|&c| a * c).collect(),
        };
        for (w, &d) in other.anchors.iter().zip(&other.coeffs) {
            out.add_scaled_section(w, b * d);
        }
        Ok(out)
    }

    pub fn scaled(&self, a: T) -> Self {
        Self {
            kernel: self.kernel.clone(),
            anchors: self.anchors.clone(),
            coeffs: self.coeffs.iter().map(|&c| a * c).collect(),
        }
    }

    /// Merges duplicate anchors and drops coefficients with
    /// `|cᵢ| ≤ tol·max|c|`. With `tol = 0` only exact zeros are dropped and
    /// the function is unchanged.
    pub fn compact(&self, tol: f64) -> Self {
        let mut merged: Vec<(Point, T)> = Vec::with_capacity(self.anchors.len());
        for (z, &c) in self.anchors.iter().zip(&self.coeffs) {
            if let Some(entry) = merged.iter_mut().find(|(p, _)| p == z) {
                entry.1 += c;
            } else {
                merged.push((z.clone(), c));
            }
        }
        let max_abs = merged
            .iter()
            .map(|(_, c)| c.modulus())
            .fold(0.0_f64, f64::max);
        let threshold = tol * max_abs;
        let (anchors, coeffs) = merged
            .into_iter()
            .filter(|(_, c)| c.modulus() > threshold)
            .unzip();
        Self {
            kernel: self.kernel.clone(),
            anchors,
            coeffs,
        }
    }

    /// Gram matrix of the anchor set.
    pub fn anchor_gram(&self) -> Option<GramMatrix<T>> {
        (!self.anchors.is_empty()).then(|| gram(&self.kernel, &self.anchors))
    }
}

/// Applies the rank-one section projection at `x`:
/// `P_x f = (f(x)/k(x,x))·k_x`.
pub fn section_projection_apply<T: Scalar>(
    f: &RkhsFunction<T>,
    x: &Point,
) -> Result<RkhsFunction<T>> {
    let diag = f.kernel().diag_checked(x)?;
    let coeff = f.evaluate(x) * T::from_real(1.0 / diag);
    RkhsFunction::new(f.kernel().clone(), vec![x.clone()], vec![coeff])
}

/// PSD square root `S` of the Gram matrix on `span`, so that columns of `S`
/// realize the kernel sections isometrically: `⟨S eᵢ, S eⱼ⟩ = k(zᵢ, zⱼ)`.
pub fn isometric_span_factor<T: Scalar>(kernel: &Kernel<T>, span: &[Point]) -> Result<DMatrix<T>> {
    let g = gram(kernel, span);
    let tol = 1e-10 * g.trace().max(1.0);
    crate::hilbert::psd_sqrt(g.entries(), tol)
}

/// Coefficients of `f` placed into the indexing of `span`. Every anchor of
/// `f` must appear in `span` (exact coordinate equality).
pub fn span_coordinates<T: Scalar>(
    f: &RkhsFunction<T>,
    span: &[Point],
) -> Result<nalgebra::DVector<T>> {
    let mut coords = nalgebra::DVector::<T>::zeros(span.len());
    for (z, &c) in f.anchors().iter().zip(f.coeffs()) {
        let idx = span
            .iter()
            .position(|p| p == z)
            .ok_or(Error::PointNotTabulated)?;
        coords[idx] += c;
    }
    Ok(coords)
}
