//! Telescoping energy-residual numerics.
//!
//! Everything here is organized around one mechanism: a contraction `A` on a
//! Hilbert space splits every vector into a surviving part `Ax` and a
//! dissipated part `D_A x`, where `D_A = (I - A*A)^{1/2}` is the defect
//! operator. Iterating such factors produces telescoping energy identities
//! that hold exactly at every finite step, and those identities are what this
//! crate computes, logs, and verifies:
//!
//! - [`hilbert`]: dense finite-dimensional Hilbert space numerics (PSD square
//!   roots, orthogonal projections) over real or complex scalars.
//! - [`telescope`]: contraction products, relaxed `I - λP` factors, exact
//!   per-step energy ledgers, and summability/effectiveness diagnostics.
//! - [`rkhs`]: positive-definite kernels, Gram matrices, and finite kernel
//!   expansions with exact inner products.
//! - [`interpolate`]: relaxed Kaczmarz interpolation in an RKHS with exact
//!   energy balance, plus the noisy variant and its bias-variance bound.
//! - [`dropout`]: Bernoulli-gated projection dynamics with pathwise energy
//!   identities and geometric mean-square convergence checks.
//! - [`treesplit`]: multichannel column-contraction splitting along a d-ary
//!   tree and the induced truncated kernels with exact residual accounting.
//! - [`compress`]: greedy prefix-closed refinement with exact trace-decrease
//!   bookkeeping and kernel-ridge stability bounds.
//! - [`gkpca`]: greedy kernel PCA with residual-based dictionary selection
//!   and deflation runs carrying exact energy decompositions.

pub mod compress;
pub mod dropout;
pub mod gkpca;
pub mod hilbert;
pub mod interpolate;
pub mod rkhs;
pub mod telescope;
pub mod treesplit;

use thiserror::Error;

/// Errors shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not self-adjoint (deviation {deviation:.3e})")]
    NotSelfAdjoint { deviation: f64 },

    #[error("matrix is not positive semidefinite (min eigenvalue {min_eigenvalue:.3e})")]
    NotPsd { min_eigenvalue: f64 },

    #[error("zero vector where a nonzero vector is required")]
    ZeroVector,

    #[error("operator is not a contraction (spectral norm estimate {norm:.6})")]
    NotContraction { norm: f64 },

    #[error("relaxation parameter {lambda} outside (0, 2)")]
    LambdaOutOfRange { lambda: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("kernel mismatch between expansions")]
    KernelMismatch,

    #[error("degenerate kernel diagonal k(x,x) = {value:.3e}")]
    DegenerateDiagonal { value: f64 },

    #[error("operation requires a ground-truth function on the problem")]
    MissingTruth,

    #[error("horizon {horizon} exceeds the {samples} available samples")]
    HorizonTooLong { horizon: usize, samples: usize },

    #[error("kernel diagonal {diag:.6e} below the required lower bound kappa = {kappa:.6e}")]
    KappaViolated { diag: f64, kappa: f64 },

    #[error("a projection moves the fixed subspace M (overlap {overlap:.3e})")]
    AssumptionMViolated { overlap: f64 },

    #[error("operation requires an i.i.d. projection source")]
    NotIid,

    #[error("channel family is not a column contraction (max eigenvalue {max_eigenvalue:.6})")]
    NotColumnContraction { max_eigenvalue: f64 },

    #[error("tree node budget exceeded: {nodes} nodes requested, limit {budget}")]
    BudgetExceeded { nodes: u64, budget: u64 },

    #[error("word set is not prefix closed at {word:?}")]
    NotPrefixClosed { word: String },

    #[error("word depth {depth} is not below the tree depth {max}")]
    DepthExceeded { depth: usize, max: usize },

    #[error("greedy frontier is empty")]
    EmptyFrontier,

    #[error("dictionary is empty")]
    EmptyDictionary,

    #[error("component count {p} outside 1..={dict_len}")]
    ComponentCountOutOfRange { p: usize, dict_len: usize },

    #[error("complex noise law requested in real scalar mode")]
    ComplexNoiseInRealMode,

    #[error("point is not tabulated in the feature map")]
    PointNotTabulated,
}

pub type Result<T> = std::result::Result<T, Error>;

pub use hilbert::Scalar;
