//! Multichannel tree splitting and truncated kernels.
//!
//! A column contraction `(A_1, …, A_d)` with defect
//! `D = (I - Σ A*ᵢAᵢ)^{1/2}` splits every vector's energy across `d`
//! channels plus a defect channel. Iterating along the rooted d-ary tree
//! gives, per node word `α = i₁⋯i_n` with `A_α = A_{i_n}⋯A_{i_1}`, the exact
//! refinement
//!
//! ```text
//! ‖x‖² = Σ_{|α|=N} ‖A_α x‖² + Σ_{|α|<N} ‖D A_α x‖²
//! ```
//!
//! Composing with a feature map `Φ₀` turns the defect blocks into kernels:
//! keeping a prefix-closed set `S` of nodes defines
//! `k_S(x,y) = Σ_{α∈S} ⟨DA_αΦ₀(x), DA_αΦ₀(y)⟩`, and the discarded residual
//! energy `R(x) = k₀(x,x) - k_S(x,x)` is tracked exactly.

use std::collections::BTreeSet;
use std::fmt;

use nalgebra::DMatrix;

use crate::hilbert::{psd_sqrt, Operator, Scalar, Vector};
use crate::rkhs::{GramMatrix, Kernel, Point};
use crate::{Error, Result};

/// Hard cap on the number of tree nodes a traversal may touch.
pub const NODE_BUDGET: u64 = 1 << 20;

/// Node of the rooted d-ary tree, labeled by its word `i₁⋯i_n` with letters
/// in `1..=d`. The operator order is pinned: `A_α = A_{i_n}⋯A_{i_1}`, i.e.
/// the first letter acts first.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Word(Vec<u8>);

impl Word {
    pub fn root() -> Self {
        Self(Vec::new())
    }

    pub fn from_letters(letters: Vec<u8>) -> Self {
        assert!(letters.iter().all(|&l| l >= 1), "letters are 1-based");
        Self(letters)
    }

    pub fn letters(&self) -> &[u8] {
        &self.0
    }

    pub fn depth(&self) -> usize {
        self.0.len()
    }

    pub fn is_root(&self) -> bool {
        self.0.is_empty()
    }

    /// Child obtained by appending letter `i`.
    pub fn child(&self, i: u8) -> Self {
        let mut letters = self.0.clone();
        letters.push(i);
        Self(letters)
    }

    /// Parent (last letter removed); `None` at the root.
    pub fn parent(&self) -> Option<Self> {
        if self.0.is_empty() {
            return None;
        }
        Some(Self(self.0[..self.0.len() - 1].to_vec()))
    }
}

impl fmt::Display for Word {
    /// Digit string, root printed as the empty string; letters above 9 are
    /// dot-separated to stay unambiguous.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.iter().any(|&l| l > 9) {
            let parts: Vec<String> = self.0.iter().map(|l| l.to_string()).collect();
            write!(f, "{}", parts.join("."))
        } else {
            for l in &self.0 {
                write!(f, "{l}")?;
            }
            Ok(())
        }
    }
}

/// Column contraction `(A_1, …, A_d)` with its defect operator.
#[derive(Debug, Clone)]
pub struct ChannelFamily<T: Scalar> {
    channels: Vec<Operator<T>>,
    defect: Operator<T>,
    sum_adjoint: Operator<T>,
    contraction_bound: Option<f64>,
}

impl<T: Scalar> ChannelFamily<T> {
    /// Validates `Σ A*ᵢAᵢ ⪯ I` and computes `D = (I - Σ A*ᵢAᵢ)^{1/2}`.
    pub fn new(channels: Vec<Operator<T>>) -> Result<Self> {
        assert!(!channels.is_empty(), "a family needs at least one channel");
        let dim = channels[0].nrows();
        for a in &channels {
            if a.nrows() != dim || a.ncols() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: a.nrows().max(a.ncols()),
                });
            }
        }
        let mut sum = Operator::<T>::zeros(dim, dim);
        for a in &channels {
            sum += a.adjoint() * a;
        }
        let sum_adjoint = sum.hermitian_part();
        let max_eigenvalue = hermitian_max_eigenvalue(&sum_adjoint);
        if max_eigenvalue > 1.0 + 1e-9 {
            return Err(Error::NotColumnContraction { max_eigenvalue });
        }
        let m = Operator::<T>::identity(dim, dim) - &sum_adjoint;
        let defect = psd_sqrt(&m, 1e-10 * (dim as f64).max(1.0))?;
        Ok(Self {
            channels,
            defect,
            sum_adjoint,
            contraction_bound: None,
        })
    }

    /// Certifies the uniform bound `Σ A*ᵢAᵢ ⪯ c·I`, enabling the geometric
    /// level-energy decay `L_N ≤ c^N ‖x‖²`.
    pub fn with_contraction_bound(mut self, c: f64) -> Result<Self> {
        assert!(c > 0.0 && c < 1.0);
        let max_eigenvalue = hermitian_max_eigenvalue(&self.sum_adjoint);
        if max_eigenvalue > c + 1e-9 {
            return Err(Error::NotColumnContraction { max_eigenvalue });
        }
        self.contraction_bound = Some(c);
        Ok(self)
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn dim(&self) -> usize {
        self.defect.nrows()
    }

    pub fn contraction_bound(&self) -> Option<f64> {
        self.contraction_bound
    }

    /// Channel operator for 1-based letter `i`.
    pub fn channel(&self, i: u8) -> &Operator<T> {
        &self.channels[(i - 1) as usize]
    }

    pub fn defect(&self) -> &Operator<T> {
        &self.defect
    }

    pub fn sum_adjoint(&self) -> &Operator<T> {
        &self.sum_adjoint
    }

    /// `A_α x`, applying the first letter first.
    pub fn apply_word(&self, alpha: &Word, x: &Vector<T>) -> Vector<T> {
        let mut v = x.clone();
        for &letter in alpha.letters() {
            v = self.channel(letter) * v;
        }
        v
    }

    fn node_count(&self, depth: usize) -> Result<u64> {
        let d = self.num_channels() as u64;
        let mut total: u64 = 0;
        let mut level: u64 = 1;
        for _ in 0..=depth {
            total = total.saturating_add(level);
            if total > NODE_BUDGET {
                return Err(Error::BudgetExceeded {
                    nodes: total,
                    budget: NODE_BUDGET,
                });
            }
            level = level.saturating_mul(d);
        }
        Ok(total)
    }
}

fn hermitian_max_eigenvalue<T: Scalar>(m: &Operator<T>) -> f64 {
    let eig = m.clone().symmetric_eigen();
    let mut max = f64::NEG_INFINITY;
    for &l in eig.eigenvalues.iter() {
        max = max.max(l);
    }
    max
}

/// Per-node energies of one vector under the tree recursion.
#[derive(Debug, Clone)]
pub struct NodeEnergy {
    pub word: Word,
    /// `E_α = ‖A_α x‖²`
    pub energy: f64,
    /// `Δ_α = ‖D A_α x‖²`, absent at the deepest level
    pub defect_energy: Option<f64>,
}

/// All node and level energies down to `depth`.
#[derive(Debug, Clone)]
pub struct TreeEnergies {
    pub depth: usize,
    /// `L_n = Σ_{|α|=n} E_α` for n = 0..=depth
    pub levels: Vec<f64>,
    /// Nodes in depth-first preorder.
    pub nodes: Vec<NodeEnergy>,
}

impl TreeEnergies {
    /// Total defect energy at one level: `Σ_{|α|=n} Δ_α`.
    pub fn level_defect_sum(&self, n: usize) -> f64 {
        self.nodes
            .iter()
            .filter(|node| node.word.depth() == n)
            .filter_map(|node| node.defect_energy)
            .sum()
    }

    /// Residual of `‖x‖² = L_N + Σ_{n<N} Σ_{|α|=n} Δ_α`.
    pub fn splitting_identity_residual(&self) -> f64 {
        let total_defect: f64 = (0..self.depth).map(|n| self.level_defect_sum(n)).sum();
        (self.levels[0] - self.levels[self.depth] - total_defect).abs()
    }
}

/// Computes every `E_α` and `Δ_α` down to `depth` by depth-first recursion,
/// deriving each child vector from its parent (`A_{αi} x = A_i (A_α x)`).
pub fn tree_energies<T: Scalar>(
    family: &ChannelFamily<T>,
    x: &Vector<T>,
    depth: usize,
) -> Result<TreeEnergies> {
    if x.nrows() != family.dim() {
        return Err(Error::DimensionMismatch {
            expected: family.dim(),
            found: x.nrows(),
        });
    }
    family.node_count(depth)?;
    let mut levels = vec![0.0; depth + 1];
    let mut nodes = Vec::new();
    descend(family, &Word::root(), x, depth, &mut levels, &mut nodes);
    Ok(TreeEnergies {
        depth,
        levels,
        nodes,
    })
}

fn descend<T: Scalar>(
    family: &ChannelFamily<T>,
    word: &Word,
    vector: &Vector<T>,
    depth: usize,
    levels: &mut [f64],
    nodes: &mut Vec<NodeEnergy>,
) {
    let n = word.depth();
    let energy = vector.norm_squared();
    levels[n] += energy;
    let defect_energy = if n < depth {
        Some((family.defect() * vector).norm_squared())
    } else {
        None
    };
    nodes.push(NodeEnergy {
        word: word.clone(),
        energy,
        defect_energy,
    });
    if n < depth {
        for i in 1..=family.num_channels() as u8 {
            let child_vec = family.channel(i) * vector;
            descend(family, &word.child(i), &child_vec, depth, levels, nodes);
        }
    }
}

/// Prefix-closed set of tree nodes: membership of any non-root word implies
/// membership of its parent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrefixSet {
    nodes: BTreeSet<Word>,
}

impl PrefixSet {
    pub fn empty() -> Self {
        Self {
            nodes: BTreeSet::new(),
        }
    }

    /// The singleton `{∅}`.
    pub fn root() -> Self {
        let mut nodes = BTreeSet::new();
        nodes.insert(Word::root());
        Self { nodes }
    }

    /// All words of depth `< m` on the `d`-ary alphabet.
    pub fn depth_truncation(m: usize, d: usize) -> Self {
        let mut nodes = BTreeSet::new();
        if m == 0 {
            return Self { nodes };
        }
        let mut frontier = vec![Word::root()];
        nodes.insert(Word::root());
        for _ in 1..m {
            let mut next = Vec::new();
            for w in &frontier {
                for i in 1..=d as u8 {
                    let c = w.child(i);
                    nodes.insert(c.clone());
                    next.push(c);
                }
            }
            frontier = next;
        }
        Self { nodes }
    }

    /// Validates prefix closure of an arbitrary word collection.
    pub fn new<I: IntoIterator<Item = Word>>(words: I) -> Result<Self> {
        let nodes: BTreeSet<Word> = words.into_iter().collect();
        for w in &nodes {
            if let Some(parent) = w.parent() {
                if !nodes.contains(&parent) {
                    return Err(Error::NotPrefixClosed {
                        word: w.to_string(),
                    });
                }
            }
        }
        Ok(Self { nodes })
    }

    /// Inserts `word`, requiring its parent to be present already.
    pub fn insert(&mut self, word: Word) -> Result<()> {
        if let Some(parent) = word.parent() {
            if !self.nodes.contains(&parent) {
                return Err(Error::NotPrefixClosed {
                    word: word.to_string(),
                });
            }
        }
        self.nodes.insert(word);
        Ok(())
    }

    pub fn contains(&self, word: &Word) -> bool {
        self.nodes.contains(word)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Word> {
        self.nodes.iter()
    }

    pub fn max_depth(&self) -> Option<usize> {
        self.nodes.iter().map(Word::depth).max()
    }

    /// Frontier `{β ∉ S : parent(β) ∈ S, |β| < max_depth}` in ascending word
    /// order.
    pub fn frontier(&self, d: usize, max_depth: usize) -> Vec<Word> {
        let mut out = Vec::new();
        for w in &self.nodes {
            if w.depth() + 1 >= max_depth {
                continue; // children would sit at depth ≥ max_depth
            }
            for i in 1..=d as u8 {
                let child = w.child(i);
                if !self.nodes.contains(&child) {
                    out.push(child);
                }
            }
        }
        out.sort();
        out.dedup();
        out
    }
}

/// Feature map `Φ₀ : X → H` realizing a base kernel
/// `k₀(x,y) = ⟨Φ₀(x), Φ₀(y)⟩`.
#[derive(Debug, Clone)]
pub enum FeatureMap<T: Scalar> {
    /// Explicit table of feature vectors on a finite point set.
    Table(Vec<(Point, Vector<T>)>),
    /// `Φ₀(x) = W·coords(x) + b`.
    Affine {
        weights: Operator<T>,
        bias: Vector<T>,
    },
    /// Sample-restricted factor of a kernel Gram matrix: `Φ₀(points[j])` is
    /// column `j` of the PSD square root, so `⟨Φ₀(xᵢ),Φ₀(xⱼ)⟩ = k(xᵢ,xⱼ)`
    /// exactly on the sample.
    GramFactor {
        kernel: Kernel<T>,
        points: Vec<Point>,
        factor: DMatrix<T>,
    },
}

impl<T: Scalar> FeatureMap<T> {
    /// Builds the sample-restricted factor realization of `kernel` on
    /// `points`.
    pub fn gram_factor(kernel: Kernel<T>, points: Vec<Point>) -> Result<Self> {
        let factor = crate::rkhs::isometric_span_factor(&kernel, &points)?;
        Ok(Self::GramFactor {
            kernel,
            points,
            factor,
        })
    }

    pub fn feature_dim(&self) -> usize {
        match self {
            Self::Table(entries) => entries.first().map_or(0, |(_, v)| v.nrows()),
            Self::Affine { weights, .. } => weights.nrows(),
            Self::GramFactor { factor, .. } => factor.nrows(),
        }
    }

    /// `Φ₀(x)`; table-backed maps reject unknown points.
    pub fn phi(&self, x: &Point) -> Result<Vector<T>> {
        match self {
            Self::Table(entries) => entries
                .iter()
                .find(|(p, _)| p == x)
                .map(|(_, v)| v.clone())
                .ok_or(Error::PointNotTabulated),
            Self::Affine { weights, bias } => {
                let coords = Vector::<T>::from_iterator(
                    x.dim(),
                    x.coords().iter().map(|&c| T::from_real(c)),
                );
                Ok(weights * coords + bias)
            }
            Self::GramFactor { points, factor, .. } => {
                let idx = points
                    .iter()
                    .position(|p| p == x)
                    .ok_or(Error::PointNotTabulated)?;
                Ok(factor.column(idx).into_owned())
            }
        }
    }

    /// The induced base kernel `k₀(x,y) = ⟨Φ₀(x), Φ₀(y)⟩`.
    pub fn kernel0(&self, x: &Point, y: &Point) -> Result<T> {
        Ok(self.phi(x)?.dotc(&self.phi(y)?))
    }
}

/// Truncated kernel `k_S` keeping the defect blocks on a prefix-closed set.
#[derive(Debug, Clone)]
pub struct TruncatedKernel<T: Scalar> {
    family: ChannelFamily<T>,
    phi0: FeatureMap<T>,
    keep: PrefixSet,
    depth: usize,
}

impl<T: Scalar> TruncatedKernel<T> {
    pub fn new(
        family: ChannelFamily<T>,
        phi0: FeatureMap<T>,
        keep: PrefixSet,
        depth: usize,
    ) -> Result<Self> {
        if let Some(max) = keep.max_depth() {
            if max >= depth {
                return Err(Error::DepthExceeded {
                    depth: max,
                    max: depth,
                });
            }
        }
        if phi0.feature_dim() != family.dim() {
            return Err(Error::DimensionMismatch {
                expected: family.dim(),
                found: phi0.feature_dim(),
            });
        }
        family.node_count(depth)?;
        Ok(Self {
            family,
            phi0,
            keep,
            depth,
        })
    }

    pub fn family(&self) -> &ChannelFamily<T> {
        &self.family
    }

    pub fn phi0(&self) -> &FeatureMap<T> {
        &self.phi0
    }

    pub fn keep(&self) -> &PrefixSet {
        &self.keep
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    /// Defect blocks `D A_α Φ₀(x)` for every `α ∈ keep`, in ascending word
    /// order.
    pub fn defect_blocks(&self, x: &Point) -> Result<Vec<(Word, Vector<T>)>> {
        let phi = self.phi0.phi(x)?;
        let mut out = Vec::with_capacity(self.keep.len());
        for word in self.keep.iter() {
            let v = self.family.apply_word(word, &phi);
            out.push((word.clone(), self.family.defect() * v));
        }
        Ok(out)
    }

    /// `k_S(x,y) = Σ_{α∈keep} ⟨DA_αΦ₀(x), DA_αΦ₀(y)⟩`.
    pub fn eval(&self, x: &Point, y: &Point) -> Result<T> {
        let bx = self.defect_blocks(x)?;
        let by = self.defect_blocks(y)?;
        let mut acc = T::zero();
        for ((_, vx), (_, vy)) in bx.iter().zip(by.iter()) {
            acc += vx.dotc(vy);
        }
        Ok(acc)
    }

    /// Discarded residual energy
    /// `R(x) = Σ_{|α|=N} ‖A_αΦ₀(x)‖² + Σ_{α∉keep, |α|<N} ‖DA_αΦ₀(x)‖²`.
    pub fn residual_energy(&self, x: &Point) -> Result<f64> {
        let phi = self.phi0.phi(x)?;
        let energies = tree_energies(&self.family, &phi, self.depth)?;
        let mut residual = energies.levels[self.depth];
        for node in &energies.nodes {
            if let Some(delta) = node.defect_energy {
                if !self.keep.contains(&node.word) {
                    residual += delta;
                }
            }
        }
        Ok(residual)
    }
}

/// Both Gram matrices of a truncation on a sample, with the exact trace-gap
/// diagnostics.
#[derive(Debug, Clone)]
pub struct TruncatedGram<T: Scalar> {
    pub k0: GramMatrix<T>,
    pub ks: GramMatrix<T>,
    /// `Σ_j R(x_j)`, the exact trace of `K₀ - K_S`.
    pub trace_gap: f64,
    /// Smallest eigenvalue of `K₀ - K_S` (PSD up to rounding).
    pub gap_min_eigenvalue: f64,
    /// Largest eigenvalue of `K₀ - K_S` (must sit below the trace gap).
    pub gap_max_eigenvalue: f64,
    /// `|tr(K₀ - K_S) - Σ_j R(x_j)|` relative to the trace of `K₀`.
    pub trace_identity_residual: f64,
}

impl<T: Scalar> TruncatedGram<T> {
    /// PSD gap, trace identity, and operator bound all within tolerance.
    pub fn is_valid(&self) -> bool {
        self.gap_min_eigenvalue >= -1e-9 * self.trace_gap.max(1e-12)
            && self.trace_identity_residual <= 1e-8
            && self.gap_max_eigenvalue <= self.trace_gap * (1.0 + 1e-8) + 1e-12
    }
}

/// Builds `K₀` and `K_S` on `points` and certifies the gap diagnostics.
pub fn truncated_gram<T: Scalar>(
    tk: &TruncatedKernel<T>,
    points: &[Point],
) -> Result<TruncatedGram<T>> {
    assert!(!points.is_empty());
    let m = points.len();
    let features: Vec<Vector<T>> = points
        .iter()
        .map(|p| tk.phi0().phi(p))
        .collect::<Result<_>>()?;
    let stacks: Vec<Vec<(Word, Vector<T>)>> = points
        .iter()
        .map(|p| tk.defect_blocks(p))
        .collect::<Result<_>>()?;

    let mut k0 = DMatrix::<T>::zeros(m, m);
    let mut ks = DMatrix::<T>::zeros(m, m);
    for j in 0..m {
        for l in j..m {
            let v0 = features[j].dotc(&features[l]);
            k0[(j, l)] = v0;
            k0[(l, j)] = v0.conjugate();
            let mut vs = T::zero();
            for ((_, a), (_, b)) in stacks[j].iter().zip(stacks[l].iter()) {
                vs += a.dotc(b);
            }
            ks[(j, l)] = vs;
            ks[(l, j)] = vs.conjugate();
        }
    }
    let k0 = GramMatrix::from_parts(points.to_vec(), k0);
    let ks = GramMatrix::from_parts(points.to_vec(), ks);

    let mut trace_gap = 0.0;
    for p in points {
        trace_gap += tk.residual_energy(p)?;
    }
    let gap = GramMatrix::from_parts(points.to_vec(), k0.entries() - ks.entries());
    let trace_identity_residual =
        ((k0.trace() - ks.trace()) - trace_gap).abs() / k0.trace().max(1e-14);
    Ok(TruncatedGram {
        gap_min_eigenvalue: gap.min_eigenvalue(),
        gap_max_eigenvalue: gap.max_eigenvalue(),
        trace_gap,
        trace_identity_residual,
        k0,
        ks,
    })
}

/// Isometry diagnostics of the coordinate map
/// `W_N x = ((A_αx)_{|α|=N}, (DA_αx)_{|α|<N})`.
#[derive(Debug, Clone)]
pub struct IsometryReport {
    pub max_norm_residual: f64,
    pub max_polarization_residual: f64,
    pub pass: bool,
}

/// Checks `‖W_N x‖ = ‖x‖` on every probe and `⟨W_N x, W_N y⟩ = ⟨x,y⟩` on
/// every probe pair, to 1e-9 relative.
pub fn isometry_check<T: Scalar>(
    family: &ChannelFamily<T>,
    depth: usize,
    probes: &[Vector<T>],
) -> Result<IsometryReport> {
    let mut max_norm_residual = 0.0_f64;
    let mut max_polar_residual = 0.0_f64;
    for probe in probes {
        let energies = tree_energies(family, probe, depth)?;
        let wn_norm_sq = energies.levels[depth]
            + (0..depth)
                .map(|n| energies.level_defect_sum(n))
                .sum::<f64>();
        let scale = probe.norm_squared().max(1e-14);
        max_norm_residual =
            max_norm_residual.max((wn_norm_sq - probe.norm_squared()).abs() / scale);
    }
    for (i, x) in probes.iter().enumerate() {
        for y in probes.iter().skip(i + 1) {
            let wn_inner = pair_inner(family, &Word::root(), x, y, depth)?;
            let direct = x.dotc(y);
            let scale = (x.norm() * y.norm()).max(1e-14);
            max_polar_residual = max_polar_residual.max((wn_inner - direct).modulus() / scale);
        }
    }
    Ok(IsometryReport {
        max_norm_residual,
        max_polarization_residual: max_polar_residual,
        pass: max_norm_residual <= 1e-9 && max_polar_residual <= 1e-9,
    })
}

fn pair_inner<T: Scalar>(
    family: &ChannelFamily<T>,
    word: &Word,
    x: &Vector<T>,
    y: &Vector<T>,
    depth: usize,
) -> Result<T> {
    if word.depth() == depth {
        return Ok(x.dotc(y));
    }
    let mut acc = (family.defect() * x).dotc(&(family.defect() * y));
    for i in 1..=family.num_channels() as u8 {
        let cx = family.channel(i) * x;
        let cy = family.channel(i) * y;
        acc += pair_inner(family, &word.child(i), &cx, &cy, depth)?;
    }
    Ok(acc)
}

/// `d` channels `√(c/d)·Rᵢ` with `Rᵢ` the 2×2 rotation by `angles[i]`; the
/// family satisfies `Σ A*ᵢAᵢ = c·I` exactly (column isometric when c = 1).
pub fn scaled_rotation_family<T: Scalar>(c: f64, angles: &[f64]) -> Result<ChannelFamily<T>> {
    assert!(!angles.is_empty());
    assert!(c > 0.0 && c <= 1.0);
    let scale = (c / angles.len() as f64).sqrt();
    let channels = angles
        .iter()
        .map(|&theta| {
            Operator::<T>::from_row_slice(
                2,
                2,
                &[
                    T::from_real(scale * theta.cos()),
                    T::from_real(-scale * theta.sin()),
                    T::from_real(scale * theta.sin()),
                    T::from_real(scale * theta.cos()),
                ],
            )
        })
        .collect();
    let family = ChannelFamily::new(channels)?;
    if c < 1.0 {
        family.with_contraction_bound(c)
    } else {
        Ok(family)
    }
}

/// `d` channels `√(c/d)·Uᵢ` with random unitaries `Uᵢ` of size `dim`;
/// `Σ A*ᵢAᵢ = c·I` exactly.
pub fn scaled_unitary_family<T: Scalar, R: rand::Rng + ?Sized>(
    c: f64,
    d: usize,
    dim: usize,
    rng: &mut R,
) -> Result<ChannelFamily<T>> {
    assert!(c > 0.0 && c <= 1.0 && d >= 1);
    let scale = T::from_real((c / d as f64).sqrt());
    let channels = (0..d)
        .map(|_| crate::hilbert::random_unitary::<T, R>(dim, rng) * scale)
        .collect();
    let family = ChannelFamily::new(channels)?;
    if c < 1.0 {
        family.with_contraction_bound(c)
    } else {
        Ok(family)
    }
}

/// Random channels rescaled so that `‖Σ A*ᵢAᵢ‖ = norm_cap`.
pub fn random_contraction_family<T: Scalar, R: rand::Rng + ?Sized>(
    d: usize,
    dim: usize,
    norm_cap: f64,
    rng: &mut R,
) -> Result<ChannelFamily<T>> {
    assert!(norm_cap > 0.0 && norm_cap <= 1.0 && d >= 1);
    let raw: Vec<Operator<T>> = (0..d)
        .map(|_| crate::hilbert::random_matrix::<T, R>(dim, dim, rng))
        .collect();
    let mut sum = Operator::<T>::zeros(dim, dim);
    for a in &raw {
        sum += a.adjoint() * a;
    }
    let max_eig = hermitian_max_eigenvalue(&sum.hermitian_part());
    let scale = T::from_real((norm_cap / max_eig).sqrt());
    ChannelFamily::new(raw.into_iter().map(|a| a * scale).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::random_vector;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn unit_probe(dim: usize, seed: u64) -> Vector<f64> {
        let mut r = rng(seed);
        let v = random_vector::<f64, _>(dim, &mut r);
        let n = v.norm();
        v.unscale(n)
    }

    #[test]
    fn word_order_and_display() {
        let w = Word::from_letters(vec![2, 1]);
        assert_eq!(w.to_string(), "21");
        assert_eq!(w.parent().unwrap(), Word::from_letters(vec![2]));
        assert_eq!(Word::root().to_string(), "");
        // Vec ordering: prefixes sort first
        assert!(Word::from_letters(vec![1]) < Word::from_letters(vec![1, 1]));
        assert!(Word::from_letters(vec![1, 2]) < Word::from_letters(vec![2]));
    }

    #[test]
    fn word_operator_order_first_letter_first() {
        // A_{"21"} = A_1 A_2 (letters i1=2 applied first)
        let a1 = Operator::<f64>::from_row_slice(2, 2, &[0.0, 0.5, 0.0, 0.0]);
        let a2 = Operator::<f64>::from_row_slice(2, 2, &[0.0, 0.0, 0.5, 0.0]);
        let family = ChannelFamily::new(vec![a1.clone(), a2.clone()]).unwrap();
        let x = Vector::<f64>::from_vec(vec![1.0, 2.0]);
        let w = Word::from_letters(vec![2, 1]);
        let expected = &a1 * (&a2 * &x);
        assert_eq!(family.apply_word(&w, &x), expected);
    }

    #[test]
    fn column_isometric_family_zero_defect() {
        let family = scaled_rotation_family::<f64>(1.0, &[0.3, 1.2]).unwrap();
        assert!(family.defect().norm() < 1e-7);
        let x = unit_probe(2, 1);
        // Cor 2.5 behavior: L_N = ‖x‖² at every level
        let energies = tree_energies(&family, &x, 5).unwrap();
        for &l in &energies.levels {
            assert!((l - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn scalar_defect_family() {
        let family = scaled_rotation_family::<f64>(0.8, &[0.3, 1.2]).unwrap();
        let d = family.defect();
        let expected = Operator::<f64>::identity(2, 2) * 0.2_f64.sqrt();
        assert!((d - expected).norm() < 1e-9);
    }

    #[test]
    fn multichannel_identity_random_family() {
        let mut r = rng(5);
        let family = random_contraction_family::<f64, _>(3, 4, 0.95, &mut r).unwrap();
        for _ in 0..5 {
            let x = random_vector::<f64, _>(4, &mut r);
            let mut rhs = (family.defect() * &x).norm_squared();
            for i in 1..=3u8 {
                rhs += (family.channel(i) * &x).norm_squared();
            }
            assert!((x.norm_squared() - rhs).abs() <= 1e-9 * x.norm_squared());
        }
        // operator form: Σ A*ᵢAᵢ + D² = I
        let d = family.defect();
        let residual = (family.sum_adjoint() + d * d - Operator::<f64>::identity(4, 4)).norm();
        assert!(residual <= 1e-8);
    }

    #[test]
    fn non_contraction_rejected() {
        let a = Operator::<f64>::identity(2, 2) * 0.9;
        let b = Operator::<f64>::identity(2, 2) * 0.9;
        assert!(matches!(
            ChannelFamily::new(vec![a, b]),
            Err(Error::NotColumnContraction { .. })
        ));
    }

    #[test]
    fn tree_energies_depth_zero() {
        let family = scaled_rotation_family::<f64>(0.8, &[0.1, 0.9]).unwrap();
        let x = Vector::<f64>::from_vec(vec![3.0, 4.0]);
        let energies = tree_energies(&family, &x, 0).unwrap();
        assert_eq!(energies.nodes.len(), 1);
        assert!((energies.levels[0] - 25.0).abs() < 1e-12);
        assert!(energies.nodes[0].defect_energy.is_none());
    }

    #[test]
    fn geometric_decay_scalar_family() {
        let family = scaled_rotation_family::<f64>(0.8, &[0.3, 1.2]).unwrap();
        let x = unit_probe(2, 3);
        let energies = tree_energies(&family, &x, 8).unwrap();
        for (n, &l) in energies.levels.iter().enumerate() {
            assert!(
                (l - 0.8_f64.powi(n as i32)).abs() <= 1e-10,
                "level {n}: {l}"
            );
        }
        assert!(energies.splitting_identity_residual() <= 1e-9);
    }

    #[test]
    fn refinement_identity_per_level() {
        let mut r = rng(7);
        let family = random_contraction_family::<f64, _>(2, 4, 0.9, &mut r).unwrap();
        let x = random_vector::<f64, _>(4, &mut r);
        let energies = tree_energies(&family, &x, 6).unwrap();
        for n in 0..6 {
            let lhs = energies.levels[n];
            let rhs = energies.levels[n + 1] + energies.level_defect_sum(n);
            assert!((lhs - rhs).abs() <= 1e-9 * x.norm_squared());
        }
        // monotone level energies
        for w in energies.levels.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
    }

    #[test]
    fn certified_bound_gives_geometric_decay() {
        let mut r = rng(9);
        let family = random_contraction_family::<f64, _>(2, 3, 0.7, &mut r)
            .unwrap()
            .with_contraction_bound(0.7)
            .unwrap();
        let x = random_vector::<f64, _>(3, &mut r);
        let energies = tree_energies(&family, &x, 7).unwrap();
        let c = family.contraction_bound().unwrap();
        for (n, &l) in energies.levels.iter().enumerate() {
            assert!(l <= c.powi(n as i32) * x.norm_squared() * (1.0 + 1e-9));
        }
    }

    #[test]
    fn budget_guard() {
        let family = scaled_rotation_family::<f64>(0.8, &[0.1, 0.2]).unwrap();
        let x = unit_probe(2, 11);
        assert!(matches!(
            tree_energies(&family, &x, 25),
            Err(Error::BudgetExceeded { .. })
        ));
    }

    #[test]
    fn prefix_set_validation() {
        let ok = PrefixSet::new(vec![
            Word::root(),
            Word::from_letters(vec![1]),
            Word::from_letters(vec![1, 2]),
        ]);
        assert!(ok.is_ok());
        let bad = PrefixSet::new(vec![Word::from_letters(vec![1])]);
        assert!(matches!(bad, Err(Error::NotPrefixClosed { .. })));
    }

    #[test]
    fn prefix_set_frontier() {
        let s = PrefixSet::root();
        let frontier = s.frontier(2, 3);
        assert_eq!(
            frontier,
            vec![Word::from_letters(vec![1]), Word::from_letters(vec![2])]
        );
        // frontier respects the depth cap: with max_depth = 1 the root's
        // children are already too deep
        assert!(s.frontier(2, 1).is_empty());
        let full = PrefixSet::depth_truncation(3, 2);
        assert_eq!(full.len(), 1 + 2 + 4);
        assert!(full.frontier(2, 3).is_empty());
    }

    fn gaussian_points(count: usize, seed: u64) -> Vec<Point> {
        use rand::RngExt;
        let mut r = rng(seed);
        (0..count)
            .map(|_| Point::new(vec![r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)]))
            .collect()
    }

    fn gram_factor_setup(
        c: f64,
        points: &[Point],
        seed: u64,
    ) -> (ChannelFamily<f64>, FeatureMap<f64>) {
        let mut r = rng(seed);
        let kernel = Kernel::<f64>::gaussian(0.7);
        let phi0 = FeatureMap::gram_factor(kernel, points.to_vec()).unwrap();
        let dim = phi0.feature_dim();
        let family = scaled_unitary_family::<f64, _>(c, 2, dim, &mut r).unwrap();
        (family, phi0)
    }

    #[test]
    fn truncated_kernel_empty_keep_is_zero() {
        let points = gaussian_points(4, 13);
        let (family, phi0) = gram_factor_setup(0.8, &points, 14);
        let tk = TruncatedKernel::new(family, phi0, PrefixSet::empty(), 3).unwrap();
        let v = tk.eval(&points[0], &points[1]).unwrap();
        assert_eq!(v, 0.0);
        // everything discarded: R(x) = k₀(x,x)
        let r_x = tk.residual_energy(&points[0]).unwrap();
        let k0 = tk.phi0().kernel0(&points[0], &points[0]).unwrap();
        assert!((r_x - k0).abs() <= 1e-9 * k0.max(1e-14));
    }

    #[test]
    fn truncated_kernel_zero_for_isometric_family() {
        let points = gaussian_points(3, 15);
        let (family, phi0) = gram_factor_setup(1.0, &points, 16);
        let keep = PrefixSet::depth_truncation(3, 2);
        let tk = TruncatedKernel::new(family, phi0, keep, 3).unwrap();
        let v = tk.eval(&points[0], &points[1]).unwrap();
        assert!(v.abs() < 1e-12);
        // everything lives in the level-N channels: K_S vanishes and the
        // trace gap is the whole of tr(K₀)
        let tg = truncated_gram(&tk, &points).unwrap();
        assert!(tg.ks.entries().norm() < 1e-10);
        assert!((tg.trace_gap - tg.k0.trace()).abs() <= 1e-9 * tg.k0.trace());
    }

    #[test]
    fn truncated_kernel_root_block_scalar_family() {
        // keep = {∅} with D² = 0.2·I commuting: k_S = 0.2·k₀
        let points = gaussian_points(4, 17);
        let (family, phi0) = gram_factor_setup(0.8, &points, 18);
        let tk = TruncatedKernel::new(family, phi0, PrefixSet::root(), 3).unwrap();
        for x in &points {
            for y in &points {
                let ks = tk.eval(x, y).unwrap();
                let k0 = tk.phi0().kernel0(x, y).unwrap();
                assert!((ks - 0.2 * k0).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn depth_truncation_rejects_too_deep_keep() {
        let points = gaussian_points(3, 19);
        let (family, phi0) = gram_factor_setup(0.8, &points, 20);
        let keep = PrefixSet::depth_truncation(4, 2);
        assert!(matches!(
            TruncatedKernel::new(family, phi0, keep, 3),
            Err(Error::DepthExceeded { .. })
        ));
    }

    #[test]
    fn residual_energy_keep_all_is_level_tail() {
        let points = gaussian_points(3, 21);
        let (family, phi0) = gram_factor_setup(0.8, &points, 22);
        let depth = 4;
        let keep = PrefixSet::depth_truncation(depth, 2);
        let tk = TruncatedKernel::new(family, phi0, keep, depth).unwrap();
        for x in &points {
            let r_x = tk.residual_energy(x).unwrap();
            let k0 = tk.phi0().kernel0(x, x).unwrap();
            // R = c^N·k₀(x,x) for the scalar family with keep = everything
            assert!((r_x - 0.8_f64.powi(depth as i32) * k0).abs() <= 1e-9);
            // diagonal identity k₀(x,x) - k_S(x,x) = R(x)
            let ks = tk.eval(x, x).unwrap();
            assert!((k0 - ks - r_x).abs() <= 1e-9 * k0.max(1e-14));
        }
    }

    #[test]
    fn cauchy_schwarz_off_diagonal_bound() {
        let points = gaussian_points(6, 23);
        let mut r = rng(24);
        let kernel = Kernel::<f64>::gaussian(0.7);
        let phi0 = FeatureMap::gram_factor(kernel, points.clone()).unwrap();
        let family =
            random_contraction_family::<f64, _>(2, phi0.feature_dim(), 0.9, &mut r).unwrap();
        let keep = PrefixSet::new(vec![Word::root(), Word::from_letters(vec![2])]).unwrap();
        let tk = TruncatedKernel::new(family, phi0, keep, 3).unwrap();
        for x in &points {
            for y in &points {
                let gap = (tk.phi0().kernel0(x, y).unwrap() - tk.eval(x, y).unwrap()).abs();
                let bound =
                    (tk.residual_energy(x).unwrap() * tk.residual_energy(y).unwrap()).sqrt();
                assert!(gap <= bound + 1e-10);
            }
        }
    }

    #[test]
    fn truncated_gram_diagnostics() {
        let points = gaussian_points(10, 25);
        let mut r = rng(26);
        let kernel = Kernel::<f64>::gaussian(0.5);
        let phi0 = FeatureMap::gram_factor(kernel, points.clone()).unwrap();
        let family =
            random_contraction_family::<f64, _>(2, phi0.feature_dim(), 0.85, &mut r).unwrap();
        let keep = PrefixSet::depth_truncation(2, 2);
        let tk = TruncatedKernel::new(family, phi0, keep, 4).unwrap();
        let tg = truncated_gram(&tk, &points).unwrap();
        assert!(tg.is_valid(), "{tg:?}");
        assert!(tg.trace_gap >= 0.0);
    }

    #[test]
    fn truncated_gram_single_point() {
        let points = gaussian_points(1, 27);
        let (family, phi0) = gram_factor_setup(0.8, &points, 28);
        let tk = TruncatedKernel::new(family, phi0, PrefixSet::root(), 3).unwrap();
        let tg = truncated_gram(&tk, &points).unwrap();
        assert_eq!(tg.k0.len(), 1);
        let r_x = tk.residual_energy(&points[0]).unwrap();
        assert!((tg.trace_gap - r_x).abs() < 1e-12);
    }

    /// Cor 5.2 chain for depth truncations of a certified c-family.
    #[test]
    fn depth_truncation_chain() {
        let points = gaussian_points(5, 29);
        let (family, phi0) = gram_factor_setup(0.8, &points, 30);
        let c: f64 = 0.8;
        let depth = 4;
        for m in 0..=depth {
            let keep = PrefixSet::depth_truncation(m, 2);
            let tk = TruncatedKernel::new(family.clone(), phi0.clone(), keep, depth).unwrap();
            for x in &points {
                let k0 = tk.phi0().kernel0(x, x).unwrap();
                let ks = tk.eval(x, x).unwrap();
                let gap = k0 - ks;
                assert!(gap >= -1e-10);
                assert!(gap <= c.powi(m as i32) * k0 + 1e-8);
                for y in &points {
                    let k0xy = tk.phi0().kernel0(x, y).unwrap();
                    let ksxy = tk.eval(x, y).unwrap();
                    let k0yy = tk.phi0().kernel0(y, y).unwrap();
                    assert!((k0xy - ksxy).abs() <= c.powi(m as i32) * (k0 * k0yy).sqrt() + 1e-8);
                }
            }
        }
    }

    #[test]
    fn isometry_of_coordinate_map() {
        let mut r = rng(31);
        let family = random_contraction_family::<f64, _>(2, 4, 0.9, &mut r).unwrap();
        let probes: Vec<_> = (0..3).map(|_| random_vector::<f64, _>(4, &mut r)).collect();
        let report = isometry_check(&family, 3, &probes).unwrap();
        assert!(report.pass, "{report:?}");
        // depth 0: W₀ is the identity block
        let trivial = isometry_check(&family, 0, &probes).unwrap();
        assert!(trivial.max_norm_residual < 1e-14);
        assert!(trivial.max_polarization_residual < 1e-14);
    }

    #[test]
    fn affine_feature_map() {
        let weights = Operator::<f64>::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let bias = Vector::<f64>::zeros(3);
        let map = FeatureMap::Affine { weights, bias };
        let x = Point::new(vec![2.0, -1.0]);
        let phi = map.phi(&x).unwrap();
        assert_eq!(phi, Vector::<f64>::from_vec(vec![2.0, -1.0, 1.0]));
        let k = map.kernel0(&x, &x).unwrap();
        assert!((k - phi.norm_squared()).abs() < 1e-14);
    }

    #[test]
    fn table_feature_map_rejects_unknown_point() {
        let z = Point::new(vec![0.0]);
        let map = FeatureMap::Table(vec![(z.clone(), Vector::<f64>::from_vec(vec![1.0]))]);
        assert!(map.phi(&z).is_ok());
        assert!(matches!(
            map.phi(&Point::new(vec![1.0])),
            Err(Error::PointNotTabulated)
        ));
    }
}
