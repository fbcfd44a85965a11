//! Greedy kernel compression on the splitting tree.
//!
//! The sample energy of a node, `E(α) = Σ_j ‖D A_α Φ₀(x_j)‖² = tr(K_α)`,
//! measures exactly how much of the trace gap `tr(K₀ - K_S)` disappears when
//! `α` joins the kept set. The greedy rule grows a prefix-closed set one
//! argmax-energy frontier node at a time, so the gap decreases by exactly the
//! chosen energy per step, and the gap in turn bounds the deviation of the
//! kernel ridge predictor built from the compressed Gram matrix.

use std::collections::BTreeMap;

use nalgebra::DVector;

use crate::hilbert::{Scalar, Vector};
use crate::rkhs::{GramMatrix, Point};
use crate::treesplit::{ChannelFamily, FeatureMap, PrefixSet, TruncatedKernel, Word};
use crate::{Error, Result};

/// Sample block energy `E(α) = Σ_j ‖D A_α Φ₀(x_j)‖²`.
pub fn block_energy<T: Scalar>(
    family: &ChannelFamily<T>,
    phi0: &FeatureMap<T>,
    alpha: &Word,
    sample: &[Point],
    depth: usize,
) -> Result<f64> {
    if alpha.depth() >= depth {
        return Err(Error::DepthExceeded {
            depth: alpha.depth(),
            max: depth,
        });
    }
    let mut energy = 0.0;
    for x in sample {
        let v = family.apply_word(alpha, &phi0.phi(x)?);
        energy += (family.defect() * v).norm_squared();
    }
    Ok(energy)
}

/// One greedy selection event.
#[derive(Debug, Clone)]
pub struct GreedyRecord {
    pub chosen: Word,
    pub energy: f64,
    pub trace_gap_after: f64,
}

#[derive(Debug, Clone)]
struct FrontierEntry<T: Scalar> {
    /// `A_α Φ₀(x_j)` per sample point; children are derived from these.
    vectors: Vec<Vector<T>>,
    energy: f64,
}

/// Greedy refinement state: the kept prefix-closed set, its frontier with
/// cached feature vectors and energies, and the exact trace gap.
#[derive(Debug, Clone)]
pub struct GreedyState<T: Scalar> {
    family: ChannelFamily<T>,
    phi0: FeatureMap<T>,
    sample: Vec<Point>,
    depth: usize,
    kept: PrefixSet,
    frontier: BTreeMap<Word, FrontierEntry<T>>,
    trace_gap: f64,
    trace_k0: f64,
    history: Vec<GreedyRecord>,
}

/// Stopping rule for [`run_greedy`].
#[derive(Debug, Clone, Copy)]
pub enum StopRule {
    /// At most this many greedy steps.
    Budget(usize),
    /// Stop once `tr(K₀ - K_S) ≤ tolerance`.
    Tolerance(f64),
}

impl<T: Scalar> GreedyState<T> {
    /// Starts from an arbitrary prefix-closed seed set.
    pub fn with_seed(
        family: ChannelFamily<T>,
        phi0: FeatureMap<T>,
        sample: Vec<Point>,
        depth: usize,
        seed: PrefixSet,
    ) -> Result<Self> {
        assert!(!sample.is_empty());
        if let Some(max) = seed.max_depth() {
            if max >= depth {
                return Err(Error::DepthExceeded {
                    depth: max,
                    max: depth,
                });
            }
        }
        let features: Vec<Vector<T>> = sample.iter().map(|x| phi0.phi(x)).collect::<Result<_>>()?;
        let trace_k0: f64 = features.iter().map(Vector::norm_squared).sum();

        let mut state = Self {
            family,
            phi0,
            sample,
            depth,
            kept: PrefixSet::empty(),
            frontier: BTreeMap::new(),
            trace_gap: trace_k0,
            trace_k0,
            history: Vec::new(),
        };
        // Grow the seed set in ascending word order so every parent's cached
        // vectors exist before its children need them.
        let mut cache: BTreeMap<Word, Vec<Vector<T>>> = BTreeMap::new();
        cache.insert(Word::root(), features);
        for word in seed.iter() {
            let vectors = match word.parent() {
                None => cache[&Word::root()].clone(),
                Some(parent) => {
                    let letter = *word.letters().last().expect("non-root word");
                    cache[&parent]
                        .iter()
                        .map(|v| state.family.channel(letter) * v)
                        .collect()
                }
            };
            let energy: f64 = vectors
                .iter()
                .map(|v| (state.family.defect() * v).norm_squared())
                .sum();
            state.kept.insert(word.clone())?;
            state.trace_gap -= energy;
            cache.insert(word.clone(), vectors);
        }
        // Frontier of the seed set, with vectors derived from cached parents.
        for word in state.kept.frontier(state.family.num_channels(), depth) {
            let parent = word.parent().expect("frontier nodes have parents");
            let letter = *word.letters().last().expect("frontier nodes are non-root");
            let vectors: Vec<Vector<T>> = cache[&parent]
                .iter()
                .map(|v| state.family.channel(letter) * v)
                .collect();
            let energy = vectors
                .iter()
                .map(|v| (state.family.defect() * v).norm_squared())
                .sum();
            state
                .frontier
                .insert(word, FrontierEntry { vectors, energy });
        }
        Ok(state)
    }

    pub fn kept(&self) -> &PrefixSet {
        &self.kept
    }

    pub fn trace_gap(&self) -> f64 {
        self.trace_gap
    }

    pub fn trace_k0(&self) -> f64 {
        self.trace_k0
    }

    pub fn history(&self) -> &[GreedyRecord] {
        &self.history
    }

    pub fn sample(&self) -> &[Point] {
        &self.sample
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    /// Current frontier energies (exact stored scores).
    pub fn frontier_energies(&self) -> BTreeMap<Word, f64> {
        self.frontier
            .iter()
            .map(|(w, e)| (w.clone(), e.energy))
            .collect()
    }

    /// Performs one greedy step: adds the argmax-energy frontier node
    /// (lexicographically smallest word on ties) and updates the gap by
    /// exactly that energy.
    pub fn step(&mut self) -> Result<GreedyRecord> {
        let chosen = self
            .frontier
            .iter()
            .max_by(|(wa, a), (wb, b)| {
                // strict ordering on energy; ascending word order breaks ties
                // toward the smallest word
                a.energy
                    .partial_cmp(&b.energy)
                    .expect("energies are finite")
                    .then_with(|| wb.cmp(wa))
            })
            .map(|(w, _)| w.clone())
            .ok_or(Error::EmptyFrontier)?;
        let entry = self.frontier.remove(&chosen).expect("chosen from frontier");
        self.kept.insert(chosen.clone())?;
        self.trace_gap -= entry.energy;
        // children of the chosen node join the frontier if still above depth
        if chosen.depth() + 1 < self.depth {
            for i in 1..=self.family.num_channels() as u8 {
                let child = chosen.child(i);
                let vectors: Vec<Vector<T>> = entry
                    .vectors
                    .iter()
                    .map(|v| self.family.channel(i) * v)
                    .collect();
                let energy = vectors
                    .iter()
                    .map(|v| (self.family.defect() * v).norm_squared())
                    .sum();
                self.frontier
                    .insert(child, FrontierEntry { vectors, energy });
            }
        }
        let record = GreedyRecord {
            chosen,
            energy: entry.energy,
            trace_gap_after: self.trace_gap,
        };
        self.history.push(record.clone());
        Ok(record)
    }

    /// Runs greedy steps until the rule fires or the frontier empties.
    pub fn run(&mut self, stop: StopRule) -> Result<()> {
        loop {
            match stop {
                StopRule::Budget(budget) if self.history.len() >= budget => return Ok(()),
                StopRule::Tolerance(tol) if self.trace_gap <= tol => return Ok(()),
                _ => {}
            }
            match self.step() {
                Ok(_) => {}
                Err(Error::EmptyFrontier) => return Ok(()),
                Err(e) => return Err(e),
            }
        }
    }

    /// The truncated kernel carrying the currently kept set.
    pub fn truncated_kernel(&self) -> Result<TruncatedKernel<T>> {
        TruncatedKernel::new(
            self.family.clone(),
            self.phi0.clone(),
            self.kept.clone(),
            self.depth,
        )
    }
}

/// Runs the greedy refinement from the default seed `S₀ = {∅}`.
pub fn run_greedy<T: Scalar>(
    family: ChannelFamily<T>,
    phi0: FeatureMap<T>,
    sample: Vec<Point>,
    depth: usize,
    stop: StopRule,
) -> Result<GreedyState<T>> {
    let mut state = GreedyState::with_seed(family, phi0, sample, depth, PrefixSet::root())?;
    state.run(stop)?;
    Ok(state)
}

/// Labels and regularization of a kernel ridge problem on a fixed sample.
#[derive(Debug, Clone)]
pub struct RidgeProblem<T: Scalar> {
    pub labels: DVector<T>,
    pub reg: f64,
}

impl<T: Scalar> RidgeProblem<T> {
    pub fn new(labels: DVector<T>, reg: f64) -> Self {
        assert!(reg > 0.0, "ridge regularization must be positive");
        Self { labels, reg }
    }
}

/// Kernel ridge predictor on the sample: `ŷ(K) = K(K + λI)^{-1} y`.
pub fn ridge_predict<T: Scalar>(k: &GramMatrix<T>, prob: &RidgeProblem<T>) -> Result<DVector<T>> {
    let m = k.len();
    if prob.labels.nrows() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            found: prob.labels.nrows(),
        });
    }
    let min_eig = k.min_eigenvalue();
    if min_eig < -1e-9 * k.trace().max(1.0) {
        return Err(Error::NotPsd {
            min_eigenvalue: min_eig,
        });
    }
    let shifted = k.entries() + nalgebra::DMatrix::<T>::identity(m, m) * T::from_real(prob.reg);
    let chol = shifted
        .clone()
        .hermitian_part()
        .cholesky()
        .ok_or(Error::NotPsd {
            min_eigenvalue: min_eig,
        })?;
    let a = chol.solve(&prob.labels);
    Ok(k.entries() * a)
}

/// Chain of ridge deviation bounds for a compressed Gram matrix.
#[derive(Debug, Clone)]
pub struct RidgeStabilityReport {
    /// `‖ŷ(K₀) - ŷ(K_S)‖`
    pub lhs: f64,
    /// `‖K₀ - K_S‖ · ‖y‖ / λ`
    pub operator_bound: f64,
    /// `tr(K₀ - K_S) · ‖y‖ / λ`
    pub trace_bound: f64,
    pub pass: bool,
}

/// Verifies `‖ŷ(K₀) - ŷ(K_S)‖ ≤ ‖K₀-K_S‖‖y‖/λ ≤ tr(K₀-K_S)‖y‖/λ`.
pub fn ridge_stability_check<T: Scalar>(
    k0: &GramMatrix<T>,
    ks: &GramMatrix<T>,
    prob: &RidgeProblem<T>,
) -> Result<RidgeStabilityReport> {
    if k0.len() != ks.len() {
        return Err(Error::DimensionMismatch {
            expected: k0.len(),
            found: ks.len(),
        });
    }
    let gap = GramMatrix::from_parts(k0.points().to_vec(), k0.entries() - ks.entries());
    let gap_min = gap.min_eigenvalue();
    if gap_min < -1e-9 * k0.trace().max(1.0) {
        return Err(Error::NotPsd {
            min_eigenvalue: gap_min,
        });
    }
    let y0 = ridge_predict(k0, prob)?;
    let ys = ridge_predict(ks, prob)?;
    let lhs = (y0 - ys).norm();
    let y_norm = prob.labels.norm();
    let operator_bound = gap.max_eigenvalue().max(0.0) / prob.reg * y_norm;
    let trace_bound = gap.trace().max(0.0) / prob.reg * y_norm;
    let slack = 1.0 + 1e-8;
    Ok(RidgeStabilityReport {
        lhs,
        operator_bound,
        trace_bound,
        pass: lhs <= operator_bound * slack + 1e-12
            && operator_bound <= trace_bound * slack + 1e-12,
    })
}

/// Stopping rule from the ridge bound: fires once
/// `tr(K₀ - K_S) ≤ eps · λ`, which guarantees
/// `‖ŷ(K₀) - ŷ(K_S)‖ ≤ eps·‖y‖`.
pub fn stopping_rule<T: Scalar>(state: &GreedyState<T>, eps: f64, prob: &RidgeProblem<T>) -> bool {
    state.trace_gap() <= eps * prob.reg
}
