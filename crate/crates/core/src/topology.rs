//! Directed platoon communication graphs and the coupling matrix M = L_d + P.
//!
//! Followers are indexed 1..=N. The leader is not a node; it acts only through
//! the pinning gains g_i. An edge j -> i means follower i receives follower j's
//! state, weighted by d_ij; each follower additionally weights the sum of its
//! incident edges by a self weight d_i. The coupling matrix collects these as
//! M[i][i] = g_i + d_i * (number of neighbors), M[i][j] = -d_ij.

use nalgebra::linalg::Schur;
use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("graph must have at least one follower")]
    Empty,
    #[error("self-loop on node {0}")]
    SelfLoop(usize),
    #[error("node index {0} out of range 1..={1}")]
    NodeOutOfRange(usize, usize),
    #[error("duplicate edge {from} -> {to}", from = .0, to = .1)]
    DuplicateEdge(usize, usize),
    #[error("edge {from} -> {to} has non-positive weight {w}", from = .0, to = .1, w = .2)]
    NonPositiveEdgeWeight(usize, usize, f64),
    #[error("self weight d_{0} = {1} must be positive")]
    NonPositiveSelfWeight(usize, f64),
    #[error("pinning gain g_{0} = {1} must be nonnegative")]
    NegativePinning(usize, f64),
    #[error("expected {expected} entries in {field}, got {got}")]
    LengthMismatch {
        field: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("followers {0:?} are unreachable from the leader (no pinned ancestor)")]
    Unreachable(Vec<usize>),
}

#[derive(Debug, Error)]
pub enum SpectrumError {
    #[error("complex eigenvalues at indices {indices:?} (max |Im| = {max_imag:.3e})")]
    ComplexSpectrum { indices: Vec<usize>, max_imag: f64 },
    #[error("eigenvalues at indices {indices:?} coincide within tolerance (gap {gap:.3e})")]
    RepeatedEigenvalue { indices: Vec<usize>, gap: f64 },
    #[error("non-positive eigenvalue {value:.6e} at index {index}")]
    NonPositiveEigenvalue { index: usize, value: f64 },
    #[error("eigenvector reconstruction residual {0:.3e} exceeds tolerance {1:.3e}")]
    ResidualTooLarge(f64, f64),
    #[error("eigenvalue iteration stalled on a {0}x{0} matrix")]
    IterationStalled(usize),
}

// Balancing by a diagonal similarity with power-of-2 factors, which are
// exact in floating point, so the spectrum is untouched. The QR iteration
// has no balancing of its own and converges poorly (or cycles) on badly
// scaled matrices such as the norm-test blocks that carry a 1/g^2 factor.
fn balance_in_place(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    loop {
        let mut converged = true;
        for i in 0..n {
            let mut c: f64 = (0..n).filter(|&j| j != i).map(|j| m[(j, i)].abs()).sum();
            let r: f64 = (0..n).filter(|&j| j != i).map(|j| m[(i, j)].abs()).sum();
            if c == 0.0 || r == 0.0 || !c.is_finite() || !r.is_finite() {
                continue;
            }
            let s = c + r;
            let mut f = 1.0f64;
            while c < r / 2.0 {
                f *= 2.0;
                c *= 4.0;
            }
            while c >= r * 2.0 {
                f /= 2.0;
                c /= 4.0;
            }
            // apply only if it shrinks the combined norm by at least 5%
            if (c + r) / f < 0.95 * s {
                for j in 0..n {
                    m[(i, j)] /= f;
                }
                for j in 0..n {
                    m[(j, i)] *= f;
                }
                converged = false;
            }
        }
        if converged {
            return;
        }
    }
}

/// Eigenvalues through balancing plus a Schur decomposition with a hard
/// sweep cap. The default nalgebra path iterates without limit and cycles
/// permanently on some badly scaled matrices; callers must treat None as a
/// numerical failure, never as an empty spectrum.
pub(crate) fn complex_eigenvalues_bounded(m: &DMatrix<f64>) -> Option<Vec<Complex<f64>>> {
    let mut b = m.clone();
    balance_in_place(&mut b);
    let cap = 100 * m.nrows().max(4);
    Schur::try_new(b, f64::EPSILON, cap).map(|s| s.complex_eigenvalues().iter().copied().collect())
}

/// One directed edge `from -> to`: follower `to` listens to follower `from`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub weight: f64,
}

/// Serialized form of a graph, mirroring the topology JSON file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphFile {
    pub n: usize,
    pub edges: Vec<Edge>,
    pub self_weights: Vec<f64>,
    pub pinning: Vec<f64>,
}

/// Validated directed platoon graph with neighbor weights d_ij, self weights d_i
/// and pinning gains g_i. Indices are 1-based in the public API.
#[derive(Debug, Clone)]
pub struct DirectedPlatoonGraph {
    n: usize,
    // neighbors[i][j] = d_ij for each edge j -> i+1; BTreeMap keeps iteration deterministic
    neighbors: Vec<BTreeMap<usize, f64>>,
    self_weights: Vec<f64>,
    pinning: Vec<f64>,
}

impl DirectedPlatoonGraph {
    pub fn new(
        n: usize,
        edges: &[Edge],
        self_weights: &[f64],
        pinning: &[f64],
    ) -> Result<Self, GraphError> {
        if n == 0 {
            return Err(GraphError::Empty);
        }
        if self_weights.len() != n {
            return Err(GraphError::LengthMismatch {
                field: "self_weights",
                expected: n,
                got: self_weights.len(),
            });
        }
        if pinning.len() != n {
            return Err(GraphError::LengthMismatch {
                field: "pinning",
                expected: n,
                got: pinning.len(),
            });
        }
        for (i, &d) in self_weights.iter().enumerate() {
            if !(d > 0.0) {
                return Err(GraphError::NonPositiveSelfWeight(i + 1, d));
            }
        }
        for (i, &g) in pinning.iter().enumerate() {
            if !(g >= 0.0) {
                return Err(GraphError::NegativePinning(i + 1, g));
            }
        }
        let mut neighbors = vec![BTreeMap::new(); n];
        for e in edges {
            if e.from == 0 || e.from > n {
                return Err(GraphError::NodeOutOfRange(e.from, n));
            }
            if e.to == 0 || e.to > n {
                return Err(GraphError::NodeOutOfRange(e.to, n));
            }
            if e.from == e.to {
                return Err(GraphError::SelfLoop(e.to));
            }
            if !(e.weight > 0.0) {
                return Err(GraphError::NonPositiveEdgeWeight(e.from, e.to, e.weight));
            }
            if neighbors[e.to - 1].insert(e.from, e.weight).is_some() {
                return Err(GraphError::DuplicateEdge(e.from, e.to));
            }
        }
        let graph = Self {
            n,
            neighbors,
            self_weights: self_weights.to_vec(),
            pinning: pinning.to_vec(),
        };
        let unreachable = graph.unreachable_from_leader();
        if !unreachable.is_empty() {
            return Err(GraphError::Unreachable(unreachable));
        }
        Ok(graph)
    }

    pub fn from_file(file: &GraphFile) -> Result<Self, GraphError> {
        Self::new(file.n, &file.edges, &file.self_weights, &file.pinning)
    }

    pub fn load(path: &Path) -> Result<Self, LoadError> {
        let text = std::fs::read_to_string(path)?;
        let file: GraphFile = serde_json::from_str(&text)?;
        Ok(Self::from_file(&file)?)
    }

    pub fn to_file(&self) -> GraphFile {
        let mut edges = Vec::new();
        for (to0, nbrs) in self.neighbors.iter().enumerate() {
            for (&from, &weight) in nbrs {
                edges.push(Edge {
                    from,
                    to: to0 + 1,
                    weight,
                });
            }
        }
        GraphFile {
            n: self.n,
            edges,
            self_weights: self.self_weights.clone(),
            pinning: self.pinning.clone(),
        }
    }

    pub fn n_followers(&self) -> usize {
        self.n
    }

    /// Neighbor set of follower i (1-based) as (source node, d_ij) pairs.
    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.neighbors[i - 1].iter().map(|(&j, &w)| (j, w))
    }

    pub fn self_weight(&self, i: usize) -> f64 {
        self.self_weights[i - 1]
    }

    pub fn pinning_gain(&self, i: usize) -> f64 {
        self.pinning[i - 1]
    }

    // Leader information flows along edges: pinned nodes receive it directly,
    // everyone else must have a path from some pinned node.
    fn unreachable_from_leader(&self) -> Vec<usize> {
        let mut reached: Vec<bool> = self.pinning.iter().map(|&g| g > 0.0).collect();
        let mut frontier: Vec<usize> = (0..self.n).filter(|&i| reached[i]).collect();
        while let Some(j) = frontier.pop() {
            for to0 in 0..self.n {
                if !reached[to0] && self.neighbors[to0].contains_key(&(j + 1)) {
                    reached[to0] = true;
                    frontier.push(to0);
                }
            }
        }
        (0..self.n)
            .filter(|&i| !reached[i])
            .map(|i| i + 1)
            .collect()
    }
}

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("graph: {0}")]
    Graph(#[from] GraphError),
}

/// Coupling matrix M = L_d + P of a platoon graph.
#[derive(Debug, Clone)]
pub struct CouplingMatrix {
    pub m: DMatrix<f64>,
}

/// M[i][i] = g_i + d_i * |N_i|, M[i][j] = -d_ij on edges, 0 elsewhere.
pub fn build_coupling_matrix(graph: &DirectedPlatoonGraph) -> CouplingMatrix {
    let n = graph.n_followers();
    let mut m = DMatrix::zeros(n, n);
    for i in 1..=n {
        let mut degree = 0usize;
        for (j, d_ij) in graph.neighbors(i) {
            m[(i - 1, j - 1)] = -d_ij;
            degree += 1;
        }
        m[(i - 1, i - 1)] = graph.pinning_gain(i) + graph.self_weight(i) * degree as f64;
    }
    CouplingMatrix { m }
}

/// Gershgorin disc of one row of M: center o_i = M[i][i], radius r_i = sum of
/// off-diagonal magnitudes = sum of d_ij over the neighbor set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GershgorinDisc {
    pub node: usize,
    pub center: f64,
    pub radius: f64,
}

pub fn gershgorin_discs(graph: &DirectedPlatoonGraph) -> Vec<GershgorinDisc> {
    (1..=graph.n_followers())
        .map(|i| {
            let degree = graph.neighbors(i).count() as f64;
            GershgorinDisc {
                node: i,
                center: graph.pinning_gain(i) + graph.self_weight(i) * degree,
                // + 0.0 turns the empty sum's -0.0 into +0.0
                radius: graph.neighbors(i).map(|(_, w)| w).sum::<f64>() + 0.0,
            }
        })
        .collect()
}

/// Outcome of the disc separation test: either an ordering of the discs with
/// the leftmost disc strictly right of zero and consecutive discs disjoint, or
/// the first pair that violates separation.
#[derive(Debug, Clone, PartialEq)]
pub enum Lemma1Verdict {
    /// Permutation of node indices, sorted by disc center ascending.
    Satisfied { ordering: Vec<usize> },
    /// First violation found; `nodes` are the offending disc owners.
    NotSatisfied {
        nodes: (usize, usize),
        reason: SeparationFailure,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SeparationFailure {
    /// Leftmost disc touches or crosses zero: o <= r. Both node fields are the same node.
    LeftmostNotPositive,
    /// Adjacent discs overlap: o2 - o1 <= r1 + r2.
    Overlap,
}

impl Lemma1Verdict {
    pub fn is_satisfied(&self) -> bool {
        matches!(self, Lemma1Verdict::Satisfied { .. })
    }
}

/// Checks the sufficient real-spectrum condition: discs sorted by center must be
/// pairwise disjoint and the leftmost must lie strictly right of zero. Sorting by
/// center is enough because interval disjointness on the real line is transitive
/// in that order. Failure does not imply M is defective.
pub fn check_lemma1(discs: &[GershgorinDisc]) -> Lemma1Verdict {
    assert!(!discs.is_empty(), "disc list must be nonempty");
    let mut sorted: Vec<&GershgorinDisc> = discs.iter().collect();
    sorted.sort_by(|a, b| a.center.total_cmp(&b.center));
    let first = sorted[0];
    if first.center <= first.radius {
        return Lemma1Verdict::NotSatisfied {
            nodes: (first.node, first.node),
            reason: SeparationFailure::LeftmostNotPositive,
        };
    }
    for pair in sorted.windows(2) {
        let (lo, hi) = (pair[0], pair[1]);
        if hi.center - lo.center <= lo.radius + hi.radius {
            return Lemma1Verdict::NotSatisfied {
                nodes: (lo.node, hi.node),
                reason: SeparationFailure::Overlap,
            };
        }
    }
    Lemma1Verdict::Satisfied {
        ordering: sorted.iter().map(|d| d.node).collect(),
    }
}

/// Eigendecomposition M = V diag(lambda) V^-1 with real, distinct, positive
/// eigenvalues sorted ascending. Columns of V have unit 2-norm and first
/// significant component positive; the bound in `analysis` depends on this
/// normalization, so it is part of the contract.
#[derive(Debug, Clone)]
pub struct SpectralFactorization {
    pub v: DMatrix<f64>,
    pub lambda: DVector<f64>,
    pub v_inv: DMatrix<f64>,
    pub reconstruction_residual: f64,
}

impl SpectralFactorization {
    pub fn min_eigenvalue(&self) -> f64 {
        self.lambda[0]
    }
}

pub const DEFAULT_SPECTRAL_TOL: f64 = 1e-10;

/// Factorizes M, rejecting spectra that break the decoupling premise: complex
/// pairs, near-repeated eigenvalues (relative gap below 1e-8), non-positive
/// eigenvalues, or a reconstruction residual above `tol`.
pub fn spectral_factorization(
    coupling: &CouplingMatrix,
    tol: f64,
) -> Result<SpectralFactorization, SpectrumError> {
    let m = &coupling.m;
    let n = m.nrows();
    let scale = m.norm().max(f64::MIN_POSITIVE);

    let eigs = complex_eigenvalues_bounded(m).ok_or(SpectrumError::IterationStalled(n))?;
    let imag_tol = 1e-8 * scale;
    let complex_idx: Vec<usize> = (0..n).filter(|&i| eigs[i].im.abs() > imag_tol).collect();
    if !complex_idx.is_empty() {
        let max_imag = complex_idx
            .iter()
            .map(|&i| eigs[i].im.abs())
            .fold(0.0, f64::max);
        return Err(SpectrumError::ComplexSpectrum {
            indices: complex_idx,
            max_imag,
        });
    }

    let mut lambda: Vec<f64> = (0..n).map(|i| eigs[i].re).collect();
    lambda.sort_by(f64::total_cmp);
    let gap_tol = 1e-8 * scale;
    for i in 0..n.saturating_sub(1) {
        let gap = lambda[i + 1] - lambda[i];
        if gap < gap_tol {
            return Err(SpectrumError::RepeatedEigenvalue {
                indices: vec![i, i + 1],
                gap,
            });
        }
    }
    for (i, &l) in lambda.iter().enumerate() {
        if l <= 0.0 {
            return Err(SpectrumError::NonPositiveEigenvalue { index: i, value: l });
        }
    }

    let mut v = DMatrix::zeros(n, n);
    for (i, &l) in lambda.iter().enumerate() {
        let col = eigenvector_for(m, l, scale);
        v.set_column(i, &col);
    }

    let v_inv = v
        .clone()
        .lu()
        .try_inverse()
        .ok_or(SpectrumError::ResidualTooLarge(f64::INFINITY, tol))?;
    let reconstructed = &v * DMatrix::from_diagonal(&DVector::from_vec(lambda.clone())) * &v_inv;
    let residual = (&reconstructed - m).norm() / scale;
    if !(residual < tol) {
        return Err(SpectrumError::ResidualTooLarge(residual, tol));
    }

    Ok(SpectralFactorization {
        v,
        lambda: DVector::from_vec(lambda),
        v_inv,
        reconstruction_residual: residual,
    })
}

// Inverse iteration on (M - (l + shift) I). The shift keeps the LU factorization
// regular; one step amplifies the target direction by roughly gap/shift, so a few
// iterations reach machine precision for well-separated eigenvalues.
fn eigenvector_for(m: &DMatrix<f64>, l: f64, scale: f64) -> DVector<f64> {
    let n = m.nrows();
    let shift = 1e-10 * scale;
    let shifted = m - DMatrix::from_diagonal_element(n, n, l + shift);
    let lu = shifted.lu();
    let mut x = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    for _ in 0..4 {
        let mut y = lu.solve(&x).unwrap_or_else(|| x.clone());
        let norm = y.norm();
        if norm.is_finite() && norm > 0.0 {
            y /= norm;
            x = y;
        } else {
            break;
        }
    }
    // deterministic sign: first component that is not numerically zero is positive
    let lead = x.iter().find(|c| c.abs() > 1e-8).copied().unwrap_or(1.0);
    if lead < 0.0 {
        x.neg_mut();
    }
    x
}

pub fn min_eigenvalue(f: &SpectralFactorization) -> f64 {
    f.min_eigenvalue()
}
