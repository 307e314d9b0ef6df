//! Protocol trees of local projective measurements with classical communication.
//!
//! Every internal node is a complete projective measurement performed by one
//! party; the outcome is broadcast and selects the child subtree. A branch
//! from the root to a leaf accumulates the product operator `A_i ⊗ B_i`, and
//! its positive element `E_i = (A_i ⊗ B_i)†(A_i ⊗ B_i)` gives the probability
//! `p_i = ⟨Ψ|E_i|Ψ⟩` that a state reaches that leaf. The elements of a
//! well-formed tree resolve the identity.

use std::fmt;

use rand::Rng;

use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::linalg::{
    columns, cr, haar_unitary, identity, kron, max_abs, orthonormality_deviation, projector, CMatrix, CVector,
    DEFAULT_TOL,
};
use crate::states::BipartiteState;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Party {
    Alice,
    Bob,
}

impl Party {
    pub fn other(self) -> Self {
        match self {
            Self::Alice => Self::Bob,
            Self::Bob => Self::Alice,
        }
    }

    /// Single-letter tag used in files and paths.
    pub fn tag(self) -> &'static str {
        match self {
            Self::Alice => "A",
            Self::Bob => "B",
        }
    }

    pub fn local_dim(self, dims: (usize, usize)) -> usize {
        match self {
            Self::Alice => dims.0,
            Self::Bob => dims.1,
        }
    }
}

impl fmt::Display for Party {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Alice => "Alice",
            Self::Bob => "Bob",
        })
    }
}

/// A complete local projective measurement. Each outcome is a subspace given
/// by a matrix of orthonormal columns in the acting party's space.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectiveMeasurement {
    party: Party,
    outcomes: Vec<CMatrix>,
}

impl ProjectiveMeasurement {
    /// Checks orthonormality within and across outcomes, and that the column
    /// counts add up to the local dimension.
    pub fn new(party: Party, outcomes: Vec<CMatrix>, tol: f64) -> Result<Self> {
        let first = outcomes
            .first()
            .ok_or_else(|| Error::InvalidMeasurement("measurement has no outcomes".into()))?;
        let dim = first.nrows();
        if dim == 0 {
            return Err(Error::InvalidMeasurement("zero-dimensional local space".into()));
        }
        for (k, cols) in outcomes.iter().enumerate() {
            if cols.nrows() != dim {
                return Err(Error::InvalidMeasurement(format!(
                    "outcome {k} has vectors of length {}, expected {dim}",
                    cols.nrows()
                )));
            }
            if cols.ncols() == 0 {
                return Err(Error::InvalidMeasurement(format!("outcome {k} spans no vectors")));
            }
        }
        let total: usize = outcomes.iter().map(|o| o.ncols()).sum();
        if total != dim {
            return Err(Error::InvalidMeasurement(format!(
                "outcome ranks sum to {total}, local dimension is {dim}"
            )));
        }
        let all = CMatrix::from_columns(&outcomes.iter().flat_map(|o| o.column_iter()).collect::<Vec<_>>());
        let deviation = orthonormality_deviation(&all);
        if deviation > tol {
            return Err(Error::InvalidMeasurement(format!(
                "projector columns are not orthonormal (deviation {deviation:.3e})"
            )));
        }
        Ok(Self { party, outcomes })
    }

    /// Rank-one measurement in the given orthonormal basis.
    pub fn from_basis(party: Party, basis: &[CVector]) -> Result<Self> {
        let outcomes = basis.iter().map(|v| CMatrix::from_columns(&[v.clone()])).collect();
        Self::new(party, outcomes, DEFAULT_TOL)
    }

    /// Measurement whose outcomes are groups of computational basis vectors.
    pub fn coordinate_blocks(party: Party, dim: usize, blocks: &[Vec<usize>]) -> Result<Self> {
        let outcomes = blocks
            .iter()
            .map(|b| columns(&b.iter().map(|&i| basis_vector(dim, i)).collect::<Vec<_>>(), dim))
            .collect();
        Self::new(party, outcomes, DEFAULT_TOL)
    }

    pub fn party(&self) -> Party {
        self.party
    }

    pub fn outcomes(&self) -> &[CMatrix] {
        &self.outcomes
    }

    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }

    pub fn local_dim(&self) -> usize {
        self.outcomes[0].nrows()
    }

    /// Orthogonal projector of outcome `k`.
    pub fn projector(&self, k: usize) -> CMatrix {
        projector(&self.outcomes[k])
    }

    pub fn projectors(&self) -> Vec<CMatrix> {
        (0..self.len()).map(|k| self.projector(k)).collect()
    }
}

pub fn basis_vector(dim: usize, i: usize) -> CVector {
    let mut v = CVector::zeros(dim);
    v[i] = cr(1.0);
    v
}

/// Terminal result of a branch.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Leaf {
    Identify(String),
    Fail,
}

impl fmt::Display for Leaf {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Identify(l) => write!(f, "identify {l}"),
            Self::Fail => f.write_str("fail"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ProtocolTree {
    Leaf(Leaf),
    Measure {
        measurement: ProjectiveMeasurement,
        children: Vec<ProtocolTree>,
    },
}

impl ProtocolTree {
    pub fn identify(label: impl Into<String>) -> Self {
        Self::Leaf(Leaf::Identify(label.into()))
    }

    pub fn fail() -> Self {
        Self::Leaf(Leaf::Fail)
    }

    pub fn measure(measurement: ProjectiveMeasurement, children: Vec<ProtocolTree>) -> Self {
        Self::Measure { measurement, children }
    }

    /// Number of measurement rounds on the longest branch.
    pub fn depth(&self) -> usize {
        match self {
            Self::Leaf(_) => 0,
            Self::Measure { children, .. } => 1 + children.iter().map(Self::depth).max().unwrap_or(0),
        }
    }

    pub fn leaf_count(&self) -> usize {
        match self {
            Self::Leaf(_) => 1,
            Self::Measure { children, .. } => children.iter().map(Self::leaf_count).sum(),
        }
    }

    pub fn root_measurement(&self) -> Option<&ProjectiveMeasurement> {
        match self {
            Self::Leaf(_) => None,
            Self::Measure { measurement, .. } => Some(measurement),
        }
    }

    pub fn children(&self) -> &[ProtocolTree] {
        match self {
            Self::Leaf(_) => &[],
            Self::Measure { children, .. } => children,
        }
    }

    /// Copy of the tree with every leaf rewritten by `f`.
    pub fn map_leaves(&self, f: &mut impl FnMut(&Leaf) -> Leaf) -> Self {
        match self {
            Self::Leaf(l) => Self::Leaf(f(l)),
            Self::Measure { measurement, children } => Self::Measure {
                measurement: measurement.clone(),
                children: children.iter().map(|ch| ch.map_leaves(f)).collect(),
            },
        }
    }

    /// Structural check against the local dimensions.
    pub fn check(&self, dims: (usize, usize)) -> Result<()> {
        self.check_at(dims, &mut Vec::new())
    }

    fn check_at(&self, dims: (usize, usize), path: &mut Vec<(Party, usize)>) -> Result<()> {
        let Self::Measure { measurement, children } = self else {
            return Ok(());
        };
        let party = measurement.party();
        if measurement.local_dim() != party.local_dim(dims) {
            return Err(Error::MalformedTree(format!(
                "{party} measurement at {} acts on dimension {}, expected {}",
                format_path(path),
                measurement.local_dim(),
                party.local_dim(dims)
            )));
        }
        if children.len() != measurement.len() {
            return Err(Error::MalformedTree(format!(
                "node at {} has {} outcomes but {} children",
                format_path(path),
                measurement.len(),
                children.len()
            )));
        }
        for (k, child) in children.iter().enumerate() {
            path.push((party, k));
            child.check_at(dims, path)?;
            path.pop();
        }
        Ok(())
    }
}

/// `(A:0,B:1)`-style rendering of a branch path.
pub fn format_path(path: &[(Party, usize)]) -> String {
    let inner: Vec<String> = path.iter().map(|(p, k)| format!("{}:{k}", p.tag())).collect();
    format!("({})", inner.join(","))
}

/// Accumulated product operator `A_i ⊗ B_i` of one root-to-leaf branch.
#[derive(Clone, Debug)]
pub struct BranchOperator {
    pub op_a: CMatrix,
    pub op_b: CMatrix,
    pub leaf: Leaf,
    pub path: Vec<(Party, usize)>,
}

/// Positive element `E_i` of a branch, kept in factored form.
#[derive(Clone, Debug)]
pub struct GpovmElement {
    pub alice: CMatrix,
    pub bob: CMatrix,
}

impl GpovmElement {
    /// `alice ⊗ bob` on the joint space (Alice index major).
    pub fn joint(&self) -> CMatrix {
        kron(&self.alice, &self.bob)
    }
}

impl BranchOperator {
    pub fn element(&self) -> GpovmElement {
        GpovmElement {
            alice: self.op_a.adjoint() * &self.op_a,
            bob: self.op_b.adjoint() * &self.op_b,
        }
    }

    /// Unnormalized post-measurement amplitudes `A · C · Bᵀ`.
    pub fn apply(&self, amplitudes: &CMatrix) -> CMatrix {
        &self.op_a * amplitudes * self.op_b.transpose()
    }

    /// `⟨Ψ|E_i|Ψ⟩`.
    pub fn probability(&self, state: &BipartiteState) -> f64 {
        self.apply(state.amplitudes()).norm_squared()
    }

    pub fn path_string(&self) -> String {
        format_path(&self.path)
    }
}

/// One branch operator per leaf, in depth-first outcome order.
pub fn enumerate_branches(t: &ProtocolTree, dims: (usize, usize)) -> Result<Vec<BranchOperator>> {
    t.check(dims)?;
    let mut out = Vec::with_capacity(t.leaf_count());
    collect_branches(t, identity(dims.0), identity(dims.1), &mut Vec::new(), &mut out);
    Ok(out)
}

fn collect_branches(
    t: &ProtocolTree,
    op_a: CMatrix,
    op_b: CMatrix,
    path: &mut Vec<(Party, usize)>,
    out: &mut Vec<BranchOperator>,
) {
    match t {
        ProtocolTree::Leaf(leaf) => out.push(BranchOperator {
            op_a,
            op_b,
            leaf: leaf.clone(),
            path: path.clone(),
        }),
        ProtocolTree::Measure { measurement, children } => {
            let party = measurement.party();
            for (k, child) in children.iter().enumerate() {
                let p = measurement.projector(k);
                path.push((party, k));
                match party {
                    Party::Alice => collect_branches(child, &p * &op_a, op_b.clone(), path, out),
                    Party::Bob => collect_branches(child, op_a.clone(), &p * &op_b, path, out),
                }
                path.pop();
            }
        }
    }
}

/// `max |Σ_i E_i − I|` over entries of the joint-space matrix.
pub fn completeness_check(branches: &[BranchOperator]) -> f64 {
    let Some(first) = branches.first() else {
        return f64::INFINITY;
    };
    let n = first.op_a.nrows() * first.op_b.nrows();
    let mut sum = CMatrix::zeros(n, n);
    for b in branches {
        sum += b.element().joint();
    }
    max_abs(&(sum - identity(n)))
}

/// Per-leaf outcome statistics for every ensemble member.
#[derive(Clone, Debug)]
pub struct OutcomeRecord {
    pub branch: BranchOperator,
    /// Arrival probability of each ensemble state (ensemble order); values
    /// below the tolerance are reported as exactly zero.
    pub probabilities: Vec<f64>,
    /// Renormalized post-measurement states for the states that arrive.
    pub post_states: Vec<Option<BipartiteState>>,
}

pub fn run_protocol(t: &ProtocolTree, e: &Ensemble, tol: f64) -> Result<Vec<OutcomeRecord>> {
    let branches = enumerate_branches(t, e.dims())?;
    Ok(branches
        .into_iter()
        .map(|branch| {
            let mut probabilities = Vec::with_capacity(e.len());
            let mut post_states = Vec::with_capacity(e.len());
            for s in e.states() {
                let post = branch.apply(s.amplitudes());
                let p = post.norm_squared();
                if p > tol {
                    probabilities.push(p.min(1.0));
                    post_states.push(BipartiteState::new(s.dim_a(), s.dim_b(), post, s.name().map(str::to_owned)).ok());
                } else {
                    probabilities.push(0.0);
                    post_states.push(None);
                }
            }
            OutcomeRecord {
                branch,
                probabilities,
                post_states,
            }
        })
        .collect())
}

/// Diagnostics for one leaf of a verified protocol.
#[derive(Clone, Debug)]
pub struct LeafDiagnostic {
    pub path: String,
    pub leaf: Leaf,
    pub probabilities: Vec<f64>,
    pub issue: Option<String>,
}

#[derive(Clone, Debug)]
pub struct VerificationReport {
    pub success: bool,
    pub completeness_deviation: f64,
    pub tolerance: f64,
    pub labels: Vec<String>,
    pub leaves: Vec<LeafDiagnostic>,
    /// Probability that each state ends at a leaf naming it.
    pub identification: Vec<f64>,
    pub issues: Vec<String>,
}

impl VerificationReport {
    /// Leaves that received some state they do not name.
    pub fn failing_leaves(&self) -> impl Iterator<Item = &LeafDiagnostic> {
        self.leaves.iter().filter(|l| l.issue.is_some())
    }
}

/// Decide whether the tree identifies every ensemble member with certainty.
///
/// Succeeds iff the branch elements resolve the identity, no leaf is reached
/// by a state it does not name (a `Fail` leaf names nothing), and every state
/// reaches its own leaves with total probability one.
pub fn verify_protocol(t: &ProtocolTree, e: &Ensemble, tol: f64) -> Result<VerificationReport> {
    let records = run_protocol(t, e, tol)?;
    let branches: Vec<BranchOperator> = records.iter().map(|r| r.branch.clone()).collect();
    let completeness_deviation = completeness_check(&branches);
    let mut issues = Vec::new();
    if completeness_deviation > tol {
        issues.push(format!(
            "branch elements do not resolve the identity (deviation {completeness_deviation:.3e})"
        ));
    }
    let mut identification = vec![0.0; e.len()];
    let mut leaves = Vec::with_capacity(records.len());
    for r in records {
        let path = r.branch.path_string();
        let arrivals: Vec<&str> = r
            .probabilities
            .iter()
            .zip(e.labels())
            .filter(|(p, _)| **p > 0.0)
            .map(|(_, l)| l.as_str())
            .collect();
        let issue = match &r.branch.leaf {
            Leaf::Fail if !arrivals.is_empty() => Some(format!("fail leaf reached by {}", arrivals.join(", "))),
            Leaf::Fail => None,
            Leaf::Identify(label) => match e.index_of(label) {
                None if !arrivals.is_empty() => Some(format!("leaf names unknown state {label:?}")),
                None => None,
                Some(own) => {
                    identification[own] += r.probabilities[own];
                    let intruders: Vec<&str> = arrivals.iter().copied().filter(|l| l != label).collect();
                    (!intruders.is_empty()).then(|| {
                        format!("ambiguous leaf: names {label} but is also reached by {}", intruders.join(", "))
                    })
                }
            },
        };
        if let Some(msg) = &issue {
            issues.push(format!("{path}: {msg}"));
        }
        leaves.push(LeafDiagnostic {
            path,
            leaf: r.branch.leaf,
            probabilities: r.probabilities,
            issue,
        });
    }
    for (label, p) in e.labels().iter().zip(&identification) {
        if (p - 1.0).abs() > tol {
            issues.push(format!("{label} is identified with probability {p:.12}"));
        }
    }
    Ok(VerificationReport {
        success: issues.is_empty(),
        completeness_deviation,
        tolerance: tol,
        labels: e.labels().to_vec(),
        leaves,
        identification,
        issues,
    })
}

/// Names accepted by [`canned_protocol`].
pub const PROTOCOL_NAMES: [&str; 2] = ["six4x4", "bell2-x"];

fn plus_minus(dim: usize, i: usize, j: usize) -> (CVector, CVector) {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let (ei, ej) = (basis_vector(dim, i), basis_vector(dim, j));
    ((&ei + &ej) * cr(s), (&ei - &ej) * cr(s))
}

fn rank_one_then_rest(party: Party, dim: usize, vectors: &[CVector], rest: &[usize]) -> ProjectiveMeasurement {
    let mut outcomes: Vec<CMatrix> = vectors.iter().map(|v| CMatrix::from_columns(&[v.clone()])).collect();
    if !rest.is_empty() {
        outcomes.push(columns(&rest.iter().map(|&i| basis_vector(dim, i)).collect::<Vec<_>>(), dim));
    }
    ProjectiveMeasurement::new(party, outcomes, DEFAULT_TOL).expect("canned measurement is orthonormal")
}

fn six4x4_protocol() -> ProtocolTree {
    use Party::{Alice, Bob};
    let d = 4;
    let e = |i| basis_vector(d, i);
    let (p01, m01) = plus_minus(d, 0, 1);
    let (p23, m23) = plus_minus(d, 2, 3);
    let leaf = ProtocolTree::identify;
    let fail = ProtocolTree::fail;

    // Alice outcome span{|0⟩,|1⟩}: Alice resolves {|0⟩,|1⟩}, then Bob.
    let low = ProtocolTree::measure(
        rank_one_then_rest(Alice, d, &[e(0), e(1)], &[2, 3]),
        vec![
            ProtocolTree::measure(
                rank_one_then_rest(Bob, d, &[e(0), e(1)], &[2, 3]),
                vec![leaf("psi1"), leaf("psi3"), fail()],
            ),
            ProtocolTree::measure(
                rank_one_then_rest(Bob, d, &[p01, m01], &[2, 3]),
                vec![leaf("psi2"), leaf("psi3"), fail()],
            ),
            fail(),
        ],
    );
    // Alice outcome span{|2⟩,|3⟩}: Bob goes first, then Alice.
    let high = ProtocolTree::measure(
        rank_one_then_rest(Bob, d, &[e(2), e(3)], &[0, 1]),
        vec![
            ProtocolTree::measure(
                rank_one_then_rest(Alice, d, &[e(2), e(3)], &[0, 1]),
                vec![leaf("psi4"), leaf("psi6"), fail()],
            ),
            ProtocolTree::measure(
                rank_one_then_rest(Alice, d, &[p23, m23], &[0, 1]),
                vec![leaf("psi5"), leaf("psi6"), fail()],
            ),
            fail(),
        ],
    );
    let root = ProjectiveMeasurement::coordinate_blocks(Alice, d, &[vec![0, 1], vec![2, 3]])
        .expect("block measurement is complete");
    ProtocolTree::measure(root, vec![low, high])
}

fn bell2_x_protocol() -> ProtocolTree {
    let (plus, minus) = plus_minus(2, 0, 1);
    let x = |party| ProjectiveMeasurement::from_basis(party, &[plus.clone(), minus.clone()]).expect("X basis");
    let leaf = ProtocolTree::identify;
    ProtocolTree::measure(
        x(Party::Alice),
        vec![
            ProtocolTree::measure(x(Party::Bob), vec![leaf("A1"), leaf("A2")]),
            ProtocolTree::measure(x(Party::Bob), vec![leaf("A2"), leaf("A1")]),
        ],
    )
}

/// Built-in protocols: `six4x4` (for the six-state 4⊗4 example) and
/// `bell2-x` (X-basis measurements on both sides for two Bell states).
pub fn canned_protocol(name: &str) -> Result<ProtocolTree> {
    match name {
        "six4x4" => Ok(six4x4_protocol()),
        "bell2-x" => Ok(bell2_x_protocol()),
        _ => Err(Error::UnknownProtocol(name.to_owned())),
    }
}

/// Random well-formed tree of depth at most `max_depth`: each node measures
/// a random party in a Haar-random basis grouped into random blocks, and
/// leaves pick a random label or `Fail`.
pub fn random_protocol_tree<R: Rng + ?Sized>(
    dims: (usize, usize),
    max_depth: usize,
    labels: &[String],
    rng: &mut R,
) -> ProtocolTree {
    if max_depth == 0 || rng.random_bool(0.25) {
        return match labels.len() {
            0 => ProtocolTree::fail(),
            n => {
                let k = rng.random_range(0..=n);
                if k == n {
                    ProtocolTree::fail()
                } else {
                    ProtocolTree::identify(labels[k].clone())
                }
            }
        };
    }
    let party = if rng.random_bool(0.5) { Party::Alice } else { Party::Bob };
    let dim = party.local_dim(dims);
    let u = haar_unitary(dim, rng);
    // Random composition of `dim` into consecutive blocks.
    let mut outcomes = Vec::new();
    let mut start = 0;
    while start < dim {
        let size = rng.random_range(1..=dim - start);
        outcomes.push(u.columns(start, size).into_owned());
        start += size;
    }
    let measurement = ProjectiveMeasurement::new(party, outcomes, 1e-9).expect("Haar columns are orthonormal");
    let children = (0..measurement.len())
        .map(|_| random_protocol_tree(dims, max_depth - 1, labels, rng))
        .collect();
    ProtocolTree::measure(measurement, children)
}

/// Projector-law residual `max(|P² − P|, |P − P†|)`.
pub fn projector_residual(p: &CMatrix) -> f64 {
    max_abs(&(p * p - p)).max(max_abs(&(p - p.adjoint())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::canned_example;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn z_measure(party: Party) -> ProjectiveMeasurement {
        ProjectiveMeasurement::from_basis(party, &[basis_vector(2, 0), basis_vector(2, 1)]).unwrap()
    }

    fn alice_z_tree() -> ProtocolTree {
        ProtocolTree::measure(z_measure(Party::Alice), vec![ProtocolTree::identify("s0"), ProtocolTree::identify("s1")])
    }

    fn z_then_z(leaves: [&str; 4]) -> ProtocolTree {
        let bob = |a: &str, b: &str| {
            ProtocolTree::measure(z_measure(Party::Bob), vec![ProtocolTree::identify(a), ProtocolTree::identify(b)])
        };
        ProtocolTree::measure(
            z_measure(Party::Alice),
            vec![bob(leaves[0], leaves[1]), bob(leaves[2], leaves[3])],
        )
    }

    fn rank_one(v: &CVector) -> CMatrix {
        v * v.adjoint()
    }

    #[test]
    fn measurement_validation() {
        let e0 = basis_vector(2, 0);
        assert!(ProjectiveMeasurement::from_basis(Party::Alice, &[e0.clone()]).is_err());
        assert!(ProjectiveMeasurement::from_basis(Party::Alice, &[e0.clone(), e0.clone()]).is_err());
        let skew = CVector::from_vec(vec![cr(1.0), cr(1.0)]);
        assert!(ProjectiveMeasurement::from_basis(Party::Alice, &[e0, skew]).is_err());
        assert!(ProjectiveMeasurement::new(Party::Bob, vec![], DEFAULT_TOL).is_err());
    }

    #[test]
    fn single_alice_measurement_branches() {
        let branches = enumerate_branches(&alice_z_tree(), (2, 2)).unwrap();
        assert_eq!(branches.len(), 2);
        for (k, b) in branches.iter().enumerate() {
            assert!(max_abs(&(&b.op_a - rank_one(&basis_vector(2, k)))) < 1e-15);
            assert!(max_abs(&(&b.op_b - identity(2))) < 1e-15);
            assert_eq!(b.path, vec![(Party::Alice, k)]);
        }
    }

    #[test]
    fn block_measurement_branches() {
        let root = canned_protocol("six4x4").unwrap();
        let m = root.root_measurement().unwrap();
        assert_eq!(m.party(), Party::Alice);
        let mut e1 = CMatrix::zeros(4, 4);
        e1[(0, 0)] = cr(1.0);
        e1[(1, 1)] = cr(1.0);
        let e2 = identity(4) - &e1;
        assert!(max_abs(&(m.projector(0) - &e1)) < 1e-15);
        assert!(max_abs(&(m.projector(1) - &e2)) < 1e-15);
        let first_round = ProtocolTree::measure(m.clone(), vec![ProtocolTree::fail(), ProtocolTree::fail()]);
        let branches = enumerate_branches(&first_round, (4, 4)).unwrap();
        assert!(max_abs(&(&branches[0].op_a - &e1)) < 1e-15);
        assert!(max_abs(&(&branches[1].op_a - &e2)) < 1e-15);
        assert!(branches.iter().all(|b| max_abs(&(&b.op_b - identity(4))) < 1e-15));
    }

    #[test]
    fn depth_two_branches_are_basis_projectors() {
        let branches = enumerate_branches(&z_then_z(["a", "b", "c", "d"]), (2, 2)).unwrap();
        assert_eq!(branches.len(), 4);
        for (i, b) in branches.iter().enumerate() {
            let (a, bb) = (i / 2, i % 2);
            let expect = kron(&rank_one(&basis_vector(2, a)), &rank_one(&basis_vector(2, bb)));
            assert!(max_abs(&(b.element().joint() - expect)) < 1e-15);
        }
    }

    #[test]
    fn completeness() {
        let branches = enumerate_branches(&z_then_z(["a", "b", "c", "d"]), (2, 2)).unwrap();
        assert!(completeness_check(&branches) <= 1e-12);
        // Dropping the first leaf leaves |00⟩⟨00| unaccounted for.
        assert!(completeness_check(&branches[1..]) > 0.9);
        let leaf_only = enumerate_branches(&ProtocolTree::identify("x"), (2, 2)).unwrap();
        assert_eq!(completeness_check(&leaf_only), 0.0);
        let trivial = ProtocolTree::measure(
            ProjectiveMeasurement::new(Party::Alice, vec![identity(2)], DEFAULT_TOL).unwrap(),
            vec![ProtocolTree::identify("x")],
        );
        assert_eq!(completeness_check(&enumerate_branches(&trivial, (2, 2)).unwrap()), 0.0);
    }

    #[test]
    fn malformed_trees() {
        let bad = ProtocolTree::measure(z_measure(Party::Alice), vec![ProtocolTree::fail()]);
        assert!(matches!(bad.check((2, 2)), Err(Error::MalformedTree(_))));
        assert!(matches!(alice_z_tree().check((3, 2)), Err(Error::MalformedTree(_))));
    }

    #[test]
    fn alice_z_on_basis_states() {
        let e = Ensemble::new(vec![
            BipartiteState::basis(2, 2, 0, 0).unwrap().with_name("s0"),
            BipartiteState::basis(2, 2, 1, 0).unwrap().with_name("s1"),
        ])
        .unwrap();
        let records = run_protocol(&alice_z_tree(), &e, DEFAULT_TOL).unwrap();
        assert_eq!(records[0].probabilities, vec![1.0, 0.0]);
        assert_eq!(records[1].probabilities, vec![0.0, 1.0]);
        assert!(verify_protocol(&alice_z_tree(), &e, DEFAULT_TOL).unwrap().success);
    }

    #[test]
    fn alice_x_leaves_orthogonal_bob_posteriors() {
        let (plus, minus) = plus_minus(2, 0, 1);
        let tree = ProtocolTree::measure(
            ProjectiveMeasurement::from_basis(Party::Alice, &[plus.clone(), minus.clone()]).unwrap(),
            vec![ProtocolTree::fail(), ProtocolTree::fail()],
        );
        let e = canned_example("bell2").unwrap();
        let records = run_protocol(&tree, &e, DEFAULT_TOL).unwrap();
        // In the X⊗X basis A1 = (|++⟩+|−−⟩)/√2 and A2 = (|+−⟩+|−+⟩)/√2.
        let post = &records[0].post_states;
        let a1 = post[0].as_ref().unwrap().amplitudes();
        let a2 = post[1].as_ref().unwrap().amplitudes();
        let pp = &plus * plus.transpose();
        let pm = &plus * minus.transpose();
        let fid = |m: &CMatrix, t: &CMatrix| m.iter().zip(t.iter()).map(|(x, y)| x.conj() * y).sum::<crate::linalg::C64>().norm();
        assert!((fid(a1, &pp) - 1.0).abs() < 1e-12);
        assert!((fid(a2, &pm) - 1.0).abs() < 1e-12);
        assert!((records[0].probabilities[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn six_state_protocol_verifies_with_expected_split() {
        let e = canned_example("six4x4").unwrap();
        let t = canned_protocol("six4x4").unwrap();
        assert_eq!(t.depth(), 3);
        let report = verify_protocol(&t, &e, DEFAULT_TOL).unwrap();
        assert!(report.success, "{:?}", report.issues);
        assert!(report.completeness_deviation < 1e-12);
        // (P_0⊗I)|Ψ3⟩ = |01⟩/√3 and (P_1⊗I)|Ψ3⟩ = |1⟩(|0⟩−|1⟩)/√3.
        let psi3: Vec<f64> = report
            .leaves
            .iter()
            .filter(|l| l.leaf == Leaf::Identify("psi3".into()))
            .map(|l| l.probabilities[2])
            .collect();
        assert_eq!(psi3.len(), 2);
        assert!((psi3[0] - 1.0 / 3.0).abs() < 1e-12);
        assert!((psi3[1] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn bell_pair_protocols() {
        let e = canned_example("bell2").unwrap();
        let good = verify_protocol(&canned_protocol("bell2-x").unwrap(), &e, DEFAULT_TOL).unwrap();
        assert!(good.success, "{:?}", good.issues);
        assert_eq!(canned_protocol("bell2-x").unwrap().leaf_count(), 4);
        let bad = verify_protocol(&z_then_z(["A1", "A2", "A1", "A2"]), &e, DEFAULT_TOL).unwrap();
        assert!(!bad.success);
        let first = bad.failing_leaves().next().unwrap();
        assert_eq!(first.path, "(A:0,B:0)");
        assert_eq!(canned_protocol("nope").unwrap_err(), Error::UnknownProtocol("nope".into()));
    }

    #[test]
    fn fail_leaf_reached_is_failure() {
        let e = canned_example("bell2").unwrap();
        let t = ProtocolTree::measure(z_measure(Party::Alice), vec![ProtocolTree::fail(), ProtocolTree::fail()]);
        let r = verify_protocol(&t, &e, DEFAULT_TOL).unwrap();
        assert!(!r.success);
        assert!(r.issues.iter().any(|i| i.contains("fail leaf")));
    }

    #[test]
    fn branch_operators_of_canned_protocols_are_projectors() {
        for (name, dims) in [("six4x4", (4, 4)), ("bell2-x", (2, 2))] {
            for b in enumerate_branches(&canned_protocol(name).unwrap(), dims).unwrap() {
                assert!(projector_residual(&b.op_a) < 1e-12);
                assert!(projector_residual(&b.op_b) < 1e-12);
            }
        }
    }

    #[test]
    fn random_trees_resolve_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let e = canned_example("bell4").unwrap();
        for _ in 0..20 {
            let t = random_protocol_tree((2, 2), 3, e.labels(), &mut rng);
            let branches = enumerate_branches(&t, (2, 2)).unwrap();
            assert!(completeness_check(&branches) < 1e-9);
            let records = run_protocol(&t, &e, 0.0).unwrap();
            for i in 0..e.len() {
                let total: f64 = records.iter().map(|r| r.probabilities[i]).sum();
                assert!((total - 1.0).abs() < 1e-9);
            }
        }
    }
}
