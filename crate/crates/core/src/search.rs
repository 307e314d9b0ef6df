//! Bounded depth-first synthesis of projective LOCC protocols.
//!
//! A measurement can only be part of a reliable protocol if, in every
//! outcome, the surviving states stay mutually orthogonal. For an Alice
//! projector `P` and states with amplitude matrices `C_j`, `C_l` this reads
//! `tr(P · C_l C_j†) = 0`; Bob's side is the same with transposed amplitudes.
//! The search enumerates candidate bases that pass this filter and recurses
//! on the renormalized survivors of each outcome until a single state is
//! left in every branch.
//!
//! Each party measures inside its current frame: the range of the
//! projectors it has already applied on the branch. Outcomes outside the
//! frame are grouped into one extra zero-probability outcome. Because every
//! new projector refines the frame, accumulated branch operators stay
//! orthogonal projectors.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix3, SymmetricEigen};

use crate::criteria::{theorem2_check, Theorem2Report, Theorem2Verdict};
use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::linalg::{
    bloch_basis, canonical_phase, columns, complement_basis, cross, dot3, eigh, hermitian_parts, identity, max_abs,
    norm3, pauli_coefficients, CMatrix, CVector, C64, DEFAULT_TOL,
};
use crate::protocol::{verify_protocol, Party, ProjectiveMeasurement, ProtocolTree};
use crate::states::BipartiteState;

/// Families of candidate measurement bases, tried in this order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Strategy {
    /// Frame basis and the block partition induced by the states' local supports.
    Standard,
    /// Eigenspaces of the Hermitian and anti-Hermitian parts of cross operators.
    CrossOperator,
    /// Bases in which cross operators have vanishing diagonal.
    ZeroDiagonal,
    /// Fixed Bloch-sphere grid for two-dimensional frames.
    Exhaustive2d,
    /// Measurements supplied in [`SearchConfig::user_measurements`].
    UserSupplied,
}

impl Strategy {
    pub const DEFAULT: [Strategy; 3] = [Self::Standard, Self::CrossOperator, Self::ZeroDiagonal];

    pub fn name(self) -> &'static str {
        match self {
            Self::Standard => "standard",
            Self::CrossOperator => "cross-operator",
            Self::ZeroDiagonal => "zero-diagonal",
            Self::Exhaustive2d => "exhaustive-2d",
            Self::UserSupplied => "user",
        }
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "standard" => Ok(Self::Standard),
            "cross-operator" => Ok(Self::CrossOperator),
            "zero-diagonal" => Ok(Self::ZeroDiagonal),
            "exhaustive-2d" => Ok(Self::Exhaustive2d),
            "user" | "user-supplied" => Ok(Self::UserSupplied),
            other => Err(format!("unknown strategy {other:?}")),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Which party may measure at a node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PartyOrder {
    /// Parties strictly alternate; either may start.
    Alternate,
    AliceFirst,
    BobFirst,
    /// Either party at every node (Alice tried first).
    Free,
}

impl FromStr for PartyOrder {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "alternate" => Ok(Self::Alternate),
            "alice-first" => Ok(Self::AliceFirst),
            "bob-first" => Ok(Self::BobFirst),
            "free" => Ok(Self::Free),
            other => Err(format!("unknown party order {other:?}")),
        }
    }
}

impl fmt::Display for PartyOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Alternate => "alternate",
            Self::AliceFirst => "alice-first",
            Self::BobFirst => "bob-first",
            Self::Free => "free",
        })
    }
}

#[derive(Clone, Debug)]
pub struct SearchConfig {
    pub max_depth: usize,
    pub strategies: Vec<Strategy>,
    pub tolerance: f64,
    pub party_order: PartyOrder,
    /// Cap on candidate measurements per node and party.
    pub beam_limit: usize,
    /// Angular step of the `exhaustive-2d` Bloch grid.
    pub grid_step: f64,
    /// Search nodes visited before giving up with `Unknown`.
    pub node_budget: usize,
    pub user_measurements: Vec<ProjectiveMeasurement>,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            max_depth: 6,
            strategies: Strategy::DEFAULT.to_vec(),
            tolerance: DEFAULT_TOL,
            party_order: PartyOrder::Free,
            beam_limit: 64,
            grid_step: PI / 12.0,
            node_budget: 200_000,
            user_measurements: Vec::new(),
        }
    }
}

impl SearchConfig {
    /// Default strategies plus the Bloch grid, with a beam wide enough to
    /// hold the whole grid.
    pub fn exhaustive_2d() -> Self {
        let mut cfg = Self::default();
        cfg.strategies.push(Strategy::Exhaustive2d);
        cfg.beam_limit = 512;
        cfg
    }

    pub fn validate(&self, dims: (usize, usize)) -> Result<()> {
        let bound = 2 * (dims.0 + dims.1);
        if self.max_depth == 0 || self.max_depth > bound {
            return Err(Error::InvalidConfig(format!(
                "max_depth must be in 1..={bound} for a {}x{} system, got {}",
                dims.0, dims.1, self.max_depth
            )));
        }
        if self.beam_limit == 0 {
            return Err(Error::InvalidConfig("beam_limit must be at least 1".into()));
        }
        if !(self.tolerance > 0.0 && self.tolerance < 1.0) {
            return Err(Error::InvalidConfig(format!("tolerance {} out of range", self.tolerance)));
        }
        if !(self.grid_step > 0.0 && self.grid_step <= PI / 2.0) {
            return Err(Error::InvalidConfig(format!("grid step {} out of range", self.grid_step)));
        }
        if self.strategies.is_empty() {
            return Err(Error::InvalidConfig("no candidate strategy selected".into()));
        }
        for m in &self.user_measurements {
            if m.local_dim() != m.party().local_dim(dims) {
                return Err(Error::InvalidConfig(format!(
                    "user measurement for {} acts on dimension {}",
                    m.party(),
                    m.local_dim()
                )));
            }
        }
        Ok(())
    }
}

/// `M_jl = C_l C_j†` on Alice's side and `C_lᵀ conj(C_j)` on Bob's side.
/// Its trace is `⟨Ψ_j|Ψ_l⟩`, and `tr(P M)` is the overlap that survives the
/// local projector `P`.
#[derive(Clone, Debug)]
pub struct CrossOperator {
    pub pair: (usize, usize),
    pub alice_side: CMatrix,
    pub bob_side: CMatrix,
}

pub fn cross_operators(e: &Ensemble) -> Vec<CrossOperator> {
    let s = e.states();
    let mut out = Vec::new();
    for j in 0..s.len() {
        for l in j + 1..s.len() {
            let (cj, cl) = (s[j].amplitudes(), s[l].amplitudes());
            out.push(CrossOperator {
                pair: (j, l),
                alice_side: cl * cj.adjoint(),
                bob_side: cl.transpose() * cj.conjugate(),
            });
        }
    }
    out
}

/// True iff every outcome of `meas` keeps every pair of states orthogonal.
pub fn valid_measurement(e: &Ensemble, meas: &ProjectiveMeasurement, tol: f64) -> Result<bool> {
    let party = meas.party();
    if meas.local_dim() != party.local_dim(e.dims()) {
        return Err(Error::DimensionMismatch {
            expected: e.dims(),
            found: match party {
                Party::Alice => (meas.local_dim(), e.dim_b()),
                Party::Bob => (e.dim_a(), meas.local_dim()),
            },
        });
    }
    let projectors = meas.projectors();
    Ok(cross_operators(e).iter().all(|x| {
        let m = match party {
            Party::Alice => &x.alice_side,
            Party::Bob => &x.bob_side,
        };
        projectors.iter().all(|p| trace_product(p, m).norm() <= tol)
    }))
}

fn trace_product(a: &CMatrix, b: &CMatrix) -> C64 {
    // tr(A B) = Σ_ij A_ij B_ji
    let mut t = C64::new(0.0, 0.0);
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            t += a[(i, j)] * b[(j, i)];
        }
    }
    t
}

/// States left after `party` observes the outcome `projector_columns`
/// (orthonormal columns), renormalized. States with post-norm² at most the
/// ensemble tolerance are dropped.
pub fn surviving_states(e: &Ensemble, party: Party, projector_columns: &CMatrix) -> Result<Ensemble> {
    let dim = party.local_dim(e.dims());
    if projector_columns.nrows() != dim {
        return Err(Error::ShapeMismatch {
            expected: (dim, projector_columns.ncols()),
            found: projector_columns.shape(),
        });
    }
    let p = projector_columns * projector_columns.adjoint();
    let mut survivors = Vec::new();
    for s in e.states() {
        let post = match party {
            Party::Alice => &p * s.amplitudes(),
            Party::Bob => s.amplitudes() * p.transpose(),
        };
        if post.norm_squared() > e.tolerance() {
            survivors.push(BipartiteState::new(s.dim_a(), s.dim_b(), post, s.name().map(str::to_owned))?);
        }
    }
    if survivors.is_empty() {
        return Err(Error::EmptyOutcome);
    }
    Ensemble::with_tolerance(survivors, e.tolerance())
}

/// Candidate measurements for `party` on the full local space, in search order.
pub fn candidate_bases(e: &Ensemble, party: Party, cfg: &SearchConfig) -> Vec<ProjectiveMeasurement> {
    let node = Node::root(e);
    let frame = node.frame(party).clone();
    node.candidates(party, cfg)
        .into_iter()
        .filter_map(|c| lift(&frame, &c.groups, party, cfg.tolerance))
        .collect()
}

#[derive(Clone, Debug)]
pub enum SearchOutcome {
    Yes(ProtocolTree),
    ProvedNo(Theorem2Report),
    Unknown { depth: usize, nodes_explored: usize },
}

impl SearchOutcome {
    pub fn protocol(&self) -> Option<&ProtocolTree> {
        match self {
            Self::Yes(t) => Some(t),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SearchStats {
    pub nodes_explored: usize,
    pub candidates_considered: usize,
    pub candidates_valid: usize,
    pub memo_hits: usize,
    pub budget_exhausted: bool,
}

#[derive(Clone, Debug)]
pub struct SearchResult {
    pub outcome: SearchOutcome,
    pub stats: SearchStats,
}

/// Look for a protocol that identifies every state with certainty.
///
/// Returns `ProvedNo` when the Schmidt-number sum already rules the ensemble
/// out, `Yes` with a verified protocol, or `Unknown` when the bounded search
/// runs out of candidates, depth or budget.
pub fn search_protocol(e: &Ensemble, cfg: &SearchConfig) -> Result<SearchResult> {
    cfg.validate(e.dims())?;
    let report = theorem2_check(e);
    if report.verdict == Theorem2Verdict::ViolatesNecessary {
        return Ok(SearchResult {
            outcome: SearchOutcome::ProvedNo(report),
            stats: SearchStats::default(),
        });
    }
    let mut searcher = Searcher {
        cfg,
        labels: e.labels(),
        dims: e.dims(),
        stats: SearchStats::default(),
        failed: HashSet::new(),
    };
    let found = searcher.dfs(&Node::root(e), cfg.max_depth, None);
    let unknown = |stats: &SearchStats| SearchOutcome::Unknown {
        depth: cfg.max_depth,
        nodes_explored: stats.nodes_explored,
    };
    let outcome = match found {
        Some(tree) if verify_protocol(&tree, e, cfg.tolerance)?.success => SearchOutcome::Yes(tree),
        _ => unknown(&searcher.stats),
    };
    Ok(SearchResult {
        outcome,
        stats: searcher.stats,
    })
}

/// Survivors at a search node, expressed in the parties' current frames.
#[derive(Clone, Debug)]
struct Node {
    frame_a: CMatrix,
    frame_b: CMatrix,
    /// (ensemble index, amplitudes in frame coordinates, unit norm)
    states: Vec<(usize, CMatrix)>,
}

#[derive(Clone, Debug)]
struct Candidate {
    /// Orthonormal column blocks partitioning the frame.
    groups: Vec<CMatrix>,
}

impl Node {
    fn root(e: &Ensemble) -> Self {
        Self {
            frame_a: identity(e.dim_a()),
            frame_b: identity(e.dim_b()),
            states: e.states().iter().enumerate().map(|(i, s)| (i, s.amplitudes().clone())).collect(),
        }
    }

    fn frame(&self, party: Party) -> &CMatrix {
        match party {
            Party::Alice => &self.frame_a,
            Party::Bob => &self.frame_b,
        }
    }

    /// Each state's amplitudes with `party`'s index first.
    fn local_matrices(&self, party: Party) -> Vec<CMatrix> {
        self.states
            .iter()
            .map(|(_, c)| match party {
                Party::Alice => c.clone(),
                Party::Bob => c.transpose(),
            })
            .collect()
    }

    fn cross(&self, party: Party) -> Vec<CMatrix> {
        let x = self.local_matrices(party);
        let mut out = Vec::new();
        for j in 0..x.len() {
            for l in j + 1..x.len() {
                out.push(&x[l] * x[j].adjoint());
            }
        }
        out
    }

    fn candidates(&self, party: Party, cfg: &SearchConfig) -> Vec<Candidate> {
        let r = self.frame(party).ncols();
        if r < 2 {
            return Vec::new();
        }
        let local = self.local_matrices(party);
        let cross = self.cross(party);
        let tol = cfg.tolerance;
        let mut out: Vec<Candidate> = Vec::new();
        let mut seen: HashSet<Vec<i64>> = HashSet::new();
        let mut strategies = cfg.strategies.clone();
        strategies.sort();
        strategies.dedup();
        for strategy in strategies {
            let raw = match strategy {
                Strategy::Standard => standard_candidates(&local, r, tol),
                Strategy::CrossOperator => cross_operator_candidates(&cross, tol),
                Strategy::ZeroDiagonal => zero_diagonal_candidates(&cross, r, tol),
                Strategy::Exhaustive2d if r == 2 => bloch_grid(cfg.grid_step),
                Strategy::Exhaustive2d => Vec::new(),
                Strategy::UserSupplied => user_candidates(self.frame(party), party, &cfg.user_measurements, tol),
            };
            let mut keyed: Vec<(Vec<i64>, Vec<CMatrix>)> = raw
                .into_iter()
                .filter(|g| g.len() >= 2)
                .map(canonical_groups)
                .collect();
            keyed.sort_by(|a, b| b.0.cmp(&a.0));
            keyed.sort_by_key(|(_, groups)| groups.len());
            for (key, groups) in keyed {
                if seen.insert(key) {
                    out.push(Candidate { groups });
                }
            }
        }
        out.truncate(cfg.beam_limit);
        out
    }

    /// Survivors of each group; `None` if some pair of states would stop being orthogonal.
    fn split(&self, party: Party, groups: &[CMatrix], tol: f64) -> Option<Vec<Node>> {
        let local = self.local_matrices(party);
        let projectors: Vec<CMatrix> = groups.iter().map(|g| g * g.adjoint()).collect();
        for j in 0..local.len() {
            for l in j + 1..local.len() {
                let m = &local[l] * local[j].adjoint();
                if projectors.iter().any(|p| trace_product(p, &m).norm() > tol) {
                    return None;
                }
            }
        }
        let mut children = Vec::with_capacity(groups.len());
        for g in groups {
            let mut states = Vec::new();
            for (idx, c) in &self.states {
                let reduced = match party {
                    Party::Alice => g.adjoint() * c,
                    Party::Bob => c * g.conjugate(),
                };
                let p = reduced.norm_squared();
                if p > tol {
                    states.push((*idx, reduced.unscale(p.sqrt())));
                }
            }
            let (frame_a, frame_b) = match party {
                Party::Alice => (&self.frame_a * g, self.frame_b.clone()),
                Party::Bob => (self.frame_a.clone(), &self.frame_b * g),
            };
            children.push(Node { frame_a, frame_b, states });
        }
        Some(children)
    }

    fn fingerprint(&self, depth: usize, last: Option<Party>) -> Vec<i64> {
        let mut key = vec![depth as i64, last.map_or(-1, |p| p as i64)];
        let pa = &self.frame_a * self.frame_a.adjoint();
        let pb = &self.frame_b * self.frame_b.adjoint();
        key.extend(quantize(&pa));
        key.extend(quantize(&pb));
        for (idx, c) in &self.states {
            key.push(*idx as i64);
            // Phase-free summary of the state in full coordinates.
            let full = &self.frame_a * c * self.frame_b.transpose();
            let v = CVector::from_iterator(full.len(), full.iter().copied());
            key.extend(quantize(&(&v * v.adjoint())));
        }
        key
    }
}

fn quantize(m: &CMatrix) -> impl Iterator<Item = i64> + '_ {
    m.iter().flat_map(|z| [(z.re * 1e9).round() as i64, (z.im * 1e9).round() as i64])
}

/// Sort each group's projector key and return the combined key with the
/// groups in canonical order.
fn canonical_groups(groups: Vec<CMatrix>) -> (Vec<i64>, Vec<CMatrix>) {
    let mut keyed: Vec<(Vec<i64>, CMatrix)> = groups
        .into_iter()
        .map(|g| {
            let cols: Vec<CVector> = g.column_iter().map(|c| canonical_phase(&c.into_owned())).collect();
            let g = columns(&cols, g.nrows());
            (quantize(&(&g * g.adjoint())).collect(), g)
        })
        .collect();
    keyed.sort_by(|a, b| b.0.cmp(&a.0));
    let key = keyed.iter().flat_map(|(k, _)| k.iter().copied()).collect();
    (key, keyed.into_iter().map(|(_, g)| g).collect())
}

fn standard_candidates(local: &[CMatrix], r: usize, tol: f64) -> Vec<Vec<CMatrix>> {
    let unit = |i: usize| {
        let mut v = CVector::zeros(r);
        v[i] = C64::new(1.0, 0.0);
        v
    };
    let block = |idx: &[usize]| columns(&idx.iter().map(|&i| unit(i)).collect::<Vec<_>>(), r);
    let mut out = vec![(0..r).map(|i| block(&[i])).collect::<Vec<_>>()];

    // Union-find over frame indices connected through some state's support.
    let mut parent: Vec<usize> = (0..r).collect();
    fn find(parent: &mut [usize], i: usize) -> usize {
        let mut i = i;
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    let mut supported = vec![false; r];
    for x in local {
        let rows: Vec<usize> = (0..r).filter(|&i| x.row(i).norm_squared() > tol * tol).collect();
        for &i in &rows {
            supported[i] = true;
        }
        for w in rows.windows(2) {
            let (a, b) = (find(&mut parent, w[0]), find(&mut parent, w[1]));
            parent[a.max(b)] = a.min(b);
        }
    }
    let mut blocks: Vec<Vec<usize>> = Vec::new();
    let mut unsupported = Vec::new();
    for i in 0..r {
        if !supported[i] {
            unsupported.push(i);
            continue;
        }
        let root = find(&mut parent, i);
        match blocks.iter_mut().find(|b| b[0] == root) {
            Some(b) => b.push(i),
            None => blocks.push(vec![i]),
        }
    }
    if !unsupported.is_empty() {
        blocks.push(unsupported);
    }
    if blocks.len() >= 2 && blocks.len() < r {
        out.push(blocks.iter().map(|b| block(b)).collect());
    }
    out
}

/// Group eigenvectors of a Hermitian matrix into eigenspaces.
fn eigenspaces(h: &CMatrix) -> Vec<CMatrix> {
    let (values, vectors) = eigh(h);
    let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (i, v) in values.iter().enumerate() {
        match groups.last_mut() {
            Some(g) if (v - values[*g.last().unwrap()]).abs() <= 1e-8 * scale => g.push(i),
            _ => groups.push(vec![i]),
        }
    }
    groups
        .into_iter()
        .map(|g| columns(&g.iter().map(|&i| vectors.column(i).into_owned()).collect::<Vec<_>>(), h.nrows()))
        .collect()
}

fn cross_operator_candidates(cross: &[CMatrix], tol: f64) -> Vec<Vec<CMatrix>> {
    let mut out = Vec::new();
    for m in cross {
        let (h, k) = hermitian_parts(m);
        for part in [h, k] {
            if max_abs(&part) <= tol {
                continue;
            }
            let spaces = eigenspaces(&part);
            if spaces.iter().any(|s| s.ncols() > 1) {
                let rank_one: Vec<CMatrix> = spaces
                    .iter()
                    .flat_map(|s| s.column_iter().map(|c| CMatrix::from_columns(&[c.into_owned()])))
                    .collect();
                out.push(rank_one);
            }
            out.push(spaces);
        }
    }
    out
}

fn rank_one_groups(vectors: Vec<CVector>) -> Vec<CMatrix> {
    vectors.into_iter().map(|v| CMatrix::from_columns(&[v])).collect()
}

fn zero_diagonal_candidates(cross: &[CMatrix], r: usize, tol: f64) -> Vec<Vec<CMatrix>> {
    let mut out = Vec::new();
    if r == 2 {
        out.extend(bloch_null_candidates(cross, tol).into_iter().map(rank_one_groups));
    }
    for m in cross {
        if max_abs(m) <= tol {
            continue;
        }
        if let Some(b) = zero_diagonal_joint(m) {
            out.push(rank_one_groups(b));
        }
        let (h, k) = hermitian_parts(m);
        for part in [h, k] {
            if max_abs(&part) > tol {
                out.push(rank_one_groups(zero_diagonal_hermitian(&part)));
            }
        }
    }
    out
}

/// Orthonormal basis in which the traceless Hermitian `h` has zero diagonal.
///
/// Repeatedly mixes the top and bottom eigenvectors of the compression of
/// `h` so that the expectation cancels, then continues on the orthogonal
/// complement (where the compression stays traceless).
pub fn zero_diagonal_hermitian(h: &CMatrix) -> Vec<CVector> {
    let n = h.nrows();
    let mut sub = identity(n);
    let mut out = Vec::with_capacity(n);
    while sub.ncols() > 1 {
        let hs = sub.adjoint() * h * &sub;
        let (values, vectors) = eigh(&hs);
        let (lo, hi) = (values[0], values[values.len() - 1]);
        if hi - lo <= 1e-14 {
            out.extend((0..sub.ncols()).map(|i| &sub * vectors.column(i)));
            return out;
        }
        let cos2 = (-lo / (hi - lo)).clamp(0.0, 1.0);
        let v_local = vectors.column(values.len() - 1) * C64::new(cos2.sqrt(), 0.0)
            + vectors.column(0) * C64::new((1.0 - cos2).sqrt(), 0.0);
        let rest = complement_basis(&CMatrix::from_columns(&[v_local.clone()]));
        out.push(&sub * v_local);
        sub = &sub * rest;
    }
    out.push(sub.column(0).into_owned());
    out
}

/// A unit `v` in the 2-dimensional space with `⟨v|a|v⟩ = 0`, if one exists.
pub fn zero_expectation_2d(a: &CMatrix) -> Option<CVector> {
    let (a0, coeffs) = pauli_coefficients(a);
    let u = [coeffs[0].re, coeffs[1].re, coeffs[2].re];
    let w = [coeffs[0].im, coeffs[1].im, coeffs[2].im];
    let rhs = [-a0.re, -a0.im];
    let d = cross(u, w);
    let n = if norm3(d) > 1e-12 * (1.0 + norm3(u) * norm3(w)) {
        // Minimal-norm point of the line {u·n = rhs0, w·n = rhs1}.
        let (uu, uw, ww) = (dot3(u, u), dot3(u, w), dot3(w, w));
        let det = uu * ww - uw * uw;
        let alpha = (rhs[0] * ww - rhs[1] * uw) / det;
        let beta = (rhs[1] * uu - rhs[0] * uw) / det;
        let p = [alpha * u[0] + beta * w[0], alpha * u[1] + beta * w[1], alpha * u[2] + beta * w[2]];
        let p2 = dot3(p, p);
        if p2 > 1.0 + 1e-12 {
            return None;
        }
        let t = (1.0 - p2).max(0.0).sqrt() / norm3(d);
        [p[0] + t * d[0], p[1] + t * d[1], p[2] + t * d[2]]
    } else {
        let (g, scale) = if norm3(u) >= norm3(w) { (u, norm3(u)) } else { (w, norm3(w)) };
        if scale <= 1e-14 {
            if a0.norm() > 1e-12 {
                return None;
            }
            [0.0, 0.0, 1.0]
        } else {
            let g = [g[0] / scale, g[1] / scale, g[2] / scale];
            // Both equations are multiples of g·n = c.
            let (lu, lw) = (dot3(u, g), dot3(w, g));
            let c = (lu * rhs[0] + lw * rhs[1]) / (lu * lu + lw * lw);
            if (lu * c - rhs[0]).abs() > 1e-9 || (lw * c - rhs[1]).abs() > 1e-9 || c.abs() > 1.0 + 1e-12 {
                return None;
            }
            let h = perpendicular(g);
            let s = (1.0 - c * c).max(0.0).sqrt();
            [c * g[0] + s * h[0], c * g[1] + s * h[1], c * g[2] + s * h[2]]
        }
    };
    let len = norm3(n);
    Some(bloch_basis([n[0] / len, n[1] / len, n[2] / len]).0)
}

fn perpendicular(g: [f64; 3]) -> [f64; 3] {
    let axes = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let best = axes
        .iter()
        .map(|a| {
            let d = dot3(*a, g);
            [a[0] - d * g[0], a[1] - d * g[1], a[2] - d * g[2]]
        })
        .max_by(|a, b| norm3(*a).total_cmp(&norm3(*b)))
        .unwrap();
    let l = norm3(best);
    [best[0] / l, best[1] / l, best[2] / l]
}

/// Orthonormal basis with `⟨b|m|b⟩ = 0` for every member, for traceless `m`.
/// Exact in two dimensions; in higher dimensions each step looks for a
/// zero of the expectation on planes spanned by eigenvectors of the
/// Hermitian and anti-Hermitian parts, and gives up if none has one.
pub fn zero_diagonal_joint(m: &CMatrix) -> Option<Vec<CVector>> {
    let n = m.nrows();
    let mut sub = identity(n);
    let mut out = Vec::with_capacity(n);
    while sub.ncols() > 2 {
        let ms = sub.adjoint() * m * &sub;
        let k = ms.ncols();
        let (h, a) = hermitian_parts(&ms);
        let (_, hv) = eigh(&h);
        let (_, av) = eigh(&a);
        let mut planes: Vec<(CVector, CVector)> = vec![
            (hv.column(k - 1).into_owned(), hv.column(0).into_owned()),
            (av.column(k - 1).into_owned(), av.column(0).into_owned()),
        ];
        for basis in [&hv, &av] {
            for i in 0..k {
                for j in i + 1..k {
                    planes.push((basis.column(i).into_owned(), basis.column(j).into_owned()));
                }
            }
        }
        let found = planes.into_iter().find_map(|(x, y)| {
            let pair = CMatrix::from_columns(&[x, y]);
            zero_expectation_2d(&(pair.adjoint() * &ms * &pair)).map(|z| &pair * z)
        })?;
        let rest = complement_basis(&CMatrix::from_columns(&[found.clone()]));
        out.push(&sub * found);
        sub = &sub * rest;
    }
    if sub.ncols() == 2 {
        let ms = sub.adjoint() * m * &sub;
        let v = zero_expectation_2d(&ms)?;
        let w = CVector::from_vec(vec![-v[1].conj(), v[0].conj()]);
        out.push(&sub * v);
        out.push(&sub * w);
    } else {
        out.push(sub.column(0).into_owned());
    }
    Some(out)
}

/// Bases of a qubit frame valid for all cross operators at once: Bloch
/// directions orthogonal to every real and imaginary Pauli vector.
fn bloch_null_candidates(cross: &[CMatrix], tol: f64) -> Vec<Vec<CVector>> {
    let mut gram = Matrix3::<f64>::zeros();
    for m in cross {
        let (_, a) = pauli_coefficients(m);
        for v in [[a[0].re, a[1].re, a[2].re], [a[0].im, a[1].im, a[2].im]] {
            for i in 0..3 {
                for j in 0..3 {
                    gram[(i, j)] += v[i] * v[j];
                }
            }
        }
    }
    let eig = SymmetricEigen::new(gram);
    let top = eig.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b));
    let null: Vec<[f64; 3]> = (0..3)
        .filter(|&i| eig.eigenvalues[i] <= (tol * tol).max(1e-12 * top))
        .map(|i| {
            let c = eig.eigenvectors.column(i);
            [c[0], c[1], c[2]]
        })
        .collect();
    let directions: Vec<[f64; 3]> = match null.len() {
        0 => Vec::new(),
        1 => vec![null[0]],
        _ => {
            // Project the coordinate axes onto the null space.
            let mut dirs = Vec::new();
            for axis in [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]] {
                let mut p = [0.0; 3];
                for nv in &null {
                    let d = dot3(axis, *nv);
                    for k in 0..3 {
                        p[k] += d * nv[k];
                    }
                }
                if norm3(p) > 1e-6 {
                    let l = norm3(p);
                    dirs.push([p[0] / l, p[1] / l, p[2] / l]);
                }
            }
            dirs
        }
    };
    directions
        .into_iter()
        .map(|n| {
            let (up, down) = bloch_basis(n);
            vec![up, down]
        })
        .collect()
}

/// Bloch grid: polar angle in `[0, π/2]`, azimuth over a full turn (half a
/// turn on the equator, where antipodal directions give the same basis).
fn bloch_grid(step: f64) -> Vec<Vec<CMatrix>> {
    let polar_steps = ((PI / 2.0) / step).round() as usize;
    let azimuth_steps = ((2.0 * PI) / step).round() as usize;
    let mut out = Vec::new();
    for i in 0..=polar_steps {
        let theta = (i as f64 * step).min(PI / 2.0);
        let count = match i {
            0 => 1,
            _ if i == polar_steps => azimuth_steps / 2,
            _ => azimuth_steps,
        };
        for j in 0..count {
            let phi = j as f64 * step;
            let n = [theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()];
            let (up, down) = bloch_basis(n);
            out.push(rank_one_groups(vec![up, down]));
        }
    }
    out
}

fn user_candidates(frame: &CMatrix, party: Party, user: &[ProjectiveMeasurement], tol: f64) -> Vec<Vec<CMatrix>> {
    let mut out = Vec::new();
    for m in user.iter().filter(|m| m.party() == party) {
        let mut groups = Vec::new();
        let mut compatible = true;
        for p in m.projectors() {
            let compressed = frame.adjoint() * &p * frame;
            if max_abs(&(&compressed * &compressed - &compressed)) > 10.0 * tol {
                compatible = false;
                break;
            }
            let spaces = eigenspaces(&compressed);
            if let Some(one) = spaces.into_iter().last().filter(|s| (s.column(0).dotc(&(&compressed * s.column(0)))).re > 0.5) {
                groups.push(one);
            }
        }
        if compatible && groups.iter().map(|g| g.ncols()).sum::<usize>() == frame.ncols() {
            out.push(groups);
        }
    }
    out
}

/// Lift frame-coordinate groups to a complete measurement on the local
/// space, appending the frame's complement as a final outcome when needed.
fn lift(frame: &CMatrix, groups: &[CMatrix], party: Party, tol: f64) -> Option<ProjectiveMeasurement> {
    let mut outcomes: Vec<CMatrix> = groups
        .iter()
        .map(|g| {
            let cols: Vec<CVector> = (frame * g).column_iter().map(|c| canonical_phase(&c.into_owned())).collect();
            columns(&cols, frame.nrows())
        })
        .collect();
    if frame.ncols() < frame.nrows() {
        outcomes.push(complement_basis(frame));
    }
    ProjectiveMeasurement::new(party, outcomes, tol.max(1e-9)).ok()
}

struct Searcher<'a> {
    cfg: &'a SearchConfig,
    labels: &'a [String],
    dims: (usize, usize),
    stats: SearchStats,
    failed: HashSet<Vec<i64>>,
}

impl Searcher<'_> {
    fn parties(&self, last: Option<Party>) -> Vec<Party> {
        use Party::{Alice, Bob};
        match (self.cfg.party_order, last) {
            (PartyOrder::Free, _) | (PartyOrder::Alternate, None) => vec![Alice, Bob],
            (PartyOrder::AliceFirst, None) => vec![Alice],
            (PartyOrder::BobFirst, None) => vec![Bob],
            (_, Some(p)) => vec![p.other()],
        }
    }

    fn dfs(&mut self, node: &Node, depth: usize, last: Option<Party>) -> Option<ProtocolTree> {
        match node.states.as_slice() {
            [] => return Some(ProtocolTree::fail()),
            [(idx, _)] => return Some(ProtocolTree::identify(self.labels[*idx].clone())),
            _ => {}
        }
        if depth == 0 || self.stats.budget_exhausted {
            return None;
        }
        if self.stats.nodes_explored >= self.cfg.node_budget {
            self.stats.budget_exhausted = true;
            return None;
        }
        self.stats.nodes_explored += 1;
        let key = node.fingerprint(depth, last);
        if self.failed.contains(&key) {
            self.stats.memo_hits += 1;
            return None;
        }
        let tol = self.cfg.tolerance;
        for party in self.parties(last) {
            for cand in node.candidates(party, self.cfg) {
                self.stats.candidates_considered += 1;
                let Some(children) = node.split(party, &cand.groups, tol) else {
                    continue;
                };
                if children.iter().filter(|c| !c.states.is_empty()).count() < 2 {
                    continue;
                }
                self.stats.candidates_valid += 1;
                let mut subtrees = Vec::with_capacity(children.len() + 1);
                for child in &children {
                    match self.dfs(child, depth - 1, Some(party)) {
                        Some(t) => subtrees.push(t),
                        None => break,
                    }
                }
                if subtrees.len() < children.len() {
                    continue;
                }
                let frame = node.frame(party);
                if frame.ncols() < party.local_dim(self.dims) {
                    subtrees.push(ProtocolTree::fail());
                }
                if let Some(m) = lift(frame, &cand.groups, party, tol) {
                    return Some(ProtocolTree::measure(m, subtrees));
                }
            }
        }
        if !self.stats.budget_exhausted {
            self.failed.insert(key);
        }
        None
    }
}
