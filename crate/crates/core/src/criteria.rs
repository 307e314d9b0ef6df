//! Decision criteria for local distinguishability.
//!
//! - [`theorem2_check`]: if the Schmidt numbers of the states add up to more
//!   than `N_a · N_b`, no LOCC protocol can tell the states apart.
//! - [`certificate_check`]: a set of orthogonal product vectors that is itself
//!   locally distinguishable, together with a disjoint assignment writing each
//!   state as a superposition of its own vectors, proves that the ensemble is
//!   distinguishable. The product-set protocol is turned into a protocol for
//!   the ensemble by relabeling its leaves.
//! - [`classify_2x2`]: complete answer on `C^2 ⊗ C^2`. Two states are always
//!   distinguishable, three are iff at most one is entangled, four are iff all
//!   four are product states.
//!
//! The certificate semantics assume every final measurement element factors
//! as a product operator, which holds for the projective protocol trees used
//! here; separable measurements that are not of that form are out of scope.

use std::collections::HashMap;

use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::linalg::{complement_basis, CMatrix, CVector, C64};
use crate::protocol::{verify_protocol, Leaf, Party, ProjectiveMeasurement, ProtocolTree, VerificationReport};
use crate::search::{cross_operators, search_protocol, zero_diagonal_joint, SearchConfig, SearchOutcome};
use crate::states::BipartiteState;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Theorem2Verdict {
    /// The Schmidt numbers exceed the joint dimension: provably not distinguishable.
    ViolatesNecessary,
    Inconclusive,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Theorem2Report {
    pub schmidt_numbers: Vec<usize>,
    pub sum: usize,
    pub capacity: usize,
    pub verdict: Theorem2Verdict,
    /// Labels of states whose rank decision sits close to the cutoff.
    pub borderline: Vec<String>,
}

/// Compare the sum of Schmidt numbers with `N_a · N_b`.
pub fn theorem2_check(e: &Ensemble) -> Theorem2Report {
    let mut schmidt_numbers = Vec::with_capacity(e.len());
    let mut borderline = Vec::new();
    for (s, label) in e.states().iter().zip(e.labels()) {
        match s.schmidt() {
            Ok(d) => {
                if d.borderline {
                    borderline.push(label.clone());
                }
                schmidt_numbers.push(d.schmidt_number.max(1));
            }
            // A valid state has rank at least one.
            Err(_) => {
                borderline.push(label.clone());
                schmidt_numbers.push(1);
            }
        }
    }
    let sum = schmidt_numbers.iter().sum();
    let capacity = e.dim_a() * e.dim_b();
    let verdict = if sum > capacity {
        Theorem2Verdict::ViolatesNecessary
    } else {
        Theorem2Verdict::Inconclusive
    };
    Theorem2Report {
        schmidt_numbers,
        sum,
        capacity,
        verdict,
        borderline,
    }
}

/// The joint vector `|alice⟩|bob⟩`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProductVector {
    pub alice: CVector,
    pub bob: CVector,
}

impl ProductVector {
    pub fn new(alice: CVector, bob: CVector) -> Self {
        Self { alice, bob }
    }

    /// Amplitude matrix `alice · bobᵀ`.
    pub fn amplitudes(&self) -> CMatrix {
        &self.alice * self.bob.transpose()
    }

    /// `⟨self|other⟩ = ⟨a|a'⟩⟨b|b'⟩`.
    pub fn inner(&self, other: &Self) -> C64 {
        self.alice.dotc(&other.alice) * self.bob.dotc(&other.bob)
    }
}

/// The expansion of one ensemble state in its own product vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct AssignedState {
    pub state: String,
    /// Indices into the certificate's product vectors.
    pub vectors: Vec<usize>,
    pub coefficients: Vec<C64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Certificate {
    pub product_vectors: Vec<ProductVector>,
    pub assignment: Vec<AssignedState>,
}

#[derive(Clone, Debug)]
pub struct CertificateReport {
    /// Protocol identifying each product vector (leaves `v0`, `v1`, ...).
    pub product_set_protocol: ProtocolTree,
    /// The same tree with leaves relabeled to the owning ensemble states.
    pub protocol: ProtocolTree,
    pub verification: VerificationReport,
    /// Frobenius error of each state's expansion, in ensemble order.
    pub reconstruction_errors: Vec<f64>,
    pub max_vector_overlap: f64,
}

/// Check a product-vector certificate with the default search settings.
pub fn certificate_check(e: &Ensemble, c: &Certificate) -> Result<CertificateReport> {
    let cfg = SearchConfig {
        tolerance: e.tolerance(),
        ..SearchConfig::default()
    };
    certificate_check_with(e, c, &cfg)
}

/// Validate the certificate, find a protocol for its product vectors, and
/// confirm that the relabeled protocol identifies every ensemble state.
pub fn certificate_check_with(e: &Ensemble, c: &Certificate, cfg: &SearchConfig) -> Result<CertificateReport> {
    let tol = cfg.tolerance;
    let (dim_a, dim_b) = e.dims();
    for v in &c.product_vectors {
        if v.alice.len() != dim_a || v.bob.len() != dim_b {
            return Err(Error::DimensionMismatch {
                expected: (dim_a, dim_b),
                found: (v.alice.len(), v.bob.len()),
            });
        }
    }
    let owner = check_assignment(e, c)?;

    let mut max_vector_overlap: f64 = 0.0;
    for (i, v) in c.product_vectors.iter().enumerate() {
        let norm_error = (v.inner(v).re - 1.0).abs();
        if norm_error > tol {
            return Err(Error::VectorsNotOrthogonal {
                first: i,
                second: i,
                overlap: norm_error,
            });
        }
        for (j, w) in c.product_vectors.iter().enumerate().skip(i + 1) {
            let overlap = v.inner(w).norm();
            max_vector_overlap = max_vector_overlap.max(overlap);
            if overlap > tol {
                return Err(Error::VectorsNotOrthogonal {
                    first: i,
                    second: j,
                    overlap,
                });
            }
        }
    }

    let mut reconstruction_errors = vec![0.0; e.len()];
    for a in &c.assignment {
        let idx = e.index_of(&a.state).expect("assignment labels were checked");
        let mut sum = CMatrix::zeros(dim_a, dim_b);
        for (&k, coeff) in a.vectors.iter().zip(&a.coefficients) {
            sum += c.product_vectors[k].amplitudes() * *coeff;
        }
        let error = (sum - e.states()[idx].amplitudes()).norm();
        if error > tol {
            return Err(Error::ReconstructionFailure {
                state: a.state.clone(),
                error,
            });
        }
        reconstruction_errors[idx] = error;
    }

    let product_set_protocol = match product_set_distinguishable(&c.product_vectors, e.dims(), cfg)? {
        ProductSetVerdict::Yes(t) => t,
        ProductSetVerdict::NoProtocolFound { depth } => return Err(Error::ProductSetNotDistinguishable { depth }),
    };
    let protocol = product_set_protocol.map_leaves(&mut |leaf| match leaf {
        Leaf::Identify(l) => l
            .strip_prefix('v')
            .and_then(|k| k.parse::<usize>().ok())
            .and_then(|k| owner.get(&k))
            .map_or(Leaf::Fail, |s| Leaf::Identify(s.clone())),
        Leaf::Fail => Leaf::Fail,
    });
    let verification = verify_protocol(&protocol, e, tol)?;
    if !verification.success {
        return Err(Error::ProtocolConstruction(format!(
            "relabeled product-set protocol does not identify the ensemble: {}",
            verification.issues.join("; ")
        )));
    }
    Ok(CertificateReport {
        product_set_protocol,
        protocol,
        verification,
        reconstruction_errors,
        max_vector_overlap,
    })
}

/// Map from product-vector index to the label of the state that owns it.
fn check_assignment(e: &Ensemble, c: &Certificate) -> Result<HashMap<usize, String>> {
    let bad = |msg: String| Err(Error::BadAssignment(msg));
    let mut owner: HashMap<usize, String> = HashMap::new();
    let mut seen = vec![false; e.len()];
    for a in &c.assignment {
        let Some(idx) = e.index_of(&a.state) else {
            return bad(format!("unknown state {:?}", a.state));
        };
        if seen[idx] {
            return bad(format!("state {:?} is assigned twice", a.state));
        }
        seen[idx] = true;
        if a.vectors.is_empty() {
            return bad(format!("state {:?} has no product vectors", a.state));
        }
        if a.vectors.len() != a.coefficients.len() {
            return bad(format!(
                "state {:?} has {} vectors but {} coefficients",
                a.state,
                a.vectors.len(),
                a.coefficients.len()
            ));
        }
        for &k in &a.vectors {
            if k >= c.product_vectors.len() {
                return bad(format!("state {:?} refers to missing vector {k}", a.state));
            }
            if let Some(prev) = owner.insert(k, a.state.clone()) {
                return bad(format!("vector {k} is assigned to both {prev:?} and {:?}", a.state));
            }
        }
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return bad(format!("state {:?} has no assignment", e.labels()[missing]));
    }
    Ok(owner)
}

#[derive(Clone, Debug)]
pub enum ProductSetVerdict {
    Yes(ProtocolTree),
    /// The bounded search gave up; this is not a proof of impossibility.
    NoProtocolFound { depth: usize },
}

/// Search for a protocol identifying each of the orthogonal product vectors.
/// Leaves are labeled `v0`, `v1`, ... by position.
pub fn product_set_distinguishable(
    vectors: &[ProductVector],
    dims: (usize, usize),
    cfg: &SearchConfig,
) -> Result<ProductSetVerdict> {
    let states = vectors
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let s = BipartiteState::product(&v.alice, &v.bob)?;
            if s.dims() != dims {
                return Err(Error::DimensionMismatch {
                    expected: dims,
                    found: s.dims(),
                });
            }
            Ok(s.with_name(format!("v{i}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let e = Ensemble::with_tolerance(states, cfg.tolerance)?;
    Ok(match search_protocol(&e, cfg)?.outcome {
        SearchOutcome::Yes(t) => ProductSetVerdict::Yes(t),
        _ => ProductSetVerdict::NoProtocolFound { depth: cfg.max_depth },
    })
}

#[derive(Clone, Debug)]
pub enum Classification2x2 {
    Distinguishable {
        protocol: ProtocolTree,
        /// How the protocol was obtained.
        method: String,
    },
    Indistinguishable {
        reason: String,
        theorem2: Theorem2Report,
    },
}

impl Classification2x2 {
    pub fn is_distinguishable(&self) -> bool {
        matches!(self, Self::Distinguishable { .. })
    }

    pub fn protocol(&self) -> Option<&ProtocolTree> {
        match self {
            Self::Distinguishable { protocol, .. } => Some(protocol),
            Self::Indistinguishable { .. } => None,
        }
    }
}

/// Complete classification of 1 to 4 orthogonal states on a 2⊗2 system.
pub fn classify_2x2(e: &Ensemble) -> Result<Classification2x2> {
    if e.dims() != (2, 2) || e.is_empty() || e.len() > 4 {
        return Err(Error::WrongDimensions {
            dim_a: e.dim_a(),
            dim_b: e.dim_b(),
            states: e.len(),
        });
    }
    let tol = e.tolerance();
    let theorem2 = theorem2_check(e);
    let entangled: Vec<&str> = theorem2
        .schmidt_numbers
        .iter()
        .zip(e.labels())
        .filter(|(n, _)| **n > 1)
        .map(|(_, l)| l.as_str())
        .collect();
    let distinguishable = match e.len() {
        1 | 2 => true,
        3 => entangled.len() <= 1,
        _ => entangled.is_empty(),
    };
    if !distinguishable {
        let reason = if e.len() == 3 {
            format!("{} of three states are entangled ({})", entangled.len(), entangled.join(", "))
        } else {
            format!("four states including entangled ones ({})", entangled.join(", "))
        };
        return Ok(Classification2x2::Indistinguishable { reason, theorem2 });
    }

    if e.len() == 1 {
        return Ok(Classification2x2::Distinguishable {
            protocol: ProtocolTree::identify(e.labels()[0].clone()),
            method: "single state".into(),
        });
    }
    if e.len() == 2 {
        let cfg = SearchConfig {
            tolerance: tol,
            ..SearchConfig::default()
        };
        if let SearchOutcome::Yes(protocol) = search_protocol(e, &cfg)?.outcome {
            return Ok(Classification2x2::Distinguishable {
                protocol,
                method: "search".into(),
            });
        }
    }
    for (party, basis, origin) in first_round_bases(e) {
        if let Some(protocol) = two_round_protocol(e, party, &basis, tol)? {
            return Ok(Classification2x2::Distinguishable {
                protocol,
                method: format!("two rounds, {party} first in the {origin} basis"),
            });
        }
    }
    let cfg = SearchConfig {
        tolerance: tol,
        ..SearchConfig::exhaustive_2d()
    };
    if let SearchOutcome::Yes(protocol) = search_protocol(e, &cfg)?.outcome {
        return Ok(Classification2x2::Distinguishable {
            protocol,
            method: "exhaustive search".into(),
        });
    }
    Err(Error::ProtocolConstruction(
        "no verified protocol for an ensemble classified as distinguishable".into(),
    ))
}

/// Candidate first-round bases: each product state's local factor with its
/// complement, zero-diagonal bases of the cross operators, and the
/// computational basis. Alice's candidates come first.
fn first_round_bases(e: &Ensemble) -> Vec<(Party, Vec<CVector>, &'static str)> {
    let mut out = Vec::new();
    let crosses = cross_operators(e);
    for party in [Party::Alice, Party::Bob] {
        let dim = party.local_dim(e.dims());
        for s in e.states() {
            let Ok(d) = s.schmidt() else { continue };
            if !d.is_product() {
                continue;
            }
            let factor = match party {
                Party::Alice => d.alice_vectors[0].clone(),
                Party::Bob => d.bob_vectors[0].clone(),
            };
            let rest = complement_basis(&CMatrix::from_columns(&[factor.clone()]));
            let mut basis = vec![factor];
            basis.extend(rest.column_iter().map(|c| c.into_owned()));
            out.push((party, basis, "product-factor"));
        }
        for x in &crosses {
            let m = match party {
                Party::Alice => &x.alice_side,
                Party::Bob => &x.bob_side,
            };
            if let Some(basis) = zero_diagonal_joint(m) {
                out.push((party, basis, "zero-diagonal"));
            }
        }
        let standard = (0..dim).map(|i| crate::protocol::basis_vector(dim, i)).collect();
        out.push((party, standard, "computational"));
    }
    out
}

/// `party` measures in `basis`; in each outcome the other party measures in
/// a basis containing the survivors' local vectors. Returns the tree only if
/// it verifies.
fn two_round_protocol(e: &Ensemble, party: Party, basis: &[CVector], tol: f64) -> Result<Option<ProtocolTree>> {
    let Ok(first) = ProjectiveMeasurement::from_basis(party, basis) else {
        return Ok(None);
    };
    let other = party.other();
    let other_dim = other.local_dim(e.dims());
    let mut children = Vec::with_capacity(basis.len());
    for u in basis {
        // Local vector left on the other side after projecting onto `u`.
        let mut survivors: Vec<(String, CVector)> = Vec::new();
        for (s, label) in e.states().iter().zip(e.labels()) {
            let c = s.amplitudes();
            let w: CVector = match party {
                Party::Alice => (u.adjoint() * c).transpose(),
                Party::Bob => c * u.conjugate(),
            };
            let p = w.norm_squared();
            if p > tol {
                survivors.push((label.clone(), w.unscale(p.sqrt())));
            }
        }
        let child = match survivors.len() {
            0 => ProtocolTree::fail(),
            1 => ProtocolTree::identify(survivors[0].0.clone()),
            n if n <= other_dim => {
                let ws: Vec<CVector> = survivors.iter().map(|(_, w)| w.clone()).collect();
                let cols = CMatrix::from_columns(&ws);
                if crate::linalg::orthonormality_deviation(&cols) > tol.sqrt() {
                    return Ok(None);
                }
                // Re-orthonormalize so the measurement passes its own checks.
                let q = cols.clone().qr().q();
                let ortho: Vec<CVector> = (0..n)
                    .map(|k| {
                        let qk = q.column(k).into_owned();
                        let phase = qk.dotc(&ws[k]);
                        qk * (phase / phase.norm())
                    })
                    .collect();
                let rest = complement_basis(&CMatrix::from_columns(&ortho));
                let mut full = ortho;
                full.extend(rest.column_iter().map(|c| c.into_owned()));
                let Ok(second) = ProjectiveMeasurement::from_basis(other, &full) else {
                    return Ok(None);
                };
                let leaves = (0..other_dim)
                    .map(|k| match survivors.get(k) {
                        Some((label, _)) => ProtocolTree::identify(label.clone()),
                        None => ProtocolTree::fail(),
                    })
                    .collect();
                ProtocolTree::measure(second, leaves)
            }
            _ => return Ok(None),
        };
        children.push(child);
    }
    let tree = ProtocolTree::measure(first, children);
    Ok(verify_protocol(&tree, e, tol)?.success.then_some(tree))
}
