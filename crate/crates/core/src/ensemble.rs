//! Ensembles of mutually orthogonal bipartite states.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{cr, haar_unitary, CMatrix, CVector, C64, DEFAULT_TOL};
use crate::states::{inner_product, BipartiteState};

/// Names accepted by [`canned_example`].
pub const EXAMPLE_NAMES: [&str; 5] = ["bell4", "bell3", "bell2", "six4x4", "domino9"];

/// An ordered list of pairwise orthogonal states on a common space.
#[derive(Clone, Debug)]
pub struct Ensemble {
    dim_a: usize,
    dim_b: usize,
    states: Vec<BipartiteState>,
    labels: Vec<String>,
    max_overlap: f64,
    tolerance: f64,
}

impl Ensemble {
    pub fn new(states: Vec<BipartiteState>) -> Result<Self> {
        Self::with_tolerance(states, DEFAULT_TOL)
    }

    /// Validate orthogonality with a custom tolerance. Unnamed states are
    /// labelled `psi1`, `psi2`, ... by position.
    pub fn with_tolerance(states: Vec<BipartiteState>, tolerance: f64) -> Result<Self> {
        let first = states.first().ok_or(Error::Empty)?;
        let dims = first.dims();
        if let Some(bad) = states.iter().find(|s| s.dims() != dims) {
            return Err(Error::DimensionMismatch {
                expected: dims,
                found: bad.dims(),
            });
        }
        let capacity = dims.0 * dims.1;
        if states.len() > capacity {
            return Err(Error::TooManyStates {
                requested: states.len(),
                capacity,
            });
        }
        let labels: Vec<String> = states
            .iter()
            .enumerate()
            .map(|(i, s)| s.name().map_or_else(|| format!("psi{}", i + 1), str::to_owned))
            .collect();
        let mut seen = HashSet::new();
        for l in &labels {
            if !seen.insert(l.as_str()) {
                return Err(Error::DuplicateLabel(l.clone()));
            }
        }
        let mut max_overlap: f64 = 0.0;
        for i in 0..states.len() {
            for j in i + 1..states.len() {
                let overlap = inner_product(&states[i], &states[j])?.norm();
                if overlap > tolerance {
                    return Err(Error::NotOrthogonal {
                        first: i,
                        second: j,
                        overlap,
                    });
                }
                max_overlap = max_overlap.max(overlap);
            }
        }
        let states = states
            .into_iter()
            .zip(&labels)
            .map(|(s, l)| s.with_name(l.clone()))
            .collect();
        Ok(Self {
            dim_a: dims.0,
            dim_b: dims.1,
            states,
            labels,
            max_overlap,
            tolerance,
        })
    }

    pub fn dim_a(&self) -> usize {
        self.dim_a
    }

    pub fn dim_b(&self) -> usize {
        self.dim_b
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.dim_a, self.dim_b)
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[BipartiteState] {
        &self.states
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// Largest pairwise overlap magnitude seen during validation.
    pub fn max_overlap(&self) -> f64 {
        self.max_overlap
    }

    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }

    /// Sub-ensemble of the given positions, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let states = indices
            .iter()
            .map(|&i| self.states.get(i).cloned().ok_or(Error::Empty))
            .collect::<Result<Vec<_>>>()?;
        Self::with_tolerance(states, self.tolerance)
    }

    /// Matrix of pairwise inner products `G_ij = ⟨Ψ_i|Ψ_j⟩`.
    pub fn gram_matrix(&self) -> CMatrix {
        gram_matrix(self)
    }
}

pub fn gram_matrix(e: &Ensemble) -> CMatrix {
    let m = e.len();
    CMatrix::from_fn(m, m, |i, j| {
        inner_product(&e.states[i], &e.states[j]).expect("ensemble members share dimensions")
    })
}

fn state(dim_a: usize, dim_b: usize, name: &str, entries: &[(usize, usize, f64)]) -> BipartiteState {
    let mut m = CMatrix::zeros(dim_a, dim_b);
    for &(x, y, v) in entries {
        m[(x, y)] += cr(v);
    }
    BipartiteState::new(dim_a, dim_b, m, Some(name.to_owned())).expect("canned states are nonzero")
}

fn bell(k: usize) -> BipartiteState {
    let entries: &[(usize, usize, f64)] = match k {
        1 => &[(0, 0, 1.0), (1, 1, 1.0)],
        2 => &[(0, 0, 1.0), (1, 1, -1.0)],
        3 => &[(0, 1, 1.0), (1, 0, 1.0)],
        _ => &[(0, 1, 1.0), (1, 0, -1.0)],
    };
    state(2, 2, &format!("A{k}"), entries)
}

/// The six-state 4⊗4 ensemble: two copies of a three-state pattern, one in
/// the `{0,1}` block and one (with the parties' roles swapped) in `{2,3}`.
fn six4x4() -> Vec<BipartiteState> {
    vec![
        state(4, 4, "psi1", &[(0, 0, 1.0)]),
        state(4, 4, "psi2", &[(1, 0, 1.0), (1, 1, 1.0)]),
        state(4, 4, "psi3", &[(0, 1, 1.0), (1, 0, 1.0), (1, 1, -1.0)]),
        state(4, 4, "psi4", &[(2, 2, 1.0)]),
        state(4, 4, "psi5", &[(2, 3, 1.0), (3, 3, 1.0)]),
        state(4, 4, "psi6", &[(3, 2, 1.0), (2, 3, 1.0), (3, 3, -1.0)]),
    ]
}

/// Nine orthogonal product states on 3⊗3 that are known not to be locally
/// distinguishable (the "domino" states from the literature).
fn domino9() -> Vec<BipartiteState> {
    vec![
        state(3, 3, "d1", &[(1, 1, 1.0)]),
        state(3, 3, "d2", &[(0, 0, 1.0), (0, 1, 1.0)]),
        state(3, 3, "d3", &[(0, 0, 1.0), (0, 1, -1.0)]),
        state(3, 3, "d4", &[(2, 1, 1.0), (2, 2, 1.0)]),
        state(3, 3, "d5", &[(2, 1, 1.0), (2, 2, -1.0)]),
        state(3, 3, "d6", &[(1, 0, 1.0), (2, 0, 1.0)]),
        state(3, 3, "d7", &[(1, 0, 1.0), (2, 0, -1.0)]),
        state(3, 3, "d8", &[(0, 2, 1.0), (1, 2, 1.0)]),
        state(3, 3, "d9", &[(0, 2, 1.0), (1, 2, -1.0)]),
    ]
}

/// One of the built-in ensembles: `bell4`, `bell3`, `bell2`, `six4x4`, `domino9`.
pub fn canned_example(name: &str) -> Result<Ensemble> {
    let states = match name {
        "bell4" => (1..=4).map(bell).collect(),
        "bell3" => (1..=3).map(bell).collect(),
        "bell2" => (1..=2).map(bell).collect(),
        "six4x4" => six4x4(),
        "domino9" => domino9(),
        _ => return Err(Error::UnknownExample(name.to_owned())),
    };
    Ensemble::new(states)
}

/// How [`random_ensemble`] draws its states.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RandomKind {
    /// Members of a random local product basis `(U_A ⊗ U_B)|x⟩|y⟩`.
    ProductBasis,
    /// Columns of a Haar-random unitary on the joint space.
    HaarOrthogonal,
}

impl FromStr for RandomKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "product-basis" | "product" => Ok(Self::ProductBasis),
            "haar-orthogonal" | "haar" => Ok(Self::HaarOrthogonal),
            other => Err(format!("unknown ensemble kind {other:?}")),
        }
    }
}

impl fmt::Display for RandomKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::ProductBasis => "product-basis",
            Self::HaarOrthogonal => "haar-orthogonal",
        })
    }
}

/// Seeded random orthonormal ensemble of `m` states.
pub fn random_ensemble(dim_a: usize, dim_b: usize, m: usize, seed: u64, kind: RandomKind) -> Result<Ensemble> {
    let capacity = dim_a * dim_b;
    if m > capacity {
        return Err(Error::TooManyStates { requested: m, capacity });
    }
    if m == 0 {
        return Err(Error::Empty);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let states = match kind {
        RandomKind::ProductBasis => {
            let u_a = haar_unitary(dim_a, &mut rng);
            let u_b = haar_unitary(dim_b, &mut rng);
            let mut picks: Vec<usize> = (0..capacity).collect();
            picks.shuffle(&mut rng);
            picks
                .into_iter()
                .take(m)
                .map(|k| {
                    let (x, y) = (k / dim_b, k % dim_b);
                    let a: CVector = u_a.column(x).into_owned();
                    let b: CVector = u_b.column(y).into_owned();
                    BipartiteState::product(&a, &b)
                })
                .collect::<Result<Vec<_>>>()?
        }
        RandomKind::HaarOrthogonal => {
            let u = haar_unitary(capacity, &mut rng);
            (0..m)
                .map(|k| {
                    let col = u.column(k);
                    let amps: Vec<C64> = col.iter().copied().collect();
                    BipartiteState::from_row_slice(dim_a, dim_b, &amps)
                })
                .collect::<Result<Vec<_>>>()?
        }
    };
    Ensemble::new(states)
}
