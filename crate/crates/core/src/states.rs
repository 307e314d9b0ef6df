//! Bipartite pure states and their Schmidt structure.
//!
//! A state on `C^{N_a} ⊗ C^{N_b}` is stored as its `N_a × N_b` amplitude
//! matrix: entry `(x, y)` is the coefficient of `|x⟩_A|y⟩_B`. Local unitaries
//! act as `U_A · C · U_Bᵀ`, and the Schmidt decomposition is the singular
//! value decomposition of `C`.

use crate::error::{Error, Result};
use crate::linalg::{unitarity_deviation, CMatrix, CVector, C64, RANK_CUTOFF};

/// Pure state of a two-party system, normalized at construction.
#[derive(Clone, Debug, PartialEq)]
pub struct BipartiteState {
    dim_a: usize,
    dim_b: usize,
    amplitudes: CMatrix,
    name: Option<String>,
    normalization: f64,
}

impl BipartiteState {
    /// Build a state from an amplitude matrix, rescaling it to unit norm.
    pub fn new(
        dim_a: usize,
        dim_b: usize,
        amplitudes: CMatrix,
        name: Option<String>,
    ) -> Result<Self> {
        if dim_a == 0 || dim_b == 0 || amplitudes.shape() != (dim_a, dim_b) {
            return Err(Error::ShapeMismatch {
                expected: (dim_a, dim_b),
                found: amplitudes.shape(),
            });
        }
        let norm = amplitudes.norm();
        if !norm.is_finite() {
            return Err(Error::DecompositionFailure("non-finite amplitudes".into()));
        }
        if norm == 0.0 {
            return Err(Error::ZeroState);
        }
        // Leave already-normalized input bit-for-bit untouched.
        let (amplitudes, normalization) = if (norm - 1.0).abs() <= 4.0 * f64::EPSILON {
            (amplitudes, 1.0)
        } else {
            (amplitudes.unscale(norm), 1.0 / norm)
        };
        Ok(Self {
            dim_a,
            dim_b,
            amplitudes,
            name,
            normalization,
        })
    }

    /// Build a state from row-major amplitudes.
    pub fn from_row_slice(dim_a: usize, dim_b: usize, amplitudes: &[C64]) -> Result<Self> {
        if amplitudes.len() != dim_a * dim_b {
            return Err(Error::ShapeMismatch {
                expected: (dim_a, dim_b),
                found: (amplitudes.len() / dim_b.max(1), dim_b),
            });
        }
        Self::new(dim_a, dim_b, CMatrix::from_row_slice(dim_a, dim_b, amplitudes), None)
    }

    /// The product state `|alice⟩|bob⟩`.
    pub fn product(alice: &CVector, bob: &CVector) -> Result<Self> {
        Self::new(alice.len(), bob.len(), alice * bob.transpose(), None)
    }

    /// The computational basis state `|x⟩|y⟩`.
    pub fn basis(dim_a: usize, dim_b: usize, x: usize, y: usize) -> Result<Self> {
        let mut m = CMatrix::zeros(dim_a, dim_b);
        if x >= dim_a || y >= dim_b {
            return Err(Error::ShapeMismatch {
                expected: (dim_a, dim_b),
                found: (x + 1, y + 1),
            });
        }
        m[(x, y)] = C64::new(1.0, 0.0);
        Self::new(dim_a, dim_b, m, None)
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = Some(name.into());
        self
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

    pub fn amplitudes(&self) -> &CMatrix {
        &self.amplitudes
    }

    pub fn name(&self) -> Option<&str> {
        self.name.as_deref()
    }

    /// Factor that was applied to the input amplitudes to normalize them.
    pub fn normalization(&self) -> f64 {
        self.normalization
    }

    /// Amplitudes as a joint vector indexed by `x * dim_b + y`.
    pub fn to_vector(&self) -> CVector {
        CVector::from_iterator(
            self.dim_a * self.dim_b,
            (0..self.dim_a).flat_map(|x| (0..self.dim_b).map(move |y| (x, y))).map(|(x, y)| self.amplitudes[(x, y)]),
        )
    }

    /// `⟨self|other⟩`.
    pub fn inner_product(&self, other: &Self) -> Result<C64> {
        inner_product(self, other)
    }

    pub fn schmidt(&self) -> Result<SchmidtDecomposition> {
        schmidt_decompose(self)
    }

    pub fn schmidt_number(&self) -> Result<usize> {
        schmidt_number(self)
    }
}

/// `⟨s|t⟩ = Σ conj(s_xy) t_xy`.
pub fn inner_product(s: &BipartiteState, t: &BipartiteState) -> Result<C64> {
    if s.dims() != t.dims() {
        return Err(Error::ShapeMismatch {
            expected: s.dims(),
            found: t.dims(),
        });
    }
    Ok(s
        .amplitudes
        .iter()
        .zip(t.amplitudes.iter())
        .map(|(a, b)| a.conj() * b)
        .sum())
}

/// Schmidt form `Σ √P_i |ν_i⟩|η_i⟩` of a pure state.
#[derive(Clone, Debug)]
pub struct SchmidtDecomposition {
    /// Schmidt weights `P_i`, descending.
    pub weights: Vec<f64>,
    pub alice_vectors: Vec<CVector>,
    pub bob_vectors: Vec<CVector>,
    pub schmidt_number: usize,
    /// All singular values, descending, including the ones below the cutoff.
    pub singular_values: Vec<f64>,
    /// Some singular value lies within a factor of ten of the rank cutoff.
    pub borderline: bool,
}

impl SchmidtDecomposition {
    /// `Σ √P_i ν_i η_iᵀ`, which should reproduce the amplitude matrix.
    pub fn reconstruct(&self) -> CMatrix {
        let rows = self.alice_vectors.first().map_or(0, |v| v.len());
        let cols = self.bob_vectors.first().map_or(0, |v| v.len());
        let mut out = CMatrix::zeros(rows, cols);
        for ((p, nu), eta) in self.weights.iter().zip(&self.alice_vectors).zip(&self.bob_vectors) {
            out += nu * eta.transpose() * C64::new(p.sqrt(), 0.0);
        }
        out
    }

    pub fn is_product(&self) -> bool {
        self.schmidt_number == 1
    }
}

pub fn schmidt_decompose(s: &BipartiteState) -> Result<SchmidtDecomposition> {
    let svd = s.amplitudes.clone().svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::DecompositionFailure("SVD returned no vectors".into())),
    };
    let sigma = svd.singular_values;
    if sigma.iter().any(|x| !x.is_finite()) {
        return Err(Error::DecompositionFailure("non-finite singular value".into()));
    }
    let mut order: Vec<usize> = (0..sigma.len()).collect();
    order.sort_by(|&a, &b| sigma[b].total_cmp(&sigma[a]));
    let singular_values: Vec<f64> = order.iter().map(|&i| sigma[i]).collect();
    let sigma_max = singular_values.first().copied().unwrap_or(0.0);
    let cutoff = RANK_CUTOFF * sigma_max;
    let borderline = singular_values
        .iter()
        .any(|&x| x > cutoff / 10.0 && x < cutoff * 10.0);

    let mut weights = Vec::new();
    let mut alice_vectors = Vec::new();
    let mut bob_vectors = Vec::new();
    for &i in order.iter().filter(|&&i| sigma[i] > cutoff) {
        weights.push(sigma[i] * sigma[i]);
        alice_vectors.push(u.column(i).into_owned());
        // amplitudes = Σ σ u_i (row i of V†), so η_i is that row read as a column.
        bob_vectors.push(v_t.row(i).transpose());
    }
    Ok(SchmidtDecomposition {
        schmidt_number: weights.len(),
        weights,
        alice_vectors,
        bob_vectors,
        singular_values,
        borderline,
    })
}

pub fn schmidt_number(s: &BipartiteState) -> Result<usize> {
    Ok(schmidt_decompose(s)?.schmidt_number)
}

/// `(U_A ⊗ U_B)|s⟩`, i.e. amplitudes `U_A · C · U_Bᵀ`.
pub fn apply_local_unitary(s: &BipartiteState, u_a: &CMatrix, u_b: &CMatrix) -> Result<BipartiteState> {
    if u_a.shape() != (s.dim_a, s.dim_a) {
        return Err(Error::ShapeMismatch {
            expected: (s.dim_a, s.dim_a),
            found: u_a.shape(),
        });
    }
    if u_b.shape() != (s.dim_b, s.dim_b) {
        return Err(Error::ShapeMismatch {
            expected: (s.dim_b, s.dim_b),
            found: u_b.shape(),
        });
    }
    let deviation = unitarity_deviation(u_a).max(unitarity_deviation(u_b));
    if deviation > crate::linalg::DEFAULT_TOL {
        return Err(Error::NotUnitary { deviation });
    }
    let amplitudes = u_a * &s.amplitudes * u_b.transpose();
    BipartiteState::new(s.dim_a, s.dim_b, amplitudes, s.name.clone())
}

/// Frobenius distance between two amplitude matrices.
pub fn amplitude_distance(a: &CMatrix, b: &CMatrix) -> f64 {
    if a.shape() != b.shape() {
        return f64::INFINITY;
    }
    (a - b).norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{cr, haar_unitary, identity, max_abs};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const S: f64 = std::f64::consts::FRAC_1_SQRT_2;

    fn m2(a: [f64; 4]) -> CMatrix {
        CMatrix::from_row_slice(2, 2, &a.map(cr))
    }

    fn bell(k: usize) -> BipartiteState {
        let m = match k {
            1 => [1., 0., 0., 1.],
            2 => [1., 0., 0., -1.],
            3 => [0., 1., 1., 0.],
            _ => [0., 1., -1., 0.],
        };
        BipartiteState::new(2, 2, m2(m), Some(format!("A{k}"))).unwrap()
    }

    fn psi3() -> BipartiteState {
        // |0⟩|1⟩ + |1⟩(|0⟩ − |1⟩)
        BipartiteState::new(2, 2, m2([0., 1., 1., -1.]), None).unwrap()
    }

    #[test]
    fn make_state_normalizes() {
        let s = bell(1);
        assert!((s.amplitudes()[(0, 0)].re - S).abs() < 1e-15);
        assert!((s.amplitudes()[(1, 1)].re - S).abs() < 1e-15);
        assert!((s.normalization() - S).abs() < 1e-15);
        assert_eq!(s.name(), Some("A1"));
    }

    #[test]
    fn normalized_input_is_untouched() {
        let s = BipartiteState::basis(2, 2, 0, 0).unwrap();
        assert_eq!(s.amplitudes(), &m2([1., 0., 0., 0.]));
        assert_eq!(s.normalization(), 1.0);
    }

    #[test]
    fn zero_and_misshaped_inputs_fail() {
        assert_eq!(
            BipartiteState::new(2, 2, CMatrix::zeros(2, 2), None).unwrap_err(),
            Error::ZeroState
        );
        assert!(matches!(
            BipartiteState::new(2, 3, CMatrix::zeros(2, 2), None),
            Err(Error::ShapeMismatch { .. })
        ));
        assert!(matches!(
            BipartiteState::new(0, 2, CMatrix::zeros(0, 2), None),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn inner_products() {
        assert!(inner_product(&bell(1), &bell(2)).unwrap().norm() < 1e-15);
        let z = BipartiteState::basis(2, 2, 0, 0).unwrap();
        assert!((inner_product(&z, &z).unwrap() - cr(1.0)).norm() < 1e-15);
        // |1⟩(|0⟩+|1⟩) against |0,1⟩+|1,0⟩−|1,1⟩: 0 + 1 − 1
        let psi2 = BipartiteState::new(2, 2, m2([0., 0., 1., 1.]), None).unwrap();
        assert!(inner_product(&psi2, &psi3()).unwrap().norm() < 1e-15);
        assert!(inner_product(&z, &BipartiteState::basis(2, 3, 0, 0).unwrap()).is_err());
    }

    #[test]
    fn inner_product_is_conjugate_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = crate::linalg::random_gaussian_matrix(3, 2, &mut rng);
        let b = crate::linalg::random_gaussian_matrix(3, 2, &mut rng);
        let s = BipartiteState::new(3, 2, a, None).unwrap();
        let t = BipartiteState::new(3, 2, b, None).unwrap();
        let st = inner_product(&s, &t).unwrap();
        let ts = inner_product(&t, &s).unwrap();
        assert!((st - ts.conj()).norm() < 1e-12);
    }

    #[test]
    fn schmidt_of_bell_state() {
        let d = schmidt_decompose(&bell(1)).unwrap();
        assert_eq!(d.schmidt_number, 2);
        assert!((d.weights[0] - 0.5).abs() < 1e-12 && (d.weights[1] - 0.5).abs() < 1e-12);
        assert!(amplitude_distance(&d.reconstruct(), bell(1).amplitudes()) < 1e-12);
        assert_eq!(schmidt_number(&bell(4)).unwrap(), 2);
    }

    #[test]
    fn schmidt_of_product_state() {
        let d = schmidt_decompose(&BipartiteState::basis(2, 2, 0, 0).unwrap()).unwrap();
        assert_eq!(d.schmidt_number, 1);
        assert!((d.weights[0] - 1.0).abs() < 1e-12);
        let s = BipartiteState::basis(4, 4, 2, 2).unwrap();
        assert_eq!(schmidt_number(&s).unwrap(), 1);
    }

    #[test]
    fn schmidt_of_psi3_matches_quadratic_oracle() {
        // (1/3) M M† with M = [[0,1],[1,-1]] is (1/3)[[1,-1],[-1,2]];
        // eigenvalues from the characteristic polynomial λ² - tλ + det.
        let (a, b, d): (f64, f64, f64) = (1.0 / 3.0, -1.0 / 3.0, 2.0 / 3.0);
        let t = a + d;
        let det = a * d - b * b;
        let disc = (t * t - 4.0 * det).sqrt();
        let expected = [(t + disc) / 2.0, (t - disc) / 2.0];
        let dec = schmidt_decompose(&psi3()).unwrap();
        assert_eq!(dec.schmidt_number, 2);
        assert!((dec.weights[0] - expected[0]).abs() < 1e-12);
        assert!((dec.weights[1] - expected[1]).abs() < 1e-12);
        // closed form (3 ± √5)/6
        assert!((expected[0] - (3.0 + 5f64.sqrt()) / 6.0).abs() < 1e-15);
    }

    #[test]
    fn schmidt_vectors_are_orthonormal_for_rectangular_states() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let s = BipartiteState::new(2, 5, crate::linalg::random_gaussian_matrix(2, 5, &mut rng), None).unwrap();
        let d = s.schmidt().unwrap();
        assert_eq!(d.schmidt_number, 2);
        for (i, u) in d.bob_vectors.iter().enumerate() {
            for (j, v) in d.bob_vectors.iter().enumerate() {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((u.dotc(v).norm() - expect).abs() < 1e-12);
            }
        }
        assert!(amplitude_distance(&d.reconstruct(), s.amplitudes()) < 1e-12);
    }

    #[test]
    fn borderline_rank_is_flagged() {
        let s = BipartiteState::new(2, 2, m2([1., 0., 0., 2e-9]), None).unwrap();
        let d = s.schmidt().unwrap();
        assert_eq!(d.schmidt_number, 2);
        assert!(d.borderline);
        assert!(!bell(1).schmidt().unwrap().borderline);
    }

    #[test]
    fn local_unitaries() {
        let z = BipartiteState::basis(2, 2, 0, 0).unwrap();
        let same = apply_local_unitary(&z, &identity(2), &identity(2)).unwrap();
        assert_eq!(same.amplitudes(), z.amplitudes());

        let x = m2([0., 1., 1., 0.]);
        let flipped = apply_local_unitary(&z, &x, &identity(2)).unwrap();
        assert_eq!(flipped.amplitudes(), BipartiteState::basis(2, 2, 1, 0).unwrap().amplitudes());

        // H·diag(1,1)/√2·Hᵀ = I/√2 because H is real orthogonal and symmetric.
        let h = m2([S, S, S, -S]);
        let out = apply_local_unitary(&bell(1), &h, &h).unwrap();
        let oracle = &h * bell(1).amplitudes() * h.transpose();
        assert!(max_abs(&(out.amplitudes() - &oracle)) < 1e-15);
        assert!(max_abs(&(out.amplitudes() - bell(1).amplitudes())) < 1e-15);

        let not_unitary = m2([1., 1., 0., 1.]);
        assert!(matches!(
            apply_local_unitary(&z, &not_unitary, &identity(2)),
            Err(Error::NotUnitary { .. })
        ));
    }

    #[test]
    fn local_unitaries_keep_schmidt_number() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let ua = haar_unitary(2, &mut rng);
        let ub = haar_unitary(2, &mut rng);
        let s = apply_local_unitary(&bell(1), &ua, &ub).unwrap();
        assert_eq!(schmidt_number(&s).unwrap(), 2);
        let p = apply_local_unitary(&BipartiteState::basis(2, 2, 1, 0).unwrap(), &ua, &ub).unwrap();
        assert_eq!(schmidt_number(&p).unwrap(), 1);
    }
}
