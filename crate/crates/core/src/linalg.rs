//! Small dense complex linear-algebra helpers shared by the other modules.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

/// Default numerical tolerance for orthogonality, probabilities and projector laws.
pub const DEFAULT_TOL: f64 = 1e-9;

/// Relative singular-value cutoff used to count Schmidt terms.
pub const RANK_CUTOFF: f64 = 1e-9;

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn cr(re: f64) -> C64 {
    C64::new(re, 0.0)
}

/// Largest entry magnitude.
pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn identity(n: usize) -> CMatrix {
    CMatrix::identity(n, n)
}

/// `max |U†U - I|` over entries.
pub fn unitarity_deviation(u: &CMatrix) -> f64 {
    if u.nrows() != u.ncols() {
        return f64::INFINITY;
    }
    max_abs(&(u.adjoint() * u - identity(u.ncols())))
}

/// `max |V†V - I|` for a matrix whose columns should be orthonormal.
pub fn orthonormality_deviation(cols: &CMatrix) -> f64 {
    max_abs(&(cols.adjoint() * cols - identity(cols.ncols())))
}

/// Orthogonal projector onto the span of orthonormal columns.
pub fn projector(cols: &CMatrix) -> CMatrix {
    cols * cols.adjoint()
}

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.kronecker(b)
}

/// Stack column vectors into a matrix.
pub fn columns(vectors: &[CVector], rows: usize) -> CMatrix {
    if vectors.is_empty() {
        return CMatrix::zeros(rows, 0);
    }
    CMatrix::from_columns(vectors)
}

/// Orthonormal basis of the orthogonal complement of the span of `cols`
/// (assumed orthonormal), built by Gram–Schmidt over the standard basis so
/// that coordinate-aligned complements come out coordinate-aligned.
pub fn complement_basis(cols: &CMatrix) -> CMatrix {
    let dim = cols.nrows();
    let want = dim.saturating_sub(cols.ncols());
    let mut basis: Vec<CVector> = cols.column_iter().map(|c| c.into_owned()).collect();
    let mut out: Vec<CVector> = Vec::with_capacity(want);
    let mut used = vec![false; dim];
    while out.len() < want {
        let residuals: Vec<Option<CVector>> = (0..dim)
            .map(|i| {
                if used[i] {
                    return None;
                }
                let mut v = CVector::zeros(dim);
                v[i] = cr(1.0);
                for _ in 0..2 {
                    for b in &basis {
                        let coeff = b.dotc(&v);
                        v -= b * coeff;
                    }
                }
                Some(v)
            })
            .collect();
        let best = residuals
            .iter()
            .flatten()
            .map(|v| v.norm())
            .fold(0.0, f64::max);
        if best < 1e-12 {
            break;
        }
        let (idx, v) = residuals
            .into_iter()
            .enumerate()
            .find_map(|(i, r)| r.filter(|v| v.norm() >= 0.5 * best).map(|v| (i, v)))
            .expect("a residual above half the maximum exists");
        used[idx] = true;
        let v = v.unscale(v.norm());
        basis.push(v.clone());
        out.push(v);
    }
    columns(&out, dim)
}

/// Rotate the global phase of `v` so that its first non-negligible entry is real and positive.
pub fn canonical_phase(v: &CVector) -> CVector {
    let scale = v.iter().map(|z| z.norm()).fold(0.0, f64::max);
    match v.iter().find(|z| z.norm() > 1e-9 * scale.max(1e-300)) {
        Some(z) => {
            let phase = z.conj() / z.norm();
            v * phase
        }
        None => v.clone(),
    }
}

/// Eigen-decomposition of a Hermitian matrix with eigenvalues in ascending order.
pub fn eigh(h: &CMatrix) -> (Vec<f64>, CMatrix) {
    let sym = (h + h.adjoint()).scale(0.5);
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors: Vec<CVector> = order
        .iter()
        .map(|&i| canonical_phase(&eig.eigenvectors.column(i).into_owned()))
        .collect();
    (values, columns(&vectors, h.nrows()))
}

/// Hermitian and anti-Hermitian parts: `m = h + i k` with `h`, `k` Hermitian.
pub fn hermitian_parts(m: &CMatrix) -> (CMatrix, CMatrix) {
    let adj = m.adjoint();
    let h = (m + &adj).scale(0.5);
    let k = (m - &adj) * c(0.0, -0.5);
    (h, k)
}

/// Pauli coefficients of a 2×2 matrix: `m = a0·I + a·σ` with complex `a0`, `a`.
pub fn pauli_coefficients(m: &CMatrix) -> (C64, [C64; 3]) {
    let a0 = (m[(0, 0)] + m[(1, 1)]) * 0.5;
    let ax = (m[(0, 1)] + m[(1, 0)]) * 0.5;
    let ay = (m[(1, 0)] - m[(0, 1)]) * c(0.0, -0.5);
    let az = (m[(0, 0)] - m[(1, 1)]) * 0.5;
    (a0, [ax, ay, az])
}

/// Qubit vector with Bloch vector `n` (unit length), and its orthogonal partner.
pub fn bloch_basis(n: [f64; 3]) -> (CVector, CVector) {
    let theta = n[2].clamp(-1.0, 1.0).acos();
    let phi = n[1].atan2(n[0]);
    let (s, co) = ((theta / 2.0).sin(), (theta / 2.0).cos());
    let e = C64::from_polar(1.0, phi);
    let up = CVector::from_vec(vec![cr(co), e * s]);
    let down = CVector::from_vec(vec![cr(-s), e * co]);
    (canonical_phase(&up), canonical_phase(&down))
}

pub fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn norm3(a: [f64; 3]) -> f64 {
    dot3(a, a).sqrt()
}

/// Haar-random unitary from the QR decomposition of a complex Ginibre matrix.
pub fn haar_unitary<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> CMatrix {
    let g = random_gaussian_matrix(dim, dim, rng);
    let qr = g.qr();
    let (q, r) = (qr.q(), qr.r());
    let mut u = q;
    for j in 0..dim {
        let d = r[(j, j)];
        let phase = if d.norm() > 0.0 { d / d.norm() } else { cr(1.0) };
        let mut col = u.column_mut(j);
        col *= phase;
    }
    u
}

/// Matrix of i.i.d. standard complex Gaussian entries.
pub fn random_gaussian_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> CMatrix {
    CMatrix::from_fn(rows, cols, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        c(re, im)
    })
}
