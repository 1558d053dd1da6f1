//! Dense complex matrices and a cyclic Jacobi eigensolver for small Hermitian
//! operators.
//!
//! Everything here works on row-major `Vec<Complex64>` storage. The matrices
//! in this crate never exceed 12×12, so clarity wins over blocking or SIMD.

use std::fmt;
use std::ops::{Add, Index, IndexMut, Mul, Sub};

use num_complex::Complex64;
use thiserror::Error;

/// Largest dimension accepted by [`hermitian_eigen`].
pub const MAX_EIGEN_DIM: usize = 64;

/// Relative Hermiticity tolerance applied before diagonalization.
pub const HERMITIAN_TOL: f64 = 1e-10;

/// Default relative off-diagonal tolerance for the Jacobi iteration.
pub const DEFAULT_EIGEN_TOL: f64 = 1e-12;

/// Sweep cap for the Jacobi iteration.
pub const MAX_SWEEPS: usize = 100;

const C0: Complex64 = Complex64::new(0.0, 0.0);
const C1: Complex64 = Complex64::new(1.0, 0.0);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EigenError {
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix dimension {0} exceeds the supported maximum of {MAX_EIGEN_DIM}")]
    TooLarge(usize),
    #[error("matrix is not Hermitian: max|M - M^H| = {deviation:e} (scale {scale:e})")]
    NotHermitian { deviation: f64, scale: f64 },
    #[error("matrix has non-finite entries")]
    NonFinite,
    #[error("Jacobi iteration did not converge after {sweeps} sweeps (off-diagonal norm {residual:e})")]
    NoConvergence { sweeps: usize, residual: f64 },
}

/// Dense complex matrix in row-major order.
#[derive(Clone, PartialEq)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl ComplexMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Self {
            rows,
            cols,
            data: vec![C0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = C1;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    /// Builds a matrix from row-major entries.
    ///
    /// Panics if `data.len() != rows * cols`.
    pub fn from_row_slice(rows: usize, cols: usize, data: &[Complex64]) -> Self {
        assert_eq!(data.len(), rows * cols, "entry count must equal rows*cols");
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Self {
            rows,
            cols,
            data: data.to_vec(),
        }
    }

    pub fn from_real_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        Self::from_fn(r, c, |i, j| Complex64::new(rows[i][j], 0.0))
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = Complex64::new(d, 0.0);
        }
        m
    }

    /// Outer product `|u><v|`.
    pub fn outer(u: &[Complex64], v: &[Complex64]) -> Self {
        Self::from_fn(u.len(), v.len(), |i, j| u[i] * v[j].conj())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn column(&self, j: usize) -> Vec<Complex64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)].conj())
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|z| z * s).collect(),
        }
    }

    pub fn trace(&self) -> Complex64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    /// Largest entry modulus.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// `max|M - M^H|`; infinite for non-square input.
    pub fn hermitian_deviation(&self) -> f64 {
        if !self.is_square() {
            return f64::INFINITY;
        }
        let mut dev: f64 = 0.0;
        for i in 0..self.rows {
            for j in i..self.cols {
                dev = dev.max((self[(i, j)] - self[(j, i)].conj()).norm());
            }
        }
        dev
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// `<u| M |v>` for a square matrix.
    pub fn expectation(&self, u: &[Complex64], v: &[Complex64]) -> Complex64 {
        let mut acc = C0;
        for i in 0..self.rows {
            let mut row = C0;
            for j in 0..self.cols {
                row += self[(i, j)] * v[j];
            }
            acc += u[i].conj() * row;
        }
        acc
    }

    /// Matrix-vector product.
    pub fn apply(&self, v: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(v.len(), self.cols);
        (0..self.rows)
            .map(|i| (0..self.cols).map(|j| self[(i, j)] * v[j]).sum())
            .collect()
    }

    /// Largest entry modulus of `self - other`.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}

impl Index<(usize, usize)> for ComplexMatrix {
    type Output = Complex64;

    fn index(&self, (i, j): (usize, usize)) -> &Complex64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for ComplexMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Complex64 {
        &mut self.data[i * self.cols + j]
    }
}

impl Add for &ComplexMatrix {
    type Output = ComplexMatrix;

    fn add(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols), "shape mismatch in add");
        ComplexMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &ComplexMatrix {
    type Output = ComplexMatrix;

    fn sub(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols), "shape mismatch in sub");
        ComplexMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }
}

impl Mul for &ComplexMatrix {
    type Output = ComplexMatrix;

    fn mul(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!(self.cols, rhs.rows, "shape mismatch in mul");
        let mut out = ComplexMatrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == C0 {
                    continue;
                }
                for j in 0..rhs.cols {
                    out[(i, j)] += a * rhs[(k, j)];
                }
            }
        }
        out
    }
}

impl fmt::Debug for ComplexMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "ComplexMatrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            write!(f, "  ")?;
            for j in 0..self.cols {
                let z = self[(i, j)];
                write!(f, "{:>9.4}{:+.4}i ", z.re, z.im)?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    let (ar, ac, br, bc) = (a.rows, a.cols, b.rows, b.cols);
    ComplexMatrix::from_fn(ar * br, ac * bc, |i, j| a[(i / br, j / bc)] * b[(i % br, j % bc)])
}

/// Spectral decomposition of a Hermitian matrix: ascending eigenvalues and
/// the matching unit eigenvectors stored as columns.
#[derive(Debug, Clone)]
pub struct EigenSystem {
    pub values: Vec<f64>,
    pub vectors: ComplexMatrix,
    pub sweeps: usize,
}

impl EigenSystem {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn vector(&self, k: usize) -> Vec<Complex64> {
        self.vectors.column(k)
    }

    /// `V diag(values) V^H`.
    pub fn reconstruct(&self) -> ComplexMatrix {
        let n = self.dim();
        ComplexMatrix::from_fn(n, n, |i, j| {
            (0..n)
                .map(|k| self.vectors[(i, k)] * self.values[k] * self.vectors[(j, k)].conj())
                .sum()
        })
    }

    /// `max|V^H V - I|`.
    pub fn orthonormality_residual(&self) -> f64 {
        let n = self.dim();
        let gram = &self.vectors.adjoint() * &self.vectors;
        gram.max_abs_diff(&ComplexMatrix::identity(n))
    }
}

/// Diagonalizes a Hermitian matrix with cyclic complex Jacobi rotations.
///
/// `tol` bounds the off-diagonal Frobenius norm relative to the Frobenius norm
/// of the input. Eigenvalues come back ascending; each eigenvector is phased so
/// its first non-negligible component is real and positive, and eigenvectors
/// of a degenerate cluster are ordered by the position of that component.
pub fn hermitian_eigen(m: &ComplexMatrix, tol: f64) -> Result<EigenSystem, EigenError> {
    if !m.is_square() {
        return Err(EigenError::NotSquare {
            rows: m.rows,
            cols: m.cols,
        });
    }
    let n = m.rows;
    if n > MAX_EIGEN_DIM {
        return Err(EigenError::TooLarge(n));
    }
    if !m.is_finite() {
        return Err(EigenError::NonFinite);
    }
    let scale = m.max_abs();
    let deviation = m.hermitian_deviation();
    if deviation > HERMITIAN_TOL * scale {
        return Err(EigenError::NotHermitian { deviation, scale });
    }

    // work on the exactly Hermitian part
    let mut a = ComplexMatrix::from_fn(n, n, |i, j| 0.5 * (m[(i, j)] + m[(j, i)].conj()));
    for i in 0..n {
        a[(i, i)].im = 0.0;
    }
    let mut v = ComplexMatrix::identity(n);
    let target = tol * a.frobenius_norm();

    let mut sweeps = 0;
    loop {
        let off = off_diagonal_norm(&a);
        if off <= target {
            break;
        }
        if sweeps == MAX_SWEEPS {
            return Err(EigenError::NoConvergence {
                sweeps,
                residual: off,
            });
        }
        sweeps += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                rotate(&mut a, &mut v, p, q);
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].re.total_cmp(&a[(j, j)].re));
    let values: Vec<f64> = order.iter().map(|&k| a[(k, k)].re).collect();
    let mut vectors = ComplexMatrix::from_fn(n, n, |i, j| v[(i, order[j])]);
    normalize_phases(&mut vectors);
    let mut system = EigenSystem {
        values,
        vectors,
        sweeps,
    };
    order_degenerate_clusters(&mut system, scale);
    Ok(system)
}

fn off_diagonal_norm(a: &ComplexMatrix) -> f64 {
    let n = a.rows;
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a[(i, j)].norm_sqr();
            }
        }
    }
    s.sqrt()
}

/// One complex Jacobi rotation annihilating `a[p][q]`.
fn rotate(a: &mut ComplexMatrix, v: &mut ComplexMatrix, p: usize, q: usize) {
    let apq = a[(p, q)];
    let r = apq.norm();
    if r == 0.0 {
        return;
    }
    let app = a[(p, p)].re;
    let aqq = a[(q, q)].re;
    // phase that makes the pivot real: diag(1, e^{-i theta}) applied on the right
    let phase = apq / r;
    let tau = (aqq - app) / (2.0 * r);
    let t = if tau >= 0.0 {
        1.0 / (tau + (1.0 + tau * tau).sqrt())
    } else {
        -1.0 / (-tau + (1.0 + tau * tau).sqrt())
    };
    let c = 1.0 / (1.0 + t * t).sqrt();
    let s = t * c;
    let n = a.rows;
    let e = phase.conj();

    // A <- A U with U = [[c, s], [-s e, c e]] on columns (p, q)
    for k in 0..n {
        let akp = a[(k, p)];
        let akq = a[(k, q)];
        a[(k, p)] = akp * c - akq * e * s;
        a[(k, q)] = akp * s + akq * e * c;
    }
    // A <- U^H A on rows (p, q)
    for k in 0..n {
        let apk = a[(p, k)];
        let aqk = a[(q, k)];
        a[(p, k)] = apk * c - aqk * e.conj() * s;
        a[(q, k)] = apk * s + aqk * e.conj() * c;
    }
    a[(p, q)] = C0;
    a[(q, p)] = C0;
    a[(p, p)].im = 0.0;
    a[(q, q)].im = 0.0;

    for k in 0..n {
        let vkp = v[(k, p)];
        let vkq = v[(k, q)];
        v[(k, p)] = vkp * c - vkq * e * s;
        v[(k, q)] = vkp * s + vkq * e * c;
    }
}

const PHASE_EPS: f64 = 1e-8;

fn leading_component(v: &ComplexMatrix, col: usize) -> usize {
    (0..v.rows)
        .find(|&i| v[(i, col)].norm() > PHASE_EPS)
        .unwrap_or(0)
}

fn normalize_phases(v: &mut ComplexMatrix) {
    for col in 0..v.cols {
        let lead = v[(leading_component(v, col), col)];
        let norm = lead.norm();
        if norm == 0.0 {
            continue;
        }
        let fix = lead.conj() / norm;
        for i in 0..v.rows {
            v[(i, col)] *= fix;
        }
    }
}

fn order_degenerate_clusters(sys: &mut EigenSystem, scale: f64) {
    let n = sys.dim();
    let eps = 1e-10 * scale.max(1.0);
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && sys.values[end] - sys.values[end - 1] <= eps {
            end += 1;
        }
        if end - start > 1 {
            let mut cols: Vec<usize> = (start..end).collect();
            cols.sort_by(|&a, &b| {
                let la = leading_component(&sys.vectors, a);
                let lb = leading_component(&sys.vectors, b);
                la.cmp(&lb).then_with(|| {
                    sys.vectors[(lb, b)]
                        .norm()
                        .total_cmp(&sys.vectors[(la, a)].norm())
                })
            });
            let snapshot = sys.vectors.clone();
            let vals = sys.values.clone();
            for (slot, &src) in (start..end).zip(&cols) {
                sys.values[slot] = vals[src];
                for i in 0..n {
                    sys.vectors[(i, slot)] = snapshot[(i, src)];
                }
            }
        }
        start = end;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_hermitian(rng: &mut ChaCha8Rng, n: usize) -> ComplexMatrix {
        let mut m = ComplexMatrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = c(rng.random_range(-5.0..5.0), 0.0);
            for j in (i + 1)..n {
                let z = c(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
                m[(i, j)] = z;
                m[(j, i)] = z.conj();
            }
        }
        m
    }

    #[test]
    fn diagonal_input_sorted() {
        let m = ComplexMatrix::from_diagonal(&[3.0, 1.0, 2.0]);
        let es = hermitian_eigen(&m, DEFAULT_EIGEN_TOL).unwrap();
        assert_eq!(es.values, vec![1.0, 2.0, 3.0]);
        // permutation eigenvectors
        assert_abs_diff_eq!(es.vectors[(1, 0)].re, 1.0);
        assert_abs_diff_eq!(es.vectors[(2, 1)].re, 1.0);
        assert_abs_diff_eq!(es.vectors[(0, 2)].re, 1.0);
    }

    #[test]
    fn two_by_two_analytic() {
        let lz = 5.3;
        let m = ComplexMatrix::from_real_rows(&[&[0.0, lz], &[lz, 0.0]]);
        let es = hermitian_eigen(&m, DEFAULT_EIGEN_TOL).unwrap();
        assert_abs_diff_eq!(es.values[0], -lz, epsilon = 1e-12);
        assert_abs_diff_eq!(es.values[1], lz, epsilon = 1e-12);
    }

    #[test]
    fn complex_two_by_two() {
        // [[1, i], [-i, 1]] has eigenvalues 0 and 2
        let m = ComplexMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.0, 1.0), c(0.0, -1.0), c(1.0, 0.0)]);
        let es = hermitian_eigen(&m, DEFAULT_EIGEN_TOL).unwrap();
        assert_abs_diff_eq!(es.values[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(es.values[1], 2.0, epsilon = 1e-12);
        assert!(es.reconstruct().max_abs_diff(&m) < 1e-12);
    }

    #[test]
    fn rejects_non_square() {
        let m = ComplexMatrix::zeros(2, 3);
        assert!(matches!(
            hermitian_eigen(&m, DEFAULT_EIGEN_TOL),
            Err(EigenError::NotSquare { rows: 2, cols: 3 })
        ));
    }

    #[test]
    fn rejects_non_hermitian() {
        let m = ComplexMatrix::from_real_rows(&[&[1.0, 2.0], &[0.0, 1.0]]);
        assert!(matches!(
            hermitian_eigen(&m, DEFAULT_EIGEN_TOL),
            Err(EigenError::NotHermitian { .. })
        ));
    }

    #[test]
    fn tiny_asymmetry_within_tolerance_is_accepted() {
        let mut m = ComplexMatrix::from_real_rows(&[&[1.0, 2.0], &[2.0, 1.0]]);
        m[(0, 1)] += c(1e-12, 0.0);
        assert!(hermitian_eigen(&m, DEFAULT_EIGEN_TOL).is_ok());
    }

    #[test]
    fn rejects_oversized() {
        let m = ComplexMatrix::identity(MAX_EIGEN_DIM + 1);
        assert!(matches!(
            hermitian_eigen(&m, DEFAULT_EIGEN_TOL),
            Err(EigenError::TooLarge(_))
        ));
    }

    #[test]
    fn reports_non_convergence_with_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = random_hermitian(&mut rng, 8);
        // a negative tolerance can never be met
        match hermitian_eigen(&m, -1.0) {
            Err(EigenError::NoConvergence { sweeps, residual }) => {
                assert_eq!(sweeps, MAX_SWEEPS);
                assert!(residual >= 0.0);
            }
            other => panic!("expected NoConvergence, got {other:?}"),
        }
    }

    #[test]
    fn zero_matrix() {
        let es = hermitian_eigen(&ComplexMatrix::zeros(4, 4), DEFAULT_EIGEN_TOL).unwrap();
        assert!(es.values.iter().all(|&v| v == 0.0));
        assert!(es.orthonormality_residual() < 1e-15);
    }

    #[test]
    fn kron_identities() {
        let i6 = kron(&ComplexMatrix::identity(2), &ComplexMatrix::identity(3));
        assert_eq!(i6, ComplexMatrix::identity(6));
        let k = kron(
            &ComplexMatrix::from_diagonal(&[1.0, -1.0]),
            &ComplexMatrix::from_diagonal(&[1.0, 1.0, 0.0]),
        );
        assert_eq!(k, ComplexMatrix::from_diagonal(&[1.0, 1.0, 0.0, -1.0, -1.0, 0.0]));
    }

    #[test]
    fn kron_mixed_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut rnd = |n| {
            ComplexMatrix::from_fn(n, n, |_, _| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        };
        for _ in 0..50 {
            let (a, b, cm, d) = (rnd(2), rnd(3), rnd(2), rnd(3));
            let lhs = &kron(&a, &b) * &kron(&cm, &d);
            let rhs = kron(&(&a * &cm), &(&b * &d));
            assert!(lhs.max_abs_diff(&rhs) < 1e-12);
        }
    }

    #[test]
    fn trace_equals_eigenvalue_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let m = random_hermitian(&mut rng, 6);
            let es = hermitian_eigen(&m, DEFAULT_EIGEN_TOL).unwrap();
            let sum: f64 = es.values.iter().sum();
            assert!((sum - m.trace().re).abs() < 1e-10);
        }
    }

    #[test]
    fn row_permutation_only_permutes_vectors() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let perm = [3, 0, 5, 1, 4, 2];
        for _ in 0..50 {
            let m = random_hermitian(&mut rng, 6);
            let pm = ComplexMatrix::from_fn(6, 6, |i, j| m[(perm[i], perm[j])]);
            let a = hermitian_eigen(&m, DEFAULT_EIGEN_TOL).unwrap();
            let b = hermitian_eigen(&pm, DEFAULT_EIGEN_TOL).unwrap();
            for k in 0..6 {
                assert!((a.values[k] - b.values[k]).abs() < 1e-10);
                for i in 0..6 {
                    let lhs = b.vectors[(i, k)].norm();
                    let rhs = a.vectors[(perm[i], k)].norm();
                    assert!((lhs - rhs).abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn deterministic_for_identical_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let m = random_hermitian(&mut rng, 6);
        let a = hermitian_eigen(&m, DEFAULT_EIGEN_TOL).unwrap();
        let b = hermitian_eigen(&m, DEFAULT_EIGEN_TOL).unwrap();
        assert_eq!(a.values, b.values);
        assert_eq!(a.vectors, b.vectors);
    }

    #[test]
    fn leading_component_is_real_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = random_hermitian(&mut rng, 5);
        let es = hermitian_eigen(&m, DEFAULT_EIGEN_TOL).unwrap();
        for k in 0..5 {
            let lead = es.vectors[(leading_component(&es.vectors, k), k)];
            assert!(lead.re > 0.0);
            assert!(lead.im.abs() < 1e-14);
        }
    }
}
