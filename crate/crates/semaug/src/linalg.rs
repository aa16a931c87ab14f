//! Dense vector and matrix primitives used across the crate.
//!
//! Row-major `f64` storage with plain-loop arithmetic in a fixed accumulation
//! order, so identical inputs give bitwise identical results no matter how
//! rows are batched. On top of the primitives sit the statistical routines
//! the estimators and the verification suite share: per-set mean, population
//! covariance, jittered Cholesky factorization, and Gaussian sampling.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Dense vector of 64-bit reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Vector {
    data: Vec<f64>,
}

impl Vector {
    pub fn new(data: Vec<f64>) -> Self {
        Self { data }
    }

    pub fn zeros(dim: usize) -> Self {
        Self { data: vec![0.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.data.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn dot(&self, other: &Vector) -> f64 {
        assert_eq!(self.dim(), other.dim(), "dot product dimension mismatch");
        let mut acc = 0.0;
        for i in 0..self.data.len() {
            acc += self.data[i] * other.data[i];
        }
        acc
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn add(&self, other: &Vector) -> Vector {
        assert_eq!(self.dim(), other.dim(), "vector add dimension mismatch");
        Vector::new(self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect())
    }

    pub fn sub(&self, other: &Vector) -> Vector {
        assert_eq!(self.dim(), other.dim(), "vector sub dimension mismatch");
        Vector::new(self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect())
    }

    pub fn scale(&self, s: f64) -> Vector {
        Vector::new(self.data.iter().map(|a| a * s).collect())
    }

    /// self += s * other, in place.
    pub fn scaled_add_assign(&mut self, other: &Vector, s: f64) {
        assert_eq!(self.dim(), other.dim(), "vector add dimension mismatch");
        for i in 0..self.data.len() {
            self.data[i] += s * other.data[i];
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

impl std::ops::Index<usize> for Vector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.data[i]
    }
}

impl std::ops::IndexMut<usize> for Vector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.data[i]
    }
}

/// Dense row-major matrix of 64-bit reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "matrix {rows}x{cols} needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map(|r| r.len()).unwrap_or(0);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::Dimension(format!(
                    "row {i} has {} entries, expected {cols}",
                    r.len()
                )));
            }
        }
        Ok(Self { rows: rows.len(), cols, data: rows.concat() })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn set_row(&mut self, r: usize, values: &[f64]) {
        assert_eq!(values.len(), self.cols, "row width mismatch");
        self.row_mut(r).copy_from_slice(values);
    }

    pub fn row_vector(&self, r: usize) -> Vector {
        Vector::new(self.row(r).to_vec())
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[(j, i)] = self[(i, j)];
            }
        }
        out
    }

    /// self (m x k) * other (k x n).
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::Dimension(format!(
                "matmul {}x{} * {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for j in 0..other.cols {
                let mut acc = 0.0;
                for k in 0..self.cols {
                    acc += self[(i, k)] * other[(k, j)];
                }
                out[(i, j)] = acc;
            }
        }
        Ok(out)
    }

    /// self (m x k) * other^T (k x n), with other stored n x k.
    pub fn matmul_transpose(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(Error::Dimension(format!(
                "matmul_transpose {}x{} * ({}x{})^T",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            for j in 0..other.rows {
                let mut acc = 0.0;
                for k in 0..self.cols {
                    acc += self[(i, k)] * other[(j, k)];
                }
                out[(i, j)] = acc;
            }
        }
        Ok(out)
    }

    /// self^T (k x m) * other (m x n), with self stored m x k.
    pub fn transpose_matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(Error::Dimension(format!(
                "transpose_matmul ({}x{})^T * {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.cols, other.cols);
        for i in 0..self.cols {
            for j in 0..other.cols {
                let mut acc = 0.0;
                for r in 0..self.rows {
                    acc += self[(r, i)] * other[(r, j)];
                }
                out[(i, j)] = acc;
            }
        }
        Ok(out)
    }

    pub fn mul_vector(&self, v: &Vector) -> Result<Vector> {
        if self.cols != v.dim() {
            return Err(Error::Dimension(format!(
                "matvec {}x{} * {}",
                self.rows,
                self.cols,
                v.dim()
            )));
        }
        let mut out = Vector::zeros(self.rows);
        for i in 0..self.rows {
            let mut acc = 0.0;
            for j in 0..self.cols {
                acc += self[(i, j)] * v[j];
            }
            out[i] = acc;
        }
        Ok(out)
    }

    pub fn add_assign(&mut self, other: &Matrix) {
        self.scaled_add_assign(other, 1.0);
    }

    /// self += s * other, in place.
    pub fn scaled_add_assign(&mut self, other: &Matrix, s: f64) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols), "matrix add shape mismatch");
        for i in 0..self.data.len() {
            self.data[i] += s * other.data[i];
        }
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|x| x * s).collect() }
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols), "matrix sub shape mismatch");
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }

    /// Rank-one update: self += s * a * b^T.
    pub fn add_outer_scaled(&mut self, a: &[f64], b: &[f64], s: f64) {
        assert_eq!(a.len(), self.rows, "outer product row mismatch");
        assert_eq!(b.len(), self.cols, "outer product col mismatch");
        for i in 0..self.rows {
            for j in 0..self.cols {
                self.data[i * self.cols + j] += s * a[i] * b[j];
            }
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        let mut acc = 0.0;
        for x in &self.data {
            acc += x * x;
        }
        acc.sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|x| *x == 0.0)
    }

    pub fn is_symmetric_within(&self, tol: f64) -> bool {
        if self.rows != self.cols {
            return false;
        }
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                if (self[(i, j)] - self[(j, i)]).abs() > tol {
                    return false;
                }
            }
        }
        true
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn col_sums(&self) -> Vector {
        let mut out = Vector::zeros(self.cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[j] += self[(i, j)];
            }
        }
        out
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

/// Arithmetic mean of a non-empty sample set.
pub fn mean(samples: &[Vector]) -> Result<Vector> {
    let first = samples.first().ok_or(Error::EmptyClass)?;
    let dim = first.dim();
    let mut acc = Vector::zeros(dim);
    for s in samples {
        if s.dim() != dim {
            return Err(Error::Dimension(format!(
                "mean over mixed dimensions {} and {}",
                dim,
                s.dim()
            )));
        }
        acc.scaled_add_assign(s, 1.0);
    }
    Ok(acc.scale(1.0 / samples.len() as f64))
}

/// Population covariance around an explicit center: (1/n) sum (x - c)(x - c)^T.
///
/// Accumulated sample-major so the result is symmetric to the last bit.
pub fn covariance(samples: &[Vector], center: &Vector) -> Result<Matrix> {
    if samples.is_empty() {
        return Err(Error::EmptyClass);
    }
    let dim = center.dim();
    let mut acc = Matrix::zeros(dim, dim);
    for s in samples {
        if s.dim() != dim {
            return Err(Error::Dimension(format!(
                "covariance sample dimension {} vs center {}",
                s.dim(),
                dim
            )));
        }
        let d = s.sub(center);
        acc.add_outer_scaled(d.as_slice(), d.as_slice(), 1.0);
    }
    Ok(acc.scale(1.0 / samples.len() as f64))
}

const MAX_JITTER: f64 = 1e-4;

/// Lower-triangular Cholesky factor of `s + jitter * I`.
///
/// If the factorization fails at the requested jitter, the jitter escalates
/// by decades up to 1e-4 before giving up with `SingularCovariance`.
pub fn cholesky(s: &Matrix, jitter: f64) -> Result<Matrix> {
    if s.rows() != s.cols() {
        return Err(Error::Dimension(format!(
            "cholesky needs a square matrix, got {}x{}",
            s.rows(),
            s.cols()
        )));
    }
    if !s.is_symmetric_within(1e-10) {
        return Err(Error::Dimension("cholesky needs a symmetric matrix".to_string()));
    }
    let mut attempt = jitter;
    loop {
        if let Some(l) = try_cholesky(s, attempt) {
            return Ok(l);
        }
        let next = if attempt > 0.0 { attempt * 10.0 } else { 1e-8 };
        if next > MAX_JITTER {
            return Err(Error::SingularCovariance { max_jitter: attempt });
        }
        attempt = next;
    }
}

fn try_cholesky(s: &Matrix, jitter: f64) -> Option<Matrix> {
    let n = s.rows();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut diag = s[(j, j)] + jitter;
        for k in 0..j {
            diag -= l[(j, k)] * l[(j, k)];
        }
        if diag <= 0.0 || !diag.is_finite() {
            return None;
        }
        let root = diag.sqrt();
        l[(j, j)] = root;
        for i in (j + 1)..n {
            let mut acc = s[(i, j)];
            for k in 0..j {
                acc -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = acc / root;
        }
    }
    Some(l)
}

/// One draw from N(mean, L L^T) as `mean + L z` with z standard normal.
pub fn sample_mvn<R: Rng + ?Sized>(mean: &Vector, chol: &Matrix, rng: &mut R) -> Result<Vector> {
    let dim = mean.dim();
    if chol.rows() != dim || chol.cols() != dim {
        return Err(Error::Dimension(format!(
            "cholesky factor {}x{} vs mean dimension {}",
            chol.rows(),
            chol.cols(),
            dim
        )));
    }
    let mut z = Vector::zeros(dim);
    for i in 0..dim {
        z[i] = rng.sample(StandardNormal);
    }
    let mut out = mean.clone();
    for i in 0..dim {
        let mut acc = 0.0;
        for j in 0..=i {
            acc += chol[(i, j)] * z[j];
        }
        out[i] += acc;
    }
    Ok(out)
}

/// log sum_i exp(x_i), stabilized by subtracting the maximum.
pub fn logsumexp(xs: &[f64]) -> f64 {
    assert!(!xs.is_empty(), "logsumexp of empty slice");
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let mut acc = 0.0;
    for x in xs {
        acc += (x - m).exp();
    }
    m + acc.ln()
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(xs: &[f64]) -> usize {
    assert!(!xs.is_empty(), "argmax of empty slice");
    let mut best = 0;
    for i in 1..xs.len() {
        if xs[i] > xs[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn assert_close(a: f64, b: f64, tol: f64, what: &str) {
        assert!((a - b).abs() <= tol, "{what}: {a} vs {b} (tol {tol})");
    }

    /// Eigenvalues of a small symmetric matrix via cyclic Jacobi rotations.
    fn symmetric_eigenvalues(m: &Matrix) -> Vec<f64> {
        assert_eq!(m.rows(), m.cols());
        let n = m.rows();
        let mut a = m.clone();
        for _ in 0..100 {
            let mut off = 0.0;
            for i in 0..n {
                for j in (i + 1)..n {
                    off += a[(i, j)] * a[(i, j)];
                }
            }
            if off.sqrt() < 1e-13 {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    if a[(p, q)].abs() < 1e-300 {
                        continue;
                    }
                    let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * a[(p, q)]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let akp = a[(k, p)];
                        let akq = a[(k, q)];
                        a[(k, p)] = c * akp - s * akq;
                        a[(k, q)] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = a[(p, k)];
                        let aqk = a[(q, k)];
                        a[(p, k)] = c * apk - s * aqk;
                        a[(q, k)] = s * apk + c * aqk;
                    }
                }
            }
        }
        (0..n).map(|i| a[(i, i)]).collect()
    }

    #[test]
    fn mean_of_two_samples() {
        let m = mean(&[Vector::new(vec![1.0, 2.0]), Vector::new(vec![3.0, 4.0])]).unwrap();
        assert_eq!(m.as_slice(), &[2.0, 3.0]);
    }

    #[test]
    fn mean_of_empty_set_is_an_error() {
        assert!(matches!(mean(&[]), Err(Error::EmptyClass)));
    }

    #[test]
    fn covariance_of_single_sample_is_zero() {
        let x = Vector::new(vec![1.5, -2.0, 3.0]);
        let c = covariance(std::slice::from_ref(&x), &x).unwrap();
        assert!(c.is_zero(), "single-sample covariance about itself must vanish");
    }

    #[test]
    fn covariance_of_hand_computed_pair() {
        let samples = [Vector::new(vec![1.0, 0.0]), Vector::new(vec![-1.0, 0.0])];
        let c = covariance(&samples, &Vector::zeros(2)).unwrap();
        assert_eq!(c[(0, 0)], 1.0);
        assert_eq!(c[(0, 1)], 0.0);
        assert_eq!(c[(1, 0)], 0.0);
        assert_eq!(c[(1, 1)], 0.0);
    }

    #[test]
    fn covariance_empty_set_is_an_error() {
        assert!(matches!(covariance(&[], &Vector::zeros(2)), Err(Error::EmptyClass)));
    }

    #[test]
    fn cholesky_of_zero_matrix_with_jitter_is_scaled_identity() {
        let l = cholesky(&Matrix::zeros(3, 3), 1e-6).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1e-3 } else { 0.0 };
                assert_eq!(l[(i, j)], expect, "entry ({i},{j})");
            }
        }
    }

    #[test]
    fn cholesky_rejects_matrix_that_stays_indefinite() {
        let mut m = Matrix::identity(2);
        m[(0, 0)] = -1.0;
        assert!(matches!(cholesky(&m, 1e-6), Err(Error::SingularCovariance { .. })));
    }

    #[test]
    fn cholesky_factor_is_lower_triangular_and_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for dim in [1usize, 2, 5, 8] {
            let samples: Vec<Vector> = (0..dim * 4)
                .map(|_| Vector::new((0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()))
                .collect();
            let center = mean(&samples).unwrap();
            let cov = covariance(&samples, &center).unwrap();
            let jitter = 1e-6;
            let l = cholesky(&cov, jitter).unwrap();
            for i in 0..dim {
                for j in (i + 1)..dim {
                    assert_eq!(l[(i, j)], 0.0, "upper triangle must be zero");
                }
            }
            let mut target = cov.clone();
            for i in 0..dim {
                target[(i, i)] += jitter;
            }
            let recon = l.matmul_transpose(&l).unwrap();
            let rel = recon.sub(&target).frobenius_norm() / target.frobenius_norm();
            assert!(rel <= 1e-8, "reconstruction error {rel} at dim {dim}");
        }
    }

    #[test]
    fn sample_mvn_with_zero_factor_returns_mean_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mean_v = Vector::new(vec![0.25, -1.5, 4.0]);
        let out = sample_mvn(&mean_v, &Matrix::zeros(3, 3), &mut rng).unwrap();
        assert_eq!(out, mean_v);
    }

    #[test]
    fn sample_mvn_is_deterministic_per_seed() {
        let mean_v = Vector::new(vec![1.0, 2.0]);
        let l = cholesky(&Matrix::identity(2), 0.0).unwrap();
        let draw = |seed: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..10).map(|_| sample_mvn(&mean_v, &l, &mut rng).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(draw(42), draw(42));
        assert_ne!(draw(42), draw(43));
    }

    #[test]
    fn sample_mvn_matches_first_and_second_moments() {
        let n = 100_000usize;
        let mean_v = Vector::new(vec![0.5, -1.0]);
        let cov = Matrix::from_vec(2, 2, vec![2.0, 0.6, 0.6, 1.0]).unwrap();
        let l = cholesky(&cov, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let draws: Vec<Vector> = (0..n).map(|_| sample_mvn(&mean_v, &l, &mut rng).unwrap()).collect();
        let m = mean(&draws).unwrap();
        let bound = 3.0 / (n as f64).sqrt();
        for i in 0..2 {
            // Coordinate std is at most sqrt(2), so 3 sigma / sqrt(n) scaled.
            let sd = cov[(i, i)].sqrt();
            assert_close(m[i], mean_v[i], bound * sd, "sample mean coordinate");
        }
        let c = covariance(&draws, &m).unwrap();
        let rel = c.sub(&cov).frobenius_norm() / cov.frobenius_norm();
        assert!(rel <= 0.05, "empirical covariance off by {rel}");
    }

    #[test]
    fn logsumexp_is_shift_stable() {
        let base = logsumexp(&[0.0, 1.0, -0.5]);
        let shifted = logsumexp(&[1000.0, 1001.0, 999.5]);
        assert_close(shifted - 1000.0, base, 1e-12, "logsumexp shift");
        assert!(logsumexp(&[700.0, 710.0]).is_finite());
    }

    #[test]
    fn argmax_breaks_ties_toward_lowest_index() {
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        assert_eq!(argmax(&[0.1, 0.9, 0.9]), 1);
        assert_eq!(argmax(&[3.0]), 0);
    }

    proptest! {
        #[test]
        fn covariance_is_symmetric_and_near_psd(
            raw in proptest::collection::vec(-10.0f64..10.0, 6..60),
        ) {
            let dim = 3usize;
            let n = raw.len() / dim;
            prop_assume!(n >= 1);
            let samples: Vec<Vector> = (0..n)
                .map(|i| Vector::new(raw[i * dim..(i + 1) * dim].to_vec()))
                .collect();
            let center = mean(&samples).unwrap();
            let cov = covariance(&samples, &center).unwrap();
            for i in 0..dim {
                for j in 0..dim {
                    prop_assert_eq!(cov[(i, j)], cov[(j, i)], "exact symmetry");
                }
            }
            let eigs = symmetric_eigenvalues(&cov);
            for e in eigs {
                prop_assert!(e >= -1e-8, "eigenvalue {} below PSD tolerance", e);
            }
        }

        #[test]
        fn cholesky_reconstructs_random_psd_matrices(
            raw in proptest::collection::vec(-2.0f64..2.0, 16),
            jitter in 1e-9f64..1e-5,
        ) {
            let a = Matrix::from_vec(4, 4, raw).unwrap();
            let s = a.transpose_matmul(&a).unwrap();
            let l = cholesky(&s, jitter).unwrap();
            let recon = l.matmul_transpose(&l).unwrap();
            let mut target = s.clone();
            for i in 0..4 {
                target[(i, i)] += jitter;
            }
            let denom = target.frobenius_norm().max(1e-12);
            prop_assert!(recon.sub(&target).frobenius_norm() / denom <= 1e-8);
        }
    }
}
