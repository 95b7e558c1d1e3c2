//! Dense kernels, signed log-domain scalars and a Jacobi eigensolver.
//!
//! Matrices are stored column-major so that a data column `X[.., j]` is a
//! contiguous slice; the per-column Gaussian integrals downstream walk those
//! slices directly.

use crate::error::{Error, Result};

/// Dense real matrix in column-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    /// Builds a matrix from column-major data, rejecting wrong lengths and
    /// non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                context: "DenseMatrix::new",
                expected: rows * cols,
                actual: data.len(),
            });
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid("data", format!("non-finite entry {bad}")));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for j in 0..cols {
            for i in 0..rows {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix from row-major nested rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != n_cols) {
            return Err(Error::DimensionMismatch {
                context: "DenseMatrix::from_rows",
                expected: n_cols,
                actual: bad.len(),
            });
        }
        let m = Self::from_fn(n_rows, n_cols, |i, j| rows[i][j]);
        Self::new(m.rows, m.cols, m.data)
    }

    /// Builds a matrix whose columns are the given vectors.
    pub fn from_columns(rows: usize, columns: &[Vec<f64>]) -> Result<Self> {
        let mut data = Vec::with_capacity(rows * columns.len());
        for c in columns {
            if c.len() != rows {
                return Err(Error::DimensionMismatch {
                    context: "DenseMatrix::from_columns",
                    expected: rows,
                    actual: c.len(),
                });
            }
            data.extend_from_slice(c);
        }
        Self::new(rows, columns.len(), data)
    }

    pub fn diagonal(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, &v) in values.iter().enumerate() {
            m.set(i, i, v);
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[j * self.rows + i]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[j * self.rows + i] = v;
    }

    #[inline]
    pub fn column(&self, j: usize) -> &[f64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    #[inline]
    pub fn column_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        (0..self.cols).map(|j| self.get(i, j)).collect()
    }

    /// Column-major backing storage.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn to_row_major(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i)).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch {
                context: "matmul",
                expected: self.cols,
                actual: other.rows,
            });
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for j in 0..other.cols {
            let dst = &mut out.data[j * self.rows..(j + 1) * self.rows];
            for k in 0..self.cols {
                let b = other.get(k, j);
                if b == 0.0 {
                    continue;
                }
                for (d, a) in dst.iter_mut().zip(self.column(k)) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ · other`.
    pub fn t_matmul(&self, other: &Self) -> Result<Self> {
        if self.rows != other.rows {
            return Err(Error::DimensionMismatch {
                context: "t_matmul",
                expected: self.rows,
                actual: other.rows,
            });
        }
        Ok(Self::from_fn(self.cols, other.cols, |i, j| {
            dot(self.column(i), other.column(j))
        }))
    }

    /// `self · selfᵀ`.
    pub fn outer_gram(&self) -> Self {
        let t = self.transpose();
        self.matmul(&t).expect("shapes agree")
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::DimensionMismatch {
                context: "elementwise",
                expected: self.rows * self.cols,
                actual: other.rows * other.cols,
            });
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    /// Checks symmetry within `rel_tol · max|M|`, returning the worst pair on failure.
    pub fn check_symmetric(&self, rel_tol: f64) -> Result<()> {
        if !self.is_square() {
            return Err(Error::DimensionMismatch {
                context: "symmetric matrix",
                expected: self.rows,
                actual: self.cols,
            });
        }
        let scale = self.max_abs();
        let mut worst = (0, 0, 0.0);
        for j in 0..self.cols {
            for i in 0..j {
                let gap = (self.get(i, j) - self.get(j, i)).abs();
                if gap > worst.2 {
                    worst = (i, j, gap);
                }
            }
        }
        if worst.2 > rel_tol * scale {
            return Err(Error::NotSymmetric {
                row: worst.0,
                col: worst.1,
                gap: worst.2,
            });
        }
        Ok(())
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations with threshold
/// sweeps. Eigenvalues are returned in descending order, eigenvectors as the
/// matching columns.
pub fn sym_eig(m: &DenseMatrix) -> Result<(Vec<f64>, DenseMatrix)> {
    m.check_symmetric(1e-12)?;
    let n = m.rows();
    // symmetrize so that tiny asymmetries do not bias the rotations
    let mut a = DenseMatrix::from_fn(n, n, |i, j| 0.5 * (m.get(i, j) + m.get(j, i)));
    let mut v = DenseMatrix::identity(n);
    let mut diag: Vec<f64> = (0..n).map(|i| a.get(i, i)).collect();
    // accumulated diagonal corrections within a sweep
    let mut b = diag.clone();
    let mut z = vec![0.0; n];

    for sweep in 0..100 {
        let mut off = 0.0;
        for q in 1..n {
            for p in 0..q {
                off += a.get(p, q).abs();
            }
        }
        if off == 0.0 {
            break;
        }
        let threshold = if sweep < 3 {
            0.2 * off / (n * n) as f64
        } else {
            0.0
        };
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a.get(p, q);
                let g = 100.0 * apq.abs();
                if sweep > 3
                    && diag[p].abs() + g == diag[p].abs()
                    && diag[q].abs() + g == diag[q].abs()
                {
                    a.set(p, q, 0.0);
                    a.set(q, p, 0.0);
                    continue;
                }
                if apq.abs() <= threshold {
                    continue;
                }
                let h = diag[q] - diag[p];
                let t = if h.abs() + g == h.abs() {
                    apq / h
                } else {
                    let theta = 0.5 * h / apq;
                    let t = 1.0 / (theta.abs() + (1.0 + theta * theta).sqrt());
                    if theta < 0.0 {
                        -t
                    } else {
                        t
                    }
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                let tau = s / (1.0 + c);
                let hh = t * apq;
                z[p] -= hh;
                z[q] += hh;
                diag[p] -= hh;
                diag[q] += hh;
                a.set(p, q, 0.0);
                a.set(q, p, 0.0);
                for k in 0..n {
                    if k == p || k == q {
                        continue;
                    }
                    let g = a.get(k, p);
                    let h = a.get(k, q);
                    let new_kp = g - s * (h + g * tau);
                    let new_kq = h + s * (g - h * tau);
                    a.set(k, p, new_kp);
                    a.set(p, k, new_kp);
                    a.set(k, q, new_kq);
                    a.set(q, k, new_kq);
                }
                for k in 0..n {
                    let g = v.get(k, p);
                    let h = v.get(k, q);
                    v.set(k, p, g - s * (h + g * tau));
                    v.set(k, q, h + s * (g - h * tau));
                }
            }
        }
        for i in 0..n {
            b[i] += z[i];
            diag[i] = b[i];
            z[i] = 0.0;
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| diag[j].total_cmp(&diag[i]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| diag[i]).collect();
    let vectors = DenseMatrix::from_fn(n, n, |i, k| v.get(i, order[k]));
    Ok((values, vectors))
}

/// Thin singular value decomposition `A = U diag(σ) Vᵀ` by one-sided
/// (Hestenes) Jacobi. Singular values come back in descending order; `U` has
/// `cols` columns, those with zero singular value are left as zero vectors.
#[derive(Debug, Clone)]
pub struct ThinSvd {
    pub u: DenseMatrix,
    pub singular_values: Vec<f64>,
    pub v: DenseMatrix,
}

pub fn thin_svd(a: &DenseMatrix) -> ThinSvd {
    let (m, n) = (a.rows(), a.cols());
    let mut u = a.clone();
    let mut v = DenseMatrix::identity(n);
    for _sweep in 0..80 {
        let mut rotated = false;
        for i in 0..n {
            for j in (i + 1)..n {
                let alpha = dot(u.column(i), u.column(i));
                let beta = dot(u.column(j), u.column(j));
                let gamma = dot(u.column(i), u.column(j));
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for k in 0..m {
                    let x = u.get(k, i);
                    let y = u.get(k, j);
                    u.set(k, i, c * x - s * y);
                    u.set(k, j, s * x + c * y);
                }
                for k in 0..n {
                    let x = v.get(k, i);
                    let y = v.get(k, j);
                    v.set(k, i, c * x - s * y);
                    v.set(k, j, s * x + c * y);
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let norms: Vec<f64> = (0..n).map(|j| norm2(u.column(j))).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]).then(i.cmp(&j)));
    let singular_values: Vec<f64> = order.iter().map(|&j| norms[j]).collect();
    let u_sorted = DenseMatrix::from_fn(m, n, |i, k| {
        let s = norms[order[k]];
        if s > 0.0 {
            u.get(i, order[k]) / s
        } else {
            0.0
        }
    });
    let v_sorted = DenseMatrix::from_fn(n, n, |i, k| v.get(i, order[k]));
    ThinSvd {
        u: u_sorted,
        singular_values,
        v: v_sorted,
    }
}

/// Lower Cholesky factor of a symmetric positive definite matrix.
pub fn cholesky(m: &DenseMatrix) -> Result<DenseMatrix> {
    let n = m.rows();
    let mut l = DenseMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = m.get(j, j);
        for k in 0..j {
            d -= l.get(j, k) * l.get(j, k);
        }
        if d <= 0.0 {
            return Err(Error::Numerical(format!(
                "matrix not positive definite at pivot {j} ({d:e})"
            )));
        }
        let d = d.sqrt();
        l.set(j, j, d);
        for i in (j + 1)..n {
            let mut s = m.get(i, j);
            for k in 0..j {
                s -= l.get(i, k) * l.get(j, k);
            }
            l.set(i, j, s / d);
        }
    }
    Ok(l)
}

/// Solves `L Lᵀ x = b` given the lower Cholesky factor.
pub fn cholesky_solve(l: &DenseMatrix, b: &[f64]) -> Vec<f64> {
    let n = l.rows();
    let mut y = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            y[i] -= l.get(i, k) * y[k];
        }
        y[i] /= l.get(i, i);
    }
    for i in (0..n).rev() {
        for k in (i + 1)..n {
            y[i] -= l.get(k, i) * y[k];
        }
        y[i] /= l.get(i, i);
    }
    y
}

/// A real number carried as `sign · exp(log_magnitude)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogScaled {
    pub log_magnitude: f64,
    pub sign: i8,
}

impl LogScaled {
    pub const ZERO: LogScaled = LogScaled {
        log_magnitude: f64::NEG_INFINITY,
        sign: 0,
    };
    pub const ONE: LogScaled = LogScaled {
        log_magnitude: 0.0,
        sign: 1,
    };

    /// Positive value with the given natural log.
    #[inline]
    pub fn from_log(log_magnitude: f64) -> Self {
        if log_magnitude == f64::NEG_INFINITY {
            Self::ZERO
        } else {
            Self {
                log_magnitude,
                sign: 1,
            }
        }
    }

    pub fn from_f64(x: f64) -> Self {
        if x == 0.0 {
            Self::ZERO
        } else {
            Self {
                log_magnitude: x.abs().ln(),
                sign: if x > 0.0 { 1 } else { -1 },
            }
        }
    }

    pub fn to_f64(self) -> f64 {
        match self.sign {
            0 => 0.0,
            s => f64::from(s) * self.log_magnitude.exp(),
        }
    }

    #[inline]
    pub fn is_zero(self) -> bool {
        self.sign == 0
    }

    pub fn neg(self) -> Self {
        Self {
            log_magnitude: self.log_magnitude,
            sign: -self.sign,
        }
    }

    pub fn mul(self, other: Self) -> Self {
        if self.is_zero() || other.is_zero() {
            return Self::ZERO;
        }
        Self {
            log_magnitude: self.log_magnitude + other.log_magnitude,
            sign: self.sign * other.sign,
        }
    }

    pub fn div(self, other: Self) -> Result<Self> {
        if other.is_zero() {
            return Err(Error::Numerical("division by log-scaled zero".into()));
        }
        if self.is_zero() {
            return Ok(Self::ZERO);
        }
        Ok(Self {
            log_magnitude: self.log_magnitude - other.log_magnitude,
            sign: self.sign * other.sign,
        })
    }

    /// `self · x` for a plain real `x`.
    pub fn mul_f64(self, x: f64) -> Self {
        self.mul(Self::from_f64(x))
    }
}

/// Sum of signed log-scaled terms, accumulated left to right with
/// compensated summation after factoring out the largest magnitude.
pub fn log_sum_exp(terms: &[LogScaled]) -> LogScaled {
    let max = terms
        .iter()
        .filter(|t| !t.is_zero())
        .map(|t| t.log_magnitude)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return LogScaled::ZERO;
    }
    let mut sum = 0.0_f64;
    let mut comp = 0.0_f64;
    for t in terms.iter().filter(|t| !t.is_zero()) {
        let x = f64::from(t.sign) * (t.log_magnitude - max).exp();
        let s = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - s) + x;
        } else {
            comp += (x - s) + sum;
        }
        sum = s;
    }
    let total = sum + comp;
    if total == 0.0 {
        LogScaled::ZERO
    } else {
        LogScaled {
            log_magnitude: total.abs().ln() + max,
            sign: if total > 0.0 { 1 } else { -1 },
        }
    }
}

/// `ln(eᵃ + eᵇ)`.
#[inline]
pub fn ln_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY {
        hi
    } else {
        hi + (lo - hi).exp().ln_1p()
    }
}

/// `ln(eᵃ − eᵇ)`, or `None` when `b ≥ a`.
#[inline]
pub fn ln_sub_exp(a: f64, b: f64) -> Option<f64> {
    if b == f64::NEG_INFINITY {
        return Some(a);
    }
    if b >= a {
        return None;
    }
    Some(a + (-(b - a).exp()).ln_1p())
}

/// `ln Σ exp(xᵢ)` for plain logs of positive numbers.
pub fn ln_sum_exp(logs: &[f64]) -> f64 {
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + logs.iter().map(|l| (l - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_symmetric(n: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
        let mut m = DenseMatrix::zeros(n, n);
        for j in 0..n {
            for i in 0..=j {
                let v: f64 = rng.random_range(-1.0..1.0);
                m.set(i, j, v);
                m.set(j, i, v);
            }
        }
        m
    }

    fn eigen_residual(m: &DenseMatrix, values: &[f64], vectors: &DenseMatrix) -> f64 {
        let recon = vectors
            .matmul(&DenseMatrix::diagonal(values))
            .unwrap()
            .matmul(&vectors.transpose())
            .unwrap();
        recon.sub(m).unwrap().frobenius_norm()
    }

    #[test]
    fn identity_eigenvalues() {
        let (vals, _) = sym_eig(&DenseMatrix::identity(3)).unwrap();
        assert_eq!(vals, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn diagonal_eigenpairs() {
        let (vals, vecs) = sym_eig(&DenseMatrix::diagonal(&[1.0, 3.0])).unwrap();
        assert_eq!(vals, vec![3.0, 1.0]);
        assert_eq!(vecs.get(1, 0).abs(), 1.0);
        assert_eq!(vecs.get(0, 1).abs(), 1.0);
    }

    #[test]
    fn rejects_nonsymmetric() {
        let m = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![0.0, 1.0]]).unwrap();
        let err = sym_eig(&m).unwrap_err();
        assert!(err.to_string().contains("not symmetric"));
    }

    #[test]
    fn random_8x8_reconstruction() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = random_symmetric(8, &mut rng);
        let (vals, vecs) = sym_eig(&m).unwrap();
        assert!(eigen_residual(&m, &vals, &vecs) <= 1e-10);
    }

    #[test]
    fn eigen_residual_sweep() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for trial in 0..1000 {
            let n = 1 + trial % 20;
            let m = random_symmetric(n, &mut rng);
            let (vals, vecs) = sym_eig(&m).unwrap();
            let scale = m.frobenius_norm();
            for k in 0..n {
                let mv: Vec<f64> = (0..n).map(|i| dot(&m.row(i), vecs.column(k))).collect();
                let res: f64 = mv
                    .iter()
                    .zip(vecs.column(k))
                    .map(|(a, b)| (a - vals[k] * b).powi(2))
                    .sum::<f64>()
                    .sqrt();
                assert!(res <= 1e-10 * scale, "n={n} residual {res}");
            }
            let vtv = vecs.t_matmul(&vecs).unwrap();
            assert!(vtv.sub(&DenseMatrix::identity(n)).unwrap().max_abs() <= 1e-10);
            assert!(vals.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn svd_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = DenseMatrix::from_fn(7, 3, |_, _| rng.random_range(-1.0..1.0));
        let svd = thin_svd(&a);
        let recon = svd
            .u
            .matmul(&DenseMatrix::diagonal(&svd.singular_values))
            .unwrap()
            .matmul(&svd.v.transpose())
            .unwrap();
        assert!(recon.sub(&a).unwrap().max_abs() < 1e-12);
        let (evals, _) = sym_eig(&a.t_matmul(&a).unwrap()).unwrap();
        for (s, e) in svd.singular_values.iter().zip(evals) {
            assert!((s * s - e).abs() < 1e-12);
        }
    }

    #[test]
    fn cholesky_solves() {
        let m = DenseMatrix::from_rows(&[vec![4.0, 1.0], vec![1.0, 3.0]]).unwrap();
        let l = cholesky(&m).unwrap();
        let x = cholesky_solve(&l, &[1.0, 2.0]);
        assert!((4.0 * x[0] + x[1] - 1.0).abs() < 1e-15);
        assert!((x[0] + 3.0 * x[1] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn log_sum_exp_basic() {
        let two = log_sum_exp(&[LogScaled::ONE, LogScaled::ONE]);
        assert!((two.to_f64() - 2.0).abs() < 1e-15);
        let x = LogScaled::from_f64(3.7);
        assert_eq!(log_sum_exp(&[x, x.neg()]), LogScaled::ZERO);
        assert_eq!(log_sum_exp(&[]), LogScaled::ZERO);
    }

    #[test]
    fn log_sum_exp_tiny_terms() {
        // 1000 copies of 1e-300: the exact sum is 1e-297; f64 underflow-free
        // reference computed as 1000 * 1e-300 in the log domain.
        let t = LogScaled::from_f64(1e-300);
        let total = log_sum_exp(&vec![t; 1000]);
        let expected = 1000f64.ln() + 1e-300f64.ln();
        assert!((total.log_magnitude - expected).abs() < 1e-14 * expected.abs());
        assert!((total.to_f64() / 1e-297 - 1.0).abs() < 1e-13);
    }

    #[test]
    fn ln_sub_exp_rejects_nonpositive() {
        assert!(ln_sub_exp(1.0, 1.0).is_none());
        let v = ln_sub_exp(3f64.ln(), 1f64.ln()).unwrap();
        assert!((v.exp() - 2.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn log_sum_exp_matches_naive(xs in proptest::collection::vec(-1e3f64..1e3, 0..50)) {
            let terms: Vec<LogScaled> = xs.iter().map(|&x| LogScaled::from_f64(x)).collect();
            let naive: f64 = xs.iter().sum();
            let abs_sum: f64 = xs.iter().map(|x| x.abs()).sum();
            let got = log_sum_exp(&terms).to_f64();
            // relative to the magnitude scale of the terms when cancellation occurs
            prop_assert!((got - naive).abs() <= 1e-12 * abs_sum.max(f64::MIN_POSITIVE));
        }
    }
}
