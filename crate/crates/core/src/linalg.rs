//! Dense real linear algebra for the small problems this crate deals with.
//!
//! Everything is row-major and allocation-per-result. Problem sizes are tiny
//! (a handful of states, horizons of a few dozen steps), so there is no sparse
//! path and no blocking.

use std::fmt;
use std::ops::{Add, Index, IndexMut, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("singular matrix: pivot {pivot:e} below threshold {threshold:e}")]
    SingularMatrix { pivot: f64, threshold: f64 },
    #[error("matrix is not positive definite (pivot {pivot:e} at index {index})")]
    NotPositiveDefinite { index: usize, pivot: f64 },
    #[error("matrix is not symmetric (asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },
    #[error("eigenvalue iteration did not converge after {sweeps} sweeps")]
    NoConvergence { sweeps: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// Numerical thresholds used by the kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// Relative pivot threshold for LU: pivots below `singular_pivot * ||A||_F` are singular.
    pub singular_pivot: f64,
    /// Relative asymmetry accepted by `cholesky` and `sym_eig`.
    pub symmetry: f64,
    /// Sweep budget for the cyclic Jacobi eigenvalue method.
    pub jacobi_sweeps: usize,
    /// Divergence cutoff for the repeated-squaring spectral radius test.
    pub overflow_norm: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { singular_pivot: 1e-12, symmetry: 1e-10, jacobi_sweeps: 100, overflow_norm: 1e150 }
    }
}

/// Dense row-major matrix.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MatRepr", into = "MatRepr")]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// Serialized form: explicit dimensions plus nested row arrays.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MatRepr {
    rows: usize,
    cols: usize,
    data: Vec<Vec<f64>>,
}

impl TryFrom<MatRepr> for Mat {
    type Error = String;

    fn try_from(r: MatRepr) -> Result<Self, Self::Error> {
        if r.data.len() != r.rows {
            return Err(format!("expected {} rows, found {}", r.rows, r.data.len()));
        }
        let mut data = Vec::with_capacity(r.rows * r.cols);
        for (i, row) in r.data.iter().enumerate() {
            if row.len() != r.cols {
                return Err(format!("row {i}: expected {} columns, found {}", r.cols, row.len()));
            }
            data.extend_from_slice(row);
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err("matrix entries must be finite".into());
        }
        Ok(Mat { rows: r.rows, cols: r.cols, data })
    }
}

impl From<Mat> for MatRepr {
    fn from(m: Mat) -> Self {
        MatRepr { rows: m.rows, cols: m.cols, data: (0..m.rows).map(|i| m.row(i).to_vec()).collect() }
    }
}

impl fmt::Debug for Mat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Mat {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        write!(f, "]")
    }
}

impl Mat {
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

    /// Builds a matrix from row-major data. Panics if the length does not match.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "data length must equal rows*cols");
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Self { rows: r, cols: c, data }
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, v) in values.iter().enumerate() {
            m[(i, i)] = *v;
        }
        m
    }

    pub fn column(values: &[f64]) -> Self {
        Self::from_vec(values.len(), 1, values.to_vec())
    }

    pub fn row_vector(values: &[f64]) -> Self {
        Self::from_vec(1, values.len(), values.to_vec())
    }

    pub fn scalar(v: f64) -> Self {
        Self::from_vec(1, 1, vec![v])
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

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn transpose(&self) -> Mat {
        let mut t = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn scale(&self, s: f64) -> Mat {
        Mat { rows: self.rows, cols: self.cols, data: self.data.iter().map(|v| v * s).collect() }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self * v` for a vector stored as a slice.
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.cols, "mul_vec dimension mismatch");
        (0..self.rows).map(|i| dot(self.row(i), v)).collect()
    }

    /// `self^T * v` without forming the transpose.
    pub fn tr_mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.rows, "tr_mul_vec dimension mismatch");
        let mut out = vec![0.0; self.cols];
        for (i, vi) in v.iter().enumerate() {
            if *vi == 0.0 {
                continue;
            }
            for (o, a) in out.iter_mut().zip(self.row(i)) {
                *o += a * vi;
            }
        }
        out
    }

    /// Quadratic form `v^T self v`.
    pub fn quad_form(&self, v: &[f64]) -> f64 {
        dot(v, &self.mul_vec(v))
    }

    pub fn block(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> Mat {
        assert!(r0 + rows <= self.rows && c0 + cols <= self.cols, "block out of range");
        let mut b = Mat::zeros(rows, cols);
        for i in 0..rows {
            b.data[i * cols..(i + 1) * cols].copy_from_slice(&self.data[(r0 + i) * self.cols + c0..(r0 + i) * self.cols + c0 + cols]);
        }
        b
    }

    pub fn set_block(&mut self, r0: usize, c0: usize, b: &Mat) {
        assert!(r0 + b.rows <= self.rows && c0 + b.cols <= self.cols, "block out of range");
        for i in 0..b.rows {
            let dst = (r0 + i) * self.cols + c0;
            self.data[dst..dst + b.cols].copy_from_slice(b.row(i));
        }
    }

    /// Columns `idx` of `self`, in the given order.
    pub fn select_cols(&self, idx: &[usize]) -> Mat {
        let mut out = Mat::zeros(self.rows, idx.len());
        for i in 0..self.rows {
            for (k, &j) in idx.iter().enumerate() {
                out[(i, k)] = self[(i, j)];
            }
        }
        out
    }

    pub fn hstack(blocks: &[&Mat]) -> Mat {
        let rows = blocks.first().map_or(0, |b| b.rows);
        let cols = blocks.iter().map(|b| b.cols).sum();
        let mut out = Mat::zeros(rows, cols);
        let mut c0 = 0;
        for b in blocks {
            assert_eq!(b.rows, rows, "hstack row mismatch");
            out.set_block(0, c0, b);
            c0 += b.cols;
        }
        out
    }

    /// Largest absolute difference between `self` and its transpose.
    pub fn asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }

    pub fn symmetrize(&self) -> Mat {
        let t = self.transpose();
        (self + &t).scale(0.5)
    }
}

impl Index<(usize, usize)> for Mat {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Mat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl Mul for &Mat {
    type Output = Mat;
    fn mul(self, rhs: &Mat) -> Mat {
        assert_eq!(self.cols, rhs.rows, "matmul dimension mismatch");
        let mut out = Mat::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                let dst = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
                for (d, b) in dst.iter_mut().zip(rhs.row(k)) {
                    *d += a * b;
                }
            }
        }
        out
    }
}

impl Add for &Mat {
    type Output = Mat;
    fn add(self, rhs: &Mat) -> Mat {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols), "add dimension mismatch");
        Mat { rows: self.rows, cols: self.cols, data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect() }
    }
}

impl Sub for &Mat {
    type Output = Mat;
    fn sub(self, rhs: &Mat) -> Mat {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols), "sub dimension mismatch");
        Mat { rows: self.rows, cols: self.cols, data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect() }
    }
}

impl Neg for &Mat {
    type Output = Mat;
    fn neg(self) -> Mat {
        self.scale(-1.0)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

pub fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// LU factorization with partial pivoting, reusable for several right-hand sides.
#[derive(Debug, Clone)]
pub struct Lu {
    lu: Mat,
    perm: Vec<usize>,
}

impl Lu {
    pub fn new(a: &Mat) -> Result<Self, LinalgError> {
        Self::with_tolerances(a, &Tolerances::default())
    }

    pub fn with_tolerances(a: &Mat, tol: &Tolerances) -> Result<Self, LinalgError> {
        if !a.is_square() {
            return Err(LinalgError::DimensionMismatch(format!("LU needs a square matrix, got {}x{}", a.rows, a.cols)));
        }
        let n = a.rows;
        let threshold = tol.singular_pivot * a.frobenius_norm().max(f64::MIN_POSITIVE);
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let (p, pivot) = (k..n).map(|i| (i, lu[(i, k)].abs())).fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if pivot < threshold || pivot == 0.0 {
                return Err(LinalgError::SingularMatrix { pivot, threshold });
            }
            if p != k {
                for j in 0..n {
                    lu.data.swap(k * n + j, p * n + j);
                }
                perm.swap(k, p);
            }
            let d = lu[(k, k)];
            for i in (k + 1)..n {
                let l = lu[(i, k)] / d;
                lu[(i, k)] = l;
                if l != 0.0 {
                    for j in (k + 1)..n {
                        lu[(i, j)] -= l * lu[(k, j)];
                    }
                }
            }
        }
        Ok(Self { lu, perm })
    }

    pub fn dim(&self) -> usize {
        self.lu.rows
    }

    pub fn solve_vec(&self, b: &[f64]) -> Vec<f64> {
        let n = self.lu.rows;
        assert_eq!(b.len(), n, "LU rhs dimension mismatch");
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let s: f64 = (0..i).map(|j| self.lu[(i, j)] * x[j]).sum();
            x[i] -= s;
        }
        for i in (0..n).rev() {
            let s: f64 = ((i + 1)..n).map(|j| self.lu[(i, j)] * x[j]).sum();
            x[i] = (x[i] - s) / self.lu[(i, i)];
        }
        x
    }

    pub fn solve(&self, b: &Mat) -> Mat {
        let mut out = Mat::zeros(b.rows, b.cols);
        for j in 0..b.cols {
            let x = self.solve_vec(&b.col(j));
            for (i, v) in x.into_iter().enumerate() {
                out[(i, j)] = v;
            }
        }
        out
    }
}

/// Solves `A X = B` by LU with partial pivoting.
pub fn solve_linear(a: &Mat, b: &Mat) -> Result<Mat, LinalgError> {
    solve_linear_with(a, b, &Tolerances::default())
}

pub fn solve_linear_with(a: &Mat, b: &Mat, tol: &Tolerances) -> Result<Mat, LinalgError> {
    if b.rows != a.rows {
        return Err(LinalgError::DimensionMismatch(format!("rhs has {} rows, matrix has {}", b.rows, a.rows)));
    }
    Ok(Lu::with_tolerances(a, tol)?.solve(b))
}

pub fn inverse(a: &Mat) -> Result<Mat, LinalgError> {
    solve_linear(a, &Mat::identity(a.rows))
}

/// Lower-triangular Cholesky factor with `L L^T = P`.
pub fn cholesky(p: &Mat) -> Result<Mat, LinalgError> {
    cholesky_with(p, &Tolerances::default())
}

pub fn cholesky_with(p: &Mat, tol: &Tolerances) -> Result<Mat, LinalgError> {
    check_symmetric(p, tol)?;
    let n = p.rows;
    let mut l = Mat::zeros(n, n);
    for j in 0..n {
        let mut d = p[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d <= 0.0 || !d.is_finite() {
            return Err(LinalgError::NotPositiveDefinite { index: j, pivot: d });
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in (j + 1)..n {
            let mut s = p[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Ok(l)
}

/// Solves `L L^T x = b` given the Cholesky factor.
pub fn cholesky_solve(l: &Mat, b: &[f64]) -> Vec<f64> {
    let n = l.rows;
    let mut y = b.to_vec();
    for i in 0..n {
        let mut s = y[i];
        for k in 0..i {
            s -= l[(i, k)] * y[k];
        }
        y[i] = s / l[(i, i)];
    }
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in (i + 1)..n {
            s -= l[(k, i)] * y[k];
        }
        y[i] = s / l[(i, i)];
    }
    y
}

fn check_symmetric(s: &Mat, tol: &Tolerances) -> Result<(), LinalgError> {
    if !s.is_square() {
        return Err(LinalgError::DimensionMismatch(format!("expected a square matrix, got {}x{}", s.rows, s.cols)));
    }
    let asymmetry = s.asymmetry();
    if asymmetry > tol.symmetry * s.max_abs().max(1.0) {
        return Err(LinalgError::NotSymmetric { asymmetry });
    }
    Ok(())
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Eigenvalues come back sorted ascending; column `i` of the returned matrix
/// is the unit eigenvector for eigenvalue `i`.
pub fn sym_eig(s: &Mat) -> Result<(Vec<f64>, Mat), LinalgError> {
    sym_eig_with(s, &Tolerances::default())
}

pub fn sym_eig_with(s: &Mat, tol: &Tolerances) -> Result<(Vec<f64>, Mat), LinalgError> {
    check_symmetric(s, tol)?;
    let n = s.rows;
    let mut a = s.symmetrize();
    let mut v = Mat::identity(n);
    let scale = a.frobenius_norm();
    let mut converged = n < 2 || scale == 0.0;
    let mut sweeps = 0;
    while !converged {
        if sweeps == tol.jacobi_sweeps {
            return Err(LinalgError::NoConvergence { sweeps });
        }
        sweeps += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - sn * akq;
                    a[(k, q)] = sn * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - sn * aqk;
                    a[(q, k)] = sn * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - sn * vkq;
                    v[(k, q)] = sn * vkp + c * vkq;
                }
            }
        }
        let off: f64 =
            (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[(i, j)] * a[(i, j)]).sum::<f64>().sqrt();
        converged = off <= 1e-15 * scale;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    Ok((values, v.select_cols(&order)))
}

/// Sufficient test for `rho(M) < 1`: some power `M^(2^j)`, `j <= max_doublings`,
/// has Frobenius norm below one. Diverging powers report `false`.
pub fn spectral_radius_below_one(m: &Mat, max_doublings: usize) -> bool {
    spectral_radius_below_one_with(m, max_doublings, &Tolerances::default())
}

pub fn spectral_radius_below_one_with(m: &Mat, max_doublings: usize, tol: &Tolerances) -> bool {
    assert!(m.is_square(), "spectral radius needs a square matrix");
    let mut p = m.clone();
    for _ in 0..=max_doublings {
        let norm = p.frobenius_norm();
        if !norm.is_finite() || norm > tol.overflow_norm {
            return false;
        }
        if norm < 1.0 {
            return true;
        }
        p = &p * &p;
    }
    false
}

/// Default doubling budget for [`spectral_radius_below_one`].
pub const DEFAULT_DOUBLINGS: usize = 40;

pub fn mat_pow(m: &Mat, p: usize) -> Mat {
    assert!(m.is_square(), "mat_pow needs a square matrix");
    let mut out = Mat::identity(m.rows);
    for _ in 0..p {
        out = &out * m;
    }
    out
}

pub fn kron(a: &Mat, b: &Mat) -> Mat {
    let mut out = Mat::zeros(a.rows * b.rows, a.cols * b.cols);
    for i in 0..a.rows {
        for j in 0..a.cols {
            let s = a[(i, j)];
            for k in 0..b.rows {
                for l in 0..b.cols {
                    out[(i * b.rows + k, j * b.cols + l)] = s * b[(k, l)];
                }
            }
        }
    }
    out
}

/// Rank of `m` by Gaussian elimination with full pivoting.
/// Pivots below `rel_tol * max|m|` count as zero.
pub fn rank(m: &Mat, rel_tol: f64) -> usize {
    let mut a = m.clone();
    let threshold = rel_tol * m.max_abs().max(f64::MIN_POSITIVE);
    let (rows, cols) = (a.rows, a.cols);
    let mut r = 0;
    let mut used_cols = vec![false; cols];
    while r < rows.min(cols) {
        let mut best = (0, 0, 0.0);
        for i in r..rows {
            for (j, used) in used_cols.iter().enumerate() {
                if !used && a[(i, j)].abs() > best.2 {
                    best = (i, j, a[(i, j)].abs());
                }
            }
        }
        if best.2 <= threshold {
            break;
        }
        let (pi, pj, _) = best;
        for j in 0..cols {
            a.data.swap(r * cols + j, pi * cols + j);
        }
        used_cols[pj] = true;
        let d = a[(r, pj)];
        for i in (r + 1)..rows {
            let l = a[(i, pj)] / d;
            for j in 0..cols {
                a[(i, j)] -= l * a[(r, j)];
            }
        }
        r += 1;
    }
    r
}
