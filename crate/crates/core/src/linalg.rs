//! Small dense linear algebra: a column-major matrix, Cholesky and
//! Householder QR, plus a compensated accumulator.
//!
//! Matrices are column-major so that a pixel spectrum (a column of `Y`) or an
//! abundance vector (a column of `X`) is a contiguous slice, and the stacked
//! vector `x = [x_1; ...; x_T]` used by the ADMM solvers is exactly the
//! storage of `X`.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Index, IndexMut};

use crate::error::{Result, UnmixError};

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Wraps column-major storage.
    pub fn from_col_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(UnmixError::InvalidInput(alloc::format!(
                "storage of length {} cannot hold a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_row_major(rows: usize, cols: usize, values: &[f64]) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(UnmixError::InvalidInput(alloc::format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                values.len()
            )));
        }
        Ok(Self::from_fn(rows, cols, |r, c| values[r * cols + c]))
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |r, c| if r == c { 1.0 } else { 0.0 })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for c in 0..cols {
            for r in 0..rows {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix whose columns are the given slices.
    pub fn from_columns(rows: usize, columns: &[&[f64]]) -> Result<Self> {
        let mut data = Vec::with_capacity(rows * columns.len());
        for col in columns {
            if col.len() != rows {
                return Err(UnmixError::InvalidInput(alloc::format!(
                    "column of length {} in a matrix with {rows} rows",
                    col.len()
                )));
            }
            data.extend_from_slice(col);
        }
        Ok(Self {
            rows,
            cols: columns.len(),
            data,
        })
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
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn col(&self, c: usize) -> &[f64] {
        &self.data[c * self.rows..(c + 1) * self.rows]
    }

    #[inline]
    pub fn col_mut(&mut self, c: usize) -> &mut [f64] {
        let rows = self.rows;
        &mut self.data[c * rows..(c + 1) * rows]
    }

    pub fn columns(&self) -> impl Iterator<Item = &[f64]> + '_ {
        // chunks_exact panics on 0, and a matrix with no rows has empty columns
        (0..self.cols).map(move |c| self.col(c))
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = f64> + '_ {
        (0..self.cols).map(move |c| self.data[c * self.rows + r])
    }

    /// Row-major copy of the entries.
    pub fn to_row_major(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.data.len());
        for r in 0..self.rows {
            out.extend(self.row(r));
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self[(c, r)])
    }

    /// `self * other`.
    pub fn matmul(&self, other: &Matrix) -> Self {
        assert_eq!(self.cols, other.rows, "matmul: inner dimensions differ");
        let mut out = Self::zeros(self.rows, other.cols);
        for c in 0..other.cols {
            let dst = out.col_mut(c);
            for (k, &b) in other.col(c).iter().enumerate() {
                if b == 0.0 {
                    continue;
                }
                axpy(b, self.col(k), dst);
            }
        }
        out
    }

    /// `selfᵀ * other`.
    pub fn tr_matmul(&self, other: &Matrix) -> Self {
        assert_eq!(self.rows, other.rows, "tr_matmul: row counts differ");
        Self::from_fn(self.cols, other.cols, |r, c| dot(self.col(r), other.col(c)))
    }

    /// `selfᵀ * v` for a vector with `rows` entries.
    pub fn tr_matvec(&self, v: &[f64], out: &mut [f64]) {
        debug_assert_eq!(v.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for (o, col) in out.iter_mut().zip(self.columns()) {
            *o = dot(col, v);
        }
    }

    /// `self * v` for a vector with `cols` entries.
    pub fn matvec(&self, v: &[f64], out: &mut [f64]) {
        debug_assert_eq!(v.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        out.iter_mut().for_each(|o| *o = 0.0);
        for (k, &b) in v.iter().enumerate() {
            axpy(b, self.col(k), out);
        }
    }

    pub fn gram(&self) -> Self {
        self.tr_matmul(self)
    }

    pub fn sub(&self, other: &Matrix) -> Self {
        assert_eq!(self.shape(), other.shape(), "sub: shapes differ");
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Self {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn frobenius_norm_sq(&self) -> f64 {
        let mut acc = NeumaierSum::default();
        for v in &self.data {
            acc.add(v * v);
        }
        acc.value()
    }

    pub fn frobenius_norm(&self) -> f64 {
        libm::sqrt(self.frobenius_norm_sq())
    }

    pub fn select_columns(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(self.rows * idx.len());
        for &c in idx {
            data.extend_from_slice(self.col(c));
        }
        Self {
            rows: self.rows,
            cols: idx.len(),
            data,
        }
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        Self::from_fn(idx.len(), self.cols, |r, c| self[(idx[r], c)])
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[c * self.rows + r]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[c * self.rows + r]
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += a * x`
#[inline]
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
pub fn norm2(v: &[f64]) -> f64 {
    libm::sqrt(dot(v, v))
}

/// Euclidean distance between two equally long vectors.
pub fn dist2(a: &[f64], b: &[f64]) -> f64 {
    libm::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>())
}

/// Neumaier's variant of Kahan summation.
#[derive(Debug, Default, Clone, Copy)]
pub struct NeumaierSum {
    sum: f64,
    comp: f64,
}

impl NeumaierSum {
    #[inline]
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if libm::fabs(self.sum) >= libm::fabs(v) {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut acc = NeumaierSum::default();
    for v in values {
        acc.add(v);
    }
    acc.value()
}

/// Lower Cholesky factor of a symmetric positive definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky {
    n: usize,
    lower: Matrix,
}

impl Cholesky {
    /// Returns `None` when the matrix is not numerically positive definite.
    pub fn factor(a: &Matrix) -> Option<Self> {
        let n = a.rows();
        assert_eq!(n, a.cols(), "cholesky of a non-square matrix");
        let mut l = Matrix::zeros(n, n);
        for j in 0..n {
            let mut d = a[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if !d.is_finite() || d <= 0.0 {
                return None;
            }
            let d = libm::sqrt(d);
            l[(j, j)] = d;
            for i in j + 1..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / d;
            }
        }
        Some(Self { n, lower: l })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        debug_assert_eq!(b.len(), self.n);
        let l = &self.lower;
        for i in 0..self.n {
            let mut s = b[i];
            for k in 0..i {
                s -= l[(i, k)] * b[k];
            }
            b[i] = s / l[(i, i)];
        }
        for i in (0..self.n).rev() {
            let mut s = b[i];
            for k in i + 1..self.n {
                s -= l[(k, i)] * b[k];
            }
            b[i] = s / l[(i, i)];
        }
    }
}

/// Householder QR of a tall matrix, used for least-squares solves.
#[derive(Debug, Clone)]
pub struct HouseholderQr {
    /// Reflectors below the diagonal, `R` on and above it.
    packed: Matrix,
    /// Diagonal of `R`.
    r_diag: Vec<f64>,
}

impl HouseholderQr {
    pub fn factor(a: &Matrix) -> Self {
        let (m, n) = a.shape();
        assert!(m >= n, "householder QR needs a tall matrix");
        let mut qr = a.clone();
        let mut r_diag = vec![0.0; n];
        for k in 0..n {
            let mut nrm = 0.0_f64;
            for i in k..m {
                nrm = libm::hypot(nrm, qr[(i, k)]);
            }
            if nrm != 0.0 {
                if qr[(k, k)] < 0.0 {
                    nrm = -nrm;
                }
                for i in k..m {
                    qr[(i, k)] /= nrm;
                }
                qr[(k, k)] += 1.0;
                for j in k + 1..n {
                    let mut s = 0.0;
                    for i in k..m {
                        s += qr[(i, k)] * qr[(i, j)];
                    }
                    s = -s / qr[(k, k)];
                    for i in k..m {
                        let v = qr[(i, k)];
                        qr[(i, j)] += s * v;
                    }
                }
            }
            r_diag[k] = -nrm;
        }
        Self { packed: qr, r_diag }
    }

    pub fn r_diag(&self) -> &[f64] {
        &self.r_diag
    }

    /// Crude condition estimate of `AᵀA` from the diagonal of `R`.
    pub fn gram_condition_estimate(&self) -> f64 {
        let (lo, hi) = self
            .r_diag
            .iter()
            .fold((f64::INFINITY, 0.0_f64), |(lo, hi), d| {
                let d = libm::fabs(*d);
                (lo.min(d), hi.max(d))
            });
        if lo == 0.0 {
            f64::INFINITY
        } else {
            (hi / lo) * (hi / lo)
        }
    }

    pub fn is_full_rank(&self) -> bool {
        let scale = self
            .r_diag
            .iter()
            .fold(0.0_f64, |acc, d| acc.max(libm::fabs(*d)));
        let tol = scale * f64::EPSILON * self.packed.rows() as f64;
        scale > 0.0 && self.r_diag.iter().all(|d| libm::fabs(*d) > tol)
    }

    /// Least-squares solution of `A x ≈ b`; `b` is overwritten with `Qᵀb`.
    pub fn solve_least_squares(&self, b: &mut [f64], x: &mut [f64]) {
        let (m, n) = self.packed.shape();
        debug_assert_eq!(b.len(), m);
        debug_assert_eq!(x.len(), n);
        let qr = &self.packed;
        for k in 0..n {
            let mut s = 0.0;
            for i in k..m {
                s += qr[(i, k)] * b[i];
            }
            if qr[(k, k)] != 0.0 {
                s = -s / qr[(k, k)];
                for i in k..m {
                    b[i] += s * qr[(i, k)];
                }
            }
        }
        for k in (0..n).rev() {
            let mut s = b[k];
            for j in k + 1..n {
                s -= qr[(k, j)] * x[j];
            }
            x[k] = s / self.r_diag[k];
        }
    }
}

/// Euclidean projection of `v` onto the probability simplex.
pub fn project_simplex(v: &[f64], out: &mut [f64]) {
    debug_assert_eq!(v.len(), out.len());
    let mut sorted: Vec<f64> = v.to_vec();
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (i, &s) in sorted.iter().enumerate() {
        cumsum += s;
        let t = (cumsum - 1.0) / (i + 1) as f64;
        if s - t > 0.0 {
            theta = t;
        }
    }
    for (o, &x) in out.iter_mut().zip(v) {
        *o = (x - theta).max(0.0);
    }
}
