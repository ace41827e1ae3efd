//! Dense real linear algebra.
//!
//! Everything here works on a single row-major [`Matrix`] type. Products use a
//! fixed summation order so results are bitwise reproducible on one platform.

mod assignment;
mod expm;
mod svd;

use std::fmt;
use std::ops::{Add, Index, IndexMut, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::{Error, Result, Scalar};

pub use assignment::{
    hungarian_max, nearest_generalized_permutation, nearest_in_generalized_group, GroupProjection,
};
pub use expm::{expm, expm_frechet_adjoint};
pub use svd::{sigma_extremes, singular_values, spectral_norm, SpectralReport};

/// Dense row-major matrix.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::contract(format!(
                "{rows}x{cols} matrix needs {} elements, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds from nested rows; panics on ragged input.
    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.as_ref().len(), cols, "ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn from_diag(d: &[T]) -> Self {
        let mut m = Self::zeros(d.len(), d.len());
        for (i, &v) in d.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    /// Column vector view of a slice.
    pub fn column(v: &[T]) -> Self {
        Self {
            rows: v.len(),
            cols: 1,
            data: v.to_vec(),
        }
    }

    pub fn from_f64(rows: usize, cols: usize, data: &[f64]) -> Result<Self> {
        Self::new(rows, cols, data.iter().map(|&x| T::of(x)).collect())
    }

    pub fn cast<U: Scalar>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| U::of(x.as_f64())).collect(),
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        let c = self.cols;
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn col_to_vec(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|x| x * s)
    }

    pub fn fill(&mut self, v: T) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    /// `self += s * other`.
    pub fn axpy(&mut self, s: T, other: &Self) {
        assert_eq!(self.shape(), other.shape(), "axpy shape mismatch");
        for (x, &y) in self.data.iter_mut().zip(&other.data) {
            *x += s * y;
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.shape(), other.shape(), "add shape mismatch");
        for (x, &y) in self.data.iter_mut().zip(&other.data) {
            *x += y;
        }
    }

    pub fn hadamard(&self, other: &Self) -> Self {
        assert_eq!(self.shape(), other.shape(), "hadamard shape mismatch");
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a * b)
                .collect(),
        }
    }

    /// Multiplies row `i` by `d[i]`, i.e. `diag(d) · self`.
    pub fn scale_rows(&self, d: &[T]) -> Self {
        assert_eq!(d.len(), self.rows, "scale_rows length mismatch");
        let mut out = self.clone();
        for (i, &s) in d.iter().enumerate() {
            out.row_mut(i).iter_mut().for_each(|x| *x *= s);
        }
        out
    }

    /// Multiplies column `j` by `d[j]`, i.e. `self · diag(d)`.
    pub fn scale_cols(&self, d: &[T]) -> Self {
        assert_eq!(d.len(), self.cols, "scale_cols length mismatch");
        let mut out = self.clone();
        for i in 0..self.rows {
            for (x, &s) in out.row_mut(i).iter_mut().zip(d) {
                *x *= s;
            }
        }
        out
    }

    /// Adds `v[i]` to every entry of row `i`.
    pub fn add_col_broadcast(&mut self, v: &[T]) {
        assert_eq!(v.len(), self.rows, "broadcast length mismatch");
        for (i, &b) in v.iter().enumerate() {
            self.row_mut(i).iter_mut().for_each(|x| *x += b);
        }
    }

    /// Row sums.
    pub fn sum_cols(&self) -> Vec<T> {
        (0..self.rows)
            .map(|i| self.row(i).iter().fold(T::zero(), |a, &b| a + b))
            .collect()
    }

    pub fn frobenius_norm(&self) -> T {
        self.data.iter().fold(T::zero(), |a, &x| a + x * x).sqrt()
    }

    /// Largest absolute entry (the `max` norm).
    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |a, &x| a.max(x.abs()))
    }

    /// Induced 1-norm (max column abs sum).
    pub fn norm1(&self) -> T {
        let mut best = T::zero();
        for j in 0..self.cols {
            let mut s = T::zero();
            for i in 0..self.rows {
                s += self[(i, j)].abs();
            }
            best = best.max(s);
        }
        best
    }

    pub fn trace(&self) -> T {
        (0..self.rows.min(self.cols)).fold(T::zero(), |a, i| a + self[(i, i)])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// `‖selfᵀ self − I‖_F`, the orthogonality defect.
    pub fn orthogonality_defect(&self) -> T {
        let mut g = self.tr_mul(self);
        for i in 0..g.rows {
            g[(i, i)] -= T::one();
        }
        g.frobenius_norm()
    }

    /// `self · other`, panicking on a shape mismatch. See [`matmul`] for the checked form.
    pub fn mul(&self, other: &Self) -> Self {
        assert_eq!(
            self.cols, other.rows,
            "matmul: {}x{} · {}x{}",
            self.rows, self.cols, other.rows, other.cols
        );
        let mut out = Self::zeros(self.rows, other.cols);
        gemm_acc(&mut out, Operand::plain(self), Operand::plain(other));
        out
    }

    /// `selfᵀ · other`.
    pub fn tr_mul(&self, other: &Self) -> Self {
        assert_eq!(self.rows, other.rows, "tr_mul row mismatch");
        let mut out = Self::zeros(self.cols, other.cols);
        let a = Operand {
            data: &self.data,
            rows: self.cols,
            cols: self.rows,
            rs: 1,
            cs: self.cols,
        };
        gemm_acc(&mut out, a, Operand::plain(other));
        out
    }

    /// `self · otherᵀ`.
    pub fn mul_tr(&self, other: &Self) -> Self {
        let mut out = Self::zeros(self.rows, other.rows);
        out.acc_mul_tr(self, other);
        out
    }

    /// `self += a · bᵀ`.
    pub fn acc_mul_tr(&mut self, a: &Self, b: &Self) {
        assert_eq!(a.cols, b.cols, "acc_mul_tr inner mismatch");
        assert_eq!(
            (self.rows, self.cols),
            (a.rows, b.rows),
            "acc_mul_tr output mismatch"
        );
        let bt = Operand {
            data: &b.data,
            rows: b.cols,
            cols: b.rows,
            rs: 1,
            cs: b.cols,
        };
        gemm_acc(self, Operand::plain(a), bt);
    }
}

/// Inner product with four interleaved partial sums; the order is fixed.
#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let n = a.len().min(b.len());
    let (mut s0, mut s1, mut s2, mut s3) = (T::zero(), T::zero(), T::zero(), T::zero());
    let chunks = n / 4;
    for c in 0..chunks {
        let k = 4 * c;
        s0 += a[k] * b[k];
        s1 += a[k + 1] * b[k + 1];
        s2 += a[k + 2] * b[k + 2];
        s3 += a[k + 3] * b[k + 3];
    }
    let mut s = (s0 + s1) + (s2 + s3);
    for k in 4 * chunks..n {
        s += a[k] * b[k];
    }
    s
}

/// Strided read-only view used to express transposes without copying.
#[derive(Clone, Copy)]
struct Operand<'a, T> {
    data: &'a [T],
    rows: usize,
    cols: usize,
    rs: usize,
    cs: usize,
}

impl<'a, T> Operand<'a, T> {
    fn plain(m: &'a Matrix<T>) -> Self {
        Self {
            data: &m.data,
            rows: m.rows,
            cols: m.cols,
            rs: m.cols,
            cs: 1,
        }
    }

    fn fits(&self) -> bool {
        self.rows == 0
            || self.cols == 0
            || (self.rows - 1) * self.rs + (self.cols - 1) * self.cs < self.data.len()
    }
}

/// `c += a · b` through the blocked kernel of `matrixmultiply`.
fn gemm_acc<T: Scalar>(c: &mut Matrix<T>, a: Operand<'_, T>, b: Operand<'_, T>) {
    assert!(a.cols == b.rows && c.rows == a.rows && c.cols == b.cols && a.fits() && b.fits());
    if c.data.is_empty() || a.cols == 0 {
        return;
    }
    let n = c.cols;
    // SAFETY: the asserts above bound every strided access by the slice
    // lengths, and `c` is borrowed mutably so it cannot alias `a` or `b`.
    unsafe {
        T::gemm(
            a.rows,
            a.cols,
            n,
            T::one(),
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            T::one(),
            c.data.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Checked dense product.
pub fn matmul<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    if a.cols != b.rows {
        return Err(Error::contract(format!(
            "matmul dimension mismatch: {}x{} · {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    Ok(a.mul(b))
}

/// Solves `a · x = b` by LU with partial pivoting.
pub fn solve<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    if !a.is_square() || a.rows != b.rows {
        return Err(Error::contract(
            "solve: a must be square with a.rows == b.rows",
        ));
    }
    let n = a.rows;
    let m = b.cols;
    let mut lu = a.clone();
    let mut x = b.clone();
    for k in 0..n {
        let mut p = k;
        let mut best = lu[(k, k)].abs();
        for i in k + 1..n {
            let v = lu[(i, k)].abs();
            if v > best {
                best = v;
                p = i;
            }
        }
        if best == T::zero() {
            return Err(Error::contract("solve: singular matrix"));
        }
        if p != k {
            for j in 0..n {
                lu.data.swap(k * n + j, p * n + j);
            }
            for j in 0..m {
                x.data.swap(k * m + j, p * m + j);
            }
        }
        let pivot = lu[(k, k)];
        for i in k + 1..n {
            let f = lu[(i, k)] / pivot;
            if f == T::zero() {
                continue;
            }
            lu[(i, k)] = f;
            for j in k + 1..n {
                let v = lu[(k, j)];
                lu[(i, j)] -= f * v;
            }
            for j in 0..m {
                let v = x[(k, j)];
                x[(i, j)] -= f * v;
            }
        }
    }
    for k in (0..n).rev() {
        let pivot = lu[(k, k)];
        for j in 0..m {
            let mut s = x[(k, j)];
            for i in k + 1..n {
                s -= lu[(k, i)] * x[(i, j)];
            }
            x[(k, j)] = s / pivot;
        }
    }
    Ok(x)
}

/// Skew-symmetric matrix `u − uᵀ` where `u` holds the strict upper triangle
/// in row-major order.
pub fn skew_from_upper<T: Scalar>(n: usize, upper: &[T]) -> Matrix<T> {
    assert_eq!(
        upper.len(),
        n * n.saturating_sub(1) / 2,
        "upper-triangle length"
    );
    let mut m = Matrix::zeros(n, n);
    let mut idx = 0;
    for i in 0..n {
        for j in i + 1..n {
            m[(i, j)] = upper[idx];
            m[(j, i)] = -upper[idx];
            idx += 1;
        }
    }
    m
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

impl<T: Scalar> Mul for &Matrix<T> {
    type Output = Matrix<T>;

    fn mul(self, rhs: &Matrix<T>) -> Matrix<T> {
        Matrix::mul(self, rhs)
    }
}

impl<T: Scalar> Add for &Matrix<T> {
    type Output = Matrix<T>;

    fn add(self, rhs: &Matrix<T>) -> Matrix<T> {
        let mut out = self.clone();
        out.add_assign(rhs);
        out
    }
}

impl<T: Scalar> Sub for &Matrix<T> {
    type Output = Matrix<T>;

    fn sub(self, rhs: &Matrix<T>) -> Matrix<T> {
        let mut out = self.clone();
        out.axpy(-T::one(), rhs);
        out
    }
}

impl<T: Scalar> Neg for &Matrix<T> {
    type Output = Matrix<T>;

    fn neg(self) -> Matrix<T> {
        self.map(|x| -x)
    }
}

impl<T: fmt::Debug> fmt::Debug for Matrix<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for row in self.data.chunks(self.cols.max(1)) {
            writeln!(f, "  {row:?}")?;
        }
        write!(f, "]")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> Matrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    fn naive(a: &Matrix<f64>, b: &Matrix<f64>) -> Matrix<f64> {
        let mut c = Matrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut s = 0.0;
                for k in 0..a.cols() {
                    s += a[(i, k)] * b[(k, j)];
                }
                c[(i, j)] = s;
            }
        }
        c
    }

    #[test]
    fn identity_product() {
        let x = random(3, 3, 1);
        assert_eq!(matmul(&Matrix::identity(3), &x).unwrap(), x);
    }

    #[test]
    fn rotation_squared() {
        let r = Matrix::from_rows(&[[0.0, 1.0], [-1.0, 0.0]]);
        let r2 = matmul(&r, &r).unwrap();
        assert_eq!(r2, Matrix::from_rows(&[[-1.0, 0.0], [0.0, -1.0]]));
    }

    // gemm may fuse multiply-adds and reorder sums, so only the last bits can differ
    fn assert_close(x: &Matrix<f64>, y: &Matrix<f64>) {
        assert_eq!(x.shape(), y.shape());
        for (p, q) in x.as_slice().iter().zip(y.as_slice()) {
            assert!((p - q).abs() <= 1e-14 * (1.0 + q.abs()), "{p} vs {q}");
        }
    }

    #[test]
    fn matches_naive_triple_loop() {
        for seed in 0..5 {
            let a = random(4, 4, seed);
            let b = random(4, 4, seed + 100);
            assert_close(&matmul(&a, &b).unwrap(), &naive(&a, &b));
        }
        let a = random(5, 7, 9);
        let b = random(7, 3, 10);
        assert_close(&matmul(&a, &b).unwrap(), &naive(&a, &b));
        let a = random(37, 29, 11);
        let b = random(29, 41, 12);
        assert_close(&matmul(&a, &b).unwrap(), &naive(&a, &b));
        assert_close(&a.tr_mul(&a), &naive(&a.transpose(), &a));
        assert_close(&b.mul_tr(&b), &naive(&b, &b.transpose()));
    }

    #[test]
    fn dimension_mismatch_is_contract_error() {
        let a = random(2, 3, 1);
        assert!(matches!(matmul(&a, &a), Err(Error::Contract(_))));
        assert!(Matrix::<f64>::new(2, 2, vec![1.0; 3]).is_err());
    }

    #[test]
    fn transposed_products_agree_with_explicit_transpose() {
        let a = random(6, 4, 3);
        let b = random(6, 5, 4);
        let c = random(3, 4, 5);
        let d1 = a.tr_mul(&b);
        let d2 = naive(&a.transpose(), &b);
        for (x, y) in d1.as_slice().iter().zip(d2.as_slice()) {
            assert!((x - y).abs() < 1e-14);
        }
        let e1 = a.mul_tr(&c);
        let e2 = naive(&a, &c.transpose());
        for (x, y) in e1.as_slice().iter().zip(e2.as_slice()) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn lu_solve_recovers_solution() {
        let a = &random(5, 5, 7) + &Matrix::identity(5).scale(3.0);
        let x = random(5, 2, 8);
        let b = a.mul(&x);
        let y = solve(&a, &b).unwrap();
        assert!((&y - &x).max_abs() < 1e-12);
    }

    #[test]
    fn skew_embedding() {
        let s = skew_from_upper(3, &[1.0, 2.0, 3.0]);
        assert_eq!(
            s,
            Matrix::from_rows(&[[0.0, 1.0, 2.0], [-1.0, 0.0, 3.0], [-2.0, -3.0, 0.0]])
        );
        assert_eq!(s.transpose(), -&s);
    }

    #[test]
    fn diagonal_scaling_lemma() {
        // ‖D·A‖₂ ≤ max|d_i|·‖A‖₂
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for trial in 0..50 {
            let n = 2 + trial % 6;
            let a = random(n, n + trial % 3, trial as u64);
            let d: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let lhs = spectral_norm(&a.scale_rows(&d)).unwrap();
            let dmax = d.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            let rhs = dmax * spectral_norm(&a).unwrap();
            assert!(lhs <= rhs * (1.0 + 1e-12) + 1e-15, "{lhs} > {rhs}");
        }
    }
}
