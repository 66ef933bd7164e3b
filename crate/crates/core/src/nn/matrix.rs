//! Dense row-major matrices and `N x C x L` sequence batches.
//!
//! Everything numeric in the crate is generic over [`Real`], implemented for
//! `f32` (training) and `f64` (gradient checks and oracles).

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{Error, Result};

pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// `c = alpha * a * b + beta * c` with arbitrary element strides.
    ///
    /// `a` is `m x k`, `b` is `k x n`, `c` is `m x n`.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    );

    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite conversion")
    }
}

// Bounds checks for the strided views are done by the callers in this module;
// matrixmultiply itself trusts the pointers.
macro_rules! impl_real {
    ($t:ty, $kernel:path) => {
        impl Real for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                rsa: isize,
                csa: isize,
                b: &[Self],
                rsb: isize,
                csb: isize,
                beta: Self,
                c: &mut [Self],
                rsc: isize,
                csc: isize,
            ) {
                if m == 0 || n == 0 {
                    return;
                }
                debug_assert!(span(m, k, rsa, csa) <= a.len());
                debug_assert!(span(k, n, rsb, csb) <= b.len());
                debug_assert!(span(m, n, rsc, csc) <= c.len());
                // SAFETY: the asserted spans keep every strided access in bounds;
                // `c` is exclusively borrowed and cannot alias `a` or `b`.
                unsafe {
                    $kernel(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        rsc,
                        csc,
                    )
                }
            }
        }
    };
}

impl_real!(f32, matrixmultiply::sgemm);
impl_real!(f64, matrixmultiply::dgemm);

fn span(rows: usize, cols: usize, rs: isize, cs: isize) -> usize {
    if rows == 0 || cols == 0 {
        return 0;
    }
    (rows as isize - 1) as usize * rs as usize + (cols as isize - 1) as usize * cs as usize + 1
}

#[derive(Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Debug> Debug for Matrix<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "Matrix {}x{}", self.rows, self.cols)?;
        for r in 0..self.rows.min(8) {
            let start = r * self.cols;
            writeln!(f, "  {:?}", &self.data[start..start + self.cols.min(8)])?;
        }
        Ok(())
    }
}

impl<T: Real> Matrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
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
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Reinterpret the same row-major buffer with a different shape.
    pub fn reshape(self, rows: usize, cols: usize) -> Result<Self> {
        Matrix::new(rows, cols, self.data)
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn transpose(&self) -> Self {
        Matrix::from_fn(self.cols, self.rows, |r, c| self[(c, r)])
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        assert_eq!(self.shape(), other.shape(), "zip_map shape mismatch");
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.shape(), other.shape(), "add_assign shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|x| x * s)
    }

    /// Sum over rows: one value per column.
    pub fn column_sums(&self) -> Vec<T> {
        let mut out = vec![T::zero(); self.cols];
        for r in 0..self.rows {
            for (o, &x) in out.iter_mut().zip(self.row(r)) {
                *o += x;
            }
        }
        out
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max)
    }

    pub fn cast<U: Real>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| U::lit(x.as_f64())).collect(),
        }
    }

    /// `self * other`.
    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "matmul inner dimension");
        let mut out = Self::zeros(self.rows, other.cols);
        gemm_into(false, self, false, other, T::zero(), &mut out);
        out
    }

    /// `selfᵀ * other`.
    pub fn t_matmul(&self, other: &Self) -> Self {
        assert_eq!(self.rows, other.rows, "t_matmul inner dimension");
        let mut out = Self::zeros(self.cols, other.cols);
        gemm_into(true, self, false, other, T::zero(), &mut out);
        out
    }

    /// `self * otherᵀ`.
    pub fn matmul_t(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.cols, "matmul_t inner dimension");
        let mut out = Self::zeros(self.rows, other.rows);
        gemm_into(false, self, true, other, T::zero(), &mut out);
        out
    }
}

/// `out = op(a) * op(b) + beta * out`, where `op` optionally transposes.
pub fn gemm_into<T: Real>(ta: bool, a: &Matrix<T>, tb: bool, b: &Matrix<T>, beta: T, out: &mut Matrix<T>) {
    let (m, k, rsa, csa) = if ta {
        (a.cols, a.rows, 1, a.cols as isize)
    } else {
        (a.rows, a.cols, a.cols as isize, 1)
    };
    let (kb, n, rsb, csb) = if tb {
        (b.cols, b.rows, 1, b.cols as isize)
    } else {
        (b.rows, b.cols, b.cols as isize, 1)
    };
    assert_eq!(k, kb, "gemm inner dimension");
    assert_eq!(out.shape(), (m, n), "gemm output shape");
    let cols = out.cols as isize;
    T::gemm(
        m,
        k,
        n,
        T::one(),
        &a.data,
        rsa,
        csa,
        &b.data,
        rsb,
        csb,
        beta,
        &mut out.data,
        cols,
        1,
    );
}

impl<T> std::ops::Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    fn index(&self, (r, c): (usize, usize)) -> &T {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for Matrix<T> {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut T {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

/// A batch of multi-channel sequences, laid out `[n][channel][position]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Seq<T> {
    pub n: usize,
    pub channels: usize,
    pub len: usize,
    pub data: Vec<T>,
}

impl<T: Real> Seq<T> {
    pub fn new(n: usize, channels: usize, len: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != n * channels * len {
            return Err(Error::Shape(format!(
                "{} values for a {n}x{channels}x{len} sequence batch",
                data.len()
            )));
        }
        Ok(Seq {
            n,
            channels,
            len,
            data,
        })
    }

    pub fn zeros(n: usize, channels: usize, len: usize) -> Self {
        Seq {
            n,
            channels,
            len,
            data: vec![T::zero(); n * channels * len],
        }
    }

    /// Treat each row of `m` as a single-channel sequence.
    pub fn from_matrix(m: &Matrix<T>) -> Self {
        Seq {
            n: m.rows(),
            channels: 1,
            len: m.cols(),
            data: m.data().to_vec(),
        }
    }

    /// Flatten channels and positions into one feature row per item.
    pub fn flatten(self) -> Matrix<T> {
        Matrix {
            rows: self.n,
            cols: self.channels * self.len,
            data: self.data,
        }
    }

    pub fn item(&self, i: usize) -> &[T] {
        let sz = self.channels * self.len;
        &self.data[i * sz..(i + 1) * sz]
    }

    pub fn item_mut(&mut self, i: usize) -> &mut [T] {
        let sz = self.channels * self.len;
        &mut self.data[i * sz..(i + 1) * sz]
    }

    pub fn at(&self, i: usize, c: usize, t: usize) -> T {
        self.data[(i * self.channels + c) * self.len + t]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &Matrix<f64>, b: &Matrix<f64>) -> Matrix<f64> {
        Matrix::from_fn(a.rows(), b.cols(), |i, j| {
            (0..a.cols()).map(|k| a[(i, k)] * b[(k, j)]).sum()
        })
    }

    #[test]
    fn gemm_variants_match_naive() {
        let a = Matrix::from_fn(3, 4, |r, c| (r * 4 + c) as f64 * 0.37 - 1.0);
        let b = Matrix::from_fn(4, 5, |r, c| ((r + 2 * c) % 7) as f64 - 3.0);
        let expect = naive(&a, &b);
        assert!(a.matmul(&b).max_abs_diff(&expect) < 1e-12);
        assert!(a.transpose().t_matmul(&b).max_abs_diff(&expect) < 1e-12);
        assert!(a.matmul_t(&b.transpose()).max_abs_diff(&expect) < 1e-12);
    }

    #[test]
    fn new_rejects_bad_length() {
        assert!(Matrix::<f64>::new(2, 2, vec![0.0; 3]).is_err());
    }

    #[test]
    fn flatten_keeps_channel_major_order() {
        let s = Seq::new(1, 2, 2, vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(s.at(0, 1, 0), 3.0);
        assert_eq!(s.flatten().row(0), &[1.0, 2.0, 3.0, 4.0]);
    }
}
