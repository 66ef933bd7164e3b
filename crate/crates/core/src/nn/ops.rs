//! Forward and backward kernels for the layers the architectures use.
//!
//! Every differentiable op comes as a pair: a forward function and a
//! `*_backward` that maps the upstream gradient to input and parameter
//! gradients. Backward functions never accumulate; callers add the results
//! into their gradient buffers.

use rand::Rng;

use super::matrix::{Matrix, Real, Seq};
use crate::error::{Error, Result};

pub const KERNEL_WIDTH: usize = 3;

pub struct DenseGrads<T> {
    pub dx: Matrix<T>,
    pub dw: Matrix<T>,
    pub db: Vec<T>,
}

/// `out[n] = x[n] * w + b`.
pub fn dense_forward<T: Real>(x: &Matrix<T>, w: &Matrix<T>, b: &[T]) -> Result<Matrix<T>> {
    if x.cols() != w.rows() || b.len() != w.cols() {
        return Err(Error::Shape(format!(
            "dense: x {:?}, w {:?}, b {}",
            x.shape(),
            w.shape(),
            b.len()
        )));
    }
    let mut out = x.matmul(w);
    for r in 0..out.rows() {
        for (o, &bias) in out.row_mut(r).iter_mut().zip(b) {
            *o += bias;
        }
    }
    Ok(out)
}

pub fn dense_backward<T: Real>(x: &Matrix<T>, w: &Matrix<T>, dout: &Matrix<T>) -> DenseGrads<T> {
    DenseGrads {
        dx: dout.matmul_t(w),
        dw: x.t_matmul(dout),
        db: dout.column_sums(),
    }
}

fn im2col<T: Real>(item: &[T], channels: usize, len: usize, cols: &mut [T]) {
    let lout = len - KERNEL_WIDTH + 1;
    for ci in 0..channels {
        let src = &item[ci * len..(ci + 1) * len];
        for tau in 0..KERNEL_WIDTH {
            let row = ci * KERNEL_WIDTH + tau;
            cols[row * lout..(row + 1) * lout].copy_from_slice(&src[tau..tau + lout]);
        }
    }
}

fn check_conv<T: Real>(x: &Seq<T>, kernels: &Matrix<T>, bias: &[T]) -> Result<usize> {
    if x.len < KERNEL_WIDTH {
        return Err(Error::InputShorterThanKernel(x.len));
    }
    if kernels.cols() != x.channels * KERNEL_WIDTH || bias.len() != kernels.rows() {
        return Err(Error::Shape(format!(
            "conv1d: input channels {}, kernel matrix {:?}, bias {}",
            x.channels,
            kernels.shape(),
            bias.len()
        )));
    }
    Ok(x.len - KERNEL_WIDTH + 1)
}

/// Valid (unpadded), stride-1 convolution with width-3 kernels.
///
/// `kernels` is `C_out x (C_in * 3)`, i.e. the row-major `[co][ci][tau]` array.
pub fn conv1d_forward<T: Real>(x: &Seq<T>, kernels: &Matrix<T>, bias: &[T]) -> Result<Seq<T>> {
    let lout = check_conv(x, kernels, bias)?;
    let cout = kernels.rows();
    let k = kernels.cols();
    let mut out = Seq::zeros(x.n, cout, lout);
    let mut cols = vec![T::zero(); k * lout];
    for i in 0..x.n {
        im2col(x.item(i), x.channels, x.len, &mut cols);
        let dst = out.item_mut(i);
        for (co, &b) in bias.iter().enumerate() {
            dst[co * lout..(co + 1) * lout].fill(b);
        }
        T::gemm(
            cout,
            k,
            lout,
            T::one(),
            kernels.data(),
            k as isize,
            1,
            &cols,
            lout as isize,
            1,
            T::one(),
            dst,
            lout as isize,
            1,
        );
    }
    Ok(out)
}

pub struct ConvGrads<T> {
    pub dx: Option<Seq<T>>,
    pub dk: Matrix<T>,
    pub db: Vec<T>,
}

pub fn conv1d_backward<T: Real>(x: &Seq<T>, kernels: &Matrix<T>, dout: &Seq<T>, need_dx: bool) -> ConvGrads<T> {
    let lout = x.len - KERNEL_WIDTH + 1;
    let cout = kernels.rows();
    let k = kernels.cols();
    debug_assert_eq!((dout.n, dout.channels, dout.len), (x.n, cout, lout));
    let mut dk = Matrix::zeros(cout, k);
    let mut db = vec![T::zero(); cout];
    let mut dx = need_dx.then(|| Seq::zeros(x.n, x.channels, x.len));
    let mut cols = vec![T::zero(); k * lout];
    let mut dcols = vec![T::zero(); k * lout];
    for i in 0..x.n {
        let g = dout.item(i);
        for (co, d) in db.iter_mut().enumerate() {
            *d += g[co * lout..(co + 1) * lout].iter().copied().sum::<T>();
        }
        im2col(x.item(i), x.channels, x.len, &mut cols);
        // dK += dout_i * cols_iᵀ
        T::gemm(
            cout,
            lout,
            k,
            T::one(),
            g,
            lout as isize,
            1,
            &cols,
            1,
            lout as isize,
            T::one(),
            dk.data_mut(),
            k as isize,
            1,
        );
        if let Some(dx) = dx.as_mut() {
            // dcols = Kᵀ * dout_i, then scatter back onto the input positions.
            T::gemm(
                k,
                cout,
                lout,
                T::one(),
                kernels.data(),
                1,
                k as isize,
                g,
                lout as isize,
                1,
                T::zero(),
                &mut dcols,
                lout as isize,
                1,
            );
            let len = x.len;
            let dst = dx.item_mut(i);
            for ci in 0..x.channels {
                for tau in 0..KERNEL_WIDTH {
                    let row = ci * KERNEL_WIDTH + tau;
                    let src = &dcols[row * lout..(row + 1) * lout];
                    for (d, &s) in dst[ci * len + tau..ci * len + tau + lout].iter_mut().zip(src) {
                        *d += s;
                    }
                }
            }
        }
    }
    ConvGrads { dx, dk, db }
}

pub struct Pooled<T> {
    pub out: Seq<T>,
    /// Flat index into the input of the element chosen for each output.
    pub argmax: Vec<u32>,
}

/// Window-2, stride-2 max pooling; a trailing odd element is dropped and ties
/// resolve to the earlier position.
pub fn maxpool1d<T: Real>(x: &Seq<T>) -> Result<Pooled<T>> {
    if x.len < 2 {
        return Err(Error::NothingToPool(x.len));
    }
    let lout = x.len / 2;
    let mut out = Vec::with_capacity(x.n * x.channels * lout);
    let mut argmax = Vec::with_capacity(out.capacity());
    for row in 0..x.n * x.channels {
        let base = row * x.len;
        for t in 0..lout {
            let (i0, i1) = (base + 2 * t, base + 2 * t + 1);
            let pick = if x.data[i0] >= x.data[i1] { i0 } else { i1 };
            out.push(x.data[pick]);
            argmax.push(pick as u32);
        }
    }
    Ok(Pooled {
        out: Seq {
            n: x.n,
            channels: x.channels,
            len: lout,
            data: out,
        },
        argmax,
    })
}

pub fn maxpool1d_backward<T: Real>(input_shape: (usize, usize, usize), argmax: &[u32], dout: &Seq<T>) -> Seq<T> {
    let (n, c, l) = input_shape;
    let mut dx = Seq::zeros(n, c, l);
    for (&idx, &g) in argmax.iter().zip(&dout.data) {
        dx.data[idx as usize] += g;
    }
    dx
}

pub fn relu<T: Real>(x: T) -> T {
    x.max(T::zero())
}

pub fn relu_matrix<T: Real>(x: &Matrix<T>) -> Matrix<T> {
    x.map(relu)
}

pub fn relu_seq<T: Real>(mut x: Seq<T>) -> Seq<T> {
    x.data.iter_mut().for_each(|v| *v = relu(*v));
    x
}

/// Gradient through ReLU given the layer's *output*.
pub fn relu_backward<T: Real>(out: &[T], dout: &mut [T]) {
    for (d, &o) in dout.iter_mut().zip(out) {
        if o <= T::zero() {
            *d = T::zero();
        }
    }
}

pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid_matrix<T: Real>(x: &Matrix<T>) -> Matrix<T> {
    x.map(sigmoid)
}

pub struct GateGrads<T> {
    pub dx: Matrix<T>,
    pub dw: Matrix<T>,
    pub db: Vec<T>,
}

/// Sigmoid gating `x ⊙ σ(x·w + b)`. Returns the output and the gate values.
pub fn gate_forward<T: Real>(x: &Matrix<T>, w: &Matrix<T>, b: &[T]) -> Result<(Matrix<T>, Matrix<T>)> {
    let g = sigmoid_matrix(&dense_forward(x, w, b)?);
    let out = g.zip_map(x, |a, b| a * b);
    Ok((out, g))
}

/// `g` is the gate returned by [`gate_forward`]; `x` reaches the output both directly and through the gate.
pub fn gate_backward<T: Real>(x: &Matrix<T>, g: &Matrix<T>, w: &Matrix<T>, dout: &Matrix<T>) -> GateGrads<T> {
    let dz = Matrix::from_fn(dout.rows(), dout.cols(), |r, c| {
        let gv = g[(r, c)];
        dout[(r, c)] * x[(r, c)] * gv * (T::one() - gv)
    });
    let inner = dense_backward(x, w, &dz);
    let mut dx = dout.zip_map(g, |d, gv| d * gv);
    dx.add_assign(&inner.dx);
    GateGrads {
        dx,
        dw: inner.dw,
        db: inner.db,
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows<T: Real>(x: &Matrix<T>) -> Matrix<T> {
    let mut out = x.clone();
    for r in 0..out.rows() {
        softmax_in_place(out.row_mut(r));
    }
    out
}

pub fn softmax_in_place<T: Real>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

/// Backward through a row softmax: `ds = p ⊙ (dp − rowsum(dp ⊙ p))`.
pub fn softmax_rows_backward<T: Real>(probs: &Matrix<T>, dprobs: &Matrix<T>) -> Matrix<T> {
    let mut ds = Matrix::zeros(probs.rows(), probs.cols());
    for r in 0..probs.rows() {
        let p = probs.row(r);
        let dp = dprobs.row(r);
        let dot: T = p.iter().zip(dp).map(|(&a, &b)| a * b).sum();
        for ((o, &pi), &dpi) in ds.row_mut(r).iter_mut().zip(p).zip(dp) {
            *o = pi * (dpi - dot);
        }
    }
    ds
}

/// Inverted dropout. Returns the output and, in training mode with a
/// non-zero rate, the per-element multiplier (0 or `1/(1-rate)`).
pub fn dropout<T: Real, R: Rng + ?Sized>(
    x: &Matrix<T>,
    rate: f64,
    rng: &mut R,
    training: bool,
) -> Result<(Matrix<T>, Option<Vec<T>>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
    }
    if !training || rate == 0.0 {
        return Ok((x.clone(), None));
    }
    let keep = T::lit(1.0 / (1.0 - rate));
    let mask: Vec<T> = (0..x.data().len())
        .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
        .collect();
    let mut out = x.clone();
    for (o, &m) in out.data_mut().iter_mut().zip(&mask) {
        *o *= m;
    }
    Ok((out, Some(mask)))
}

pub fn dropout_backward<T: Real>(mask: Option<&[T]>, dout: &mut Matrix<T>) {
    if let Some(mask) = mask {
        for (d, &m) in dout.data_mut().iter_mut().zip(mask) {
            *d *= m;
        }
    }
}
