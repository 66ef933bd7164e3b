//! Single-head scaled dot-product self-attention.

use super::matrix::{Matrix, Real};
use super::ops::{softmax_rows, softmax_rows_backward};
use crate::error::{Error, Result};

/// Everything the backward pass needs from one forward call.
pub struct AttentionCache<T> {
    tokens: Matrix<T>,
    q: Matrix<T>,
    k: Matrix<T>,
    v: Matrix<T>,
    weights: Matrix<T>,
}

impl<T: Real> AttentionCache<T> {
    /// The `T x T` row-stochastic attention weights.
    pub fn weights(&self) -> &Matrix<T> {
        &self.weights
    }
}

pub struct AttentionGrads<T> {
    pub dtokens: Matrix<T>,
    pub dwq: Matrix<T>,
    pub dwk: Matrix<T>,
    pub dwv: Matrix<T>,
}

/// `softmax(Q Kᵀ / √d) V` with `Q = tokens·Wq`, `K = tokens·Wk`, `V = tokens·Wv`.
pub fn self_attention<T: Real>(
    tokens: &Matrix<T>,
    wq: &Matrix<T>,
    wk: &Matrix<T>,
    wv: &Matrix<T>,
) -> Result<(Matrix<T>, AttentionCache<T>)> {
    let d = tokens.cols();
    if tokens.rows() == 0 {
        return Err(Error::Empty("attention needs at least one token"));
    }
    for (name, w) in [("Wq", wq), ("Wk", wk), ("Wv", wv)] {
        if w.shape() != (d, d) {
            return Err(Error::Shape(format!("{name} is {:?}, expected {d}x{d}", w.shape())));
        }
    }
    let q = tokens.matmul(wq);
    let k = tokens.matmul(wk);
    let v = tokens.matmul(wv);
    let scale = T::one() / T::lit(d as f64).sqrt();
    let weights = softmax_rows(&q.matmul_t(&k).scale(scale));
    let out = weights.matmul(&v);
    Ok((
        out,
        AttentionCache {
            tokens: tokens.clone(),
            q,
            k,
            v,
            weights,
        },
    ))
}

pub fn self_attention_backward<T: Real>(
    cache: &AttentionCache<T>,
    wq: &Matrix<T>,
    wk: &Matrix<T>,
    wv: &Matrix<T>,
    dout: &Matrix<T>,
) -> AttentionGrads<T> {
    let d = cache.tokens.cols();
    let scale = T::one() / T::lit(d as f64).sqrt();
    let dv = cache.weights.t_matmul(dout);
    let dweights = dout.matmul_t(&cache.v);
    let dscores = softmax_rows_backward(&cache.weights, &dweights).scale(scale);
    let dq = dscores.matmul(&cache.k);
    let dk = dscores.t_matmul(&cache.q);

    let mut dtokens = dq.matmul_t(wq);
    dtokens.add_assign(&dk.matmul_t(wk));
    dtokens.add_assign(&dv.matmul_t(wv));
    AttentionGrads {
        dtokens,
        dwq: cache.tokens.t_matmul(&dq),
        dwk: cache.tokens.t_matmul(&dk),
        dwv: cache.tokens.t_matmul(&dv),
    }
}
