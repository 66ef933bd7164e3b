//! Parameterised building blocks shared by the architectures. Each block keeps
//! only `ParamId`s; values and gradients live in the model's `ParamStore`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::attention::{self_attention, self_attention_backward, AttentionCache};
use crate::nn::ops::{
    conv1d_backward, conv1d_forward, dense_backward, dense_forward, dropout, dropout_backward, gate_backward, gate_forward,
    maxpool1d, maxpool1d_backward, relu_backward, relu_matrix, relu_seq, softmax_rows, KERNEL_WIDTH,
};
use crate::nn::{Matrix, ParamId, ParamStore, Real, Seq};

pub const CONV1_FILTERS: usize = 128;
pub const CONV2_FILTERS: usize = 64;
pub const HIDDEN1: usize = 90;
pub const HIDDEN2: usize = 45;

#[derive(Clone, Debug)]
pub(crate) struct Dense {
    w: ParamId,
    b: ParamId,
}

impl Dense {
    pub fn new<T: Real, R: Rng>(store: &mut ParamStore<T>, rng: &mut R, name: &str, din: usize, dout: usize) -> Result<Self> {
        Ok(Dense {
            w: store.add_glorot(format!("{name}.w"), &[din, dout], din, dout, rng)?,
            b: store.add_zeros(format!("{name}.b"), &[dout])?,
        })
    }

    /// All-zero weights: the layer's output is exactly its bias at initialisation.
    pub fn zeroed<T: Real>(store: &mut ParamStore<T>, name: &str, din: usize, dout: usize) -> Result<Self> {
        Ok(Dense {
            w: store.add_zeros(format!("{name}.w"), &[din, dout])?,
            b: store.add_zeros(format!("{name}.b"), &[dout])?,
        })
    }

    pub fn forward<T: Real>(&self, store: &ParamStore<T>, x: &Matrix<T>) -> Result<Matrix<T>> {
        dense_forward(x, store.value(self.w), store.value(self.b).data())
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward<T: Real>(&self, store: &mut ParamStore<T>, x: &Matrix<T>, dout: &Matrix<T>) -> Matrix<T> {
        let g = dense_backward(x, store.value(self.w), dout);
        store.accumulate(self.w, &g.dw);
        store.accumulate_slice(self.b, &g.db);
        g.dx
    }

    pub fn weight(&self) -> ParamId {
        self.w
    }

    pub fn bias(&self) -> ParamId {
        self.b
    }
}

#[derive(Clone, Debug)]
struct Conv {
    k: ParamId,
    b: ParamId,
}

impl Conv {
    fn new<T: Real, R: Rng>(store: &mut ParamStore<T>, rng: &mut R, name: &str, cin: usize, cout: usize) -> Result<Self> {
        Ok(Conv {
            k: store.add_glorot(
                format!("{name}.w"),
                &[cout, cin, KERNEL_WIDTH],
                cin * KERNEL_WIDTH,
                cout * KERNEL_WIDTH,
                rng,
            )?,
            b: store.add_zeros(format!("{name}.b"), &[cout])?,
        })
    }

    fn forward<T: Real>(&self, store: &ParamStore<T>, x: &Seq<T>) -> Result<Seq<T>> {
        conv1d_forward(x, store.value(self.k), store.value(self.b).data())
    }

    fn backward<T: Real>(&self, store: &mut ParamStore<T>, x: &Seq<T>, dout: &Seq<T>, need_dx: bool) -> Option<Seq<T>> {
        let g = conv1d_backward(x, store.value(self.k), dout, need_dx);
        store.accumulate(self.k, &g.dk);
        store.accumulate_slice(self.b, &g.db);
        g.dx
    }
}

/// Sequence lengths through conv → pool → conv → pool for an input of width `d`.
pub fn branch_lengths(d: usize) -> [usize; 5] {
    let l1 = d.saturating_sub(KERNEL_WIDTH - 1);
    let p1 = l1 / 2;
    let l2 = p1.saturating_sub(KERNEL_WIDTH - 1);
    let p2 = l2 / 2;
    [d, l1, p1, l2, p2]
}

pub fn branch_width(d: usize) -> usize {
    CONV2_FILTERS * branch_lengths(d)[4]
}

/// Two convolution blocks (conv k=3 → ReLU → max-pool 2) followed by flattening.
#[derive(Clone, Debug)]
pub(crate) struct ConvBranch {
    conv1: Conv,
    conv2: Conv,
}

pub(crate) struct BranchCache<T> {
    input: Seq<T>,
    c1: Seq<T>,
    p1_argmax: Vec<u32>,
    p1: Seq<T>,
    c2: Seq<T>,
    p2_argmax: Vec<u32>,
    p2_shape: (usize, usize, usize),
}

impl ConvBranch {
    pub fn new<T: Real, R: Rng>(store: &mut ParamStore<T>, rng: &mut R, prefix: &str) -> Result<Self> {
        Ok(ConvBranch {
            conv1: Conv::new(store, rng, &format!("{prefix}.conv1"), 1, CONV1_FILTERS)?,
            conv2: Conv::new(store, rng, &format!("{prefix}.conv2"), CONV1_FILTERS, CONV2_FILTERS)?,
        })
    }

    pub fn forward<T: Real>(&self, store: &ParamStore<T>, x: &Matrix<T>, record: bool) -> Result<(Matrix<T>, Option<BranchCache<T>>)> {
        let input = Seq::from_matrix(x);
        let c1 = relu_seq(self.conv1.forward(store, &input)?);
        let p1 = maxpool1d(&c1)?;
        let c2 = relu_seq(self.conv2.forward(store, &p1.out)?);
        let p2 = maxpool1d(&c2)?;
        let p2_shape = (p2.out.n, p2.out.channels, p2.out.len);
        let flat = p2.out.flatten();
        let cache = record.then(|| BranchCache {
            input,
            c1,
            p1_argmax: p1.argmax,
            p1: p1.out,
            c2,
            p2_argmax: p2.argmax,
            p2_shape,
        });
        Ok((flat, cache))
    }

    pub fn backward<T: Real>(&self, store: &mut ParamStore<T>, cache: &BranchCache<T>, dflat: Matrix<T>) {
        let (n, c, l) = cache.p2_shape;
        let dp2 = Seq::new(n, c, l, dflat.into_data()).expect("flattened branch shape");
        let c2_shape = (cache.c2.n, cache.c2.channels, cache.c2.len);
        let mut dc2 = maxpool1d_backward(c2_shape, &cache.p2_argmax, &dp2);
        relu_backward(&cache.c2.data, &mut dc2.data);
        let dp1 = self
            .conv2
            .backward(store, &cache.p1, &dc2, true)
            .expect("requested input gradient");
        let c1_shape = (cache.c1.n, cache.c1.channels, cache.c1.len);
        let mut dc1 = maxpool1d_backward(c1_shape, &cache.p1_argmax, &dp1);
        relu_backward(&cache.c1.data, &mut dc1.data);
        self.conv1.backward(store, &cache.input, &dc1, false);
    }
}

/// Sigmoid gate: `out = sigmoid(x·W + b) ⊙ x`.
#[derive(Clone, Debug)]
pub(crate) struct Gate {
    dense: Dense,
}

pub(crate) struct GateCache<T> {
    x: Matrix<T>,
    g: Matrix<T>,
}

impl Gate {
    pub fn new<T: Real, R: Rng>(store: &mut ParamStore<T>, rng: &mut R, name: &str, dim: usize) -> Result<Self> {
        Ok(Gate {
            dense: Dense::new(store, rng, name, dim, dim)?,
        })
    }

    pub fn dense(&self) -> &Dense {
        &self.dense
    }

    pub fn forward<T: Real>(&self, store: &ParamStore<T>, x: &Matrix<T>) -> Result<(Matrix<T>, GateCache<T>)> {
        let d = &self.dense;
        let (out, g) = gate_forward(x, store.value(d.weight()), store.value(d.bias()).data())?;
        Ok((out, GateCache { x: x.clone(), g }))
    }

    pub fn gate_values<T>(cache: &GateCache<T>) -> &Matrix<T> {
        &cache.g
    }

    pub fn backward<T: Real>(&self, store: &mut ParamStore<T>, cache: &GateCache<T>, dout: &Matrix<T>) -> Matrix<T> {
        let d = &self.dense;
        let g = gate_backward(&cache.x, &cache.g, store.value(d.weight()), dout);
        store.accumulate(d.weight(), &g.dw);
        store.accumulate_slice(d.bias(), &g.db);
        g.dx
    }
}

/// Self-attention over fixed-width tokens cut from each row.
#[derive(Clone, Debug)]
pub(crate) struct TokenAttention {
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    token_dim: usize,
}

impl TokenAttention {
    pub fn new<T: Real, R: Rng>(store: &mut ParamStore<T>, rng: &mut R, name: &str, token_dim: usize) -> Result<Self> {
        let mut mk = |s: &str| store.add_glorot(format!("{name}.{s}"), &[token_dim, token_dim], token_dim, token_dim, rng);
        Ok(TokenAttention {
            wq: mk("wq")?,
            wk: mk("wk")?,
            wv: mk("wv")?,
            token_dim,
        })
    }

    pub fn forward<T: Real>(&self, store: &ParamStore<T>, x: &Matrix<T>, record: bool) -> Result<(Matrix<T>, Vec<AttentionCache<T>>)> {
        let d = self.token_dim;
        if !x.cols().is_multiple_of(d) {
            return Err(Error::Shape(format!("width {} is not a multiple of token width {d}", x.cols())));
        }
        let tokens = x.cols() / d;
        let mut out = Matrix::zeros(x.rows(), x.cols());
        let mut caches = Vec::with_capacity(if record { x.rows() } else { 0 });
        for r in 0..x.rows() {
            let tok = Matrix::new(tokens, d, x.row(r).to_vec())?;
            let (o, cache) = self_attention(&tok, store.value(self.wq), store.value(self.wk), store.value(self.wv))?;
            out.row_mut(r).copy_from_slice(o.data());
            if record {
                caches.push(cache);
            }
        }
        Ok((out, caches))
    }

    pub fn backward<T: Real>(&self, store: &mut ParamStore<T>, caches: &[AttentionCache<T>], dout: &Matrix<T>) -> Matrix<T> {
        let d = self.token_dim;
        let tokens = dout.cols() / d;
        let mut dx = Matrix::zeros(dout.rows(), dout.cols());
        let mut dwq = Matrix::zeros(d, d);
        let mut dwk = Matrix::zeros(d, d);
        let mut dwv = Matrix::zeros(d, d);
        for (r, cache) in caches.iter().enumerate() {
            let dtok = Matrix::new(tokens, d, dout.row(r).to_vec()).expect("token shape");
            let g = self_attention_backward(cache, store.value(self.wq), store.value(self.wk), store.value(self.wv), &dtok);
            dx.row_mut(r).copy_from_slice(g.dtokens.data());
            dwq.add_assign(&g.dwq);
            dwk.add_assign(&g.dwk);
            dwv.add_assign(&g.dwv);
        }
        store.accumulate(self.wq, &dwq);
        store.accumulate(self.wk, &dwk);
        store.accumulate(self.wv, &dwv);
        dx
    }
}

/// Dense 90 → ReLU → dropout → dense 45 → ReLU → dropout → dense C → softmax.
///
/// The output layer starts at zero so an untrained model predicts the uniform
/// distribution regardless of input scale.
#[derive(Clone, Debug)]
pub(crate) struct Head {
    fc1: Dense,
    fc2: Dense,
    out: Dense,
}

pub(crate) struct HeadCache<T> {
    x: Matrix<T>,
    h1: Matrix<T>,
    mask1: Option<Vec<T>>,
    d1: Matrix<T>,
    h2: Matrix<T>,
    mask2: Option<Vec<T>>,
    d2: Matrix<T>,
}

impl Head {
    pub fn new<T: Real, R: Rng>(store: &mut ParamStore<T>, rng: &mut R, din: usize, classes: usize) -> Result<Self> {
        Ok(Head {
            fc1: Dense::new(store, rng, "head.fc1", din, HIDDEN1)?,
            fc2: Dense::new(store, rng, "head.fc2", HIDDEN1, HIDDEN2)?,
            out: Dense::zeroed(store, "head.out", HIDDEN2, classes)?,
        })
    }

    /// Returns class probabilities.
    pub fn forward<T: Real, R: Rng>(
        &self,
        store: &ParamStore<T>,
        x: &Matrix<T>,
        dropout_rate: f64,
        training: bool,
        rng: &mut R,
        record: bool,
    ) -> Result<(Matrix<T>, Option<HeadCache<T>>)> {
        let h1 = relu_matrix(&self.fc1.forward(store, x)?);
        let (d1, mask1) = dropout(&h1, dropout_rate, rng, training)?;
        let h2 = relu_matrix(&self.fc2.forward(store, &d1)?);
        let (d2, mask2) = dropout(&h2, dropout_rate, rng, training)?;
        let probs = softmax_rows(&self.out.forward(store, &d2)?);
        let cache = record.then(|| HeadCache {
            x: x.clone(),
            h1,
            mask1,
            d1,
            h2,
            mask2,
            d2,
        });
        Ok((probs, cache))
    }

    /// Backward from the logit gradient; returns the gradient for the head input.
    pub fn backward<T: Real>(&self, store: &mut ParamStore<T>, cache: &HeadCache<T>, dlogits: &Matrix<T>) -> Matrix<T> {
        let mut g = self.out.backward(store, &cache.d2, dlogits);
        dropout_backward(cache.mask2.as_deref(), &mut g);
        relu_backward(cache.h2.data(), g.data_mut());
        let mut g = self.fc2.backward(store, &cache.d1, &g);
        dropout_backward(cache.mask1.as_deref(), &mut g);
        relu_backward(cache.h1.data(), g.data_mut());
        self.fc1.backward(store, &cache.x, &g)
    }
}

/// Convolutional branch plus a dense projection (with ReLU) to a shared width.
#[derive(Clone, Debug)]
pub(crate) struct ProjectedBranch {
    branch: ConvBranch,
    proj: Dense,
}

pub(crate) struct ProjectedCache<T> {
    branch: BranchCache<T>,
    flat: Matrix<T>,
    out: Matrix<T>,
}

impl ProjectedBranch {
    pub fn new<T: Real, R: Rng>(store: &mut ParamStore<T>, rng: &mut R, prefix: &str, d_in: usize, proj_dim: usize) -> Result<Self> {
        let branch = ConvBranch::new(store, rng, prefix)?;
        let proj = Dense::new(store, rng, &format!("{prefix}.proj"), branch_width(d_in), proj_dim)?;
        Ok(ProjectedBranch { branch, proj })
    }

    pub fn forward<T: Real>(&self, store: &ParamStore<T>, x: &Matrix<T>, record: bool) -> Result<(Matrix<T>, Option<ProjectedCache<T>>)> {
        let (flat, cache) = self.branch.forward(store, x, record)?;
        let out = relu_matrix(&self.proj.forward(store, &flat)?);
        let cache = cache.map(|branch| ProjectedCache {
            branch,
            flat,
            out: out.clone(),
        });
        Ok((out, cache))
    }

    pub fn backward<T: Real>(&self, store: &mut ParamStore<T>, cache: &ProjectedCache<T>, mut dout: Matrix<T>) {
        relu_backward(cache.out.data(), dout.data_mut());
        let dflat = self.proj.backward(store, &cache.flat, &dout);
        self.branch.backward(store, &cache.branch, dflat);
    }
}
