//! Canonical-correlation alignment loss and its gradient.
//!
//! For two batches of projected features `X̂`, `Ŷ` (both `N x D`) the loss is
//! `tr(Σxx^{-1/2} Σxy Σyy^{-1/2})` on column-centred data, with a ridge on the
//! self-covariances and an eigenvalue floor before the inverse square root.
//! All internal arithmetic is done in `f64` regardless of the input precision.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Matrix, Real};

/// How the whitened cross-covariance `T` is reduced to a scalar.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CcaMode {
    /// `tr(T)`.
    #[default]
    Trace,
    /// Sum of singular values of `T` (the classical deep-CCA objective).
    NuclearNorm,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CcaConfig {
    pub ridge: f64,
    pub eig_floor: f64,
    pub mode: CcaMode,
}

impl Default for CcaConfig {
    fn default() -> Self {
        CcaConfig {
            ridge: 1e-3,
            eig_floor: 1e-6,
            mode: CcaMode::Trace,
        }
    }
}

impl CcaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.ridge >= 0.0) {
            return Err(Error::Config(format!("ridge must be >= 0, got {}", self.ridge)));
        }
        if !(self.eig_floor > 0.0) {
            return Err(Error::Config(format!("eig_floor must be > 0, got {}", self.eig_floor)));
        }
        Ok(())
    }
}

fn to_na<T: Real>(m: &Matrix<T>) -> DMatrix<f64> {
    DMatrix::from_fn(m.rows(), m.cols(), |r, c| m[(r, c)].as_f64())
}

fn from_na<T: Real>(m: &DMatrix<f64>) -> Matrix<T> {
    Matrix::from_fn(m.nrows(), m.ncols(), |r, c| T::lit(m[(r, c)]))
}

fn center_na(m: &mut DMatrix<f64>) {
    let n = m.nrows() as f64;
    for mut col in m.column_iter_mut() {
        let mean = col.sum() / n;
        col.add_scalar_mut(-mean);
    }
}

/// Subtract each column's mean.
pub fn center_columns<T: Real>(m: &Matrix<T>) -> Matrix<T> {
    let mut out = m.clone();
    if m.rows() == 0 {
        return out;
    }
    let n = T::lit(m.rows() as f64);
    let means: Vec<T> = m.column_sums().into_iter().map(|s| s / n).collect();
    for r in 0..out.rows() {
        for (v, &mu) in out.row_mut(r).iter_mut().zip(&means) {
            *v -= mu;
        }
    }
    out
}

fn covariance_na(a: &DMatrix<f64>, b: &DMatrix<f64>, ridge: f64) -> DMatrix<f64> {
    let mut s = a.tr_mul(b) / (a.nrows() as f64 - 1.0);
    if ridge != 0.0 {
        for i in 0..s.nrows() {
            s[(i, i)] += ridge;
        }
    }
    s
}

/// `AᵀB / (N − 1)` for already-centred inputs, plus `ridge · I`.
///
/// Pass a non-zero ridge only for a self-covariance (`A` and `B` the same data).
pub fn covariance<T: Real>(a: &Matrix<T>, b: &Matrix<T>, ridge: f64) -> Result<Matrix<f64>> {
    if a.rows() != b.rows() {
        return Err(Error::Shape(format!("covariance over {} vs {} samples", a.rows(), b.rows())));
    }
    if a.rows() < 2 {
        return Err(Error::CovarianceUndefined(a.rows()));
    }
    if ridge != 0.0 && a.cols() != b.cols() {
        return Err(Error::Shape("ridge requires a square (self-)covariance".into()));
    }
    Ok(from_na(&covariance_na(&to_na(a), &to_na(b), ridge)))
}

pub fn self_covariance<T: Real>(a: &Matrix<T>, ridge: f64) -> Result<Matrix<f64>> {
    covariance(a, a, ridge)
}

fn max_asymmetry(s: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..s.nrows() {
        for j in 0..i {
            worst = worst.max((s[(i, j)] - s[(j, i)]).abs());
        }
    }
    worst
}

fn eigh(s: &DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    let asym = max_asymmetry(s);
    if asym > 1e-8 {
        return Err(Error::NotSymmetric(asym));
    }
    if s.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("non-finite covariance entry".into()));
    }
    SymmetricEigen::try_new(s.clone(), 1e-14, 10_000)
        .ok_or_else(|| Error::Numerical("symmetric eigendecomposition did not converge".into()))
}

fn inv_sqrt_fn(lambda: f64, floor: f64) -> f64 {
    lambda.max(floor).powf(-0.5)
}

fn inv_sqrt_deriv(lambda: f64, floor: f64) -> f64 {
    if lambda > floor {
        -0.5 * lambda.powf(-1.5)
    } else {
        0.0
    }
}

fn rebuild(u: &DMatrix<f64>, diag: &DVector<f64>) -> DMatrix<f64> {
    let mut scaled = u.clone();
    for (mut col, &d) in scaled.column_iter_mut().zip(diag.iter()) {
        col *= d;
    }
    &scaled * u.transpose()
}

/// `S^{-1/2}` via symmetric eigendecomposition, eigenvalues clamped to `eig_floor`.
pub fn inv_sqrt_psd(s: &Matrix<f64>, eig_floor: f64) -> Result<Matrix<f64>> {
    if s.rows() != s.cols() {
        return Err(Error::Shape(format!("inv_sqrt_psd of a {:?} matrix", s.shape())));
    }
    let eig = eigh(&to_na(s))?;
    let d = eig.eigenvalues.map(|l| inv_sqrt_fn(l, eig_floor));
    Ok(from_na(&rebuild(&eig.eigenvectors, &d)))
}

struct Whitener {
    u: DMatrix<f64>,
    lambda: DVector<f64>,
    inv_sqrt: DMatrix<f64>,
}

impl Whitener {
    fn new(s: &DMatrix<f64>, floor: f64) -> Result<Self> {
        let eig = eigh(s)?;
        let d = eig.eigenvalues.map(|l| inv_sqrt_fn(l, floor));
        Ok(Whitener {
            inv_sqrt: rebuild(&eig.eigenvectors, &d),
            u: eig.eigenvectors,
            lambda: eig.eigenvalues,
        })
    }

    /// Pull a gradient with respect to `S^{-1/2}` back to `S` (Daleckii–Krein).
    fn pullback(&self, g: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
        let sym = (g + g.transpose()) * 0.5;
        let mut inner = self.u.transpose() * sym * &self.u;
        let n = self.lambda.len();
        for i in 0..n {
            for j in 0..n {
                let (li, lj) = (self.lambda[i], self.lambda[j]);
                let gap = li - lj;
                let f = if gap.abs() > 1e-10 * li.abs().max(lj.abs()).max(floor) {
                    (inv_sqrt_fn(li, floor) - inv_sqrt_fn(lj, floor)) / gap
                } else {
                    inv_sqrt_deriv(0.5 * (li + lj), floor)
                };
                inner[(i, j)] *= f;
            }
        }
        &self.u * inner * self.u.transpose()
    }
}

fn check_inputs<T: Real>(xh: &Matrix<T>, yh: &Matrix<T>, cfg: &CcaConfig) -> Result<()> {
    cfg.validate()?;
    if xh.cols() != yh.cols() {
        return Err(Error::CcaDimMismatch(xh.cols(), yh.cols()));
    }
    if xh.rows() != yh.rows() {
        return Err(Error::Shape(format!("CCA over {} vs {} samples", xh.rows(), yh.rows())));
    }
    if xh.rows() < 2 {
        return Err(Error::CovarianceUndefined(xh.rows()));
    }
    Ok(())
}

struct Forward {
    xc: DMatrix<f64>,
    yc: DMatrix<f64>,
    sxy: DMatrix<f64>,
    wx: Whitener,
    wy: Whitener,
    t: DMatrix<f64>,
}

fn forward<T: Real>(xh: &Matrix<T>, yh: &Matrix<T>, cfg: &CcaConfig) -> Result<Forward> {
    check_inputs(xh, yh, cfg)?;
    let mut xc = to_na(xh);
    let mut yc = to_na(yh);
    center_na(&mut xc);
    center_na(&mut yc);
    let wx = Whitener::new(&covariance_na(&xc, &xc, cfg.ridge), cfg.eig_floor)?;
    let wy = Whitener::new(&covariance_na(&yc, &yc, cfg.ridge), cfg.eig_floor)?;
    let sxy = covariance_na(&xc, &yc, 0.0);
    let t = &wx.inv_sqrt * &sxy * &wy.inv_sqrt;
    Ok(Forward { xc, yc, sxy, wx, wy, t })
}

fn reduce(t: &DMatrix<f64>, mode: CcaMode) -> f64 {
    match mode {
        CcaMode::Trace => t.trace(),
        CcaMode::NuclearNorm => t.clone().singular_values().sum(),
    }
}

pub fn cca_loss<T: Real>(xh: &Matrix<T>, yh: &Matrix<T>, cfg: &CcaConfig) -> Result<f64> {
    let f = forward(xh, yh, cfg)?;
    let value = reduce(&f.t, cfg.mode);
    if !value.is_finite() {
        return Err(Error::Numerical("non-finite CCA value".into()));
    }
    Ok(value)
}

pub struct CcaGrad<T> {
    pub value: f64,
    pub dxh: Matrix<T>,
    pub dyh: Matrix<T>,
}

/// The loss value together with its gradients with respect to both inputs.
pub fn cca_grad<T: Real>(xh: &Matrix<T>, yh: &Matrix<T>, cfg: &CcaConfig) -> Result<CcaGrad<T>> {
    let f = forward(xh, yh, cfg)?;
    let d = f.t.nrows();
    let (value, w) = match cfg.mode {
        CcaMode::Trace => (f.t.trace(), DMatrix::identity(d, d)),
        CcaMode::NuclearNorm => {
            let svd = f.t.clone().svd(true, true);
            let u = svd.u.as_ref().expect("requested U");
            let v_t = svd.v_t.as_ref().expect("requested Vᵀ");
            (svd.singular_values.sum(), u * v_t)
        }
    };
    if !value.is_finite() {
        return Err(Error::Numerical("non-finite CCA value".into()));
    }
    let p = &f.wx.inv_sqrt;
    let q = &f.wy.inv_sqrt;
    let syx = f.sxy.transpose();
    // With ∂L/∂T = W and T = P Σxy Q:
    let g_p = &w * q * &syx;
    let g_xy = p * &w * q;
    let g_q = &syx * p * &w;
    let g_sxx = f.wx.pullback(&g_p, cfg.eig_floor);
    let g_syy = f.wy.pullback(&g_q, cfg.eig_floor);

    let denom = f.xc.nrows() as f64 - 1.0;
    let mut dx = (&f.xc * &g_sxx * 2.0 + &f.yc * g_xy.transpose()) / denom;
    let mut dy = (&f.yc * &g_syy * 2.0 + &f.xc * &g_xy) / denom;
    center_na(&mut dx);
    center_na(&mut dy);
    Ok(CcaGrad {
        value,
        dxh: from_na(&dx),
        dyh: from_na(&dy),
    })
}
