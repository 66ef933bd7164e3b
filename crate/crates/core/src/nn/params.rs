//! Named parameter arrays with gradient and Adam moment buffers.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::matrix::{Matrix, Real};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Clone, Debug)]
pub struct Param<T> {
    pub name: String,
    /// Logical shape; the value is stored as a 2-D matrix whose row count is
    /// `shape[0]` (1 for vectors).
    pub shape: Vec<usize>,
    pub value: Matrix<T>,
    pub grad: Matrix<T>,
    m: Vec<T>,
    v: Vec<T>,
}

impl<T: Real> Param<T> {
    pub fn len(&self) -> usize {
        self.value.data().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
    step: u64,
}

fn storage_dims(shape: &[usize]) -> (usize, usize) {
    match shape {
        [] => (1, 1),
        [n] => (1, *n),
        [r, rest @ ..] => (*r, rest.iter().product()),
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            params: Vec::new(),
            step: 0,
        }
    }

    pub fn add(&mut self, name: impl Into<String>, shape: &[usize], value: Vec<T>) -> Result<ParamId> {
        let name = name.into();
        if self.find(&name).is_some() {
            return Err(Error::Config(format!("duplicate parameter {name}")));
        }
        let (r, c) = storage_dims(shape);
        let value = Matrix::new(r, c, value)?;
        let n = r * c;
        self.params.push(Param {
            name,
            shape: shape.to_vec(),
            value,
            grad: Matrix::zeros(r, c),
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
        });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> Result<ParamId> {
        let n = shape.iter().product();
        self.add(name, shape, vec![T::zero(); n])
    }

    /// Scaled-uniform init with bound `sqrt(6 / (fan_in + fan_out))`.
    pub fn add_glorot<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Result<ParamId> {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let n = shape.iter().product();
        let value = (0..n).map(|_| T::lit(rng.random_range(-bound..bound))).collect();
        self.add(name, shape, value)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Matrix<T> {
        &self.params[id.0].value
    }

    pub fn by_name(&self, name: &str) -> Option<&Param<T>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Param<T>> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.params.iter().map(Param::len).sum()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    pub fn accumulate(&mut self, id: ParamId, grad: &Matrix<T>) {
        let p = &mut self.params[id.0];
        assert_eq!(p.grad.data().len(), grad.data().len(), "gradient size for {}", p.name);
        for (g, &d) in p.grad.data_mut().iter_mut().zip(grad.data()) {
            *g += d;
        }
    }

    pub fn accumulate_slice(&mut self, id: ParamId, grad: &[T]) {
        let p = &mut self.params[id.0];
        assert_eq!(p.grad.data().len(), grad.len(), "gradient size for {}", p.name);
        for (g, &d) in p.grad.data_mut().iter_mut().zip(grad) {
            *g += d;
        }
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(T::zero());
        }
    }

    /// Copies only the parameter values (no gradients or moments).
    pub fn snapshot(&self) -> Vec<Vec<T>> {
        self.params.iter().map(|p| p.value.data().to_vec()).collect()
    }

    pub fn restore(&mut self, snapshot: &[Vec<T>]) {
        assert_eq!(snapshot.len(), self.params.len());
        for (p, s) in self.params.iter_mut().zip(snapshot) {
            p.value.data_mut().copy_from_slice(s);
        }
    }

    /// One bias-corrected Adam update using the current gradients, then clears them.
    ///
    /// Nothing is modified if any gradient is non-finite.
    pub fn adam_step(&mut self, cfg: &AdamConfig) -> Result<()> {
        if let Some(p) = self.params.iter().find(|p| !p.grad.is_finite()) {
            return Err(Error::DivergedParam(p.name.clone()));
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
        let c1 = T::one() - T::lit(cfg.beta1.powi(t));
        let c2 = T::one() - T::lit(cfg.beta2.powi(t));
        let (lr, eps) = (T::lit(cfg.lr), T::lit(cfg.eps));
        for p in &mut self.params {
            let Param { value, grad, m, v, .. } = p;
            for (((w, &g), m), v) in value.data_mut().iter_mut().zip(grad.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + (T::one() - b1) * g;
                *v = b2 * *v + (T::one() - b2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            grad.data_mut().fill(T::zero());
        }
        Ok(())
    }
}
