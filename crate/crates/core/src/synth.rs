//! Deterministic two-view synthetic embeddings with controllable class
//! separation and cross-view correlation.
//!
//! Each class gets a latent mean `μ_c ∈ R^L` with coordinates drawn from
//! `N(0, sep²/2)`, so two class means differ by about `sep` within-class
//! standard deviations per coordinate. A sample of class `c` has a shared
//! latent `z` and per-view noise `ε`, all standard normal, and view `v` is
//!
//! `x_v = M_v (μ_c + √ρ·z + √(1−ρ)·ε_v)`
//!
//! where `M_v` is a fixed `d_v × L` map with orthonormal columns (or rows when
//! `d_v < L`). The within-class covariance in latent space is therefore `I`.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{EmbeddingTable, PairedDataset};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mixing {
    /// Random orthonormal maps, different per view.
    #[default]
    Random,
    /// The latent vector occupies the first `L` coordinates; the rest are zero.
    Identity,
}

fn default_latent_dim() -> usize {
    16
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub n_classes: usize,
    pub n_per_class: usize,
    pub d_a: usize,
    pub d_b: usize,
    pub separation: f64,
    pub cross_corr: f64,
    pub seed: u64,
    #[serde(default = "default_latent_dim")]
    pub latent_dim: usize,
    #[serde(default)]
    pub mixing: Mixing,
}

impl SynthSpec {
    pub fn new(n_classes: usize, n_per_class: usize, d_a: usize, d_b: usize, separation: f64, cross_corr: f64, seed: u64) -> Self {
        SynthSpec {
            n_classes,
            n_per_class,
            d_a,
            d_b,
            separation,
            cross_corr,
            seed,
            latent_dim: default_latent_dim(),
            mixing: Mixing::Random,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::Config(format!("need ≥ 2 classes, got {}", self.n_classes)));
        }
        if self.n_classes > u16::MAX as usize + 1 {
            return Err(Error::FormatLimit(format!("{} classes", self.n_classes)));
        }
        if self.n_per_class == 0 || self.d_a == 0 || self.d_b == 0 || self.latent_dim == 0 {
            return Err(Error::Config("counts and dimensions must be positive".into()));
        }
        if !(self.separation >= 0.0 && self.separation.is_finite()) {
            return Err(Error::Config(format!("separation must be >= 0, got {}", self.separation)));
        }
        if !(0.0..=1.0).contains(&self.cross_corr) {
            return Err(Error::Config(format!("cross_corr must lie in [0, 1], got {}", self.cross_corr)));
        }
        if self.mixing == Mixing::Identity && self.latent_dim > self.d_a.min(self.d_b) {
            return Err(Error::Config(format!(
                "identity mixing needs latent_dim {} <= view dimensions",
                self.latent_dim
            )));
        }
        Ok(())
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// `d × l` with orthonormal columns when `d ≥ l`, orthonormal rows otherwise.
fn orthonormal_map(d: usize, l: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let (r, c) = if d >= l { (d, l) } else { (l, d) };
    let g = DMatrix::from_fn(r, c, |_, _| normal(rng));
    let q = g.qr().q();
    if d >= l {
        q
    } else {
        q.transpose()
    }
}

fn identity_map(d: usize, l: usize) -> DMatrix<f64> {
    DMatrix::from_fn(d, l, |i, j| if i == j { 1.0 } else { 0.0 })
}

fn class_names(n: usize) -> Vec<String> {
    let width = n.to_string().len().max(2);
    (0..n).map(|c| format!("S{:0width$}", c + 1)).collect()
}

/// Generate the paired dataset for `spec`. Rows are ordered class by class.
pub fn gen_two_view(spec: &SynthSpec) -> Result<PairedDataset> {
    gen_two_view_with_truth(spec).map(|(d, _)| d)
}

/// Population class means of each view, `means_a[c]` has length `d_a`.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthTruth {
    pub means_a: Vec<Vec<f64>>,
    pub means_b: Vec<Vec<f64>>,
}

/// [`gen_two_view`] plus the population class means it sampled around.
pub fn gen_two_view_with_truth(spec: &SynthSpec) -> Result<(PairedDataset, SynthTruth)> {
    spec.validate()?;
    let l = spec.latent_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mean_sd = spec.separation / std::f64::consts::SQRT_2;
    let means: Vec<Vec<f64>> = (0..spec.n_classes)
        .map(|_| (0..l).map(|_| mean_sd * normal(&mut rng)).collect())
        .collect();
    let (ma, mb) = match spec.mixing {
        Mixing::Random => {
            let ma = orthonormal_map(spec.d_a, l, &mut rng);
            let mb = orthonormal_map(spec.d_b, l, &mut rng);
            (ma, mb)
        }
        Mixing::Identity => (identity_map(spec.d_a, l), identity_map(spec.d_b, l)),
    };
    let shared = spec.cross_corr.sqrt();
    let private = (1.0 - spec.cross_corr).sqrt();
    let n = spec.n_classes * spec.n_per_class;
    let mut va = Vec::with_capacity(n * spec.d_a);
    let mut vb = Vec::with_capacity(n * spec.d_b);
    let mut labels = Vec::with_capacity(n);
    let mut ids = Vec::with_capacity(n);
    let mut la = nalgebra::DVector::zeros(l);
    let mut lb = nalgebra::DVector::zeros(l);
    for (c, mu) in means.iter().enumerate() {
        for _ in 0..spec.n_per_class {
            for k in 0..l {
                let z = normal(&mut rng);
                let ea = normal(&mut rng);
                let eb = normal(&mut rng);
                la[k] = mu[k] + shared * z + private * ea;
                lb[k] = mu[k] + shared * z + private * eb;
            }
            va.extend((&ma * &la).iter().map(|&v| v as f32));
            vb.extend((&mb * &lb).iter().map(|&v| v as f32));
            labels.push(c as u16);
            ids.push(format!("utt{:06}", ids.len()));
        }
    }
    let names = class_names(spec.n_classes);
    let a = EmbeddingTable::new(ids.clone(), va, spec.d_a, labels.clone(), names.clone(), "synth-a")?;
    let b = EmbeddingTable::new(ids, vb, spec.d_b, labels, names, "synth-b")?;
    let project = |m: &DMatrix<f64>| -> Vec<Vec<f64>> {
        means
            .iter()
            .map(|mu| (m * nalgebra::DVector::from_column_slice(mu)).iter().copied().collect())
            .collect()
    };
    let truth = SynthTruth {
        means_a: project(&ma),
        means_b: project(&mb),
    };
    Ok((crate::dataset::pair_align(a, b)?, truth))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EerCase {
    Perfect,
    Random,
    Hand,
}

/// Score fixtures with known binary EER: `(scores, is_positive, expected)`.
pub fn gen_eer_case(kind: EerCase) -> (Vec<f64>, Vec<bool>, f64) {
    match kind {
        EerCase::Perfect => (vec![0.9, 0.8, 0.2, 0.1], vec![true, true, false, false], 0.0),
        EerCase::Random => (vec![0.5; 6], vec![true, false, true, false, true, false], 0.5),
        EerCase::Hand => (
            vec![0.9, 0.8, 0.4, 0.6, 0.2, 0.1],
            vec![true, true, true, false, false, false],
            1.0 / 3.0,
        ),
    }
}

/// Nearest-class-mean classifier: class means from `train` rows, predictions for `test` rows.
pub fn nearest_class_mean(table: &EmbeddingTable, train: &[usize], test: &[usize]) -> Vec<usize> {
    let d = table.dim();
    let c = table.n_classes();
    let mut sums = vec![vec![0.0f64; d]; c];
    let mut counts = vec![0usize; c];
    for &i in train {
        let y = table.labels()[i] as usize;
        counts[y] += 1;
        for (s, &v) in sums[y].iter_mut().zip(table.vector(i)) {
            *s += v as f64;
        }
    }
    for (s, &n) in sums.iter_mut().zip(&counts) {
        for v in s.iter_mut() {
            *v /= n.max(1) as f64;
        }
    }
    test.iter()
        .map(|&i| {
            let x = table.vector(i);
            let dist = |m: &Vec<f64>| m.iter().zip(x).map(|(a, &b)| (a - b as f64).powi(2)).sum::<f64>();
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (k, m) in sums.iter().enumerate() {
                let dk = dist(m);
                if counts[k] > 0 && dk < best_d {
                    best = k;
                    best_d = dk;
                }
            }
            best
        })
        .collect()
}
