//! Independent reference implementations shared by the integration tests.
//!
//! Nothing here calls into the library's own linear algebra or sweep code;
//! the point is to have a second route to each number.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sourcetrace::cca::{cca_grad, cca_loss, CcaConfig, CcaMode};
use sourcetrace::models::{
    check_model_gradients, cross_entropy, softmax_cross_entropy_grad, Arch, GradProbe, Model, ModelConfig,
};
use sourcetrace::nn::{
    conv1d_backward, conv1d_forward, dense_backward, dense_forward, gate_backward, gate_forward, grad_check, maxpool1d,
    maxpool1d_backward, self_attention, self_attention_backward, softmax_rows, Coords, Matrix, Seq,
};

pub fn random(rows: usize, cols: usize, seed: u64) -> Matrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

// ---------------------------------------------------------------------------
// CCA

type Dense2 = Vec<Vec<f64>>;

/// Cyclic Jacobi rotations; returns eigenvalues and eigenvectors as columns.
pub fn jacobi_eigen(a: &Dense2) -> (Vec<f64>, Dense2) {
    let n = a.len();
    let mut m = a.clone();
    let mut v: Dense2 = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| m[i][j] * m[i][j]).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[k][p], m[k][q]);
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[p][k], m[q][k]);
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    ((0..n).map(|i| m[i][i]).collect(), v)
}

fn mat_mul(a: &Dense2, b: &Dense2) -> Dense2 {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    (0..n).map(|i| (0..m).map(|j| (0..k).map(|l| a[i][l] * b[l][j]).sum()).collect()).collect()
}

fn inv_sqrt(s: &Dense2) -> Dense2 {
    let (vals, v) = jacobi_eigen(s);
    let n = s.len();
    (0..n)
        .map(|i| (0..n).map(|j| (0..n).map(|k| v[i][k] * v[j][k] / vals[k].sqrt()).sum()).collect())
        .collect()
}

fn centred_columns(m: &Matrix<f64>) -> Dense2 {
    let (n, d) = m.shape();
    let means: Vec<f64> = (0..d).map(|c| (0..n).map(|r| m[(r, c)]).sum::<f64>() / n as f64).collect();
    (0..n).map(|r| (0..d).map(|c| m[(r, c)] - means[c]).collect()).collect()
}

fn cov(a: &Dense2, b: &Dense2, ridge: f64) -> Dense2 {
    let n = a.len();
    let (da, db) = (a[0].len(), b[0].len());
    (0..da)
        .map(|i| {
            (0..db)
                .map(|j| {
                    let s: f64 = (0..n).map(|r| a[r][i] * b[r][j]).sum::<f64>() / (n as f64 - 1.0);
                    if i == j { s + ridge } else { s }
                })
                .collect()
        })
        .collect()
}

/// `tr(Σxx^{-1/2} Σxy Σyy^{-1/2})` via explicit Jacobi eigendecompositions.
pub fn cca_oracle(x: &Matrix<f64>, y: &Matrix<f64>, ridge: f64) -> f64 {
    let (xc, yc) = (centred_columns(x), centred_columns(y));
    let p = inv_sqrt(&cov(&xc, &xc, ridge));
    let q = inv_sqrt(&cov(&yc, &yc, ridge));
    let t = mat_mul(&mat_mul(&p, &cov(&xc, &yc, 0.0)), &q);
    (0..t.len()).map(|i| t[i][i]).sum()
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    sxy / (sxx * syy).sqrt()
}

/// A well-conditioned random pair: `N ≥ 3D` rows with a shared component.
pub fn cca_instance(rng: &mut ChaCha8Rng) -> (Matrix<f64>, Matrix<f64>) {
    let d = rng.random_range(1..=8usize);
    let n = rng.random_range((3 * d).max(4)..=64usize);
    let x = Matrix::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0));
    let mix = rng.random_range(0.0..0.9);
    let y = Matrix::from_fn(n, d, |r, c| mix * x[(r, (c + 1) % d)] + (1.0 - mix) * rng.random_range(-1.0..1.0));
    (x, y)
}

pub struct CcaOracleResult {
    pub worst_relative: f64,
    pub worst_pearson: f64,
    pub pearson_cases: usize,
}

pub fn run_cca_oracle(instances: usize, seed: u64) -> CcaOracleResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = CcaConfig {
        ridge: 0.0,
        eig_floor: 1e-12,
        mode: CcaMode::Trace,
    };
    let mut worst_relative: f64 = 0.0;
    let mut worst_pearson: f64 = 0.0;
    let mut pearson_cases = 0;
    for _ in 0..instances {
        let (x, y) = cca_instance(&mut rng);
        let got = cca_loss(&x, &y, &cfg).unwrap();
        let want = cca_oracle(&x, &y, 0.0);
        worst_relative = worst_relative.max((got - want).abs() / want.abs().max(1e-12));
        if x.cols() == 1 {
            pearson_cases += 1;
            let r = pearson(x.data(), y.data());
            worst_pearson = worst_pearson.max((got - r).abs());
        }
    }
    CcaOracleResult {
        worst_relative,
        worst_pearson,
        pearson_cases,
    }
}

// ---------------------------------------------------------------------------
// Gradients

fn flat(m: &Matrix<f64>) -> Vec<f64> {
    m.data().to_vec()
}

fn mat(v: &[f64], rows: usize, cols: usize) -> Matrix<f64> {
    Matrix::new(rows, cols, v.to_vec()).unwrap()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check(names: &[&str], mut values: Vec<Vec<f64>>, analytic: Vec<Vec<f64>>, loss: impl FnMut(&[Vec<f64>]) -> f64) -> f64 {
    let names: Vec<String> = names.iter().map(|s| s.to_string()).collect();
    grad_check(&names, &mut values, &analytic, 1e-5, Coords::All, loss).max_rel_error
}

fn dense_case() -> f64 {
    let (x, w, b, r) = (random(5, 4, 1), random(4, 3, 2), random(1, 3, 3), random(5, 3, 4));
    let g = dense_backward(&x, &w, &r);
    check(
        &["x", "w", "b"],
        vec![flat(&x), flat(&w), flat(&b)],
        vec![flat(&g.dx), flat(&g.dw), g.db.clone()],
        |v| dot(dense_forward(&mat(&v[0], 5, 4), &mat(&v[1], 4, 3), &v[2]).unwrap().data(), r.data()),
    )
}

fn conv_case() -> f64 {
    let x = Seq::new(2, 3, 9, flat(&random(1, 54, 5))).unwrap();
    let (k, b) = (random(4, 9, 6), random(1, 4, 7));
    let r = flat(&random(1, 2 * 4 * 7, 8));
    let dout = Seq::new(2, 4, 7, r.clone()).unwrap();
    let g = conv1d_backward(&x, &k, &dout, true);
    check(
        &["x", "kernels", "b"],
        vec![x.data.clone(), flat(&k), flat(&b)],
        vec![g.dx.unwrap().data, flat(&g.dk), g.db.clone()],
        |v| {
            let xs = Seq::new(2, 3, 9, v[0].clone()).unwrap();
            dot(&conv1d_forward(&xs, &mat(&v[1], 4, 9), &v[2]).unwrap().data, &r)
        },
    )
}

fn maxpool_case() -> f64 {
    // Pair members differ by at least 0.2, far beyond the finite-difference step.
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut data = Vec::new();
    for _ in 0..2 * 3 * 4 {
        let a: f64 = rng.random_range(-1.0..1.0);
        let gap = rng.random_range(0.2..1.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        data.push(a);
        data.push(a + gap);
    }
    let x = Seq::new(2, 3, 8, data).unwrap();
    let r = flat(&random(1, 2 * 3 * 4, 10));
    let pooled = maxpool1d(&x).unwrap();
    let dx = maxpool1d_backward((2, 3, 8), &pooled.argmax, &Seq::new(2, 3, 4, r.clone()).unwrap());
    check(&["x"], vec![x.data.clone()], vec![dx.data], |v| {
        dot(&maxpool1d(&Seq::new(2, 3, 8, v[0].clone()).unwrap()).unwrap().out.data, &r)
    })
}

fn gate_case() -> f64 {
    let (x, w, b, r) = (random(6, 5, 11), random(5, 5, 12), random(1, 5, 13), random(6, 5, 14));
    let (_, g) = gate_forward(&x, &w, b.data()).unwrap();
    let grads = gate_backward(&x, &g, &w, &r);
    check(
        &["x", "w", "b"],
        vec![flat(&x), flat(&w), flat(&b)],
        vec![flat(&grads.dx), flat(&grads.dw), grads.db.clone()],
        |v| dot(gate_forward(&mat(&v[0], 6, 5), &mat(&v[1], 5, 5), &v[2]).unwrap().0.data(), r.data()),
    )
}

fn attention_case() -> f64 {
    let (t, wq, wk, wv, r) = (random(4, 3, 15), random(3, 3, 16), random(3, 3, 17), random(3, 3, 18), random(4, 3, 19));
    let (_, cache) = self_attention(&t, &wq, &wk, &wv).unwrap();
    let g = self_attention_backward(&cache, &wq, &wk, &wv, &r);
    check(
        &["tokens", "wq", "wk", "wv"],
        vec![flat(&t), flat(&wq), flat(&wk), flat(&wv)],
        vec![flat(&g.dtokens), flat(&g.dwq), flat(&g.dwk), flat(&g.dwv)],
        |v| {
            let out = self_attention(&mat(&v[0], 4, 3), &mat(&v[1], 3, 3), &mat(&v[2], 3, 3), &mat(&v[3], 3, 3))
                .unwrap()
                .0;
            dot(out.data(), r.data())
        },
    )
}

fn softmax_ce_case() -> f64 {
    let z = random(6, 4, 20).scale(3.0);
    let labels = [0, 3, 1, 2, 2, 0];
    let g = softmax_cross_entropy_grad(&softmax_rows(&z), &labels);
    check(&["logits"], vec![flat(&z)], vec![flat(&g)], |v| {
        cross_entropy(&softmax_rows(&mat(&v[0], 6, 4)), &labels).unwrap()
    })
}

fn cca_case(mode: CcaMode) -> f64 {
    let x = random(12, 3, 21);
    let y = random(12, 3, 22).zip_map(&x, |a, b| 0.5 * a + b);
    let cfg = CcaConfig {
        mode,
        ..CcaConfig::default()
    };
    let g = cca_grad(&x, &y, &cfg).unwrap();
    check(&["x", "y"], vec![flat(&x), flat(&y)], vec![flat(&g.dxh), flat(&g.dyh)], |v| {
        cca_loss(&mat(&v[0], 12, 3), &mat(&v[1], 12, 3), &cfg).unwrap()
    })
}

/// The output layer starts at zero, which would hide every upstream gradient.
pub fn randomize_output_layer(model: &mut Model<f64>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for name in ["head.out.w", "head.out.b"] {
        for v in model.params_mut().by_name_mut(name).unwrap().value.data_mut() {
            *v = rng.random_range(-0.5..0.5);
        }
    }
}

/// Full joint loss of the fusion model at toy sizes, every parameter array checked.
pub fn trio_case() -> f64 {
    let mut cfg = ModelConfig::new(Arch::Trio, 20, 16, 3);
    cfg.proj_dim = 8;
    cfg.token_dim = 4;
    let mut model = Model::<f64>::build(&cfg, 11).unwrap();
    randomize_output_layer(&mut model, 12);
    let (a, b) = (random(8, 20, 1), random(8, 16, 2));
    let labels = [0, 1, 2, 0, 1, 2, 0, 1];
    let probe = GradProbe {
        a: &a,
        b: Some(&b),
        labels: &labels,
        lambda: 0.3,
        cca: CcaConfig::default(),
        dropout_seed: 5,
    };
    check_model_gradients(&model, &probe, 1e-5, Coords::Sample { per_param: 24, seed: 3 })
        .unwrap()
        .max_rel_error
}

pub fn gradient_suite() -> Vec<(&'static str, f64)> {
    vec![
        ("dense", dense_case()),
        ("conv1d", conv_case()),
        ("maxpool", maxpool_case()),
        ("sigmoid gate", gate_case()),
        ("self_attention", attention_case()),
        ("cross_entropy∘softmax", softmax_ce_case()),
        ("cca_loss (trace)", cca_case(CcaMode::Trace)),
        ("cca_loss (nuclear)", cca_case(CcaMode::NuclearNorm)),
        ("trio joint loss", trio_case()),
    ]
}

// ---------------------------------------------------------------------------
// EER

/// Tries every threshold in {each distinct score, +∞} with `score >= t` as accept,
/// counting errors directly at each one.
pub fn eer_exhaustive(scores: &[f64], positive: &[bool]) -> f64 {
    let n_pos = positive.iter().filter(|&&p| p).count() as f64;
    let n_neg = positive.len() as f64 - n_pos;
    let mut thresholds = scores.to_vec();
    thresholds.push(f64::INFINITY);
    let mut best = (f64::INFINITY, f64::INFINITY);
    for &t in &thresholds {
        let fa = scores.iter().zip(positive).filter(|(s, p)| !**p && **s >= t).count() as f64 / n_neg;
        let fr = scores.iter().zip(positive).filter(|(s, p)| **p && **s < t).count() as f64 / n_pos;
        let key = ((fa - fr).abs(), fa + fr);
        if key.0 < best.0 - 1e-12 || ((key.0 - best.0).abs() <= 1e-12 && key.1 < best.1) {
            best = key;
        }
    }
    best.1 / 2.0
}

/// A random labelled score set with both classes present and frequent ties.
pub fn random_score_set(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<bool>) {
    let n = rng.random_range(2..=120usize);
    let levels = rng.random_range(2..=50u32);
    let shift = rng.random_range(-1.0..1.0);
    let mut flags: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
    flags[0] = true;
    flags[1] = false;
    let scores = flags
        .iter()
        .map(|&p| {
            let s: f64 = rng.random_range(0.0..1.0) + if p { 0.5 * shift } else { 0.0 };
            (s * levels as f64).round() / levels as f64
        })
        .collect();
    (scores, flags)
}
