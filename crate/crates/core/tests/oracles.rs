mod common;

use common::{eer_exhaustive, gradient_suite, jacobi_eigen, random_score_set, run_cca_oracle};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sourcetrace::metrics::eer_binary;
use sourcetrace::synth::{gen_eer_case, EerCase};

#[test]
fn jacobi_reconstructs_its_input() {
    let a = vec![vec![4.0, 1.0, -2.0], vec![1.0, 3.0, 0.5], vec![-2.0, 0.5, 5.0]];
    let (vals, v) = jacobi_eigen(&a);
    for i in 0..3 {
        for j in 0..3 {
            let r: f64 = (0..3).map(|k| v[i][k] * vals[k] * v[j][k]).sum();
            assert!((r - a[i][j]).abs() < 1e-12);
        }
    }
    assert!((vals.iter().sum::<f64>() - 12.0).abs() < 1e-12);
}

#[test]
fn cca_matches_eigendecomposition_oracle() {
    let r = run_cca_oracle(100, 2024);
    assert!(r.worst_relative < 1e-8, "relative error {}", r.worst_relative);
    assert!(r.pearson_cases > 0);
    assert!(r.worst_pearson < 1e-12, "pearson error {}", r.worst_pearson);
}

#[test]
fn every_kernel_passes_gradient_check() {
    for (name, err) in gradient_suite() {
        assert!(err < 1e-4, "{name}: {err}");
    }
}

#[test]
fn eer_fixtures_are_exact() {
    for case in [EerCase::Perfect, EerCase::Random, EerCase::Hand] {
        let (s, f, want) = gen_eer_case(case);
        assert_eq!(eer_binary(&s, &f).unwrap(), want, "{case:?}");
    }
}

#[test]
fn eer_matches_exhaustive_sweep() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for i in 0..1000 {
        let (s, f) = random_score_set(&mut rng);
        let got = eer_binary(&s, &f).unwrap();
        let want = eer_exhaustive(&s, &f);
        assert!((got - want).abs() < 1e-9, "set {i}: {got} vs {want}");
    }
}
