use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sourcetrace::cca::CcaConfig;
use sourcetrace::models::{
    check_model_gradients, cross_entropy, load_checkpoint, load_checkpoint_as, save_checkpoint, Arch, GradProbe, Mode,
    Model, ModelConfig,
};
use sourcetrace::nn::{Coords, Matrix};
use sourcetrace::Error;

fn random(rows: usize, cols: usize, seed: u64) -> Matrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

fn toy_config(arch: Arch) -> ModelConfig {
    let mut c = match arch {
        Arch::Fcn | Arch::Cnn => ModelConfig::new(arch, 20, 0, 3),
        Arch::Concat | Arch::Trio => ModelConfig::new(arch, 20, 16, 3),
    };
    c.proj_dim = 8;
    c.token_dim = 4;
    c
}

fn assert_row_stochastic(p: &Matrix<f64>) {
    for r in 0..p.rows() {
        let s: f64 = p.row(r).iter().sum();
        assert!((s - 1.0).abs() < 1e-6, "row {r} sums to {s}");
        assert!(p.row(r).iter().all(|&v| v >= 0.0));
    }
}

/// The output layer starts at zero, which would hide every upstream gradient.
fn randomize_output_layer(model: &mut Model<f64>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for name in ["head.out.w", "head.out.b"] {
        for v in model.params_mut().by_name_mut(name).unwrap().value.data_mut() {
            *v = rng.random_range(-0.5..0.5);
        }
    }
}

fn gradient_error(arch: Arch, lambda: f64) -> f64 {
    let cfg = toy_config(arch);
    let mut model = Model::<f64>::build(&cfg, 11).unwrap();
    randomize_output_layer(&mut model, 12);
    let a = random(8, cfg.d_in_a, 1);
    let b = random(8, cfg.d_in_b.max(1), 2);
    let labels = [0, 1, 2, 0, 1, 2, 0, 1];
    let probe = GradProbe {
        a: &a,
        b: arch.is_fusion().then_some(&b),
        labels: &labels,
        lambda,
        cca: CcaConfig::default(),
        dropout_seed: 5,
    };
    let report =
        check_model_gradients(&model, &probe, 1e-5, Coords::Sample { per_param: 24, seed: 3 }).unwrap();
    assert_eq!(report.per_param.len(), model.params().len());
    report.max_rel_error
}

#[test]
fn fcn_gradients_match_finite_differences() {
    let e = gradient_error(Arch::Fcn, 0.0);
    assert!(e < 1e-4, "{e}");
}

#[test]
fn cnn_gradients_match_finite_differences() {
    let e = gradient_error(Arch::Cnn, 0.0);
    assert!(e < 1e-4, "{e}");
}

#[test]
fn concat_gradients_match_finite_differences() {
    let mut cfg = toy_config(Arch::Concat);
    cfg.d_in_a = 16;
    let mut model = Model::<f64>::build(&cfg, 4).unwrap();
    randomize_output_layer(&mut model, 5);
    let a = random(8, 16, 8);
    let b = random(8, 16, 9);
    let labels = [2, 1, 0, 2, 1, 0, 1, 1];
    let probe = GradProbe {
        a: &a,
        b: Some(&b),
        labels: &labels,
        lambda: 0.0,
        cca: CcaConfig::default(),
        dropout_seed: 1,
    };
    let report = check_model_gradients(&model, &probe, 1e-5, Coords::Sample { per_param: 24, seed: 2 }).unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

#[test]
fn trio_gradients_match_finite_differences() {
    let e = gradient_error(Arch::Trio, 0.3);
    assert!(e < 1e-4, "{e}");
}

#[test]
fn every_architecture_is_row_stochastic() {
    for arch in [Arch::Fcn, Arch::Cnn, Arch::Concat, Arch::Trio] {
        let cfg = toy_config(arch);
        let mut model = Model::<f64>::build(&cfg, 2).unwrap();
        randomize_output_layer(&mut model, 3);
        let a = random(5, cfg.d_in_a, 3);
        let b = random(5, 16, 4);
        let b = arch.is_fusion().then_some(&b);
        assert_row_stochastic(&model.predict_proba(&a, b).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = model.forward(&a, b, Mode::Train, &CcaConfig::default(), &mut rng).unwrap();
        assert_row_stochastic(&out.probs);
        assert_eq!(out.cca_value.is_some(), arch == Arch::Trio);
    }
}

#[test]
fn cnn_on_192_dims_gives_one_row_per_sample() {
    let model = Model::<f32>::build(&ModelConfig::new(Arch::Cnn, 192, 0, 7), 0).unwrap();
    let a = random(4, 192, 1).cast::<f32>();
    let p = model.predict_proba(&a, None).unwrap();
    assert_eq!(p.shape(), (4, 7));
}

#[test]
fn gates_lie_strictly_between_zero_and_one() {
    let cfg = toy_config(Arch::Trio);
    let model = Model::<f64>::build(&cfg, 6).unwrap();
    let (ga, gb) = model.gate_values(&random(6, 20, 1), &random(6, 16, 2)).unwrap().unwrap();
    for g in [ga, gb] {
        assert!(g.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }
}

#[test]
fn zero_gate_parameters_halve_the_features() {
    let cfg = toy_config(Arch::Trio);
    let mut model = Model::<f64>::build(&cfg, 6).unwrap();
    for name in model.gate_param_names() {
        model.params_mut().by_name_mut(&name).unwrap().value.data_mut().fill(0.0);
    }
    let (ga, gb) = model.gate_values(&random(3, 20, 1), &random(3, 16, 2)).unwrap().unwrap();
    assert!(ga.data().iter().chain(gb.data()).all(|&v| v == 0.5));
}

#[test]
fn saturated_gates_without_attention_reduce_to_concat() {
    let trio_cfg = toy_config(Arch::Trio);
    let concat_cfg = toy_config(Arch::Concat);
    let mut concat = Model::<f64>::build(&concat_cfg, 21).unwrap();
    randomize_output_layer(&mut concat, 22);
    let mut trio = Model::<f64>::build(&trio_cfg, 99).unwrap();
    for p in concat.params().iter() {
        trio.params_mut().by_name_mut(&p.name).unwrap().value = p.value.clone();
    }
    for name in trio.gate_param_names() {
        let fill = if name.ends_with(".b") { 40.0 } else { 0.0 };
        trio.params_mut().by_name_mut(&name).unwrap().value.data_mut().fill(fill);
    }
    trio.set_attention_bypass(true);
    let a = random(8, 20, 31);
    let b = random(8, 16, 32);
    let labels = [0, 1, 2, 2, 1, 0, 0, 1];
    let pc = concat.predict_proba(&a, Some(&b)).unwrap();
    let pt = trio.predict_proba(&a, Some(&b)).unwrap();
    assert_eq!(pc.data(), pt.data());
    assert_eq!(cross_entropy(&pc, &labels).unwrap(), cross_entropy(&pt, &labels).unwrap());
}

#[test]
fn untrained_loss_is_near_log_c() {
    for arch in [Arch::Fcn, Arch::Cnn, Arch::Concat, Arch::Trio] {
        let mut cfg = ModelConfig::new(arch, 64, 48, 10);
        if !arch.is_fusion() {
            cfg.d_in_b = 0;
        }
        let mut model = Model::<f32>::build(&cfg, 7).unwrap();
        let a = random(32, 64, 1).cast::<f32>();
        let b = random(32, 48, 2).cast::<f32>();
        let labels: Vec<usize> = (0..32).map(|i| i % 10).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = model
            .forward(&a, arch.is_fusion().then_some(&b), Mode::Train, &CcaConfig::default(), &mut rng)
            .unwrap();
        let ce = cross_entropy(&out.probs, &labels).unwrap();
        assert!((ce - 10f64.ln()).abs() < 0.1, "{arch:?}: {ce}");
    }
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let mut cfg = ModelConfig::new(Arch::Trio, 24, 20, 4);
    cfg.proj_dim = 16;
    cfg.token_dim = 8;
    let model = Model::<f32>::build(&cfg, 3).unwrap();
    let meta = serde_json::json!({"class_names": ["a", "b", "c", "d"]});
    save_checkpoint(&path, &model, &meta).unwrap();
    let (loaded, meta2) = load_checkpoint(&path).unwrap();
    assert_eq!(meta, meta2);
    assert_eq!(loaded.config(), model.config());
    for (p, q) in model.params().iter().zip(loaded.params().iter()) {
        assert_eq!(p.name, q.name);
        assert_eq!(p.value.data(), q.value.data());
    }
    let a = random(5, 24, 1).cast::<f32>();
    let b = random(5, 20, 2).cast::<f32>();
    assert_eq!(
        model.predict_proba(&a, Some(&b)).unwrap().data(),
        loaded.predict_proba(&a, Some(&b)).unwrap().data()
    );

    let mut other = cfg.clone();
    other.arch = Arch::Concat;
    assert!(matches!(load_checkpoint_as(&path, &other), Err(Error::CheckpointMismatch(_))));

    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 7]).unwrap();
    let err = load_checkpoint(&path).unwrap_err();
    assert!(err.to_string().contains("corrupt checkpoint"), "{err}");
}

#[test]
fn fusion_without_second_view_is_rejected() {
    let model = Model::<f64>::build(&toy_config(Arch::Trio), 0).unwrap();
    let err = model.predict_proba(&random(2, 20, 0), None).unwrap_err();
    assert!(err.to_string().contains("fusion requires two views"));
}

#[test]
fn wrong_width_names_both_dimensions() {
    let model = Model::<f64>::build(&toy_config(Arch::Fcn), 0).unwrap();
    let err = model.predict_proba(&random(2, 21, 0), None).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("20") && msg.contains("21"), "{msg}");
}
