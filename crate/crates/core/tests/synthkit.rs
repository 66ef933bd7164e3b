use sourcetrace::dataset::stratified_holdout;
use sourcetrace::metrics::accuracy;
use sourcetrace::synth::{gen_two_view, gen_two_view_with_truth, nearest_class_mean, SynthSpec};

#[test]
fn desk_scale_spec_is_linearly_separable_on_view_a() {
    let d = gen_two_view(&SynthSpec::new(10, 200, 64, 48, 2.0, 0.7, 7)).unwrap();
    let labels = d.view_a().labels_usize();
    let (train, test) = stratified_holdout(&d.view_a().all_rows(), &labels, 0.2, 7).unwrap();
    let preds = nearest_class_mean(d.view_a(), &train, &test);
    let truth: Vec<usize> = test.iter().map(|&i| labels[i]).collect();
    let acc = accuracy(&preds, &truth).unwrap();
    assert!(acc >= 0.9, "nearest-class-mean accuracy {acc}");
}

#[test]
fn zero_separation_is_at_chance() {
    let d = gen_two_view(&SynthSpec::new(4, 250, 16, 16, 0.0, 0.5, 1)).unwrap();
    let labels = d.view_a().labels_usize();
    let (train, test) = stratified_holdout(&d.view_a().all_rows(), &labels, 0.5, 1).unwrap();
    let preds = nearest_class_mean(d.view_a(), &train, &test);
    let truth: Vec<usize> = test.iter().map(|&i| labels[i]).collect();
    let acc = accuracy(&preds, &truth).unwrap();
    // 500 test rows: chance 0.25, binomial sd ≈ 0.019.
    assert!((acc - 0.25).abs() < 4.0 * (0.25f64 * 0.75 / 500.0).sqrt(), "{acc}");
}

#[test]
fn empirical_class_means_converge() {
    let spec = SynthSpec::new(3, 400, 24, 10, 1.5, 0.3, 11);
    let (d, truth) = gen_two_view_with_truth(&spec).unwrap();
    let bound = 5.0 / (spec.n_per_class as f64).sqrt();
    for (table, means) in [(d.view_a(), &truth.means_a), (d.view_b(), &truth.means_b)] {
        for (c, mean) in means.iter().enumerate() {
            let rows: Vec<usize> = (0..d.len()).filter(|&i| table.labels()[i] as usize == c).collect();
            for (k, &m) in mean.iter().enumerate() {
                let emp = rows.iter().map(|&i| table.vector(i)[k] as f64).sum::<f64>() / rows.len() as f64;
                assert!((emp - m).abs() < bound, "class {c} coord {k}: {emp} vs {m}");
            }
        }
    }
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    sxy / (sxx * syy).sqrt()
}

#[test]
fn independent_views_are_uncorrelated_within_class() {
    let mut spec = SynthSpec::new(2, 2000, 8, 8, 3.0, 0.0, 5);
    spec.latent_dim = 8;
    let d = gen_two_view(&spec).unwrap();
    let n = d.len();
    // Centre each row by its class mean so only within-class variation remains.
    let centred = |t: &sourcetrace::dataset::EmbeddingTable, k: usize| -> Vec<f64> {
        let mut out = vec![0.0; n];
        for c in 0..2u16 {
            let rows: Vec<usize> = (0..n).filter(|&i| t.labels()[i] == c).collect();
            let mean = rows.iter().map(|&i| t.vector(i)[k] as f64).sum::<f64>() / rows.len() as f64;
            for &i in &rows {
                out[i] = t.vector(i)[k] as f64 - mean;
            }
        }
        out
    };
    let bound = 4.0 / (n as f64).sqrt();
    for k in 0..8 {
        let r = pearson(&centred(d.view_a(), k), &centred(d.view_b(), k));
        assert!(r.abs() < bound, "dim {k}: {r}");
    }
}

#[test]
fn shared_latent_correlates_views() {
    let mut spec = SynthSpec::new(2, 2000, 8, 8, 0.0, 0.7, 5);
    spec.latent_dim = 8;
    spec.mixing = sourcetrace::synth::Mixing::Identity;
    let d = gen_two_view(&spec).unwrap();
    let col = |t: &sourcetrace::dataset::EmbeddingTable, k: usize| -> Vec<f64> {
        (0..d.len()).map(|i| t.vector(i)[k] as f64).collect()
    };
    for k in 0..8 {
        let r = pearson(&col(d.view_a(), k), &col(d.view_b(), k));
        assert!((r - 0.7).abs() < 4.0 / (d.len() as f64).sqrt(), "dim {k}: {r}");
    }
}
