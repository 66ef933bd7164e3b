//! Mini-batch training with Adam and early stopping, evaluation, and k-fold runs.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cca::{CcaConfig, CcaMode};
use crate::dataset::{batch_iter, stratified_holdout, stratified_kfold, EmbeddingTable, PairedDataset};
use crate::error::{Error, Result};
use crate::metrics::{argmax_rows, accuracy, EerMethod, MetricsReport};
use crate::models::{cross_entropy, Mode, Model, ModelConfig};
use crate::nn::{AdamConfig, Matrix};

/// Salt mixed into the seed for the dropout stream, so it differs from the shuffle stream.
const DROPOUT_SALT: u64 = 0x5EED_D80F;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Weight of the correlation term; only used by architectures that compute it.
    pub lambda: f64,
    /// Epochs without a validation-loss improvement larger than `min_delta` before stopping.
    pub patience: usize,
    pub min_delta: f64,
    /// Share of the training rows carved out for validation when no split is given.
    pub val_fraction: f64,
    pub seed: u64,
    pub ridge: f64,
    pub eig_floor: f64,
    pub cca_mode: CcaMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let cca = CcaConfig::default();
        TrainConfig {
            epochs: 50,
            batch_size: 32,
            lr: 1e-3,
            lambda: 0.3,
            patience: 5,
            min_delta: 1e-4,
            val_fraction: 0.1,
            seed: 0,
            ridge: cca.ridge,
            eig_floor: cca.eig_floor,
            cca_mode: cca.mode,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config(format!("batch_size must be >= 2, got {}", self.batch_size)));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be >= 0, got {}", self.lr)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be >= 1".into()));
        }
        if !(self.min_delta >= 0.0) {
            return Err(Error::Config("min_delta must be >= 0".into()));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 0.5) {
            return Err(Error::Config(format!("val_fraction must lie in (0, 0.5), got {}", self.val_fraction)));
        }
        self.cca().validate()
    }

    pub fn cca(&self) -> CcaConfig {
        CcaConfig {
            ridge: self.ridge,
            eig_floor: self.eig_floor,
            mode: self.cca_mode,
        }
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            ..AdamConfig::default()
        }
    }
}

/// Model inputs for one split: view A, optional view B, integer labels.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitData {
    pub a: Matrix<f32>,
    pub b: Option<Matrix<f32>>,
    pub labels: Vec<usize>,
}

impl SplitData {
    /// Rows `idx` of a paired dataset; view B is kept only when `two_views` is set.
    pub fn from_paired(d: &PairedDataset, idx: &[usize], two_views: bool) -> Self {
        SplitData {
            a: d.view_a().matrix(idx),
            b: two_views.then(|| d.view_b().matrix(idx)),
            labels: idx.iter().map(|&i| d.labels()[i] as usize).collect(),
        }
    }

    pub fn from_table(t: &EmbeddingTable, idx: &[usize]) -> Self {
        SplitData {
            a: t.matrix(idx),
            b: None,
            labels: idx.iter().map(|&i| t.labels()[i] as usize).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn select(&self, idx: &[usize]) -> SplitData {
        SplitData {
            a: self.a.select_rows(idx),
            b: self.b.as_ref().map(|b| b.select_rows(idx)),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were restored.
    pub best_epoch: usize,
    /// Last epoch that ran.
    pub stopped_epoch: usize,
    pub early_stopped: bool,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,val_acc\n");
        for r in &self.epochs {
            out.push_str(&format!("{},{:.8},{:.8},{:.6}\n", r.epoch, r.train_loss, r.val_loss, r.val_acc));
        }
        out
    }
}

/// Mean cross-entropy and accuracy of `model` on `data` in evaluation mode.
pub fn validation_scores(model: &Model<f32>, data: &SplitData) -> Result<(f64, f64)> {
    let probs = model.predict_proba(&data.a, data.b.as_ref())?;
    let loss = cross_entropy(&probs, &data.labels)?;
    let acc = accuracy(&argmax_rows(&probs), &data.labels)?;
    Ok((loss, acc))
}

/// Train `model` in place and restore the parameters of the best validation epoch.
pub fn train(model: &mut Model<f32>, data: &SplitData, val: &SplitData, cfg: &TrainConfig) -> Result<TrainHistory> {
    train_with_observer(model, data, val, cfg, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with_observer(
    model: &mut Model<f32>,
    data: &SplitData,
    val: &SplitData,
    cfg: &TrainConfig,
    mut observe: impl FnMut(&EpochRecord),
) -> Result<TrainHistory> {
    cfg.validate()?;
    if val.is_empty() {
        return Err(Error::Empty("validation split"));
    }
    if data.len() < 2 {
        return Err(Error::Empty("training split needs at least two rows"));
    }
    let n_classes = model.config().n_classes;
    if let Some(&bad) = data.labels.iter().chain(&val.labels).find(|&&l| l >= n_classes) {
        return Err(Error::LabelOutOfRange {
            label: bad,
            classes: n_classes,
        });
    }
    // Surface dimension problems before any update.
    model.predict_proba(&val.a.select_rows(&[0]), val.b.as_ref().map(|b| b.select_rows(&[0])).as_ref())?;

    let cca = cfg.cca();
    let adam = cfg.adam();
    let mut history = TrainHistory::default();
    let mut best_loss = f64::INFINITY;
    let mut best_params = model.params().snapshot();
    let mut reference = f64::INFINITY;
    let mut stale = 0;
    for epoch in 0..cfg.epochs {
        let batches = batch_iter(data.len(), cfg.batch_size, cfg.seed, epoch as u64)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ DROPOUT_SALT);
        rng.set_stream(epoch as u64);
        let mut loss_sum = 0.0;
        for (bi, idx) in batches.iter().enumerate() {
            let diverged = || Error::Diverged {
                epoch: epoch + 1,
                batch: bi + 1,
            };
            let batch = data.select(idx);
            model.forward(&batch.a, batch.b.as_ref(), Mode::Train, &cca, &mut rng)?;
            let loss = model.backward(&batch.labels, cfg.lambda)?;
            if !loss.total.is_finite() {
                return Err(diverged());
            }
            model.params_mut().adam_step(&adam).map_err(|e| match e {
                Error::DivergedParam(_) => diverged(),
                other => other,
            })?;
            loss_sum += loss.total;
        }
        let (val_loss, val_acc) = validation_scores(model, val)?;
        if !val_loss.is_finite() {
            return Err(Error::Diverged {
                epoch: epoch + 1,
                batch: batches.len(),
            });
        }
        let record = EpochRecord {
            epoch: epoch + 1,
            train_loss: loss_sum / batches.len().max(1) as f64,
            val_loss,
            val_acc,
        };
        observe(&record);
        history.epochs.push(record);
        history.stopped_epoch = epoch + 1;
        if val_loss < best_loss {
            best_loss = val_loss;
            best_params = model.params().snapshot();
            history.best_epoch = epoch + 1;
        }
        if val_loss < reference - cfg.min_delta {
            reference = val_loss;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                history.early_stopped = true;
                break;
            }
        }
    }
    model.params_mut().restore(&best_params);
    Ok(history)
}

/// Metrics of `model` on `data` with dropout disabled.
pub fn evaluate(model: &Model<f32>, data: &SplitData, class_names: &[String], method: EerMethod) -> Result<MetricsReport> {
    let probs = model.predict_proba(&data.a, data.b.as_ref())?;
    MetricsReport::from_probs(&probs, &data.labels, class_names, method)
}

/// Per-fold outputs of a k-fold run.
#[derive(Clone, Debug)]
pub struct FoldOutcome {
    pub fold: usize,
    pub report: MetricsReport,
    pub history: TrainHistory,
    pub model: Model<f32>,
}

/// Unweighted means over folds, plus the pooled confusion matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KfoldSummary {
    pub k: usize,
    pub accuracy: f64,
    pub eer_avg: f64,
    pub eer_per_class: Vec<f64>,
    pub fold_accuracy: Vec<f64>,
    pub fold_eer_avg: Vec<f64>,
    pub class_names: Vec<String>,
    pub confusion: Vec<Vec<u64>>,
}

impl KfoldSummary {
    pub fn from_reports(reports: &[&MetricsReport]) -> Result<Self> {
        let first = reports.first().ok_or(Error::Empty("fold reports"))?;
        let k = reports.len() as f64;
        let c = first.eer_per_class.len();
        let mut confusion = vec![vec![0u64; c]; c];
        let mut eer_per_class = vec![0.0; c];
        for r in reports {
            for (i, row) in r.confusion.iter().enumerate() {
                for (j, v) in row.iter().enumerate() {
                    confusion[i][j] += v;
                }
            }
            for (acc, e) in eer_per_class.iter_mut().zip(&r.eer_per_class) {
                *acc += e / k;
            }
        }
        let fold_accuracy: Vec<f64> = reports.iter().map(|r| r.accuracy).collect();
        let fold_eer_avg: Vec<f64> = reports.iter().map(|r| r.eer_avg).collect();
        Ok(KfoldSummary {
            k: reports.len(),
            accuracy: fold_accuracy.iter().sum::<f64>() / k,
            eer_avg: fold_eer_avg.iter().sum::<f64>() / k,
            eer_per_class,
            fold_accuracy,
            fold_eer_avg,
            class_names: first.class_names.clone(),
            confusion,
        })
    }

    pub fn summary_line(&self) -> String {
        format!("acc={:.2}% eer={:.2}%", 100.0 * self.accuracy, 100.0 * self.eer_avg)
    }
}

/// Train on the other `k − 1` folds of a stratified plan and test on each fold.
///
/// Fold `i` uses seed `cfg.seed + i` for its split, initialisation and batching.
/// Up to `jobs` folds run concurrently; results do not depend on `jobs`.
pub fn run_kfold(
    data: &SplitData,
    class_names: &[String],
    k: usize,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    method: EerMethod,
    jobs: usize,
) -> Result<(Vec<FoldOutcome>, KfoldSummary)> {
    cfg.validate()?;
    model_cfg.validate()?;
    let plan = stratified_kfold(&data.labels, k, cfg.seed)?;

    let run_fold = |fold: usize| -> Result<FoldOutcome> {
        let fold_cfg = TrainConfig {
            seed: cfg.seed.wrapping_add(fold as u64),
            ..cfg.clone()
        };
        let (train_idx, test_idx) = plan.split(fold);
        let (fit_idx, val_idx) = stratified_holdout(&train_idx, &data.labels, fold_cfg.val_fraction, fold_cfg.seed)?;
        let mut model = Model::<f32>::build(model_cfg, fold_cfg.seed)?;
        let history = train(&mut model, &data.select(&fit_idx), &data.select(&val_idx), &fold_cfg)?;
        let report = evaluate(&model, &data.select(&test_idx), class_names, method)?;
        Ok(FoldOutcome {
            fold,
            report,
            history,
            model,
        })
    };

    let jobs = jobs.clamp(1, k);
    let mut outcomes: Vec<Result<FoldOutcome>> = if jobs == 1 {
        (0..k).map(run_fold).collect()
    } else {
        let next = AtomicUsize::new(0);
        let results = Mutex::new(Vec::with_capacity(k));
        std::thread::scope(|s| {
            for _ in 0..jobs {
                s.spawn(|| loop {
                    let fold = next.fetch_add(1, Ordering::SeqCst);
                    if fold >= k {
                        break;
                    }
                    let r = run_fold(fold);
                    results.lock().expect("fold results lock").push((fold, r));
                });
            }
        });
        let mut results = results.into_inner().expect("fold results lock");
        results.sort_by_key(|(f, _)| *f);
        results.into_iter().map(|(_, r)| r).collect()
    };
    let outcomes: Vec<FoldOutcome> = outcomes.drain(..).collect::<Result<_>>()?;
    let reports: Vec<&MetricsReport> = outcomes.iter().map(|o| &o.report).collect();
    let summary = KfoldSummary::from_reports(&reports)?;
    Ok((outcomes, summary))
}
