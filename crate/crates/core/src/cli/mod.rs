//! The command implementations behind the `sourcetrace` binary.
//!
//! Each command writes its artifacts to disk and returns a short outcome for
//! the caller to print. Apart from `run.log`, which carries timestamps, the
//! artifacts depend only on the inputs and seeds.

mod config;

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

pub use config::{DatasetSection, ModelSection, OutputSection, ResolvedConfig, RunConfigFile, ViewPaths};

use crate::dataset::{load_embedding_file, pair_align, stratified_holdout, write_embedding_file, EmbeddingTable};
use crate::error::{Error, Result};
use crate::metrics::{EerMethod, MetricsReport};
use crate::models::{load_checkpoint, save_checkpoint, Model};
use crate::synth::{gen_two_view, SynthSpec};
use crate::trainer::{evaluate, run_kfold, train_with_observer, KfoldSummary, SplitData, TrainHistory};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const METRICS_FILE: &str = "metrics.json";
pub const CONFUSION_FILE: &str = "confusion.csv";
pub const HISTORY_FILE: &str = "history.csv";
pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.json";
pub const LOG_FILE: &str = "run.log";
pub const AVERAGE_FILE: &str = "average.json";

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("plain data serialises") + "\n"
}

/// Timestamped progress log; the only artifact that is allowed to vary between runs.
struct RunLog {
    file: fs::File,
    path: PathBuf,
}

impl RunLog {
    fn create(dir: &Path) -> Result<Self> {
        let path = dir.join(LOG_FILE);
        let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(RunLog { file, path })
    }

    fn line(&mut self, msg: &str) -> Result<()> {
        let t = SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default();
        writeln!(self.file, "[{}.{:03}] {msg}", t.as_secs(), t.subsec_millis()).map_err(|e| Error::io(&self.path, e))
    }
}

/// What a command produced, for the caller to report.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub summary: String,
    pub warnings: Vec<String>,
    pub out_dir: PathBuf,
}

/// Checkpoint metadata written next to the parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub class_names: Vec<String>,
    pub source_models: Vec<String>,
    pub eer_method: EerMethod,
}

/// Write the two views of a synthetic dataset as `view_a.steb` and `view_b.steb`
/// (each with its manifest) plus the generating spec as `synth_spec.json`.
pub fn cmd_synth(spec: &SynthSpec, out_dir: &Path) -> Result<(PathBuf, PathBuf)> {
    let data = gen_two_view(spec)?;
    create_dir(out_dir)?;
    let pa = out_dir.join("view_a.steb");
    let pb = out_dir.join("view_b.steb");
    write_embedding_file(data.view_a(), &pa)?;
    write_embedding_file(data.view_b(), &pb)?;
    write_file(&out_dir.join("synth_spec.json"), to_json(spec))?;
    Ok((pa, pb))
}

/// One split's tables, already paired and with labels mapped to the reference class list.
struct Views {
    a: EmbeddingTable,
    b: Option<EmbeddingTable>,
    labels: Vec<usize>,
}

impl Views {
    fn split(&self, idx: &[usize]) -> SplitData {
        SplitData {
            a: self.a.matrix(idx),
            b: self.b.as_ref().map(|b| b.matrix(idx)),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    fn all(&self) -> SplitData {
        self.split(&self.a.all_rows())
    }
}

fn load_views(
    paths: &ViewPaths,
    split: &str,
    two_views: bool,
    arch: &str,
    class_names: Option<&[String]>,
    warnings: &mut Vec<String>,
) -> Result<Views> {
    let a = load_embedding_file(&paths.view_a)?;
    if !a.is_labeled() {
        return Err(Error::InvalidTable(format!("{} has no labels", paths.view_a.display())));
    }
    let (a, b) = match (&paths.view_b, two_views) {
        (Some(pb), true) => {
            let (a, b) = pair_align(a, load_embedding_file(pb)?)?.into_views();
            (a, Some(b))
        }
        (None, true) => {
            return Err(Error::Config(format!(
                "fusion requires two views: dataset.{split}.view_b is missing for arch {arch}"
            )))
        }
        (Some(pb), false) => {
            warnings.push(format!(
                "arch {arch} uses a single view; ignoring view B {} for the {split} split",
                pb.display()
            ));
            (a, None)
        }
        (None, false) => (a, None),
    };
    let labels = match class_names {
        None => a.labels_usize(),
        Some(names) => a
            .labels()
            .iter()
            .map(|&l| {
                let name = &a.class_names()[l as usize];
                names.iter().position(|n| n == name).ok_or_else(|| {
                    Error::Config(format!("class {name} in the {split} split does not occur in the training data"))
                })
            })
            .collect::<Result<_>>()?,
    };
    Ok(Views { a, b, labels })
}

fn source_models(v: &Views) -> Vec<String> {
    std::iter::once(v.a.source_model().to_string())
        .chain(v.b.as_ref().map(|b| b.source_model().to_string()))
        .collect()
}

fn write_report(dir: &Path, report: &MetricsReport) -> Result<()> {
    write_file(&dir.join(METRICS_FILE), report.to_json())?;
    write_file(&dir.join(CONFUSION_FILE), report.confusion_csv())
}

fn write_training_artifacts(
    dir: &Path,
    model: &Model<f32>,
    meta: &CheckpointMeta,
    history: &TrainHistory,
    report: &MetricsReport,
) -> Result<()> {
    let meta = serde_json::to_value(meta).expect("metadata serialises");
    save_checkpoint(&dir.join(CHECKPOINT_FILE), model, &meta)?;
    write_file(&dir.join(HISTORY_FILE), history.to_csv())?;
    write_report(dir, report)
}

/// Train one model as described by the run config and evaluate it on the test split.
pub fn cmd_train(config_path: &Path) -> Result<Outcome> {
    let cfg = RunConfigFile::load(config_path)?;
    cfg.validate()?;
    let arch = cfg.model.arch;
    let two_views = arch.is_fusion();
    let mut warnings = Vec::new();
    let train_views = load_views(&cfg.dataset.train, "train", two_views, arch.name(), None, &mut warnings)?;
    let class_names = train_views.a.class_names().to_vec();
    let model_cfg = cfg.model.resolve(
        train_views.a.dim(),
        train_views.b.as_ref().map_or(0, EmbeddingTable::dim),
        class_names.len(),
    );
    model_cfg.validate()?;
    let seed = cfg.train.seed;

    let all_rows = train_views.a.all_rows();
    let (pool, test) = match &cfg.dataset.test {
        Some(p) => {
            let v = load_views(p, "test", two_views, arch.name(), Some(&class_names), &mut warnings)?;
            (all_rows, v.all())
        }
        None => {
            let (kept, held) = stratified_holdout(&all_rows, &train_views.labels, cfg.dataset.test_fraction, seed)?;
            (kept, train_views.split(&held))
        }
    };
    let (fit, val) = match &cfg.dataset.val {
        Some(p) => {
            let v = load_views(p, "val", two_views, arch.name(), Some(&class_names), &mut warnings)?;
            (train_views.split(&pool), v.all())
        }
        None => {
            let (fit, val) = stratified_holdout(&pool, &train_views.labels, cfg.train.val_fraction, seed)?;
            (train_views.split(&fit), train_views.split(&val))
        }
    };

    let out_dir = cfg.output.dir.clone();
    create_dir(&out_dir)?;
    let mut log = RunLog::create(&out_dir)?;
    for w in &warnings {
        log.line(&format!("warning: {w}"))?;
    }
    let resolved = ResolvedConfig {
        dataset: cfg.dataset.clone(),
        model: model_cfg.clone(),
        train: cfg.train.clone(),
        output: cfg.output.clone(),
    };
    write_file(&out_dir.join(RESOLVED_CONFIG_FILE), to_json(&resolved))?;
    log.line(&format!(
        "train {} rows, val {} rows, test {} rows, {} classes, arch {}",
        fit.len(),
        val.len(),
        test.len(),
        class_names.len(),
        arch.name()
    ))?;

    let mut model = Model::<f32>::build(&model_cfg, seed)?;
    let mut log_err = None;
    let history = train_with_observer(&mut model, &fit, &val, &cfg.train, |r| {
        if let Err(e) = log.line(&format!(
            "epoch {} train_loss {:.6} val_loss {:.6} val_acc {:.4}",
            r.epoch, r.train_loss, r.val_loss, r.val_acc
        )) {
            log_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = log_err {
        return Err(e);
    }
    let report = evaluate(&model, &test, &class_names, cfg.output.eer_method)?;
    let meta = CheckpointMeta {
        class_names,
        source_models: source_models(&train_views),
        eer_method: cfg.output.eer_method,
    };
    write_training_artifacts(&out_dir, &model, &meta, &history, &report)?;
    let summary = report.summary_line();
    log.line(&format!("best epoch {} of {}; {summary}", history.best_epoch, history.stopped_epoch))?;
    Ok(Outcome {
        summary,
        warnings,
        out_dir,
    })
}

/// Stratified k-fold over the training split; writes `fold_<i>/` (1-based) and `average.json`.
pub fn cmd_kfold(config_path: &Path, k: usize, jobs: usize) -> Result<Outcome> {
    if k < 2 {
        return Err(Error::Config(format!("k-fold needs k >= 2, got {k}")));
    }
    let cfg = RunConfigFile::load(config_path)?;
    cfg.validate()?;
    let arch = cfg.model.arch;
    let mut warnings = Vec::new();
    let views = load_views(&cfg.dataset.train, "train", arch.is_fusion(), arch.name(), None, &mut warnings)?;
    if cfg.dataset.val.is_some() || cfg.dataset.test.is_some() {
        warnings.push("k-fold uses only dataset.train; the val and test entries are ignored".into());
    }
    let class_names = views.a.class_names().to_vec();
    let model_cfg = cfg
        .model
        .resolve(views.a.dim(), views.b.as_ref().map_or(0, EmbeddingTable::dim), class_names.len());
    model_cfg.validate()?;

    let out_dir = cfg.output.dir.clone();
    create_dir(&out_dir)?;
    let mut log = RunLog::create(&out_dir)?;
    for w in &warnings {
        log.line(&format!("warning: {w}"))?;
    }
    let resolved = ResolvedConfig {
        dataset: cfg.dataset.clone(),
        model: model_cfg.clone(),
        train: cfg.train.clone(),
        output: cfg.output.clone(),
    };
    write_file(&out_dir.join(RESOLVED_CONFIG_FILE), to_json(&resolved))?;
    log.line(&format!("{k}-fold over {} rows, {} classes, arch {}", views.a.len(), class_names.len(), arch.name()))?;

    let data = views.all();
    let (folds, summary) = run_kfold(&data, &class_names, k, &model_cfg, &cfg.train, cfg.output.eer_method, jobs)?;
    let meta = CheckpointMeta {
        class_names,
        source_models: source_models(&views),
        eer_method: cfg.output.eer_method,
    };
    for f in &folds {
        let dir = out_dir.join(format!("fold_{}", f.fold + 1));
        create_dir(&dir)?;
        write_training_artifacts(&dir, &f.model, &meta, &f.history, &f.report)?;
        log.line(&format!(
            "fold {}: best epoch {} of {}; {}",
            f.fold + 1,
            f.history.best_epoch,
            f.history.stopped_epoch,
            f.report.summary_line()
        ))?;
    }
    write_file(&out_dir.join(AVERAGE_FILE), to_json(&summary))?;
    let line = summary.summary_line();
    log.line(&format!("average: {line}"))?;
    Ok(Outcome {
        summary: line,
        warnings,
        out_dir,
    })
}

/// Read back the averaged k-fold report.
pub fn read_average(dir: &Path) -> Result<KfoldSummary> {
    let path = dir.join(AVERAGE_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
}

/// Evaluate a checkpoint on labelled embedding files; writes `metrics.json` and `confusion.csv`.
pub fn cmd_eval(
    checkpoint: &Path,
    data: &ViewPaths,
    out_dir: &Path,
    eer_method: Option<EerMethod>,
) -> Result<(MetricsReport, Outcome)> {
    let (model, meta) = load_checkpoint(checkpoint)?;
    let meta: CheckpointMeta = serde_json::from_value(meta)
        .map_err(|e| Error::CorruptCheckpoint(format!("metadata: {e}")))?;
    let arch = model.config().arch;
    let mut warnings = Vec::new();
    let views = load_views(data, "eval", arch.is_fusion(), arch.name(), Some(&meta.class_names), &mut warnings)?;
    let method = eer_method.unwrap_or(meta.eer_method);
    let report = evaluate(&model, &views.all(), &meta.class_names, method)?;
    create_dir(out_dir)?;
    write_report(out_dir, &report)?;
    let summary = report.summary_line();
    Ok((
        report,
        Outcome {
            summary,
            warnings,
            out_dir: out_dir.to_path_buf(),
        },
    ))
}
