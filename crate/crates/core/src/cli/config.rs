use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::EerMethod;
use crate::models::{Arch, ModelConfig};
use crate::trainer::TrainConfig;

/// Embedding files for one split. View B is required by the fusion architectures.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewPaths {
    pub view_a: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub view_b: Option<PathBuf>,
}

fn default_test_fraction() -> f64 {
    0.2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub train: ViewPaths,
    /// Explicit validation split; otherwise `train.val_fraction` of the training rows.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val: Option<ViewPaths>,
    /// Explicit test split; otherwise `test_fraction` of the rows, stratified.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<ViewPaths>,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
}

fn default_arch() -> Arch {
    Arch::Trio
}

/// Model settings from the config file; input widths and class count come from the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default = "default_arch")]
    pub arch: Arch,
    #[serde(default)]
    pub proj_dim: Option<usize>,
    #[serde(default)]
    pub token_dim: Option<usize>,
    #[serde(default)]
    pub dropout_rate: Option<f64>,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            arch: default_arch(),
            proj_dim: None,
            token_dim: None,
            dropout_rate: None,
        }
    }
}

impl ModelSection {
    pub fn resolve(&self, d_in_a: usize, d_in_b: usize, n_classes: usize) -> ModelConfig {
        let mut c = ModelConfig::new(self.arch, d_in_a, d_in_b, n_classes);
        if let Some(v) = self.proj_dim {
            c.proj_dim = v;
        }
        if let Some(v) = self.token_dim {
            c.token_dim = v;
        }
        if let Some(v) = self.dropout_rate {
            c.dropout_rate = v;
        }
        c
    }
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("runs/latest")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_out_dir")]
    pub dir: PathBuf,
    #[serde(default)]
    pub eer_method: EerMethod,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: default_out_dir(),
            eer_method: EerMethod::default(),
        }
    }
}

/// The JSON run configuration accepted by `train` and `kfold`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub dataset: DatasetSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub output: OutputSection,
}

fn rebase(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("run config: {e}")))
    }

    /// Read a config file; relative paths are taken relative to its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut views: Vec<&mut ViewPaths> = vec![&mut cfg.dataset.train];
        views.extend(cfg.dataset.val.as_mut());
        views.extend(cfg.dataset.test.as_mut());
        for v in views {
            rebase(base, &mut v.view_a);
            if let Some(b) = v.view_b.as_mut() {
                rebase(base, b);
            }
        }
        rebase(base, &mut cfg.output.dir);
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dataset.test_fraction > 0.0 && self.dataset.test_fraction < 1.0) {
            return Err(Error::Config(format!(
                "test_fraction must lie in (0, 1), got {}",
                self.dataset.test_fraction
            )));
        }
        self.train.validate()
    }
}

/// Everything a run used, with defaults filled in and the model fully specified.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResolvedConfig {
    pub dataset: DatasetSection,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub output: OutputSection,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = RunConfigFile::parse(r#"{"dataset": {"train": {"view_a": "a.steb", "view_b": "b.steb"}}}"#).unwrap();
        assert_eq!(c.model.arch, Arch::Trio);
        assert_eq!(c.train, TrainConfig::default());
        assert_eq!(c.dataset.test_fraction, 0.2);
        let m = c.model.resolve(64, 48, 10);
        assert_eq!((m.proj_dim, m.token_dim, m.dropout_rate), (128, 64, 0.2));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for bad in [
            r#"{"dataset": {"train": {"view_a": "a"}}, "extra": 1}"#,
            r#"{"dataset": {"train": {"view_a": "a", "view_c": "c"}}}"#,
            r#"{"dataset": {"train": {"view_a": "a"}}, "model": {"arch": "fcn", "depth": 3}}"#,
            r#"{"dataset": {"train": {"view_a": "a"}}, "train": {"epoch": 3}}"#,
            r#"{"dataset": {"train": {"view_a": "a"}}, "model": {"arch": "rnn"}}"#,
        ] {
            assert!(RunConfigFile::parse(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        fs::write(&path, r#"{"dataset": {"train": {"view_a": "data/a.steb"}}, "output": {"dir": "out"}}"#).unwrap();
        let c = RunConfigFile::load(&path).unwrap();
        assert_eq!(c.dataset.train.view_a, dir.path().join("data/a.steb"));
        assert_eq!(c.output.dir, dir.path().join("out"));
    }
}
