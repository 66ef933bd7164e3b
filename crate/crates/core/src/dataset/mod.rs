//! Embedding tables, their on-disk format, view pairing, fold planning and batching.

mod batch;
mod folds;
mod steb;

use std::collections::HashMap;

pub use batch::batch_iter;
pub use folds::{stratified_holdout, stratified_kfold, FoldPlan};
pub use steb::{load_embedding_file, manifest_path, write_embedding_file, Manifest, STEB_HEADER_LEN, STEB_MAGIC};

use crate::error::{Error, Result};
use crate::nn::{Matrix, Real};

/// Embedding width produced by each supported upstream speech model.
pub const KNOWN_MODEL_DIMS: &[(&str, usize)] = &[
    ("ecapa", 192),
    ("x-vector", 512),
    ("whisper", 512),
    ("wav2vec2", 768),
    ("wavlm", 768),
    ("unispeech-sat", 768),
    ("wav2vec2-emo", 768),
    ("trillsson", 1024),
    ("xls-r", 1280),
    ("mms", 1280),
];

pub fn known_model_dim(source_model: &str) -> Option<usize> {
    KNOWN_MODEL_DIMS
        .iter()
        .find(|(name, _)| name.eq_ignore_ascii_case(source_model))
        .map(|&(_, d)| d)
}

/// `N` fixed-width utterance embeddings with source-class labels.
///
/// Vectors are stored in single precision, as on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    ids: Vec<String>,
    vectors: Vec<f32>,
    dim: usize,
    labels: Vec<u16>,
    class_names: Vec<String>,
    source_model: String,
}

impl EmbeddingTable {
    /// Build a validated table. An unlabeled table has no class names and no labels.
    pub fn new(
        ids: Vec<String>,
        vectors: Vec<f32>,
        dim: usize,
        labels: Vec<u16>,
        class_names: Vec<String>,
        source_model: impl Into<String>,
    ) -> Result<Self> {
        let table = EmbeddingTable {
            ids,
            vectors,
            dim,
            labels,
            class_names,
            source_model: source_model.into(),
        };
        table.validate()?;
        Ok(table)
    }

    fn validate(&self) -> Result<()> {
        let n = self.ids.len();
        if self.vectors.len() != n * self.dim {
            return Err(Error::InvalidTable(format!(
                "{} values for {n} rows of dimension {}",
                self.vectors.len(),
                self.dim
            )));
        }
        let labeled = !self.class_names.is_empty();
        if labeled && self.labels.len() != n {
            return Err(Error::InvalidTable(format!("{} labels for {n} rows", self.labels.len())));
        }
        if !labeled && !self.labels.is_empty() {
            return Err(Error::InvalidTable("labels present without class names".into()));
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l as usize >= self.class_names.len()) {
            return Err(Error::LabelOutOfRange {
                label: bad as usize,
                classes: self.class_names.len(),
            });
        }
        if self.vectors.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidTable("non-finite embedding value".into()));
        }
        if let Some(expected) = known_model_dim(&self.source_model) {
            if expected != self.dim {
                return Err(Error::DimMismatch {
                    what: format!("{} embeddings", self.source_model),
                    expected,
                    actual: self.dim,
                });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn is_labeled(&self) -> bool {
        !self.class_names.is_empty()
    }

    pub fn source_model(&self) -> &str {
        &self.source_model
    }

    pub fn vectors(&self) -> &[f32] {
        &self.vectors
    }

    pub fn vector(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn labels_usize(&self) -> Vec<usize> {
        self.labels.iter().map(|&l| l as usize).collect()
    }

    /// Rows `idx` (in that order) as a new table.
    pub fn subset(&self, idx: &[usize]) -> EmbeddingTable {
        let mut vectors = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            vectors.extend_from_slice(self.vector(i));
        }
        EmbeddingTable {
            ids: idx.iter().map(|&i| self.ids[i].clone()).collect(),
            vectors,
            dim: self.dim,
            labels: if self.is_labeled() {
                idx.iter().map(|&i| self.labels[i]).collect()
            } else {
                Vec::new()
            },
            class_names: self.class_names.clone(),
            source_model: self.source_model.clone(),
        }
    }

    /// Rows `idx` as an `idx.len() x dim` matrix.
    pub fn matrix<T: Real>(&self, idx: &[usize]) -> Matrix<T> {
        let mut data = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            data.extend(self.vector(i).iter().map(|&v| T::lit(v as f64)));
        }
        Matrix::new(idx.len(), self.dim, data).expect("consistent table")
    }

    pub fn all_rows(&self) -> Vec<usize> {
        (0..self.len()).collect()
    }
}

/// Two views of the same utterances, row-aligned.
#[derive(Clone, Debug, PartialEq)]
pub struct PairedDataset {
    view_a: EmbeddingTable,
    view_b: EmbeddingTable,
}

impl PairedDataset {
    pub fn view_a(&self) -> &EmbeddingTable {
        &self.view_a
    }

    pub fn view_b(&self) -> &EmbeddingTable {
        &self.view_b
    }

    pub fn len(&self) -> usize {
        self.view_a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.view_a.is_empty()
    }

    pub fn labels(&self) -> &[u16] {
        self.view_a.labels()
    }

    pub fn subset(&self, idx: &[usize]) -> PairedDataset {
        PairedDataset {
            view_a: self.view_a.subset(idx),
            view_b: self.view_b.subset(idx),
        }
    }

    pub fn into_views(self) -> (EmbeddingTable, EmbeddingTable) {
        (self.view_a, self.view_b)
    }
}

/// Join two tables on utterance id (exact, case-sensitive), reordering `b` to
/// follow `a`'s row order.
pub fn pair_align(a: EmbeddingTable, b: EmbeddingTable) -> Result<PairedDataset> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("pairing needs two non-empty tables"));
    }
    let mut index: HashMap<&str, usize> = HashMap::with_capacity(b.len());
    for (i, id) in b.ids.iter().enumerate() {
        if index.insert(id.as_str(), i).is_some() {
            return Err(Error::InvalidTable(format!("duplicate id {id} in view B")));
        }
    }
    let mut order = Vec::with_capacity(a.len());
    let mut seen = std::collections::HashSet::with_capacity(a.len());
    for (row, id) in a.ids.iter().enumerate() {
        if !seen.insert(id.as_str()) {
            return Err(Error::InvalidTable(format!("duplicate id {id} in view A")));
        }
        let j = *index.get(id.as_str()).ok_or_else(|| Error::Unpairable(id.clone()))?;
        if a.is_labeled() && b.is_labeled() {
            let (la, lb) = (&a.class_names[a.labels[row] as usize], &b.class_names[b.labels[j] as usize]);
            if la != lb {
                return Err(Error::LabelConflict(id.clone()));
            }
        }
        order.push(j);
    }
    if b.len() != a.len() {
        let extra = b.ids.iter().find(|id| !seen.contains(id.as_str())).expect("b has an unmatched id");
        return Err(Error::Unpairable(extra.clone()));
    }
    if a.is_labeled() != b.is_labeled() {
        return Err(Error::InvalidTable("one view is labeled and the other is not".into()));
    }
    let mut view_b = if order.iter().enumerate().all(|(i, &j)| i == j) { b } else { b.subset(&order) };
    // Both views share A's label indexing so label sequences are identical.
    if view_b.is_labeled() {
        view_b.labels = a.labels.clone();
        view_b.class_names = a.class_names.clone();
    }
    Ok(PairedDataset { view_a: a, view_b })
}
