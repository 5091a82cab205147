//! Store-to-store pipeline stages and the online inference engine built on
//! top of them.

mod engine;
mod offline;

use std::collections::BTreeMap;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{BugFeatures, ClassifierError, CweLabel};
use crate::composite::CompositeError;
use crate::context_ranker::{ContextFrequencyTable, FilterBounds, RankError};
use crate::embedding::{EmbedError, VectorRecord};
use crate::feedback::FeedbackError;
use crate::jsonl::{self, JsonlError};
use crate::path_extractor::{ExtractError, FunctionRecord, IngestError, PathLimits, VocabPair, Vocabulary};
use crate::similarity::{EntryMeta, SimilarityError};
use crate::store::{self, Store, StoreError};

pub use engine::{
    Analysis, Engine, EngineOptions, FeedbackOutcome, FunctionView, PredictRequest, PredictResponse, ScanReport,
    ScanRow, ScanStatus, Submission,
};
pub use offline::{
    apply_vote_log, build_aggregates, build_vectors, extract, fine_tune, rank, sweep_threshold, train_classifier,
    train_embedding_model, ClassifierSummary, ExtractSummary, FineTuneSummary, RankSummary, SweepRow,
    TrainEmbeddingSummary,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("missing prerequisite artifact {0}")]
    MissingPrerequisite(String),
    #[error("corpus contains no functions")]
    EmptyCorpus,
    #[error("source could not be parsed into a function")]
    UnparsableSource,
    #[error("unknown function {0}")]
    UnknownFunction(String),
    #[error("unknown report {0}")]
    UnknownReport(String),
    #[error("{0}")]
    Data(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Extract(ExtractError),
    #[error(transparent)]
    Rank(#[from] RankError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Composite(#[from] CompositeError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Similarity(#[from] SimilarityError),
    #[error(transparent)]
    Feedback(FeedbackError),
    #[error("{artifact}: {source}")]
    Jsonl {
        artifact: String,
        #[source]
        source: JsonlError,
    },
}

impl From<ExtractError> for PipelineError {
    fn from(e: ExtractError) -> Self {
        match e {
            ExtractError::UnparsableSource => PipelineError::UnparsableSource,
            other => PipelineError::Extract(other),
        }
    }
}

impl From<FeedbackError> for PipelineError {
    fn from(e: FeedbackError) -> Self {
        match e {
            FeedbackError::UnknownFunction(id) => PipelineError::UnknownFunction(id),
            other => PipelineError::Feedback(other),
        }
    }
}

impl PipelineError {
    /// Short machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            PipelineError::MissingPrerequisite(_) => "missing_prerequisite",
            PipelineError::EmptyCorpus => "empty_corpus",
            PipelineError::UnparsableSource => "unparsable_source",
            PipelineError::UnknownFunction(_) => "unknown_function",
            PipelineError::UnknownReport(_) => "unknown_report",
            PipelineError::Store(StoreError::MissingManifest(_)) => "missing_prerequisite",
            PipelineError::Store(StoreError::HashMismatch(_)) => "hash_mismatch",
            PipelineError::Store(StoreError::ManifestConflict { .. }) => "manifest_conflict",
            PipelineError::Store(_) => "io_failure",
            PipelineError::Ingest(IngestError::Io { .. }) => "io_failure",
            PipelineError::Feedback(FeedbackError::CoincidentVectors) => "coincident_vectors",
            PipelineError::Feedback(FeedbackError::SelfVote(_)) => "self_vote",
            PipelineError::Classifier(ClassifierError::ForgettingExceeded { .. }) => "forgetting_exceeded",
            _ => "data_error",
        }
    }

    /// Whether the error means an earlier stage has not been run.
    pub fn is_missing_prerequisite(&self) -> bool {
        matches!(
            self,
            PipelineError::MissingPrerequisite(_) | PipelineError::Store(StoreError::MissingManifest(_))
        )
    }
}

/// Extraction and filtering parameters shared by every stage (`pipeline.json`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineSettings {
    pub limits: PathLimits,
    pub bounds: FilterBounds,
    pub seed: u64,
}

impl Default for PipelineSettings {
    fn default() -> Self {
        Self { limits: PathLimits::default(), bounds: FilterBounds::default(), seed: 0 }
    }
}

/// Source text of one extracted function (`sources.jsonl`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceRow {
    pub id: String,
    pub module_id: String,
    pub name: String,
    pub source: String,
}

/// One line of a labeled corpus.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LabelRow {
    pub id: String,
    #[serde(default)]
    pub labels: Vec<CweLabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sa_score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coverage: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hotspot: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub bug_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fix_id: Option<String>,
    /// Known number of bugs; defaults to the number of labels.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bug_count: Option<f64>,
}

impl LabelRow {
    pub fn bug_features(&self, vector: &[f64]) -> BugFeatures {
        BugFeatures { vector: vector.to_vec(), sa_score: self.sa_score, coverage: self.coverage, hotspot: self.hotspot }
    }

    pub fn bug_count_target(&self) -> f64 {
        self.bug_count.unwrap_or(self.labels.len() as f64)
    }
}

/// A labeled pair of functions for threshold sweeps.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClonePair {
    pub a: String,
    pub b: String,
    pub similar: bool,
}

pub(crate) fn parse_jsonl<T: DeserializeOwned>(artifact: &str, bytes: &[u8]) -> Result<Vec<T>, PipelineError> {
    jsonl::from_jsonl(bytes).map_err(|source| PipelineError::Jsonl { artifact: artifact.to_string(), source })
}

pub(crate) fn require(store: &Store, name: &str) -> Result<Vec<u8>, PipelineError> {
    match store.load(name) {
        Ok(b) => Ok(b),
        Err(StoreError::MissingArtifact(n)) => Err(PipelineError::MissingPrerequisite(n)),
        Err(e) => Err(e.into()),
    }
}

pub(crate) fn require_jsonl<T: DeserializeOwned>(store: &Store, name: &str) -> Result<Vec<T>, PipelineError> {
    parse_jsonl(name, &require(store, name)?)
}

pub(crate) fn optional_jsonl<T: DeserializeOwned>(store: &Store, name: &str) -> Result<Vec<T>, PipelineError> {
    match store.load_optional(name)? {
        Some(b) => parse_jsonl(name, &b),
        None => Ok(Vec::new()),
    }
}

pub fn load_settings(store: &Store) -> Result<PipelineSettings, PipelineError> {
    let bytes = require(store, store::PIPELINE)?;
    serde_json::from_slice(&bytes).map_err(|e| PipelineError::Data(format!("{}: {e}", store::PIPELINE)))
}

pub(crate) fn save_settings(store: &Store, settings: &PipelineSettings) -> Result<(), PipelineError> {
    let mut bytes = serde_json::to_vec_pretty(settings).expect("settings serialize");
    bytes.push(b'\n');
    store.save(store::PIPELINE, &bytes)?;
    Ok(())
}

pub fn load_vocabs(store: &Store) -> Result<VocabPair, PipelineError> {
    Ok(VocabPair {
        tokens: Vocabulary::from_json(&require(store, store::VOCAB_TOKENS)?)?,
        paths: Vocabulary::from_json(&require(store, store::VOCAB_PATHS)?)?,
    })
}

pub fn load_corpus(store: &Store, name: &str) -> Result<Vec<FunctionRecord>, PipelineError> {
    require_jsonl(store, name)
}

pub fn load_freq(store: &Store) -> Result<ContextFrequencyTable, PipelineError> {
    let corpus_len = load_corpus(store, store::CORPUS)?.len();
    Ok(ContextFrequencyTable::from_jsonl(&require(store, store::FREQ)?, corpus_len)?)
}

pub fn load_labels(store: &Store) -> Result<BTreeMap<String, LabelRow>, PipelineError> {
    Ok(optional_jsonl::<LabelRow>(store, store::LABELS)?.into_iter().map(|r| (r.id.clone(), r)).collect())
}

pub fn load_vectors(store: &Store) -> Result<Vec<VectorRecord>, PipelineError> {
    require_jsonl(store, store::VECTORS)
}

pub fn parse_label_rows(bytes: &[u8], artifact: &str) -> Result<Vec<LabelRow>, PipelineError> {
    parse_jsonl(artifact, bytes)
}

pub fn parse_clone_pairs(bytes: &[u8], artifact: &str) -> Result<Vec<ClonePair>, PipelineError> {
    parse_jsonl(artifact, bytes)
}

pub(crate) fn entry_meta(source: &SourceRow, label: Option<&LabelRow>) -> EntryMeta {
    EntryMeta {
        id: source.id.clone(),
        name: source.name.clone(),
        module_id: source.module_id.clone(),
        bug_ids: label.map(|l| l.bug_ids.clone()).unwrap_or_default(),
        fix_id: label.and_then(|l| l.fix_id.clone()),
    }
}
