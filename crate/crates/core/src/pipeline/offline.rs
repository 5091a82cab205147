use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::engine::{vector_map, Embedder, Submission};
use super::{
    entry_meta, load_corpus, load_labels, load_settings, load_vectors, load_vocabs, optional_jsonl, require,
    require_jsonl, save_settings, ClonePair, LabelRow, PipelineError, PipelineSettings, SourceRow,
};
use crate::classifier::{
    train_bug_count, train_dual, BugCountConfig, CweLabel, DualConfig, DualModels, FineTuneReport, LabeledSample,
};
use crate::composite::{aggregate_modules, build_composite, ModuleAggregate};
use crate::context_ranker::{filter_contexts, ContextFrequencyTable, FilterBounds};
use crate::embedding::{train_embeddings, CodeVector, EmbeddingModel, TrainConfig, VectorRecord};
use crate::feedback::{overlays_from_votes, warm_start_retrain, AdjustmentConfig, Overlays, VoteLog};
use crate::jsonl;
use crate::path_extractor::{extract_tree, CGrammar, FunctionRecord};
use crate::similarity::{cosine_distance, pair_accuracy};
use crate::store::{self, Store};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractSummary {
    pub functions: usize,
    pub files: usize,
    pub skipped: usize,
    pub tokens: usize,
    pub paths: usize,
    pub labels: usize,
}

/// Parses a source tree into `corpus.jsonl`, `sources.jsonl` and the vocabularies.
pub fn extract(
    store: &Store,
    src: &Path,
    labels: Option<&[u8]>,
    settings: &PipelineSettings,
) -> Result<ExtractSummary, PipelineError> {
    let corpus = extract_tree(src, &CGrammar, &settings.limits)?;
    if corpus.records.is_empty() {
        return Err(PipelineError::EmptyCorpus);
    }
    let ids: BTreeSet<&str> = corpus.records.iter().map(|r| r.id.as_str()).collect();
    let label_rows = match labels {
        Some(bytes) => {
            let rows = super::parse_label_rows(bytes, "labels")?;
            if let Some(r) = rows.iter().find(|r| !ids.contains(r.id.as_str())) {
                return Err(PipelineError::UnknownFunction(r.id.clone()));
            }
            Some(rows)
        }
        None => None,
    };
    let sources: Vec<SourceRow> = corpus
        .records
        .iter()
        .zip(&corpus.sources)
        .map(|(r, s)| SourceRow { id: r.id.clone(), module_id: r.module_id.clone(), name: r.name.clone(), source: s.clone() })
        .collect();
    let corpus_bytes = jsonl::to_jsonl(&corpus.records);
    let source_bytes = jsonl::to_jsonl(&sources);
    let tokens = corpus.vocabs.tokens.to_json();
    let paths = corpus.vocabs.paths.to_json();
    let mut items: Vec<(&str, &[u8])> = vec![
        (store::CORPUS, &corpus_bytes),
        (store::SOURCES, &source_bytes),
        (store::VOCAB_TOKENS, &tokens),
        (store::VOCAB_PATHS, &paths),
    ];
    let label_bytes = label_rows.as_ref().map(|rows| jsonl::to_jsonl(rows));
    if let Some(b) = &label_bytes {
        items.push((store::LABELS, b));
    }
    store.save_all(&items)?;
    save_settings(store, settings)?;
    Ok(ExtractSummary {
        functions: corpus.records.len(),
        files: corpus.files,
        skipped: corpus.skipped.len(),
        tokens: corpus.vocabs.tokens.len(),
        paths: corpus.vocabs.paths.len(),
        labels: label_rows.map_or(0, |r| r.len()),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankSummary {
    pub distinct_contexts: usize,
    pub kept_occurrences: usize,
    pub dropped_occurrences: usize,
    pub functions_without_contexts: usize,
}

/// Builds `freq.jsonl` and `corpus_filtered.jsonl`.
pub fn rank(store: &Store, bounds: Option<FilterBounds>) -> Result<RankSummary, PipelineError> {
    let mut settings = load_settings(store)?;
    if let Some(b) = bounds {
        settings.bounds = FilterBounds::new(b.min_count, b.max_count)?;
    }
    let corpus = load_corpus(store, store::CORPUS)?;
    let table = ContextFrequencyTable::build(&corpus)?;
    let filtered: Vec<FunctionRecord> = corpus.iter().map(|r| filter_contexts(r, &table, &settings.bounds)).collect();
    let before: usize = corpus.iter().map(|r| r.contexts.len()).sum();
    let kept: usize = filtered.iter().map(|r| r.contexts.len()).sum();
    let summary = RankSummary {
        distinct_contexts: table.distinct(),
        kept_occurrences: kept,
        dropped_occurrences: before - kept,
        functions_without_contexts: filtered.iter().filter(|r| r.contexts.is_empty()).count(),
    };
    store.save_all(&[(store::FREQ, &table.to_jsonl()), (store::CORPUS_FILTERED, &jsonl::to_jsonl(&filtered))])?;
    save_settings(store, &settings)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainEmbeddingSummary {
    pub model_version: String,
    pub losses: Vec<f64>,
    pub accuracy: f64,
    pub epochs_run: usize,
}

/// Trains (or warm-start retrains) the embedding model on the filtered corpus.
///
/// A warm start bumps the model version, discards feedback overlays and
/// re-exports any stored vectors and aggregates under the new version.
pub fn train_embedding_model(store: &Store, config: &TrainConfig, warm_start: bool) -> Result<TrainEmbeddingSummary, PipelineError> {
    let corpus = load_corpus(store, store::CORPUS_FILTERED)?;
    let vocabs = load_vocabs(store)?;
    let outcome = if warm_start {
        let model = EmbeddingModel::from_bytes(&require(store, store::EMBEDDING_MODEL)?)?;
        warm_start_retrain(&model, &corpus, &vocabs, config)?
    } else {
        train_embeddings(&corpus, &vocabs, config)?
    };
    let version = outcome.model.version.clone();
    store.save(store::EMBEDDING_MODEL, &outcome.model.to_bytes())?;
    store.set_model_version(&version)?;
    if warm_start {
        store.remove(store::OVERLAYS)?;
        if store.contains(store::VECTORS)? {
            build_vectors(store)?;
        }
        if store.contains(store::AGGREGATES)? {
            build_aggregates(store)?;
        }
    }
    Ok(TrainEmbeddingSummary {
        model_version: version,
        losses: outcome.losses,
        accuracy: outcome.accuracy,
        epochs_run: outcome.epochs_run,
    })
}

/// Exports a vector for every extracted function into `vectors.jsonl` and
/// writes the index metadata. Returns the number of vectors.
pub fn build_vectors(store: &Store) -> Result<usize, PipelineError> {
    let embedder = Embedder::load(store)?;
    let corpus: BTreeMap<String, FunctionRecord> =
        load_corpus(store, store::CORPUS)?.into_iter().map(|r| (r.id.clone(), r)).collect();
    let sources = require_jsonl::<SourceRow>(store, store::SOURCES)?;
    let labels = load_labels(store)?;
    let mut rows = Vec::with_capacity(sources.len());
    let mut meta = Vec::with_capacity(sources.len());
    for s in &sources {
        let vector = match embedder.embed_source(&s.source) {
            Ok(e) => e.vector,
            Err(PipelineError::UnparsableSource) => {
                let record = corpus.get(&s.id).ok_or_else(|| PipelineError::UnknownFunction(s.id.clone()))?;
                embedder.embed_contexts(&record.contexts)?
            }
            Err(e) => return Err(e),
        };
        rows.push(VectorRecord::new(&s.id, &vector));
        meta.push(entry_meta(s, labels.get(&s.id)));
    }
    store.save_all(&[(store::VECTORS, &jsonl::to_jsonl(&rows)), (store::INDEX_META, &jsonl::to_jsonl(&meta))])?;
    Ok(rows.len())
}

/// Writes one mean vector per module to `aggregates.jsonl`.
pub fn build_aggregates(store: &Store) -> Result<Vec<ModuleAggregate>, PipelineError> {
    let modules: BTreeMap<String, String> =
        load_corpus(store, store::CORPUS)?.into_iter().map(|r| (r.id, r.module_id)).collect();
    let vectors: Vec<(String, CodeVector)> = load_vectors(store)?
        .into_iter()
        .map(|r| {
            let module = modules.get(&r.id).cloned().ok_or_else(|| PipelineError::UnknownFunction(r.id.clone()))?;
            Ok((module, r.code_vector()))
        })
        .collect::<Result<_, PipelineError>>()?;
    let aggregates = aggregate_modules(vectors.iter().map(|(m, v)| (m.as_str(), v)))?;
    store.save(store::AGGREGATES, &jsonl::to_jsonl(&aggregates))?;
    Ok(aggregates)
}

/// Vectors after feedback overlays of the current model version.
fn effective_vectors(store: &Store) -> Result<(BTreeMap<String, Vec<f64>>, String), PipelineError> {
    let rows = load_vectors(store)?;
    let version = rows.first().map(|r| r.model_version.clone()).unwrap_or_default();
    let overlays = match store.load_optional(store::OVERLAYS)? {
        Some(b) => Overlays::from_jsonl(&b, &version)
            .map_err(|source| PipelineError::Jsonl { artifact: store::OVERLAYS.into(), source })?,
        None => Overlays::new(&version),
    };
    let mut map = vector_map(&rows);
    for (id, v) in overlays.iter() {
        if let Some(slot) = map.get_mut(id) {
            *slot = v.clone();
        }
    }
    Ok((map, version))
}

fn labeled_samples(store: &Store, rows: &[LabelRow]) -> Result<Vec<LabeledSample>, PipelineError> {
    let (vectors, version) = effective_vectors(store)?;
    let modules: BTreeMap<String, String> =
        load_corpus(store, store::CORPUS)?.into_iter().map(|r| (r.id, r.module_id)).collect();
    let aggregates: BTreeMap<String, ModuleAggregate> = require_jsonl::<ModuleAggregate>(store, store::AGGREGATES)?
        .into_iter()
        .map(|a| (a.module_id.clone(), a))
        .collect();
    rows.iter()
        .map(|row| {
            let v = vectors.get(&row.id).ok_or_else(|| PipelineError::UnknownFunction(row.id.clone()))?;
            let module = &modules[&row.id];
            let aggregate = aggregates
                .get(module)
                .ok_or_else(|| PipelineError::MissingPrerequisite(format!("{} entry for {module}", store::AGGREGATES)))?;
            let composite = build_composite(&CodeVector::new(v.clone(), &version), aggregate)?;
            Ok(LabeledSample { id: row.id.clone(), vanilla: v.clone(), composite: composite.values, labels: row.labels.clone() })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierSummary {
    pub samples: usize,
    pub fused_accuracy: BTreeMap<CweLabel, f64>,
    pub vanilla_accuracy: BTreeMap<CweLabel, f64>,
}

/// Trains the dual classifier and the bug-count ensemble on `labels.jsonl`.
pub fn train_classifier(store: &Store, dual: &DualConfig, bugs: &BugCountConfig) -> Result<ClassifierSummary, PipelineError> {
    let rows: Vec<LabelRow> = require_jsonl(store, store::LABELS)?;
    let samples = labeled_samples(store, &rows)?;
    let mut models = train_dual(&samples, dual)?;
    models.round_to_f32();
    let bug_samples: Vec<(Vec<f64>, f64)> = rows
        .iter()
        .zip(&samples)
        .map(|(row, s)| (row.bug_features(&s.vanilla).to_input(), row.bug_count_target()))
        .collect();
    let mut bug_model = train_bug_count(&bug_samples, bugs)?;
    bug_model.round_to_f32();
    store.save_all(&[
        (store::CLASSIFIER_MODEL, &models.to_bytes()),
        (store::BUG_COUNT_MODEL, &bug_model.to_bytes()),
    ])?;
    Ok(ClassifierSummary {
        samples: samples.len(),
        fused_accuracy: models.label_accuracy(&samples)?.into_iter().collect(),
        vanilla_accuracy: models.vanilla_label_accuracy(&samples)?.into_iter().collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FineTuneSummary {
    pub samples: usize,
    pub labels: Vec<CweLabel>,
    pub old_label_accuracy_before: Option<f64>,
    pub old_label_accuracy_after: Option<f64>,
}

/// Fine-tunes the stored classifier on validated label rows. With
/// `check_forgetting` the stored `labels.jsonl` is the reference set.
pub fn fine_tune(
    store: &Store,
    validated: &[u8],
    dual: &DualConfig,
    check_forgetting: bool,
) -> Result<FineTuneSummary, PipelineError> {
    let models = DualModels::from_bytes(&require(store, store::CLASSIFIER_MODEL)?)?;
    let rows = super::parse_label_rows(validated, "validated")?;
    let samples = labeled_samples(store, &rows)?;
    let reference = if check_forgetting {
        let rows: Vec<LabelRow> = require_jsonl(store, store::LABELS)?;
        Some(labeled_samples(store, &rows)?)
    } else {
        None
    };
    let (mut tuned, report): (DualModels, FineTuneReport) =
        models.fine_tune_with_feedback(&samples, dual, reference.as_deref())?;
    tuned.round_to_f32();
    store.save(store::CLASSIFIER_MODEL, &tuned.to_bytes())?;
    Ok(FineTuneSummary {
        samples: samples.len(),
        labels: tuned.labels.clone(),
        old_label_accuracy_before: report.old_label_accuracy_before,
        old_label_accuracy_after: report.old_label_accuracy_after,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub threshold: f64,
    pub accuracy: f64,
}

/// Accuracy of `distance < t` as a clone detector on labeled pairs, per threshold.
pub fn sweep_threshold(store: &Store, pairs: &[ClonePair], thresholds: &[f64]) -> Result<Vec<SweepRow>, PipelineError> {
    let (vectors, _) = effective_vectors(store)?;
    let lookup = |id: &str| vectors.get(id).ok_or_else(|| PipelineError::UnknownFunction(id.to_string()));
    let scored = pairs
        .iter()
        .map(|p| Ok((cosine_distance(lookup(&p.a)?, lookup(&p.b)?)?, p.similar)))
        .collect::<Result<Vec<_>, PipelineError>>()?;
    Ok(thresholds.iter().map(|&t| SweepRow { threshold: t, accuracy: pair_accuracy(&scored, t) }).collect())
}

/// Rebuilds `overlays.jsonl` by replaying the vote log against the exported
/// vectors. Returns the number of adjusted functions.
pub fn apply_vote_log(store: &Store, cfg: &AdjustmentConfig) -> Result<usize, PipelineError> {
    let rows = load_vectors(store)?;
    let version = rows.first().map(|r| r.model_version.clone()).unwrap_or_default();
    let mut base = vector_map(&rows);
    for s in optional_jsonl::<Submission>(store, store::SUBMISSIONS)? {
        if s.model_version == version {
            base.insert(s.id, s.values);
        }
    }
    let log = match store.load_optional(store::VOTES)? {
        Some(b) => VoteLog::replay(&b)?,
        None => VoteLog::default(),
    };
    let overlays = overlays_from_votes(&log, &base, &version, cfg)?;
    store.save(store::OVERLAYS, &overlays.to_jsonl())?;
    Ok(overlays.len())
}

