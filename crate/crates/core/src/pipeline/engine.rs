use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{
    entry_meta, load_corpus, load_freq, load_labels, load_settings, load_vectors, load_vocabs, optional_jsonl, require,
    require_jsonl, LabelRow, PipelineError, PipelineSettings, SourceRow,
};
use crate::classifier::{BugCountModel, CweLabel, DualModels, LabelPrediction};
use crate::composite::{build_composite, build_module_aggregate, ModuleAggregate};
use crate::context_ranker::{inference_contexts, ContextFrequencyTable};
use crate::embedding::{CodeVector, EmbeddingModel, VectorRecord};
use crate::feedback::{
    incremental_step, move_by, AdjustmentConfig, FeedbackError, Overlays, Polarity, VoteLog, VoteRecord, VoteSummary};
use crate::path_extractor::{
    extract_path_contexts_frozen, source_sha, CGrammar, ExtractError, Grammar, PathContext, VocabPair,
};
use crate::similarity::{FixSuggestion, Metric, Neighbor, VectorIndex, DEFAULT_THRESHOLD};
use crate::store::{self, Store};

/// Turns source text into a code vector with frozen vocabularies.
#[derive(Debug, Clone)]
pub(crate) struct Embedder {
    pub settings: PipelineSettings,
    pub vocabs: VocabPair,
    pub freq: ContextFrequencyTable,
    pub model: EmbeddingModel,
}

pub(crate) struct Embedded {
    pub name: String,
    pub source_sha: String,
    pub vector: CodeVector,
}

impl Embedder {
    pub fn load(store: &Store) -> Result<Self, PipelineError> {
        Ok(Self {
            settings: load_settings(store)?,
            vocabs: load_vocabs(store)?,
            freq: load_freq(store)?,
            model: EmbeddingModel::from_bytes(&require(store, store::EMBEDDING_MODEL)?)?,
        })
    }

    pub fn embed_contexts(&self, contexts: &[PathContext]) -> Result<CodeVector, PipelineError> {
        let bag = inference_contexts(contexts, &self.freq, &self.settings.bounds);
        Ok(self.model.export_code_vector(&bag)?)
    }

    /// Embeds the first function definition found in `source`.
    pub fn embed_source(&self, source: &str) -> Result<Embedded, PipelineError> {
        let function = CGrammar
            .parse_functions(source)?
            .into_iter()
            .next()
            .ok_or(PipelineError::UnparsableSource)?;
        let contexts = match extract_path_contexts_frozen(&function.root, &self.settings.limits, &self.vocabs) {
            Ok(c) => c,
            Err(ExtractError::NoLeaves) => Vec::new(),
            Err(e) => return Err(e.into()),
        };
        Ok(Embedded {
            name: function.name,
            source_sha: source_sha(&function.source),
            vector: self.embed_contexts(&contexts)?,
        })
    }
}

/// Service-level knobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineOptions {
    /// Cosine-distance cut-off for reported neighbours and fix suggestions.
    pub threshold: f64,
    /// Neighbours considered per query.
    pub k: usize,
    pub adjustment: AdjustmentConfig,
}

impl Default for EngineOptions {
    fn default() -> Self {
        Self { threshold: DEFAULT_THRESHOLD, k: 5, adjustment: AdjustmentConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictRequest {
    pub source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub module_id: Option<String>,
    /// Report the k nearest neighbours even when they are beyond the threshold.
    #[serde(default)]
    pub include_all: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictResponse {
    pub function_id: String,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub module_id: Option<String>,
    pub vector_version: String,
    pub predictions: Vec<LabelPrediction>,
    pub flagged: Vec<CweLabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bug_count_estimate: Option<f64>,
    pub neighbors: Vec<Neighbor>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub suggested_fix: Option<FixSuggestion>,
}

/// A function submitted for prediction (`submissions.jsonl`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Submission {
    pub id: String,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub module_id: Option<String>,
    pub source: String,
    #[serde(rename = "vec")]
    pub values: Vec<f64>,
    pub model_version: String,
    pub ts: u64,
}

/// Everything computed for one function.
#[derive(Debug, Clone, PartialEq)]
pub struct Analysis {
    pub name: String,
    pub vector: CodeVector,
    pub predictions: Vec<LabelPrediction>,
    pub flagged: Vec<CweLabel>,
    pub bug_count: Option<f64>,
    /// The k nearest indexed functions, regardless of threshold.
    pub neighbors: Vec<Neighbor>,
    pub suggested_fix: Option<FixSuggestion>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub function_id: String,
    pub name: String,
    pub module_id: String,
    pub predictions: Vec<LabelPrediction>,
    pub flagged: Vec<CweLabel>,
    pub max_fused: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanStatus {
    Running,
    Complete,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanReport {
    pub id: String,
    pub status: ScanStatus,
    pub progress: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub component: Option<String>,
    pub total: usize,
    pub rows: Vec<ScanRow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ScanReport {
    pub fn finished(id: impl Into<String>, component: Option<String>, mut rows: Vec<ScanRow>) -> Self {
        sort_rows(&mut rows);
        Self {
            id: id.into(),
            status: ScanStatus::Complete,
            progress: 1.0,
            component,
            total: rows.len(),
            rows,
            error: None,
        }
    }
}

/// Descending by top fused probability, then by id.
pub(crate) fn sort_rows(rows: &mut [ScanRow]) {
    rows.sort_by(|a, b| b.max_fused.total_cmp(&a.max_fused).then_with(|| a.function_id.cmp(&b.function_id)));
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackOutcome {
    pub new_vote_count: u64,
    pub moved_distance: f64,
    #[serde(skip)]
    pub vote: Option<VoteRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionView {
    pub id: String,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub module_id: Option<String>,
    pub submitted: bool,
    pub source: String,
    #[serde(rename = "vec")]
    pub vector: Vec<f64>,
    pub model_version: String,
    pub adjusted: bool,
    pub labels: Vec<CweLabel>,
    pub bug_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fix_id: Option<String>,
    pub votes: VoteSummary,
}

/// Loaded models, index and feedback state for online use.
#[derive(Debug, Clone)]
pub struct Engine {
    pub options: EngineOptions,
    embedder: Embedder,
    classifier: DualModels,
    bug_count: Option<BugCountModel>,
    base: BTreeMap<String, Vec<f64>>,
    overlays: Overlays,
    index: VectorIndex,
    aggregates: BTreeMap<String, ModuleAggregate>,
    module_shas: BTreeMap<String, BTreeSet<String>>,
    sources: BTreeMap<String, SourceRow>,
    labels: BTreeMap<String, LabelRow>,
    votes: VoteLog,
    submissions: BTreeMap<String, Submission>,
}

impl Engine {
    pub fn load(store: &Store, options: EngineOptions) -> Result<Self, PipelineError> {
        let embedder = Embedder::load(store)?;
        let version = embedder.model.version.clone();
        let classifier = DualModels::from_bytes(&require(store, store::CLASSIFIER_MODEL)?)?;
        let bug_count = store.load_optional(store::BUG_COUNT_MODEL)?.map(|b| BugCountModel::from_bytes(&b)).transpose()?;
        let vectors = load_vectors(store)?;
        let corpus = load_corpus(store, store::CORPUS)?;
        let sources: BTreeMap<String, SourceRow> =
            require_jsonl::<SourceRow>(store, store::SOURCES)?.into_iter().map(|s| (s.id.clone(), s)).collect();
        let labels = load_labels(store)?;
        let aggregates: BTreeMap<String, ModuleAggregate> = require_jsonl::<ModuleAggregate>(store, store::AGGREGATES)?
            .into_iter()
            .map(|a| (a.module_id.clone(), a))
            .collect();
        let overlays = match store.load_optional(store::OVERLAYS)? {
            Some(b) => Overlays::from_jsonl(&b, &version)
                .map_err(|source| PipelineError::Jsonl { artifact: store::OVERLAYS.into(), source })?,
            None => Overlays::new(&version),
        };
        let votes = match store.load_optional(store::VOTES)? {
            Some(b) => VoteLog::replay(&b)?,
            None => VoteLog::default(),
        };
        let submissions = optional_jsonl::<Submission>(store, store::SUBMISSIONS)?
            .into_iter()
            .filter(|s| s.model_version == version)
            .map(|s| (s.id.clone(), s))
            .collect();

        let mut module_shas: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for r in &corpus {
            module_shas.entry(r.module_id.clone()).or_default().insert(r.source_sha.clone());
        }
        let mut index = VectorIndex::new(Metric::Cosine);
        let mut base = BTreeMap::new();
        for v in vectors {
            if v.model_version != version {
                return Err(PipelineError::Data(format!(
                    "{} was exported by model {} but the loaded model is {version}; rerun vectors",
                    store::VECTORS,
                    v.model_version
                )));
            }
            let source = sources.get(&v.id).ok_or_else(|| PipelineError::UnknownFunction(v.id.clone()))?;
            let effective = overlays.get(&v.id).map(<[f64]>::to_vec).unwrap_or_else(|| v.values.clone());
            index.insert(&CodeVector::new(effective, &version), entry_meta(source, labels.get(&v.id)))?;
            base.insert(v.id, v.values);
        }
        Ok(Self {
            options,
            embedder,
            classifier,
            bug_count,
            base,
            overlays,
            index,
            aggregates,
            module_shas,
            sources,
            labels,
            votes,
            submissions,
        })
    }

    pub fn model_version(&self) -> &str {
        &self.embedder.model.version
    }

    pub fn index(&self) -> &VectorIndex {
        &self.index
    }

    pub fn overlays(&self) -> &Overlays {
        &self.overlays
    }

    pub fn labels(&self) -> &[CweLabel] {
        &self.classifier.labels
    }

    pub fn is_known(&self, id: &str) -> bool {
        self.base.contains_key(id) || self.submissions.contains_key(id)
    }

    /// Current vector of a function: feedback overlay if any, else as exported.
    pub fn effective_vector(&self, id: &str) -> Option<Vec<f64>> {
        self.overlays
            .get(id)
            .map(<[f64]>::to_vec)
            .or_else(|| self.base.get(id).cloned())
            .or_else(|| self.submissions.get(id).map(|s| s.values.clone()))
    }

    fn aggregate_for(&self, module_id: Option<&str>, sha: &str, v: &CodeVector) -> Result<ModuleAggregate, PipelineError> {
        let stored = module_id.and_then(|m| self.aggregates.get(m).map(|a| (m, a)));
        Ok(match stored {
            Some((m, agg)) if self.module_shas.get(m).is_some_and(|s| s.contains(sha)) => agg.clone(),
            Some((_, agg)) => agg.with_member(v)?,
            None => build_module_aggregate(module_id.unwrap_or(""), &[v])?,
        })
    }

    /// Runs the inference chain on source text. `overlay_id` selects a
    /// stored function whose feedback overlay replaces the fresh vector.
    pub fn analyze(&self, source: &str, module_id: Option<&str>, overlay_id: Option<&str>) -> Result<Analysis, PipelineError> {
        let embedded = self.embedder.embed_source(source)?;
        let mut vector = embedded.vector;
        if let Some(adjusted) = overlay_id.and_then(|id| self.overlays.get(id)) {
            vector.values = adjusted.to_vec();
        }
        let aggregate = self.aggregate_for(module_id, &embedded.source_sha, &vector)?;
        let composite = build_composite(&vector, &aggregate)?;
        let prediction = self.classifier.predict(&vector.values, &composite.values)?;
        let flagged = self.classifier.flagged(&prediction);
        let bug_count = match &self.bug_count {
            Some(m) => Some(m.predict(&LabelRow::default().bug_features(&vector.values).to_input())?),
            None => None,
        };
        let (neighbors, suggested_fix) = if self.index.is_empty() {
            (Vec::new(), None)
        } else {
            (
                self.index.knn(&vector.values, self.options.k.max(1))?,
                self.index.suggest_fix(&vector.values, self.options.threshold)?,
            )
        };
        Ok(Analysis {
            name: embedded.name,
            vector,
            predictions: prediction.labels,
            flagged,
            bug_count,
            neighbors,
            suggested_fix,
        })
    }

    fn next_submission_id(&self) -> String {
        let mut n = self.submissions.len() + 1;
        loop {
            let id = format!("sub-{n:06}");
            if !self.is_known(&id) {
                return id;
            }
            n += 1;
        }
    }

    /// Prediction for a submitted function plus the record to persist for it.
    pub fn predict(&self, req: &PredictRequest, ts: u64) -> Result<(PredictResponse, Submission), PipelineError> {
        let analysis = self.analyze(&req.source, req.module_id.as_deref(), None)?;
        let id = self.next_submission_id();
        let threshold = self.options.threshold;
        let neighbors = analysis
            .neighbors
            .into_iter()
            .filter(|n| req.include_all || n.distance < threshold)
            .collect();
        let response = PredictResponse {
            function_id: id.clone(),
            name: analysis.name.clone(),
            module_id: req.module_id.clone(),
            vector_version: analysis.vector.model_version.clone(),
            predictions: analysis.predictions,
            flagged: analysis.flagged,
            bug_count_estimate: analysis.bug_count,
            neighbors,
            suggested_fix: analysis.suggested_fix,
        };
        let submission = Submission {
            id,
            name: analysis.name,
            module_id: req.module_id.clone(),
            source: req.source.clone(),
            values: analysis.vector.values,
            model_version: analysis.vector.model_version,
            ts,
        };
        Ok((response, submission))
    }

    pub fn add_submission(&mut self, submission: Submission) {
        self.submissions.insert(submission.id.clone(), submission);
    }

    /// Ids of indexed functions whose module id starts with `component`, in id order.
    pub fn scan_targets(&self, component: Option<&str>) -> Vec<String> {
        self.sources
            .values()
            .filter(|s| self.base.contains_key(&s.id))
            .filter(|s| component.is_none_or(|c| s.module_id.starts_with(c)))
            .map(|s| s.id.clone())
            .collect()
    }

    pub fn scan_one(&self, id: &str) -> Result<ScanRow, PipelineError> {
        let source = self.sources.get(id).ok_or_else(|| PipelineError::UnknownFunction(id.to_string()))?;
        let analysis = self.analyze(&source.source, Some(&source.module_id), Some(id))?;
        Ok(ScanRow {
            function_id: id.to_string(),
            name: source.name.clone(),
            module_id: source.module_id.clone(),
            max_fused: analysis.predictions.iter().map(|p| p.p_fused).fold(0.0, f64::max),
            predictions: analysis.predictions,
            flagged: analysis.flagged,
        })
    }

    /// Batch prediction over every matching indexed function.
    pub fn scan(&self, report_id: &str, component: Option<&str>) -> Result<ScanReport, PipelineError> {
        let rows = self
            .scan_targets(component)
            .iter()
            .map(|id| self.scan_one(id))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(ScanReport::finished(report_id, component.map(str::to_string), rows))
    }

    /// Records one vote and moves the source vector by the increment its new
    /// cumulative count adds.
    pub fn feedback(&mut self, src: &str, tgt: &str, polarity: Polarity, ts: u64) -> Result<FeedbackOutcome, PipelineError> {
        for id in [src, tgt] {
            if !self.is_known(id) {
                return Err(PipelineError::UnknownFunction(id.to_string()));
            }
        }
        if src == tgt {
            return Err(FeedbackError::SelfVote(src.to_string()).into());
        }
        let current = self.effective_vector(src).expect("known id");
        let target = self.effective_vector(tgt).expect("known id");
        let n = self.votes.count(src, tgt, polarity) + 1;
        let step = incremental_step(self.options.adjustment.step_scale, n);
        let (moved, distance) = move_by(&current, &target, polarity, step, &self.options.adjustment)?;
        let vote = VoteRecord { src: src.to_string(), tgt: tgt.to_string(), polarity, ts };
        let base = &self.base;
        let submissions = &self.submissions;
        let (count, _) = self
            .votes
            .record(vote.clone(), |id| base.contains_key(id) || submissions.contains_key(id))?;
        if self.index.get(src).is_some() {
            self.index.set_vector(src, moved.clone())?;
        }
        self.overlays.set(src, moved);
        Ok(FeedbackOutcome { new_vote_count: count, moved_distance: distance, vote: Some(vote) })
    }

    pub fn function(&self, id: &str) -> Result<FunctionView, PipelineError> {
        let vector = self.effective_vector(id).ok_or_else(|| PipelineError::UnknownFunction(id.to_string()))?;
        let label = self.labels.get(id);
        let (name, module_id, source, submitted) = match (self.sources.get(id), self.submissions.get(id)) {
            (Some(s), _) if self.base.contains_key(id) => (s.name.clone(), Some(s.module_id.clone()), s.source.clone(), false),
            (_, Some(s)) => (s.name.clone(), s.module_id.clone(), s.source.clone(), true),
            _ => return Err(PipelineError::UnknownFunction(id.to_string())),
        };
        Ok(FunctionView {
            id: id.to_string(),
            name,
            module_id,
            submitted,
            source,
            vector,
            model_version: self.model_version().to_string(),
            adjusted: self.overlays.get(id).is_some(),
            labels: label.map(|l| l.labels.clone()).unwrap_or_default(),
            bug_ids: label.map(|l| l.bug_ids.clone()).unwrap_or_default(),
            fix_id: label.and_then(|l| l.fix_id.clone()),
            votes: self.votes.summary(id),
        })
    }

    /// Persists a submission made by [`Engine::predict`].
    pub fn persist_submission(store: &Store, submission: &Submission) -> Result<(), PipelineError> {
        store.append(store::SUBMISSIONS, &crate::jsonl::to_line(submission))?;
        Ok(())
    }

    /// Persists the vote log line and the overlay set after [`Engine::feedback`].
    pub fn persist_feedback(&self, store: &Store, outcome: &FeedbackOutcome) -> Result<(), PipelineError> {
        if let Some(vote) = &outcome.vote {
            store.append(store::VOTES, &crate::jsonl::to_line(vote))?;
        }
        store.save(store::OVERLAYS, &self.overlays.to_jsonl())?;
        Ok(())
    }

    pub fn persist_report(store: &Store, report: &ScanReport) -> Result<(), PipelineError> {
        let bytes = serde_json::to_vec_pretty(report).expect("report serializes");
        store.save(&store::report_name(&report.id), &bytes)?;
        Ok(())
    }

    pub fn load_report(store: &Store, id: &str) -> Result<ScanReport, PipelineError> {
        let bytes = match store.load_optional(&store::report_name(id)) {
            Ok(Some(b)) => b,
            Ok(None) | Err(crate::store::StoreError::InvalidName(_)) => return Err(PipelineError::UnknownReport(id.into())),
            Err(e) => return Err(e.into()),
        };
        serde_json::from_slice(&bytes).map_err(|e| PipelineError::Data(e.to_string()))
    }
}

/// Vector rows as stored, for callers that need the base (pre-feedback) vectors.
pub(crate) fn vector_map(rows: &[VectorRecord]) -> BTreeMap<String, Vec<f64>> {
    rows.iter().map(|r| (r.id.clone(), r.values.clone())).collect()
}
