//! Developer votes that pull a function's vector towards (or push it away
//! from) a bug-tagged function, and the periodic warm-start retrain.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{train_from, EmbedError, EmbeddingModel, TrainConfig, TrainingOutcome, VectorRecord};
use crate::jsonl::{self, JsonlError};
use crate::linalg;
use crate::path_extractor::{FunctionRecord, VocabPair};

#[derive(Debug, Error)]
pub enum FeedbackError {
    #[error("source and target vectors coincide")]
    CoincidentVectors,
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("invalid adjustment config: {0}")]
    InvalidConfig(String),
    #[error("unknown function {0}")]
    UnknownFunction(String),
    #[error("a function cannot vote on itself ({0})")]
    SelfVote(String),
    #[error("malformed vote log: {0}")]
    Log(#[from] JsonlError),
    #[error(transparent)]
    Training(#[from] EmbedError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Polarity {
    Positive,
    Negative,
}

impl Polarity {
    pub fn symbol(&self) -> &'static str {
        match self {
            Polarity::Positive => "+",
            Polarity::Negative => "-",
        }
    }
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

impl Serialize for Polarity {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.symbol())
    }
}

impl<'de> Deserialize<'de> for Polarity {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match String::deserialize(d)?.as_str() {
            "+" => Ok(Polarity::Positive),
            "-" => Ok(Polarity::Negative),
            other => Err(serde::de::Error::custom(format!("polarity must be \"+\" or \"-\", got {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdjustmentConfig {
    /// Proportionality constant `alpha` of the `alpha * ln(1 + votes)` step.
    pub step_scale: f64,
    /// Positive moves cover at most this fraction of the remaining gap.
    pub guard: f64,
}

impl Default for AdjustmentConfig {
    fn default() -> Self {
        Self { step_scale: 0.05, guard: 0.9 }
    }
}

impl AdjustmentConfig {
    pub fn validate(&self) -> Result<(), FeedbackError> {
        if !(self.step_scale > 0.0 && self.step_scale.is_finite()) {
            return Err(FeedbackError::InvalidConfig(format!("step_scale must be > 0, got {}", self.step_scale)));
        }
        if !(self.guard > 0.0 && self.guard <= 1.0) {
            return Err(FeedbackError::InvalidConfig(format!("guard must be in (0, 1], got {}", self.guard)));
        }
        Ok(())
    }
}

/// `alpha * ln(1 + votes)`.
pub fn step_length(alpha: f64, votes: u64) -> f64 {
    alpha * (votes as f64).ln_1p()
}

/// Step added by the `votes`-th vote: `alpha * (ln(1 + n) - ln(n))`.
pub fn incremental_step(alpha: f64, votes: u64) -> f64 {
    if votes == 0 {
        return 0.0;
    }
    step_length(alpha, votes) - step_length(alpha, votes - 1)
}

/// Moves `v` along the line to `target` by `step` (away from it when
/// negative); returns the new vector and the Euclidean distance moved.
pub fn move_by(
    v: &[f64],
    target: &[f64],
    polarity: Polarity,
    step: f64,
    cfg: &AdjustmentConfig,
) -> Result<(Vec<f64>, f64), FeedbackError> {
    cfg.validate()?;
    if v.len() != target.len() {
        return Err(FeedbackError::DimensionMismatch(v.len(), target.len()));
    }
    if step == 0.0 {
        return Ok((v.to_vec(), 0.0));
    }
    let gap = linalg::euclidean(v, target);
    if gap == 0.0 {
        return Err(FeedbackError::CoincidentVectors);
    }
    let signed = match polarity {
        Polarity::Positive => step.min(cfg.guard * gap),
        Polarity::Negative => -step,
    };
    let moved: Vec<f64> = v.iter().zip(target).map(|(a, t)| a + signed * (t - a) / gap).collect();
    Ok((moved, signed.abs()))
}

/// Applies the cumulative effect of `votes` votes to `v`.
pub fn apply_feedback(
    v: &[f64],
    target: &[f64],
    polarity: Polarity,
    votes: u64,
    cfg: &AdjustmentConfig,
) -> Result<Vec<f64>, FeedbackError> {
    move_by(v, target, polarity, step_length(cfg.step_scale, votes), cfg).map(|(m, _)| m)
}

/// One line of the vote log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteRecord {
    pub src: String,
    pub tgt: String,
    pub polarity: Polarity,
    /// Seconds since the Unix epoch.
    pub ts: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteSummary {
    pub count: u64,
    pub positive: u64,
    pub negative: u64,
}

type VoteKey = (String, String, Polarity);

/// Cumulative vote counts rebuilt from an append-only log.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct VoteLog {
    records: Vec<VoteRecord>,
    counts: BTreeMap<VoteKey, u64>,
}

impl VoteLog {
    pub fn replay(bytes: &[u8]) -> Result<Self, FeedbackError> {
        let mut log = Self::default();
        for r in jsonl::from_jsonl::<VoteRecord>(bytes)? {
            log.push(r);
        }
        Ok(log)
    }

    fn push(&mut self, r: VoteRecord) -> u64 {
        let n = self.counts.entry((r.src.clone(), r.tgt.clone(), r.polarity)).or_insert(0);
        *n += 1;
        let n = *n;
        self.records.push(r);
        n
    }

    /// Validates and records a vote; returns the new cumulative count and the
    /// line to append to the persisted log.
    pub fn record(&mut self, vote: VoteRecord, known: impl Fn(&str) -> bool) -> Result<(u64, Vec<u8>), FeedbackError> {
        for id in [&vote.src, &vote.tgt] {
            if !known(id) {
                return Err(FeedbackError::UnknownFunction(id.clone()));
            }
        }
        if vote.src == vote.tgt {
            return Err(FeedbackError::SelfVote(vote.src));
        }
        let line = jsonl::to_line(&vote);
        Ok((self.push(vote), line))
    }

    pub fn count(&self, src: &str, tgt: &str, polarity: Polarity) -> u64 {
        self.counts.get(&(src.to_string(), tgt.to_string(), polarity)).copied().unwrap_or(0)
    }

    pub fn counts(&self) -> impl Iterator<Item = (&VoteKey, &u64)> {
        self.counts.iter()
    }

    pub fn records(&self) -> &[VoteRecord] {
        &self.records
    }

    pub fn to_jsonl(&self) -> Vec<u8> {
        jsonl::to_jsonl(&self.records)
    }

    /// Votes cast with `id` as source or target.
    pub fn summary(&self, id: &str) -> VoteSummary {
        let mut s = VoteSummary::default();
        for r in self.records.iter().filter(|r| r.src == id || r.tgt == id) {
            s.count += 1;
            match r.polarity {
                Polarity::Positive => s.positive += 1,
                Polarity::Negative => s.negative += 1,
            }
        }
        s
    }
}

/// Feedback-adjusted vectors keyed by function id, valid for one model version.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overlays {
    pub model_version: String,
    vectors: BTreeMap<String, Vec<f64>>,
}

impl Overlays {
    pub fn new(model_version: impl Into<String>) -> Self {
        Self { model_version: model_version.into(), vectors: BTreeMap::new() }
    }

    /// Loads overlay rows, dropping those written for another model version.
    pub fn from_jsonl(bytes: &[u8], model_version: &str) -> Result<Self, JsonlError> {
        let mut out = Self::new(model_version);
        for r in jsonl::from_jsonl::<VectorRecord>(bytes)? {
            if r.model_version == model_version {
                out.vectors.insert(r.id, r.values);
            }
        }
        Ok(out)
    }

    pub fn to_jsonl(&self) -> Vec<u8> {
        let rows: Vec<VectorRecord> = self
            .vectors
            .iter()
            .map(|(id, v)| VectorRecord { id: id.clone(), values: v.clone(), model_version: self.model_version.clone() })
            .collect();
        jsonl::to_jsonl(&rows)
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.vectors.get(id).map(Vec::as_slice)
    }

    pub fn set(&mut self, id: impl Into<String>, values: Vec<f64>) {
        self.vectors.insert(id.into(), values);
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Vec<f64>)> {
        self.vectors.iter()
    }
}

/// Replays the log vote by vote against `base` vectors: the n-th vote on a
/// (source, target, polarity) key moves the source by [`incremental_step`].
pub fn overlays_from_votes(
    log: &VoteLog,
    base: &BTreeMap<String, Vec<f64>>,
    model_version: &str,
    cfg: &AdjustmentConfig,
) -> Result<Overlays, FeedbackError> {
    let mut overlays = Overlays::new(model_version);
    let mut counts: BTreeMap<VoteKey, u64> = BTreeMap::new();
    let current = |overlays: &Overlays, id: &str| {
        overlays
            .get(id)
            .map(<[f64]>::to_vec)
            .or_else(|| base.get(id).cloned())
            .ok_or_else(|| FeedbackError::UnknownFunction(id.to_string()))
    };
    for r in log.records() {
        let n = counts.entry((r.src.clone(), r.tgt.clone(), r.polarity)).or_insert(0);
        *n += 1;
        let source = current(&overlays, &r.src)?;
        let target = current(&overlays, &r.tgt)?;
        let (moved, _) = move_by(&source, &target, r.polarity, incremental_step(cfg.step_scale, *n), cfg)?;
        overlays.set(r.src.clone(), moved);
    }
    Ok(overlays)
}

/// `"vN"` becomes `"v(N+1)"`; other tags get a `+1` suffix.
pub fn next_version(version: &str) -> String {
    match version.strip_prefix('v').and_then(|n| n.parse::<u64>().ok()) {
        Some(n) => format!("v{}", n + 1),
        None => format!("{version}+1"),
    }
}

/// Retrains starting from the current parameters and bumps the version tag.
///
/// With zero epochs and nothing to train on the parameters are returned
/// unchanged. Overlays made under the old version are not carried over.
pub fn warm_start_retrain(
    model: &EmbeddingModel,
    corpus: &[FunctionRecord],
    vocabs: &VocabPair,
    config: &TrainConfig,
) -> Result<TrainingOutcome, FeedbackError> {
    let trainable = corpus.iter().any(|r| !r.contexts.is_empty() && !r.name_tokens.is_empty());
    let mut outcome = if !trainable && config.epochs == 0 {
        TrainingOutcome { model: model.clone(), losses: Vec::new(), accuracy: 0.0, epochs_run: 0 }
    } else {
        train_from(model.clone(), corpus, vocabs, config)?
    };
    outcome.model.version = next_version(&model.version);
    Ok(outcome)
}

/// Retraining cadence in days.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrainSchedule {
    pub cadence_days: u64,
}

impl Default for RetrainSchedule {
    fn default() -> Self {
        Self { cadence_days: 30 }
    }
}

impl RetrainSchedule {
    /// Whether a retrain is due at `now` given the last one at `last` (Unix seconds).
    pub fn is_due(&self, last: u64, now: u64) -> bool {
        now.saturating_sub(last) >= self.cadence_days * 86_400
    }
}
