//! Corpus-frequency filtering of path contexts.
//!
//! A context survives when `min_count <= count(p) <= max_count`, where
//! `count(p)` is the number of times `p` occurs across the whole corpus.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::path_extractor::{FunctionRecord, PathContext};

#[derive(Debug, Error)]
pub enum RankError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("invalid filter bounds: need 1 <= min ({min}) <= max ({max})")]
    InvalidBounds { min: u64, max: u64 },
    #[error("malformed frequency table line {line}: {reason}")]
    Malformed { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterBounds {
    pub min_count: u64,
    pub max_count: u64,
}

impl FilterBounds {
    /// Upper bound that admits any count.
    pub const UNBOUNDED: u64 = u64::MAX;

    pub fn new(min_count: u64, max_count: u64) -> Result<Self, RankError> {
        if min_count < 1 || min_count > max_count {
            return Err(RankError::InvalidBounds {
                min: min_count,
                max: max_count,
            });
        }
        Ok(Self {
            min_count,
            max_count,
        })
    }

    pub fn admits(&self, count: u64) -> bool {
        self.min_count <= count && count <= self.max_count
    }
}

impl Default for FilterBounds {
    fn default() -> Self {
        Self {
            min_count: 2,
            max_count: 10_000,
        }
    }
}

/// Occurrence counts of every context across a corpus.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ContextFrequencyTable {
    counts: HashMap<PathContext, u64>,
    total_functions: usize,
}

#[derive(Serialize, Deserialize)]
struct FreqLine {
    ctx: PathContext,
    n: u64,
}

impl ContextFrequencyTable {
    pub fn build<'a, I>(corpus: I) -> Result<Self, RankError>
    where
        I: IntoIterator<Item = &'a FunctionRecord>,
    {
        let mut counts = HashMap::new();
        let mut total_functions = 0;
        for record in corpus {
            total_functions += 1;
            for pc in &record.contexts {
                *counts.entry(*pc).or_insert(0) += 1;
            }
        }
        if total_functions == 0 {
            return Err(RankError::EmptyCorpus);
        }
        Ok(Self {
            counts,
            total_functions,
        })
    }

    /// Count for `pc`; contexts never seen in the corpus count zero.
    pub fn count(&self, pc: &PathContext) -> u64 {
        self.counts.get(pc).copied().unwrap_or(0)
    }

    pub fn total_functions(&self) -> usize {
        self.total_functions
    }

    pub fn distinct(&self) -> usize {
        self.counts.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&PathContext, u64)> {
        self.counts.iter().map(|(k, &v)| (k, v))
    }

    /// JSON lines `{"ctx":[s,p,e],"n":count}` sorted by context.
    pub fn to_jsonl(&self) -> Vec<u8> {
        let mut entries: Vec<_> = self.counts.iter().collect();
        entries.sort();
        let mut out = Vec::new();
        for (ctx, &n) in entries {
            serde_json::to_writer(&mut out, &FreqLine { ctx: *ctx, n }).expect("in-memory write");
            out.push(b'\n');
        }
        out
    }

    /// Parses the JSONL form. `total_functions` is not part of that format and
    /// must be supplied by the caller.
    pub fn from_jsonl(bytes: &[u8], total_functions: usize) -> Result<Self, RankError> {
        let text = std::str::from_utf8(bytes).map_err(|e| RankError::Malformed {
            line: 0,
            reason: e.to_string(),
        })?;
        let mut counts = HashMap::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let parsed: FreqLine = serde_json::from_str(line).map_err(|e| RankError::Malformed {
                line: i + 1,
                reason: e.to_string(),
            })?;
            if parsed.n == 0 {
                return Err(RankError::Malformed {
                    line: i + 1,
                    reason: "count must be >= 1".into(),
                });
            }
            counts.insert(parsed.ctx, parsed.n);
        }
        Ok(Self {
            counts,
            total_functions,
        })
    }
}

/// Keeps the contexts whose corpus count lies within `bounds`, in original order.
pub fn filter_contexts(
    record: &FunctionRecord,
    table: &ContextFrequencyTable,
    bounds: &FilterBounds,
) -> FunctionRecord {
    FunctionRecord {
        contexts: record
            .contexts
            .iter()
            .filter(|pc| bounds.admits(table.count(pc)))
            .copied()
            .collect(),
        ..record.clone()
    }
}

/// Filtering used when embedding a function at inference time.
///
/// Falls back to the unfiltered contexts when nothing survives, and to a
/// single all-UNK context when the function has none at all.
pub fn inference_contexts(
    contexts: &[PathContext],
    table: &ContextFrequencyTable,
    bounds: &FilterBounds,
) -> Vec<PathContext> {
    let kept: Vec<PathContext> = contexts
        .iter()
        .filter(|pc| bounds.admits(table.count(pc)))
        .copied()
        .collect();
    if !kept.is_empty() {
        kept
    } else if !contexts.is_empty() {
        contexts.to_vec()
    } else {
        vec![PathContext::UNKNOWN]
    }
}
