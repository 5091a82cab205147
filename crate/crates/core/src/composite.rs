//! Module-level aggregates and composite (function ; module) vectors.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::CodeVector;

#[derive(Debug, Error, PartialEq)]
pub enum CompositeError {
    #[error("module has no members")]
    EmptyModule,
    #[error("members come from different model versions")]
    MixedModelVersions,
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
}

/// Mean vector of every function in a module (the query function included).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModuleAggregate {
    pub module_id: String,
    #[serde(rename = "vec")]
    pub vector: Vec<f64>,
    #[serde(rename = "n")]
    pub member_count: usize,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub model_version: String,
}

impl ModuleAggregate {
    /// Aggregate after adding one more member, without rebuilding from scratch.
    pub fn with_member(&self, v: &CodeVector) -> Result<ModuleAggregate, CompositeError> {
        if v.dim() != self.vector.len() {
            return Err(CompositeError::DimensionMismatch {
                expected: self.vector.len(),
                found: v.dim(),
            });
        }
        let n = self.member_count as f64;
        let vector = self
            .vector
            .iter()
            .zip(&v.values)
            .map(|(m, x)| (m * n + x) / (n + 1.0))
            .collect();
        Ok(ModuleAggregate {
            module_id: self.module_id.clone(),
            vector,
            member_count: self.member_count + 1,
            model_version: self.model_version.clone(),
        })
    }
}

/// `[function vector ; module aggregate]`, length `2d`.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositeVector {
    pub values: Vec<f64>,
}

impl CompositeVector {
    pub fn function_part(&self) -> &[f64] {
        &self.values[..self.values.len() / 2]
    }

    pub fn module_part(&self) -> &[f64] {
        &self.values[self.values.len() / 2..]
    }
}

pub fn build_module_aggregate(
    module_id: &str,
    members: &[&CodeVector],
) -> Result<ModuleAggregate, CompositeError> {
    let first = members.first().ok_or(CompositeError::EmptyModule)?;
    let d = first.dim();
    let mut sum = vec![0.0; d];
    for m in members {
        if m.model_version != first.model_version {
            return Err(CompositeError::MixedModelVersions);
        }
        if m.dim() != d {
            return Err(CompositeError::DimensionMismatch {
                expected: d,
                found: m.dim(),
            });
        }
        for (s, x) in sum.iter_mut().zip(&m.values) {
            *s += x;
        }
    }
    let n = members.len() as f64;
    Ok(ModuleAggregate {
        module_id: module_id.to_string(),
        vector: sum.into_iter().map(|s| s / n).collect(),
        member_count: members.len(),
        model_version: first.model_version.clone(),
    })
}

/// Aggregates per module over `(module_id, vector)` pairs, ordered by module id.
pub fn aggregate_modules<'a, I>(vectors: I) -> Result<Vec<ModuleAggregate>, CompositeError>
where
    I: IntoIterator<Item = (&'a str, &'a CodeVector)>,
{
    let mut groups: BTreeMap<&str, Vec<&CodeVector>> = BTreeMap::new();
    for (module, v) in vectors {
        groups.entry(module).or_default().push(v);
    }
    groups
        .into_iter()
        .map(|(module, members)| build_module_aggregate(module, &members))
        .collect()
}

pub fn build_composite(
    function: &CodeVector,
    aggregate: &ModuleAggregate,
) -> Result<CompositeVector, CompositeError> {
    if function.dim() != aggregate.vector.len() {
        return Err(CompositeError::DimensionMismatch {
            expected: function.dim(),
            found: aggregate.vector.len(),
        });
    }
    if !aggregate.model_version.is_empty() && aggregate.model_version != function.model_version {
        return Err(CompositeError::MixedModelVersions);
    }
    let mut values = Vec::with_capacity(2 * function.dim());
    values.extend_from_slice(&function.values);
    values.extend_from_slice(&aggregate.vector);
    Ok(CompositeVector { values })
}
