//! Exact nearest-neighbour search, threshold similarity, fix lookup and
//! k-means clustering over code vectors.

use std::cmp::Ordering;
use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::CodeVector;
use crate::linalg;

/// Default similarity cut-off on cosine distance.
pub const DEFAULT_THRESHOLD: f64 = 0.4;

const KMEANS_MAX_ITERATIONS: usize = 100;

#[derive(Debug, Error, PartialEq)]
pub enum SimilarityError {
    #[error("cosine distance is undefined for an all-zero vector")]
    ZeroVector,
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("index is empty")]
    EmptyIndex,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("duplicate function id {0}")]
    DuplicateId(String),
    #[error("unknown function id {0}")]
    UnknownId(String),
    #[error("vector version {found} differs from index version {expected}")]
    VersionMismatch { expected: String, found: String },
    #[error("cannot form {k} clusters from {n} entries")]
    TooFewEntries { k: usize, n: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    Cosine,
    Euclidean,
}

impl Metric {
    pub fn distance(&self, a: &[f64], b: &[f64]) -> Result<f64, SimilarityError> {
        if a.len() != b.len() {
            return Err(SimilarityError::DimensionMismatch { expected: a.len(), found: b.len() });
        }
        match self {
            Metric::Cosine => cosine_distance(a, b),
            Metric::Euclidean => Ok(linalg::euclidean(a, b)),
        }
    }
}

/// `1 - a.b / (|a||b|)` clamped to `[0, 2]`.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> Result<f64, SimilarityError> {
    if a.len() != b.len() {
        return Err(SimilarityError::DimensionMismatch { expected: a.len(), found: b.len() });
    }
    let na = linalg::dot(a, a);
    let nb = linalg::dot(b, b);
    if na == 0.0 || nb == 0.0 {
        return Err(SimilarityError::ZeroVector);
    }
    // one square root of the product keeps distance(a, a) exactly zero
    let cos = linalg::dot(a, b) / (na * nb).sqrt();
    Ok((1.0 - cos).clamp(0.0, 2.0))
}

pub fn distance(a: &CodeVector, b: &CodeVector) -> Result<f64, SimilarityError> {
    cosine_distance(&a.values, &b.values)
}

/// Strict `distance < threshold`.
pub fn is_similar(a: &CodeVector, b: &CodeVector, threshold: f64) -> Result<bool, SimilarityError> {
    Ok(distance(a, b)? < threshold)
}

/// Metadata carried by an index entry; one line of `index_meta.jsonl` with its id.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntryMeta {
    pub id: String,
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub module_id: String,
    #[serde(default)]
    pub bug_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fix_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub meta: EntryMeta,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub id: String,
    pub name: String,
    pub distance: f64,
    pub bug_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fix_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixSuggestion {
    pub neighbor_id: String,
    pub fix_id: String,
}

/// In-memory index searched by linear scan.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct VectorIndex {
    pub metric: Metric,
    model_version: Option<String>,
    entries: Vec<IndexEntry>,
    by_id: HashMap<String, usize>,
}

impl VectorIndex {
    pub fn new(metric: Metric) -> Self {
        Self { metric, ..Self::default() }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.entries.first().map(|e| e.vector.len())
    }

    pub fn model_version(&self) -> Option<&str> {
        self.model_version.as_deref()
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn get(&self, id: &str) -> Option<&IndexEntry> {
        self.by_id.get(id).map(|&i| &self.entries[i])
    }

    pub fn insert(&mut self, vector: &CodeVector, meta: EntryMeta) -> Result<(), SimilarityError> {
        if self.by_id.contains_key(&meta.id) {
            return Err(SimilarityError::DuplicateId(meta.id));
        }
        if let Some(d) = self.dim() {
            if vector.values.len() != d {
                return Err(SimilarityError::DimensionMismatch { expected: d, found: vector.values.len() });
            }
        }
        match &self.model_version {
            Some(v) if *v != vector.model_version => {
                return Err(SimilarityError::VersionMismatch {
                    expected: v.clone(),
                    found: vector.model_version.clone(),
                })
            }
            Some(_) => {}
            None => self.model_version = Some(vector.model_version.clone()),
        }
        self.by_id.insert(meta.id.clone(), self.entries.len());
        self.entries.push(IndexEntry { meta, vector: vector.values.clone() });
        Ok(())
    }

    /// Replaces the vector of an existing entry, e.g. with a feedback overlay.
    pub fn set_vector(&mut self, id: &str, values: Vec<f64>) -> Result<(), SimilarityError> {
        let &i = self.by_id.get(id).ok_or_else(|| SimilarityError::UnknownId(id.to_string()))?;
        let d = self.entries[i].vector.len();
        if values.len() != d {
            return Err(SimilarityError::DimensionMismatch { expected: d, found: values.len() });
        }
        self.entries[i].vector = values;
        Ok(())
    }

    /// The `k` nearest entries, ascending by distance then id.
    pub fn knn(&self, query: &[f64], k: usize) -> Result<Vec<Neighbor>, SimilarityError> {
        if k == 0 {
            return Err(SimilarityError::InvalidK);
        }
        if self.is_empty() {
            return Err(SimilarityError::EmptyIndex);
        }
        let mut scored = Vec::with_capacity(self.entries.len());
        for e in &self.entries {
            scored.push((self.metric.distance(query, &e.vector)?, e));
        }
        scored.sort_by(|a, b| neighbor_order(a.0, &a.1.meta.id, b.0, &b.1.meta.id));
        Ok(scored
            .into_iter()
            .take(k)
            .map(|(distance, e)| Neighbor {
                id: e.meta.id.clone(),
                name: e.meta.name.clone(),
                distance,
                bug_ids: e.meta.bug_ids.clone(),
                fix_id: e.meta.fix_id.clone(),
            })
            .collect())
    }

    /// Nearest entry closer than `threshold` that links a fix.
    pub fn suggest_fix(&self, query: &[f64], threshold: f64) -> Result<Option<FixSuggestion>, SimilarityError> {
        if self.is_empty() {
            return Ok(None);
        }
        let all = self.knn(query, self.len())?;
        Ok(all
            .into_iter()
            .take_while(|n| n.distance < threshold)
            .find_map(|n| n.fix_id.filter(|f| !f.is_empty()).map(|fix_id| FixSuggestion { neighbor_id: n.id, fix_id })))
    }

    /// k-means over unit-normalized vectors with k-means++ seeding; returns
    /// the cluster of each entry in insertion order.
    pub fn cluster(&self, k: usize, seed: u64) -> Result<Vec<usize>, SimilarityError> {
        let n = self.entries.len();
        if k == 0 {
            return Err(SimilarityError::InvalidK);
        }
        if k > n {
            return Err(SimilarityError::TooFewEntries { k, n });
        }
        let points: Vec<Vec<f64>> = self
            .entries
            .iter()
            .map(|e| {
                let norm = linalg::norm(&e.vector);
                if norm == 0.0 {
                    Err(SimilarityError::ZeroVector)
                } else {
                    Ok(e.vector.iter().map(|x| x / norm).collect())
                }
            })
            .collect::<Result<_, _>>()?;
        Ok(kmeans(&points, k, seed))
    }
}

fn neighbor_order(da: f64, ia: &str, db: f64, ib: &str) -> Ordering {
    da.total_cmp(&db).then_with(|| ia.cmp(ib))
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, center) in centers.iter().enumerate() {
        let d = squared_distance(point, center);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = vec![rng.random_range(0..points.len())];
    while chosen.len() < k {
        let centers: Vec<Vec<f64>> = chosen.iter().map(|&i| points[i].clone()).collect();
        let weights: Vec<f64> = points.iter().map(|p| nearest(p, &centers).1).collect();
        let total: f64 = weights.iter().sum();
        let next = if total > 0.0 {
            let mut r = rng.random_range(0.0..total);
            let mut pick = weights.len() - 1;
            for (i, w) in weights.iter().enumerate() {
                if *w > 0.0 && r < *w {
                    pick = i;
                    break;
                }
                r -= w;
            }
            pick
        } else {
            // every point coincides with a center
            (0..points.len()).find(|i| !chosen.contains(i)).expect("k <= n")
        };
        chosen.push(next);
    }
    let mut centers: Vec<Vec<f64>> = chosen.iter().map(|&i| points[i].clone()).collect();
    let mut assignment: Vec<usize> = points.iter().map(|p| nearest(p, &centers).0).collect();
    for _ in 0..KMEANS_MAX_ITERATIONS {
        let dim = points[0].len();
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &c) in points.iter().zip(&assignment) {
            linalg::axpy(1.0, p, &mut sums[c]);
            counts[c] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &centers).0).collect();
        if next == assignment {
            break;
        }
        assignment = next;
    }
    assignment
}

/// Share of pairs classified correctly at `threshold`: similar pairs below it
/// plus dissimilar pairs at or above it.
pub fn pair_accuracy(pairs: &[(f64, bool)], threshold: f64) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    let correct = pairs.iter().filter(|(d, similar)| (*d < threshold) == *similar).count();
    correct as f64 / pairs.len() as f64
}

/// `(threshold, accuracy)` rows for each threshold.
pub fn sweep_thresholds(pairs: &[(f64, bool)], thresholds: &[f64]) -> Vec<(f64, f64)> {
    thresholds.iter().map(|&t| (t, pair_accuracy(pairs, t))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop, prop_assert, prop_assert_eq, proptest, Strategy};

    fn cv(v: &[f64]) -> CodeVector {
        CodeVector::new(v.to_vec(), "v1")
    }

    fn meta(id: &str, fix: Option<&str>) -> EntryMeta {
        EntryMeta { id: id.into(), name: id.into(), fix_id: fix.map(str::to_string), ..Default::default() }
    }

    /// Unit vector at angle `theta` whose cosine distance to [1, 0] is `1 - cos(theta)`.
    fn at_distance(d: f64) -> CodeVector {
        let c = 1.0 - d;
        cv(&[c, (1.0 - c * c).sqrt()])
    }

    #[test]
    fn hand_cosines() {
        assert_eq!(distance(&cv(&[0.3, -2.0]), &cv(&[0.3, -2.0])).unwrap(), 0.0);
        assert_eq!(distance(&cv(&[1.0, 0.0]), &cv(&[0.0, 3.0])).unwrap(), 1.0);
        let d = distance(&cv(&[1.0, 0.0]), &cv(&[1.0, 1.0])).unwrap();
        assert!((d - (1.0 - 1.0 / 2f64.sqrt())).abs() < 1e-12);
        assert_eq!(distance(&cv(&[0.0, 0.0]), &cv(&[1.0, 1.0])), Err(SimilarityError::ZeroVector));
    }

    #[test]
    fn threshold_is_strict() {
        let q = cv(&[1.0, 0.0]);
        assert!(is_similar(&q, &at_distance(0.39), 0.4).unwrap());
        assert!(!is_similar(&q, &cv(&[1.0, 0.0]), 0.0).unwrap());
        assert!(is_similar(&q, &q, 1e-12).unwrap());
        // 0.4 exactly: cos = 0.6 on a 3-4-5 triangle
        assert_eq!(distance(&q, &cv(&[3.0, 4.0])).unwrap(), 0.4);
        assert!(!is_similar(&q, &cv(&[3.0, 4.0]), 0.4).unwrap());
    }

    #[test]
    fn knn_boundaries() {
        let mut idx = VectorIndex::new(Metric::Cosine);
        assert_eq!(idx.knn(&[1.0, 0.0], 1), Err(SimilarityError::EmptyIndex));
        idx.insert(&cv(&[1.0, 0.0]), meta("a", None)).unwrap();
        idx.insert(&cv(&[0.0, 1.0]), meta("b", None)).unwrap();
        assert_eq!(idx.knn(&[1.0, 0.0], 0), Err(SimilarityError::InvalidK));
        let all = idx.knn(&[1.0, 0.0], 10).unwrap();
        assert_eq!(all.len(), 2);
        assert_eq!((all[0].id.as_str(), all[0].distance), ("a", 0.0));
        assert!(matches!(idx.insert(&cv(&[1.0, 1.0]), meta("a", None)), Err(SimilarityError::DuplicateId(_))));
        assert!(matches!(
            idx.insert(&CodeVector::new(vec![1.0, 1.0], "v2"), meta("c", None)),
            Err(SimilarityError::VersionMismatch { .. })
        ));
    }

    #[test]
    fn ties_break_by_id() {
        let mut idx = VectorIndex::new(Metric::Cosine);
        idx.insert(&cv(&[2.0, 0.0]), meta("z", None)).unwrap();
        idx.insert(&cv(&[1.0, 0.0]), meta("m", None)).unwrap();
        let got: Vec<String> = idx.knn(&[1.0, 0.0], 2).unwrap().into_iter().map(|n| n.id).collect();
        assert_eq!(got, ["m", "z"]);
    }

    #[test]
    fn fix_suggestion_rules() {
        let q = [1.0, 0.0];
        let mut idx = VectorIndex::new(Metric::Cosine);
        assert_eq!(idx.suggest_fix(&q, 0.4).unwrap(), None);
        idx.insert(&at_distance(0.3), meta("near", Some("FIX-1"))).unwrap();
        idx.insert(&at_distance(0.35), meta("second", Some("FIX-2"))).unwrap();
        idx.insert(&at_distance(0.9), meta("far", Some("FIX-3"))).unwrap();
        let s = idx.suggest_fix(&q, 0.4).unwrap().unwrap();
        assert_eq!((s.neighbor_id.as_str(), s.fix_id.as_str()), ("near", "FIX-1"));

        let mut idx = VectorIndex::new(Metric::Cosine);
        idx.insert(&at_distance(0.3), meta("near", None)).unwrap();
        idx.insert(&at_distance(0.35), meta("second", Some("FIX-2"))).unwrap();
        idx.insert(&at_distance(0.9), meta("far", Some("FIX-3"))).unwrap();
        assert_eq!(idx.suggest_fix(&q, 0.4).unwrap().unwrap().neighbor_id, "second");
        assert_eq!(idx.suggest_fix(&q, 0.32).unwrap(), None);
    }

    #[test]
    fn clustering_separates_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut idx = VectorIndex::new(Metric::Cosine);
        let mut truth = Vec::new();
        for i in 0..40 {
            let blob = i % 2;
            let centre = if blob == 0 { [5.0, 0.0, 0.0] } else { [0.0, 0.0, 5.0] };
            let v: Vec<f64> = centre.iter().map(|c| c + rng.random_range(-0.5..0.5)).collect();
            idx.insert(&cv(&v), meta(&format!("f{i:02}"), None)).unwrap();
            truth.push(blob);
        }
        let a = idx.cluster(2, 9).unwrap();
        assert_eq!(a, idx.cluster(2, 9).unwrap());
        let flip = a[0] != truth[0];
        for (got, want) in a.iter().zip(&truth) {
            assert_eq!(*got != *want, flip);
        }
    }

    #[test]
    fn clustering_singletons_and_errors() {
        let mut idx = VectorIndex::new(Metric::Cosine);
        for (i, v) in [[1.0, 0.0], [0.0, 1.0], [-1.0, 0.2], [0.3, -1.0]].iter().enumerate() {
            idx.insert(&cv(v), meta(&i.to_string(), None)).unwrap();
        }
        let mut a = idx.cluster(4, 1).unwrap();
        a.sort();
        assert_eq!(a, vec![0, 1, 2, 3]);
        assert_eq!(idx.cluster(5, 1), Err(SimilarityError::TooFewEntries { k: 5, n: 4 }));
    }

    #[test]
    fn sweep_matches_hand_count() {
        let pairs = [(0.1, true), (0.35, true), (0.5, true), (0.2, false), (0.6, false), (0.4, false)];
        // t = 0.4: correct are 0.1, 0.35 (similar below) and 0.6, 0.4 (dissimilar at or above)
        assert!((pair_accuracy(&pairs, 0.4) - 4.0 / 6.0).abs() < 1e-12);
        let rows = sweep_thresholds(&pairs, &[0.0, 1.0]);
        assert_eq!(rows, vec![(0.0, 0.5), (1.0, 0.5)]);
    }

    fn vec_strategy() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-1.0f64..1.0, 6).prop_filter("nonzero", |v| v.iter().any(|x| x.abs() > 1e-3))
    }

    proptest! {
        #[test]
        fn cosine_symmetry_and_scale(a in vec_strategy(), b in vec_strategy()) {
            let dab = cosine_distance(&a, &b).unwrap();
            prop_assert!((dab - cosine_distance(&b, &a).unwrap()).abs() < 1e-12);
            prop_assert_eq!(cosine_distance(&a, &a).unwrap(), 0.0);
            let a2: Vec<f64> = a.iter().map(|x| 2.0 * x).collect();
            prop_assert!((dab - cosine_distance(&a2, &b).unwrap()).abs() < 1e-9);
            prop_assert!((0.0..=2.0).contains(&dab));
        }

        #[test]
        fn similarity_monotone_in_threshold(a in vec_strategy(), b in vec_strategy(), t in 0.0f64..2.0, dt in 0.0f64..1.0) {
            let (a, b) = (cv(&a), cv(&b));
            if is_similar(&a, &b, t).unwrap() {
                prop_assert!(is_similar(&a, &b, t + dt).unwrap());
            }
        }
    }
}
