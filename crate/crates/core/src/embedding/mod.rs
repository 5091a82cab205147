//! Attention network mapping a bag of path contexts to a fixed-length code vector.
//!
//! Each context `(start, path, end)` is embedded as
//! `c = tanh(W · [tok[start]; path[path]; tok[end]])`, the bag is pooled with
//! softmax attention weights `softmax(a · c_i)`, and the pooled vector is trained
//! to predict the function's first name subtoken.

mod backprop;
mod train;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, dot, matvec};
use crate::path_extractor::{PathContext, Vocabulary, UNK};
use crate::tensor_file::{self, TensorFileError};

pub use backprop::{EmbeddingGradients, ExampleLoss};
pub use train::{
    name_accuracy, train_embeddings, train_from, Example, TrainConfig, TrainingOutcome,
};

pub const MODEL_KIND: &str = "embedding";

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("bag of contexts is empty")]
    EmptyBag,
    #[error("corpus has no trainable functions")]
    EmptyCorpus,
    #[error("non-finite loss at epoch {epoch}: {loss}")]
    NonFiniteLoss { epoch: usize, loss: f64 },
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("model version mismatch: model {model}, vector {vector}")]
    VersionMismatch { model: String, vector: String },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    File(#[from] TensorFileError),
    #[error("bad model metadata: {0}")]
    BadMeta(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingDims {
    pub token: usize,
    pub path: usize,
    pub code: usize,
}

impl EmbeddingDims {
    pub fn uniform(d: usize) -> Self {
        Self {
            token: d,
            path: d,
            code: d,
        }
    }

    /// Width of the concatenated `[start; path; end]` input.
    pub fn context_input(&self) -> usize {
        2 * self.token + self.path
    }
}

impl Default for EmbeddingDims {
    fn default() -> Self {
        Self::uniform(128)
    }
}

/// Fixed-length representation of a function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeVector {
    pub values: Vec<f64>,
    pub model_version: String,
}

impl CodeVector {
    pub fn new(values: Vec<f64>, model_version: impl Into<String>) -> Self {
        Self {
            values,
            model_version: model_version.into(),
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// One row of an exported vector file: `{"id", "vec", "model_version"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorRecord {
    pub id: String,
    #[serde(rename = "vec")]
    pub values: Vec<f64>,
    pub model_version: String,
}

impl VectorRecord {
    pub fn new(id: impl Into<String>, vector: &CodeVector) -> Self {
        Self {
            id: id.into(),
            values: vector.values.clone(),
            model_version: vector.model_version.clone(),
        }
    }

    pub fn code_vector(&self) -> CodeVector {
        CodeVector::new(self.values.clone(), self.model_version.clone())
    }
}

/// Attention distribution over the contexts of one bag.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights(pub Vec<f64>);

impl AttentionWeights {
    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }
}

/// All learned parameters, row-major, row 0 of each table being UNK.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel {
    pub dims: EmbeddingDims,
    pub token_table: Vec<f64>,
    pub path_table: Vec<f64>,
    /// `code x context_input`
    pub combine_weights: Vec<f64>,
    pub attention_vector: Vec<f64>,
    /// `names x code`
    pub name_output: Vec<f64>,
    /// Name-label vocabulary; row `i` of `name_output` scores label id `i`.
    pub names: Vocabulary,
    pub version: String,
    pub seed: u64,
}

/// Intermediate values of a forward pass, kept for backprop and explanation.
#[derive(Debug, Clone)]
pub struct Forward {
    pub contexts: Vec<PathContext>,
    pub inputs: Vec<Vec<f64>>,
    pub context_vectors: Vec<Vec<f64>>,
    pub weights: AttentionWeights,
    pub code: Vec<f64>,
}

impl EmbeddingModel {
    pub fn zeros(dims: EmbeddingDims, token_rows: usize, path_rows: usize, names: Vocabulary) -> Self {
        let name_rows = names.table_rows();
        Self {
            dims,
            token_table: vec![0.0; token_rows * dims.token],
            path_table: vec![0.0; path_rows * dims.path],
            combine_weights: vec![0.0; dims.code * dims.context_input()],
            attention_vector: vec![0.0; dims.code],
            name_output: vec![0.0; name_rows * dims.code],
            names,
            version: "v1".into(),
            seed: 0,
        }
    }

    /// Uniform initialization in `[-range, range]`.
    pub fn random(
        dims: EmbeddingDims,
        token_rows: usize,
        path_rows: usize,
        names: Vocabulary,
        range: f64,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let mut model = Self::zeros(dims, token_rows, path_rows, names);
        for block in model.blocks_mut() {
            for x in block.iter_mut() {
                *x = rng.random_range(-range..=range);
            }
        }
        model
    }

    pub fn token_rows(&self) -> usize {
        self.token_table.len() / self.dims.token
    }

    pub fn path_rows(&self) -> usize {
        self.path_table.len() / self.dims.path
    }

    pub fn name_rows(&self) -> usize {
        self.name_output.len() / self.dims.code
    }

    /// Parameter blocks in file order: token table, path table, combine
    /// weights, attention vector, name output.
    pub fn blocks_mut(&mut self) -> [&mut Vec<f64>; 5] {
        [
            &mut self.token_table,
            &mut self.path_table,
            &mut self.combine_weights,
            &mut self.attention_vector,
            &mut self.name_output,
        ]
    }

    pub fn is_finite(&self) -> bool {
        [
            &self.token_table,
            &self.path_table,
            &self.combine_weights,
            &self.attention_vector,
            &self.name_output,
        ]
        .iter()
        .all(|b| b.iter().all(|x| x.is_finite()))
    }

    fn token_row(&self, id: u32) -> &[f64] {
        let id = if (id as usize) < self.token_rows() { id } else { UNK } as usize;
        &self.token_table[id * self.dims.token..(id + 1) * self.dims.token]
    }

    fn path_row(&self, id: u32) -> &[f64] {
        let id = if (id as usize) < self.path_rows() { id } else { UNK } as usize;
        &self.path_table[id * self.dims.path..(id + 1) * self.dims.path]
    }

    /// Table row actually used for a token id (ids beyond the table fall back to UNK).
    pub(crate) fn token_index(&self, id: u32) -> u32 {
        if (id as usize) < self.token_rows() { id } else { UNK }
    }

    pub(crate) fn path_index(&self, id: u32) -> u32 {
        if (id as usize) < self.path_rows() { id } else { UNK }
    }

    pub(crate) fn context_input(&self, pc: &PathContext) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.dims.context_input());
        x.extend_from_slice(self.token_row(pc.start));
        x.extend_from_slice(self.path_row(pc.path));
        x.extend_from_slice(self.token_row(pc.end));
        x
    }

    /// `tanh(W · [tok[start]; path[path]; tok[end]])`.
    pub fn embed_context(&self, pc: &PathContext) -> Vec<f64> {
        let x = self.context_input(pc);
        let mut z = vec![0.0; self.dims.code];
        matvec(
            &self.combine_weights,
            self.dims.code,
            self.dims.context_input(),
            &x,
            &mut z,
        );
        z.iter_mut().for_each(|v| *v = v.tanh());
        z
    }

    /// Softmax attention over `a · c_i`; returns the weighted sum and the weights.
    pub fn attention_pool(
        &self,
        context_vectors: &[Vec<f64>],
    ) -> Result<(Vec<f64>, AttentionWeights), EmbedError> {
        if context_vectors.is_empty() {
            return Err(EmbedError::EmptyBag);
        }
        for c in context_vectors {
            if c.len() != self.dims.code {
                return Err(EmbedError::DimensionMismatch {
                    expected: self.dims.code,
                    found: c.len(),
                });
            }
        }
        let scores: Vec<f64> = context_vectors
            .iter()
            .map(|c| dot(&self.attention_vector, c))
            .collect();
        let weights = linalg::softmax(&scores);
        let mut code = vec![0.0; self.dims.code];
        for (w, c) in weights.iter().zip(context_vectors) {
            linalg::axpy(*w, c, &mut code);
        }
        Ok((code, AttentionWeights(weights)))
    }

    pub fn forward(&self, contexts: &[PathContext]) -> Result<Forward, EmbedError> {
        if contexts.is_empty() {
            return Err(EmbedError::EmptyBag);
        }
        let inputs: Vec<Vec<f64>> = contexts.iter().map(|pc| self.context_input(pc)).collect();
        let context_vectors: Vec<Vec<f64>> = inputs
            .iter()
            .map(|x| {
                let mut z = vec![0.0; self.dims.code];
                matvec(&self.combine_weights, self.dims.code, self.dims.context_input(), x, &mut z);
                z.iter_mut().for_each(|v| *v = v.tanh());
                z
            })
            .collect();
        let (code, weights) = self.attention_pool(&context_vectors)?;
        Ok(Forward {
            contexts: contexts.to_vec(),
            inputs,
            context_vectors,
            weights,
            code,
        })
    }

    /// Name logits `name_output · v`.
    pub fn name_logits(&self, v: &[f64]) -> Result<Vec<f64>, EmbedError> {
        if v.len() != self.dims.code {
            return Err(EmbedError::DimensionMismatch {
                expected: self.dims.code,
                found: v.len(),
            });
        }
        let mut logits = vec![0.0; self.name_rows()];
        matvec(&self.name_output, self.name_rows(), self.dims.code, v, &mut logits);
        Ok(logits)
    }

    /// Distribution over name-label ids (index 0 is UNK).
    pub fn predict_name(&self, v: &CodeVector) -> Result<Vec<f64>, EmbedError> {
        if v.model_version != self.version {
            return Err(EmbedError::VersionMismatch {
                model: self.version.clone(),
                vector: v.model_version.clone(),
            });
        }
        Ok(linalg::softmax(&self.name_logits(&v.values)?))
    }

    /// Most likely name label for a bag of contexts.
    pub fn predict_label(&self, contexts: &[PathContext]) -> Result<u32, EmbedError> {
        let fwd = self.forward(contexts)?;
        let logits = self.name_logits(&fwd.code)?;
        let best = logits
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &z)| if z > acc.1 { (i, z) } else { acc });
        Ok(best.0 as u32)
    }

    /// Pooled vector of a function's contexts, narrowed to `f32` precision.
    ///
    /// Contexts are pooled in sorted order, so the result depends only on the
    /// bag, not on the order it was listed in.
    pub fn export_code_vector(&self, contexts: &[PathContext]) -> Result<CodeVector, EmbedError> {
        let mut sorted = contexts.to_vec();
        sorted.sort_unstable();
        let fwd = self.forward(&sorted)?;
        let mut values = fwd.code;
        tensor_file::round_to_f32(&mut values);
        Ok(CodeVector::new(values, self.version.clone()))
    }

    /// Grows the tables to the given row counts; new rows are drawn uniformly.
    pub fn grow(
        &mut self,
        token_rows: usize,
        path_rows: usize,
        names: &Vocabulary,
        range: f64,
        rng: &mut ChaCha8Rng,
    ) {
        let mut extend = |table: &mut Vec<f64>, width: usize, rows: usize| {
            let have = table.len() / width;
            for _ in have..rows {
                for _ in 0..width {
                    table.push(rng.random_range(-range..=range));
                }
            }
        };
        extend(&mut self.token_table, self.dims.token, token_rows);
        extend(&mut self.path_table, self.dims.path, path_rows);
        extend(&mut self.name_output, self.dims.code, names.table_rows());
        self.names = names.clone();
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = serde_json::json!({
            "dims": self.dims,
            "token_rows": self.token_rows(),
            "path_rows": self.path_rows(),
            "name_rows": self.name_rows(),
            "version": self.version,
            "seed": self.seed,
            "names": serde_json::from_slice::<serde_json::Value>(&self.names.to_json()).expect("vocab json"),
        });
        let (t, p, n, d) = (self.token_rows(), self.path_rows(), self.name_rows(), self.dims);
        tensor_file::encode(
            MODEL_KIND,
            meta,
            &[
                ("token_table", vec![t, d.token], &self.token_table),
                ("path_table", vec![p, d.path], &self.path_table),
                ("combine_weights", vec![d.code, d.context_input()], &self.combine_weights),
                ("attention_vector", vec![d.code], &self.attention_vector),
                ("name_output", vec![n, d.code], &self.name_output),
            ],
        )
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, EmbedError> {
        let file = tensor_file::decode(bytes, MODEL_KIND)?;
        let meta = &file.meta;
        let bad = |what: &str| EmbedError::BadMeta(what.to_string());
        let dims: EmbeddingDims =
            serde_json::from_value(meta["dims"].clone()).map_err(|_| bad("dims"))?;
        let rows = |key: &str| meta[key].as_u64().map(|v| v as usize).ok_or_else(|| bad(key));
        let (t, p, n) = (rows("token_rows")?, rows("path_rows")?, rows("name_rows")?);
        let names_json = serde_json::to_vec(&meta["names"]).map_err(|_| bad("names"))?;
        let names = Vocabulary::from_json(&names_json).map_err(|_| bad("names"))?;
        if names.table_rows() != n {
            return Err(bad("name_rows disagrees with names"));
        }
        Ok(Self {
            dims,
            token_table: file.block_shaped("token_table", &[t, dims.token])?,
            path_table: file.block_shaped("path_table", &[p, dims.path])?,
            combine_weights: file
                .block_shaped("combine_weights", &[dims.code, dims.context_input()])?,
            attention_vector: file.block_shaped("attention_vector", &[dims.code])?,
            name_output: file.block_shaped("name_output", &[n, dims.code])?,
            names,
            version: meta["version"].as_str().ok_or_else(|| bad("version"))?.to_string(),
            seed: meta["seed"].as_u64().ok_or_else(|| bad("seed"))?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn names(labels: &[&str]) -> Vocabulary {
        let mut v = Vocabulary::new();
        for l in labels {
            v.intern(l);
        }
        v
    }

    fn toy(seed: u64) -> EmbeddingModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        EmbeddingModel::random(EmbeddingDims::uniform(4), 5, 4, names(&["get", "set"]), 0.5, &mut rng)
    }

    #[test]
    fn zero_model_embeds_to_zero() {
        let m = EmbeddingModel::zeros(EmbeddingDims::uniform(3), 4, 4, Vocabulary::new());
        assert_eq!(m.embed_context(&PathContext::new(1, 2, 3)), vec![0.0; 3]);
        assert_eq!(m.embed_context(&PathContext::UNKNOWN), vec![0.0; 3]);
    }

    #[test]
    fn hand_computed_context_embedding() {
        // d_tok = d_path = 1, d = 2; W is 2x3
        let dims = EmbeddingDims { token: 1, path: 1, code: 2 };
        let mut m = EmbeddingModel::zeros(dims, 3, 2, Vocabulary::new());
        m.token_table = vec![0.0, 0.5, -1.0];
        m.path_table = vec![0.0, 2.0];
        m.combine_weights = vec![1.0, 0.5, -1.0, 0.25, -0.5, 2.0];
        // x = [0.5, 2.0, -1.0]
        // row0: 0.5 + 1.0 + 1.0 = 2.5 ; row1: 0.125 - 1.0 - 2.0 = -2.875
        let c = m.embed_context(&PathContext::new(1, 1, 2));
        assert!((c[0] - 2.5f64.tanh()).abs() < 1e-15);
        assert!((c[1] - (-2.875f64).tanh()).abs() < 1e-15);
        // out-of-range ids read the UNK row
        assert_eq!(m.embed_context(&PathContext::new(9, 9, 9)), m.embed_context(&PathContext::UNKNOWN));
    }

    #[test]
    fn pooling_singleton_and_identical() {
        let m = toy(1);
        let c = m.embed_context(&PathContext::new(1, 1, 2));
        let (v, w) = m.attention_pool(std::slice::from_ref(&c)).unwrap();
        assert_eq!(w.0, vec![1.0]);
        assert_eq!(v, c);
        let (_, w2) = m.attention_pool(&[c.clone(), c]).unwrap();
        assert_eq!(w2.0, vec![0.5, 0.5]);
        assert!(matches!(m.attention_pool(&[]), Err(EmbedError::EmptyBag)));
    }

    #[test]
    fn hand_computed_attention_softmax() {
        let mut m = EmbeddingModel::zeros(EmbeddingDims { token: 1, path: 1, code: 2 }, 1, 1, Vocabulary::new());
        m.attention_vector = vec![1.0, -2.0];
        let ctx = vec![vec![0.5, 0.1], vec![-0.3, 0.4], vec![0.9, -0.6]];
        // scores: 0.3, -1.1, 2.1
        let e = [0.3f64.exp(), (-1.1f64).exp(), 2.1f64.exp()];
        let s: f64 = e.iter().sum();
        let (v, w) = m.attention_pool(&ctx).unwrap();
        for i in 0..3 {
            assert!((w.0[i] - e[i] / s).abs() < 1e-9);
        }
        let v0 = (0.5 * e[0] - 0.3 * e[1] + 0.9 * e[2]) / s;
        assert!((v[0] - v0).abs() < 1e-12);
    }

    #[test]
    fn name_prediction_distribution() {
        let m = EmbeddingModel::zeros(EmbeddingDims::uniform(2), 1, 1, names(&["a", "b", "c", "d"]));
        let p = m.predict_name(&CodeVector::new(vec![0.0, 0.0], "v1")).unwrap();
        assert_eq!(p, vec![0.2; 5]);
        assert!(matches!(
            m.predict_name(&CodeVector::new(vec![0.0; 3], "v1")),
            Err(EmbedError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn five_way_hand_softmax() {
        let mut m = EmbeddingModel::zeros(EmbeddingDims::uniform(2), 1, 1, names(&["a", "b", "c", "d"]));
        m.name_output = vec![0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0, -1.0, 2.0];
        let v = [0.5, -0.25];
        let logits = [0.0, 0.5, -0.25, 0.25, -1.0];
        let z: f64 = logits.iter().map(|l: &f64| l.exp()).sum();
        let p = m.predict_name(&CodeVector::new(v.to_vec(), "v1")).unwrap();
        for (pi, li) in p.iter().zip(logits) {
            assert!((pi - li.exp() / z).abs() < 1e-12);
        }
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn export_composes_embed_and_pool() {
        let m = toy(3);
        let bag = [PathContext::new(2, 1, 3), PathContext::new(1, 3, 4)];
        let c: Vec<Vec<f64>> = {
            let mut sorted = bag.to_vec();
            sorted.sort();
            sorted.iter().map(|pc| m.embed_context(pc)).collect()
        };
        let (pooled, _) = m.attention_pool(&c).unwrap();
        let exported = m.export_code_vector(&bag).unwrap();
        assert_eq!(exported.dim(), 4);
        for (a, b) in exported.values.iter().zip(&pooled) {
            assert_eq!(*a, *b as f32 as f64);
        }
        let reversed: Vec<_> = bag.iter().rev().copied().collect();
        assert_eq!(m.export_code_vector(&reversed).unwrap(), exported);
        assert!(matches!(m.export_code_vector(&[]), Err(EmbedError::EmptyBag)));
    }

    #[test]
    fn model_file_round_trip() {
        let mut m = toy(9);
        m.blocks_mut().into_iter().for_each(|b| tensor_file::round_to_f32(b));
        let back = EmbeddingModel::from_bytes(&m.to_bytes()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_bytes(), m.to_bytes());
    }

    #[test]
    fn growing_keeps_old_rows() {
        let m = toy(4);
        let mut grown = m.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        grown.grow(7, 4, &names(&["get", "set", "put"]), 0.05, &mut rng);
        assert_eq!(grown.token_rows(), 7);
        assert_eq!(&grown.token_table[..m.token_table.len()], &m.token_table[..]);
        assert_eq!(&grown.name_output[..m.name_output.len()], &m.name_output[..]);
        assert_eq!(grown.name_rows(), 4);
    }
}
