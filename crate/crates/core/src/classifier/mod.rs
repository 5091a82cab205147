//! Multi-label CWE classification from code vectors.
//!
//! Two networks score each function: one sees the function vector alone
//! ("vanilla"), the other the composite `[function ; module]` vector. A
//! per-label logistic regression fitted on held-out predictions fuses the two.

mod bugcount;
mod fusion;
mod net;

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor_file::{self, TensorFileError};

pub use bugcount::{train_bug_count, BugCountConfig, BugCountModel, BugFeatures, BUG_MODEL_KIND};
pub use fusion::{fit_label, FusionModel, FusionWeights};
pub use net::{Dense, Mlp, MlpGradients, NetTrainConfig, OutputKind, ThreeLayerNet};

pub const DUAL_MODEL_KIND: &str = "dual_classifier";

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("training set is empty")]
    EmptyTrainSet,
    #[error("validated set is empty")]
    EmptyValidatedSet,
    #[error("non-finite loss while training the {0} network")]
    NonFiniteLoss(&'static str),
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("unknown label {0:?}")]
    UnknownLabel(String),
    #[error("label {0} is not allowed here")]
    LabelNotAllowed(CweLabel),
    #[error("fine-tuning dropped old-label accuracy from {before:.4} to {after:.4}")]
    ForgettingExceeded { before: f64, after: f64 },
    #[error(transparent)]
    File(#[from] TensorFileError),
    #[error("bad model metadata: {0}")]
    BadMeta(String),
}

/// Label set: four CWE classes, an "others" bucket and application-logic errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CweLabel {
    Cwe119,
    Cwe120,
    Cwe469,
    Cwe476,
    CweOther,
    /// Only present after feedback fine-tuning.
    AppLogic,
}

impl CweLabel {
    /// Labels of the initial training corpus.
    pub const BASE: [CweLabel; 5] = [
        CweLabel::Cwe119,
        CweLabel::Cwe120,
        CweLabel::Cwe469,
        CweLabel::Cwe476,
        CweLabel::CweOther,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            CweLabel::Cwe119 => "CWE119",
            CweLabel::Cwe120 => "CWE120",
            CweLabel::Cwe469 => "CWE469",
            CweLabel::Cwe476 => "CWE476",
            CweLabel::CweOther => "CWE_OTHER",
            CweLabel::AppLogic => "APP_LOGIC",
        }
    }
}

impl fmt::Display for CweLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CweLabel {
    type Err = ClassifierError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.to_ascii_uppercase().replace('-', "").as_str() {
            "CWE119" => CweLabel::Cwe119,
            "CWE120" => CweLabel::Cwe120,
            "CWE469" => CweLabel::Cwe469,
            "CWE476" => CweLabel::Cwe476,
            "CWE_OTHER" | "CWE_OTHERS" | "CWEOTHERS" | "CWEOTHER" => CweLabel::CweOther,
            "APP_LOGIC" | "APPLOGIC" => CweLabel::AppLogic,
            _ => return Err(ClassifierError::UnknownLabel(s.to_string())),
        })
    }
}

impl Serialize for CweLabel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for CweLabel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Training example for the dual classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub id: String,
    pub vanilla: Vec<f64>,
    pub composite: Vec<f64>,
    pub labels: Vec<CweLabel>,
}

impl LabeledSample {
    fn targets(&self, labels: &[CweLabel]) -> Vec<f64> {
        labels
            .iter()
            .map(|l| f64::from(u8::from(self.labels.contains(l))))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelPrediction {
    pub label: CweLabel,
    pub p_vanilla: f64,
    pub p_composite: f64,
    pub p_fused: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualPrediction {
    pub labels: Vec<LabelPrediction>,
}

impl DualPrediction {
    pub fn fused(&self, label: CweLabel) -> Option<f64> {
        self.labels.iter().find(|p| p.label == label).map(|p| p.p_fused)
    }

    pub fn max_fused(&self) -> f64 {
        self.labels.iter().map(|p| p.p_fused).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DualConfig {
    pub net: NetTrainConfig,
    /// Fraction of samples held out for fitting the fusion weights.
    pub holdout_fraction: f64,
    pub fusion_ridge: f64,
    pub fusion_iterations: usize,
}

impl Default for DualConfig {
    fn default() -> Self {
        Self {
            net: NetTrainConfig::default(),
            holdout_fraction: 0.1,
            fusion_ridge: 1.0,
            fusion_iterations: 50,
        }
    }
}

/// Vanilla network, composite network and their fusion.
#[derive(Debug, Clone, PartialEq)]
pub struct DualModels {
    pub labels: Vec<CweLabel>,
    pub vanilla: Mlp,
    pub composite: Mlp,
    pub fusion: FusionModel,
    /// Reporting threshold per label.
    pub thresholds: Vec<f64>,
}

/// Accuracy of the old labels on a reference set before and after fine-tuning.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FineTuneReport {
    pub old_label_accuracy_before: Option<f64>,
    pub old_label_accuracy_after: Option<f64>,
    pub epochs: usize,
}

/// Largest tolerated drop in old-label accuracy during fine-tuning.
pub const MAX_FORGETTING: f64 = 0.05;

fn split_holdout(n: usize, fraction: f64, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let held = if n >= 2 {
        ((n as f64 * fraction).round() as usize).clamp(1, n - 1)
    } else {
        0
    };
    let holdout = order[..held].to_vec();
    let train = order[held..].to_vec();
    (train, holdout)
}

fn check_dims(samples: &[LabeledSample]) -> Result<(usize, usize), ClassifierError> {
    let first = samples.first().ok_or(ClassifierError::EmptyTrainSet)?;
    let (dv, dc) = (first.vanilla.len(), first.composite.len());
    for s in samples {
        if s.vanilla.len() != dv {
            return Err(ClassifierError::DimensionMismatch { expected: dv, found: s.vanilla.len() });
        }
        if s.composite.len() != dc {
            return Err(ClassifierError::DimensionMismatch { expected: dc, found: s.composite.len() });
        }
    }
    Ok((dv, dc))
}

fn fit_nets(
    vanilla: &mut Mlp,
    composite: &mut Mlp,
    samples: &[LabeledSample],
    idx: &[usize],
    labels: &[CweLabel],
    cfg: &NetTrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(), ClassifierError> {
    let ys: Vec<Vec<f64>> = idx.iter().map(|&i| samples[i].targets(labels)).collect();
    let xv: Vec<Vec<f64>> = idx.iter().map(|&i| samples[i].vanilla.clone()).collect();
    let xc: Vec<Vec<f64>> = idx.iter().map(|&i| samples[i].composite.clone()).collect();
    let lv = vanilla.fit(&xv, &ys, cfg, rng);
    if lv.iter().any(|l| !l.is_finite()) || !vanilla.is_finite() {
        return Err(ClassifierError::NonFiniteLoss("vanilla"));
    }
    let lc = composite.fit(&xc, &ys, cfg, rng);
    if lc.iter().any(|l| !l.is_finite()) || !composite.is_finite() {
        return Err(ClassifierError::NonFiniteLoss("composite"));
    }
    Ok(())
}

/// Trains the vanilla and composite networks, then fits the fusion weights on
/// a held-out slice of the samples.
pub fn train_dual(samples: &[LabeledSample], cfg: &DualConfig) -> Result<DualModels, ClassifierError> {
    let (dv, dc) = check_dims(samples)?;
    for s in samples {
        if let Some(l) = s.labels.iter().find(|l| !CweLabel::BASE.contains(l)) {
            return Err(ClassifierError::LabelNotAllowed(*l));
        }
    }
    let labels = CweLabel::BASE.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.net.seed);
    let (train, holdout) = split_holdout(samples.len(), cfg.holdout_fraction, &mut rng);
    let mut vanilla = Mlp::random(dv, &cfg.net.hidden, labels.len(), OutputKind::Sigmoid, &mut rng);
    let mut composite = Mlp::random(dc, &cfg.net.hidden, labels.len(), OutputKind::Sigmoid, &mut rng);
    fit_nets(&mut vanilla, &mut composite, samples, &train, &labels, &cfg.net, &mut rng)?;

    let fusion_idx = if holdout.is_empty() { &train } else { &holdout };
    let mut models = DualModels {
        thresholds: vec![0.5; labels.len()],
        fusion: FusionModel { weights: vec![FusionWeights::PRIOR; labels.len()] },
        labels,
        vanilla,
        composite,
    };
    let priors = models.fusion.weights.clone();
    models.fit_fusion(samples, fusion_idx, &priors, cfg);
    Ok(models)
}

impl DualModels {
    fn fit_fusion(&mut self, samples: &[LabeledSample], idx: &[usize], priors: &[FusionWeights], cfg: &DualConfig) {
        let preds: Vec<(Vec<f64>, Vec<f64>)> = idx
            .iter()
            .map(|&i| (self.vanilla.predict(&samples[i].vanilla), self.composite.predict(&samples[i].composite)))
            .collect();
        for (l, label) in self.labels.clone().iter().enumerate() {
            let data: Vec<(f64, f64, bool)> = idx
                .iter()
                .zip(&preds)
                .map(|(&i, (pv, pc))| (pv[l], pc[l], samples[i].labels.contains(label)))
                .collect();
            self.fusion.weights[l] = fit_label(&data, priors[l], cfg.fusion_ridge, cfg.fusion_iterations);
        }
    }

    pub fn vanilla_dim(&self) -> usize {
        self.vanilla.input_dim()
    }

    pub fn composite_dim(&self) -> usize {
        self.composite.input_dim()
    }

    pub fn predict(&self, vanilla: &[f64], composite: &[f64]) -> Result<DualPrediction, ClassifierError> {
        if vanilla.len() != self.vanilla_dim() {
            return Err(ClassifierError::DimensionMismatch { expected: self.vanilla_dim(), found: vanilla.len() });
        }
        if composite.len() != self.composite_dim() {
            return Err(ClassifierError::DimensionMismatch {
                expected: self.composite_dim(),
                found: composite.len(),
            });
        }
        let pv = self.vanilla.predict(vanilla);
        let pc = self.composite.predict(composite);
        let labels = self
            .labels
            .iter()
            .enumerate()
            .map(|(l, &label)| LabelPrediction {
                label,
                p_vanilla: pv[l],
                p_composite: pc[l],
                p_fused: self.fusion.fuse(l, pv[l], pc[l]),
            })
            .collect();
        Ok(DualPrediction { labels })
    }

    /// Labels whose fused probability reaches their reporting threshold.
    pub fn flagged(&self, prediction: &DualPrediction) -> Vec<CweLabel> {
        prediction
            .labels
            .iter()
            .zip(&self.thresholds)
            .filter(|(p, &t)| p.p_fused >= t)
            .map(|(p, _)| p.label)
            .collect()
    }

    /// Per-label accuracy of the fused output at the reporting thresholds.
    pub fn label_accuracy(&self, samples: &[LabeledSample]) -> Result<Vec<(CweLabel, f64)>, ClassifierError> {
        self.accuracy_by(samples, |p| p.p_fused)
    }

    /// Per-label accuracy of the vanilla network alone at the reporting thresholds.
    pub fn vanilla_label_accuracy(&self, samples: &[LabeledSample]) -> Result<Vec<(CweLabel, f64)>, ClassifierError> {
        self.accuracy_by(samples, |p| p.p_vanilla)
    }

    fn accuracy_by(
        &self,
        samples: &[LabeledSample],
        pick: impl Fn(&LabelPrediction) -> f64,
    ) -> Result<Vec<(CweLabel, f64)>, ClassifierError> {
        if samples.is_empty() {
            return Err(ClassifierError::EmptyTrainSet);
        }
        let mut correct = vec![0usize; self.labels.len()];
        for s in samples {
            let pred = self.predict(&s.vanilla, &s.composite)?;
            for (l, p) in pred.labels.iter().enumerate() {
                let positive = pick(p) >= self.thresholds[l];
                if positive == s.labels.contains(&p.label) {
                    correct[l] += 1;
                }
            }
        }
        Ok(self
            .labels
            .iter()
            .zip(correct)
            .map(|(&l, c)| (l, c as f64 / samples.len() as f64))
            .collect())
    }

    fn mean_accuracy_over(&self, samples: &[LabeledSample], labels: &[CweLabel]) -> Result<f64, ClassifierError> {
        let acc = self.label_accuracy(samples)?;
        let chosen: Vec<f64> = acc.iter().filter(|(l, _)| labels.contains(l)).map(|(_, a)| *a).collect();
        Ok(chosen.iter().sum::<f64>() / chosen.len().max(1) as f64)
    }

    /// Adds the application-logic label (zero-initialized everywhere) if missing.
    pub fn widen_for_app_logic(&mut self) {
        if self.labels.contains(&CweLabel::AppLogic) {
            return;
        }
        self.labels.push(CweLabel::AppLogic);
        self.vanilla.widen_output();
        self.composite.widen_output();
        self.fusion.weights.push(FusionWeights::ZERO);
        self.thresholds.push(0.5);
    }

    /// Retrains every parameter on manually validated samples, which may carry
    /// the application-logic label.
    ///
    /// With a `reference` set, old-label accuracy on it may drop by less than
    /// [`MAX_FORGETTING`]; a larger drop is an error.
    pub fn fine_tune_with_feedback(
        &self,
        validated: &[LabeledSample],
        cfg: &DualConfig,
        reference: Option<&[LabeledSample]>,
    ) -> Result<(DualModels, FineTuneReport), ClassifierError> {
        if validated.is_empty() {
            return Err(ClassifierError::EmptyValidatedSet);
        }
        check_dims(validated)?;
        let old_labels: Vec<CweLabel> = self.labels.iter().copied().filter(|l| *l != CweLabel::AppLogic).collect();
        let before = reference.map(|r| self.mean_accuracy_over(r, &old_labels)).transpose()?;

        let was_new = !self.labels.contains(&CweLabel::AppLogic);
        let mut tuned = self.clone();
        tuned.widen_for_app_logic();
        if cfg.net.epochs > 0 {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.net.seed);
            let (train, holdout) = split_holdout(validated.len(), cfg.holdout_fraction, &mut rng);
            let labels = tuned.labels.clone();
            let (mut v, mut c) = (tuned.vanilla.clone(), tuned.composite.clone());
            fit_nets(&mut v, &mut c, validated, &train, &labels, &cfg.net, &mut rng)?;
            tuned.vanilla = v;
            tuned.composite = c;
            let mut priors = tuned.fusion.weights.clone();
            if was_new {
                *priors.last_mut().expect("app logic present") = FusionWeights::PRIOR;
            }
            let idx = if holdout.is_empty() { &train } else { &holdout };
            tuned.fit_fusion(validated, idx, &priors, cfg);
        }

        let after = reference.map(|r| tuned.mean_accuracy_over(r, &old_labels)).transpose()?;
        if let (Some(b), Some(a)) = (before, after) {
            if b - a >= MAX_FORGETTING {
                return Err(ClassifierError::ForgettingExceeded { before: b, after: a });
            }
        }
        Ok((
            tuned,
            FineTuneReport {
                old_label_accuracy_before: before,
                old_label_accuracy_after: after,
                epochs: cfg.net.epochs,
            },
        ))
    }

    /// Narrows every parameter to `f32`, as a save/load cycle would.
    pub fn round_to_f32(&mut self) {
        self.vanilla.round_to_f32();
        self.composite.round_to_f32();
        for w in &mut self.fusion.weights {
            *w = FusionWeights::new(w.vanilla as f32 as f64, w.composite as f32 as f64, w.bias as f32 as f64);
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let fusion: Vec<f64> = self.fusion.weights.iter().flat_map(|w| [w.vanilla, w.composite, w.bias]).collect();
        let mut blocks: Vec<(String, Vec<usize>, &[f64])> = self.vanilla.blocks("vanilla");
        blocks.extend(self.composite.blocks("composite"));
        blocks.push(("fusion".into(), vec![self.labels.len(), 3], &fusion));
        let meta = serde_json::json!({
            "labels": self.labels,
            "vanilla_sizes": self.vanilla.layer_sizes(),
            "composite_sizes": self.composite.layer_sizes(),
            "thresholds": self.thresholds,
        });
        let refs: Vec<(&str, Vec<usize>, &[f64])> = blocks.iter().map(|(n, s, d)| (n.as_str(), s.clone(), *d)).collect();
        tensor_file::encode(DUAL_MODEL_KIND, meta, &refs)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ClassifierError> {
        let file = tensor_file::decode(bytes, DUAL_MODEL_KIND)?;
        let meta = |k: &str| file.meta.get(k).cloned().ok_or_else(|| ClassifierError::BadMeta(k.to_string()));
        let labels: Vec<CweLabel> =
            serde_json::from_value(meta("labels")?).map_err(|e| ClassifierError::BadMeta(e.to_string()))?;
        let sizes = |k: &str| -> Result<Vec<usize>, ClassifierError> {
            serde_json::from_value(meta(k)?).map_err(|e| ClassifierError::BadMeta(e.to_string()))
        };
        let thresholds: Vec<f64> =
            serde_json::from_value(meta("thresholds")?).map_err(|e| ClassifierError::BadMeta(e.to_string()))?;
        let vanilla = Mlp::from_blocks(&file, "vanilla", &sizes("vanilla_sizes")?, OutputKind::Sigmoid)?;
        let composite = Mlp::from_blocks(&file, "composite", &sizes("composite_sizes")?, OutputKind::Sigmoid)?;
        let fusion = file.block_shaped("fusion", &[labels.len(), 3])?;
        if vanilla.output_dim() != labels.len() || composite.output_dim() != labels.len() || thresholds.len() != labels.len() {
            return Err(ClassifierError::BadMeta("label count disagrees with networks".into()));
        }
        Ok(Self {
            fusion: FusionModel {
                weights: fusion.chunks_exact(3).map(|w| FusionWeights::new(w[0], w[1], w[2])).collect(),
            },
            labels,
            vanilla,
            composite,
            thresholds,
        })
    }
}
