//! Bug-count estimate: mean of a small fully connected regressor and a linear
//! regressor over `[code vector ; optional scalars ; presence masks]`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::net::{Mlp, NetTrainConfig, OutputKind};
use super::ClassifierError;
use crate::tensor_file;

pub const BUG_MODEL_KIND: &str = "bug_count";

/// Number of optional scalar slots (static-analysis score, coverage, hotspot).
pub const SCALAR_SLOTS: usize = 3;

/// Inputs of one function; absent scalars are encoded as zero with a zero mask.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BugFeatures {
    pub vector: Vec<f64>,
    pub sa_score: Option<f64>,
    pub coverage: Option<f64>,
    pub hotspot: Option<f64>,
}

impl BugFeatures {
    pub fn to_input(&self) -> Vec<f64> {
        let scalars = [self.sa_score, self.coverage, self.hotspot];
        let mut x = self.vector.clone();
        x.extend(scalars.iter().map(|s| s.unwrap_or(0.0)));
        x.extend(scalars.iter().map(|s| f64::from(u8::from(s.is_some()))));
        x
    }

    pub fn input_dim(vector_dim: usize) -> usize {
        vector_dim + 2 * SCALAR_SLOTS
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BugCountConfig {
    pub network: NetTrainConfig,
    pub linear: NetTrainConfig,
}

impl Default for BugCountConfig {
    fn default() -> Self {
        Self {
            network: NetTrainConfig {
                hidden: vec![32],
                learning_rate: 0.01,
                epochs: 200,
                batch_size: 8,
                ..NetTrainConfig::default()
            },
            linear: NetTrainConfig {
                hidden: vec![],
                learning_rate: 0.01,
                epochs: 200,
                batch_size: 8,
                ..NetTrainConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BugCountModel {
    pub network: Mlp,
    /// Single affine layer.
    pub linear: Mlp,
}

impl BugCountModel {
    pub fn zeros(input_dim: usize, hidden: &[usize]) -> Self {
        Self {
            network: Mlp::zeros(input_dim, hidden, 1, OutputKind::Linear),
            linear: Mlp::zeros(input_dim, &[], 1, OutputKind::Linear),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.linear.input_dim()
    }

    /// Mean of the two regressors, clamped at zero.
    pub fn predict(&self, input: &[f64]) -> Result<f64, ClassifierError> {
        if input.len() != self.input_dim() {
            return Err(ClassifierError::DimensionMismatch { expected: self.input_dim(), found: input.len() });
        }
        let mean = 0.5 * (self.network.predict(input)[0] + self.linear.predict(input)[0]);
        Ok(mean.max(0.0))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut blocks = self.network.blocks("network");
        blocks.extend(self.linear.blocks("linear"));
        let refs: Vec<(&str, Vec<usize>, &[f64])> = blocks.iter().map(|(n, s, d)| (n.as_str(), s.clone(), *d)).collect();
        let meta = serde_json::json!({ "network_sizes": self.network.layer_sizes() });
        tensor_file::encode(BUG_MODEL_KIND, meta, &refs)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ClassifierError> {
        let file = tensor_file::decode(bytes, BUG_MODEL_KIND)?;
        let sizes: Vec<usize> = file
            .meta
            .get("network_sizes")
            .cloned()
            .and_then(|v| serde_json::from_value(v).ok())
            .ok_or_else(|| ClassifierError::BadMeta("network_sizes".into()))?;
        let network = Mlp::from_blocks(&file, "network", &sizes, OutputKind::Linear)?;
        let linear = Mlp::from_blocks(&file, "linear", &[sizes[0], 1], OutputKind::Linear)?;
        Ok(Self { network, linear })
    }

    pub fn round_to_f32(&mut self) {
        self.network.round_to_f32();
        self.linear.round_to_f32();
    }
}

/// Fits both regressors on `(input, bug count)` pairs.
pub fn train_bug_count(samples: &[(Vec<f64>, f64)], cfg: &BugCountConfig) -> Result<BugCountModel, ClassifierError> {
    let dim = samples.first().ok_or(ClassifierError::EmptyTrainSet)?.0.len();
    if let Some((x, _)) = samples.iter().find(|(x, _)| x.len() != dim) {
        return Err(ClassifierError::DimensionMismatch { expected: dim, found: x.len() });
    }
    let xs: Vec<Vec<f64>> = samples.iter().map(|(x, _)| x.clone()).collect();
    let ys: Vec<Vec<f64>> = samples.iter().map(|(_, y)| vec![*y]).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.network.seed);
    let mut network = Mlp::random(dim, &cfg.network.hidden, 1, OutputKind::Linear, &mut rng);
    let losses = network.fit(&xs, &ys, &cfg.network, &mut rng);
    if losses.iter().any(|l| !l.is_finite()) || !network.is_finite() {
        return Err(ClassifierError::NonFiniteLoss("bug-count network"));
    }
    let mut linear = Mlp::zeros(dim, &[], 1, OutputKind::Linear);
    let losses = linear.fit(&xs, &ys, &cfg.linear, &mut rng);
    if losses.iter().any(|l| !l.is_finite()) || !linear.is_finite() {
        return Err(ClassifierError::NonFiniteLoss("bug-count linear"));
    }
    Ok(BugCountModel { network, linear })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_model_predicts_zero() {
        let m = BugCountModel::zeros(5, &[4]);
        assert_eq!(m.predict(&[1.0, -2.0, 3.0, 0.5, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn linear_part_matches_hand_dot_product() {
        let mut m = BugCountModel::zeros(3, &[2]);
        m.linear.layers[0].weights = vec![0.5, -1.0, 2.0];
        m.linear.layers[0].bias = vec![0.25];
        // 0.5*2 - 1*1 + 2*1.5 + 0.25 = 3.25
        let expected = 3.25;
        // pin the network output to the same value through its final bias
        m.network.layers[1].bias = vec![expected];
        assert!((m.predict(&[2.0, 1.0, 1.5]).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn negative_means_clamp_to_zero() {
        let mut m = BugCountModel::zeros(2, &[]);
        m.linear.layers[0].bias = vec![-4.0];
        assert_eq!(m.predict(&[1.0, 1.0]).unwrap(), 0.0);
    }

    #[test]
    fn features_carry_masks() {
        let f = BugFeatures { vector: vec![0.1, 0.2], sa_score: Some(0.7), coverage: None, hotspot: Some(0.0) };
        assert_eq!(f.to_input(), vec![0.1, 0.2, 0.7, 0.0, 0.0, 1.0, 0.0, 1.0]);
        assert_eq!(BugFeatures::input_dim(2), 8);
    }

    #[test]
    fn training_fits_a_linear_target() {
        let samples: Vec<(Vec<f64>, f64)> = (0..30)
            .map(|i| {
                let a = (i % 5) as f64 / 5.0;
                let b = (i % 3) as f64 / 3.0;
                (vec![a, b], 2.0 * a + b)
            })
            .collect();
        let m = train_bug_count(&samples, &BugCountConfig::default()).unwrap();
        let err: f64 = samples.iter().map(|(x, y)| (m.predict(x).unwrap() - y).abs()).sum::<f64>() / 30.0;
        assert!(err < 0.2, "mean abs error {err}");
    }

    #[test]
    fn file_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut m = BugCountModel {
            network: Mlp::random(4, &[3], 1, OutputKind::Linear, &mut rng),
            linear: Mlp::random(4, &[], 1, OutputKind::Linear, &mut rng),
        };
        m.round_to_f32();
        assert_eq!(BugCountModel::from_bytes(&m.to_bytes()).unwrap(), m);
    }
}
