use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::linalg::{self, sigmoid};

/// What the last layer emits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputKind {
    /// Independent per-output sigmoids trained with binary cross-entropy.
    Sigmoid,
    /// Raw linear outputs trained with squared error.
    Linear,
}

/// Fully connected layer, `weights` is `outputs x inputs` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    fn glorot(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let mut layer = Self::zeros(inputs, outputs);
        for w in &mut layer.weights {
            *w = rng.random_range(-limit..=limit);
        }
        layer
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = self.bias.clone();
        for (o, row) in out.iter_mut().zip(self.weights.chunks_exact(self.inputs)) {
            *o += linalg::dot(row, x);
        }
        out
    }
}

/// Multi-layer perceptron with rectifier hidden layers.
///
/// With two hidden layers this is the three-weight-layer classifier used for
/// both the vanilla and the composite inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub output: OutputKind,
}

pub type ThreeLayerNet = Mlp;

/// Per-layer gradients with the same shapes as the network.
#[derive(Debug, Clone)]
pub struct MlpGradients {
    pub layers: Vec<Dense>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetTrainConfig {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for NetTrainConfig {
    fn default() -> Self {
        Self {
            hidden: vec![128, 64],
            learning_rate: 0.05,
            momentum: 0.9,
            epochs: 200,
            batch_size: 16,
            seed: 0,
        }
    }
}

impl Mlp {
    pub fn random(input: usize, hidden: &[usize], outputs: usize, output: OutputKind, rng: &mut ChaCha8Rng) -> Self {
        let mut sizes = vec![input];
        sizes.extend_from_slice(hidden);
        sizes.push(outputs);
        let layers = sizes.windows(2).map(|w| Dense::glorot(w[0], w[1], rng)).collect();
        Self { layers, output }
    }

    pub fn zeros(input: usize, hidden: &[usize], outputs: usize, output: OutputKind) -> Self {
        let mut sizes = vec![input];
        sizes.extend_from_slice(hidden);
        sizes.push(outputs);
        let layers = sizes.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect();
        Self { layers, output }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("at least one layer").outputs
    }

    pub fn hidden_sizes(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1].iter().map(|l| l.outputs).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|x| x.is_finite()))
    }

    /// Activations of every layer; the last entry holds the pre-activation outputs.
    fn activations(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = vec![x.to_vec()];
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = layer.apply(acts.last().expect("non-empty"));
            if i + 1 < self.layers.len() {
                z.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            acts.push(z);
        }
        acts
    }

    /// Output-layer pre-activations.
    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        self.activations(x).pop().expect("non-empty")
    }

    /// Probabilities for sigmoid networks, raw values for linear ones.
    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        let z = self.logits(x);
        match self.output {
            OutputKind::Sigmoid => z.into_iter().map(sigmoid).collect(),
            OutputKind::Linear => z,
        }
    }

    /// Loss of one sample, averaged over outputs.
    ///
    /// Sigmoid: binary cross-entropy from logits. Linear: half squared error.
    pub fn loss(&self, x: &[f64], target: &[f64]) -> f64 {
        let z = self.logits(x);
        per_output_loss(self.output, &z, target)
    }

    /// Adds `scale * dLoss/dθ` to `grad` and returns the sample loss.
    pub fn accumulate_gradient(&self, x: &[f64], target: &[f64], scale: f64, grad: &mut MlpGradients) -> f64 {
        let acts = self.activations(x);
        let z = acts.last().expect("non-empty");
        let loss = per_output_loss(self.output, z, target);
        let n_out = z.len() as f64;
        // both losses have d/dz = (prediction - target) / n_out
        let mut delta: Vec<f64> = z
            .iter()
            .zip(target)
            .map(|(&zi, &t)| {
                let pred = match self.output {
                    OutputKind::Sigmoid => sigmoid(zi),
                    OutputKind::Linear => zi,
                };
                scale * (pred - t) / n_out
            })
            .collect();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let input = &acts[i];
            let g = &mut grad.layers[i];
            linalg::outer_acc(&mut g.weights, layer.inputs, &delta, input);
            linalg::axpy(1.0, &delta, &mut g.bias);
            if i == 0 {
                break;
            }
            let mut back = vec![0.0; layer.inputs];
            linalg::matvec_t_acc(&layer.weights, layer.outputs, layer.inputs, &delta, &mut back);
            // rectifier derivative on the hidden activation feeding this layer
            for (b, a) in back.iter_mut().zip(input) {
                if *a <= 0.0 {
                    *b = 0.0;
                }
            }
            delta = back;
        }
        loss
    }

    pub fn zero_gradients(&self) -> MlpGradients {
        MlpGradients {
            layers: self.layers.iter().map(|l| Dense::zeros(l.inputs, l.outputs)).collect(),
        }
    }

    /// Mean loss over a data set.
    pub fn mean_loss(&self, xs: &[Vec<f64>], ys: &[Vec<f64>]) -> f64 {
        xs.iter().zip(ys).map(|(x, y)| self.loss(x, y)).sum::<f64>() / xs.len().max(1) as f64
    }

    /// Minibatch gradient descent with classical momentum; returns the mean
    /// loss after each epoch.
    pub fn fit(&mut self, xs: &[Vec<f64>], ys: &[Vec<f64>], cfg: &NetTrainConfig, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut velocity = self.zero_gradients();
        let mut order: Vec<usize> = (0..xs.len()).collect();
        let mut losses = Vec::with_capacity(cfg.epochs);
        for _ in 0..cfg.epochs {
            order.shuffle(rng);
            for batch in order.chunks(cfg.batch_size.max(1)) {
                let mut grad = self.zero_gradients();
                let scale = 1.0 / batch.len() as f64;
                for &i in batch {
                    self.accumulate_gradient(&xs[i], &ys[i], scale, &mut grad);
                }
                for ((layer, vel), g) in self.layers.iter_mut().zip(&mut velocity.layers).zip(&grad.layers) {
                    for ((p, v), g) in layer.weights.iter_mut().zip(&mut vel.weights).zip(&g.weights) {
                        *v = cfg.momentum * *v + g;
                        *p -= cfg.learning_rate * *v;
                    }
                    for ((p, v), g) in layer.bias.iter_mut().zip(&mut vel.bias).zip(&g.bias) {
                        *v = cfg.momentum * *v + g;
                        *p -= cfg.learning_rate * *v;
                    }
                }
            }
            losses.push(self.mean_loss(xs, ys));
        }
        losses
    }

    /// Appends one zero-initialized output unit.
    pub fn widen_output(&mut self) {
        let last = self.layers.last_mut().expect("at least one layer");
        last.weights.extend(std::iter::repeat_n(0.0, last.inputs));
        last.bias.push(0.0);
        last.outputs += 1;
    }

    /// `(name, shape, values)` triples for the model file.
    pub(crate) fn blocks(&self, prefix: &str) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("{prefix}.w{i}"), vec![l.outputs, l.inputs], l.weights.as_slice()));
            out.push((format!("{prefix}.b{i}"), vec![l.outputs], l.bias.as_slice()));
        }
        out
    }

    pub(crate) fn from_blocks(
        file: &crate::tensor_file::TensorFile,
        prefix: &str,
        sizes: &[usize],
        output: OutputKind,
    ) -> Result<Self, crate::tensor_file::TensorFileError> {
        let mut layers = Vec::new();
        for (i, w) in sizes.windows(2).enumerate() {
            layers.push(Dense {
                inputs: w[0],
                outputs: w[1],
                weights: file.block_shaped(&format!("{prefix}.w{i}"), &[w[1], w[0]])?,
                bias: file.block_shaped(&format!("{prefix}.b{i}"), &[w[1]])?,
            });
        }
        Ok(Self { layers, output })
    }

    pub(crate) fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.input_dim()];
        sizes.extend(self.layers.iter().map(|l| l.outputs));
        sizes
    }

    pub(crate) fn round_to_f32(&mut self) {
        for l in &mut self.layers {
            crate::tensor_file::round_to_f32(&mut l.weights);
            crate::tensor_file::round_to_f32(&mut l.bias);
        }
    }
}

fn per_output_loss(kind: OutputKind, z: &[f64], target: &[f64]) -> f64 {
    let total: f64 = match kind {
        // softplus(z) - t z
        OutputKind::Sigmoid => z
            .iter()
            .zip(target)
            .map(|(&zi, &t)| zi.max(0.0) + (-zi.abs()).exp().ln_1p() - t * zi)
            .sum(),
        OutputKind::Linear => z.iter().zip(target).map(|(&zi, &t)| 0.5 * (zi - t) * (zi - t)).sum(),
    };
    total / z.len() as f64
}
