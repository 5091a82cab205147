use std::collections::BTreeMap;

use super::{EmbedError, EmbeddingModel, Forward};
use crate::linalg::{self, dot};
use crate::path_extractor::PathContext;

/// Gradients of the name-prediction loss. Table gradients are sparse by row.
#[derive(Debug, Clone, Default)]
pub struct EmbeddingGradients {
    pub token_rows: BTreeMap<u32, Vec<f64>>,
    pub path_rows: BTreeMap<u32, Vec<f64>>,
    pub combine_weights: Vec<f64>,
    pub attention_vector: Vec<f64>,
    pub name_output: Vec<f64>,
}

impl EmbeddingGradients {
    pub fn zeros_like(model: &EmbeddingModel) -> Self {
        Self {
            token_rows: BTreeMap::new(),
            path_rows: BTreeMap::new(),
            combine_weights: vec![0.0; model.combine_weights.len()],
            attention_vector: vec![0.0; model.attention_vector.len()],
            name_output: vec![0.0; model.name_output.len()],
        }
    }

    /// Dense copy of the token-table gradient.
    pub fn token_table(&self, model: &EmbeddingModel) -> Vec<f64> {
        densify(&self.token_rows, model.token_rows(), model.dims.token)
    }

    pub fn path_table(&self, model: &EmbeddingModel) -> Vec<f64> {
        densify(&self.path_rows, model.path_rows(), model.dims.path)
    }

    pub fn is_finite(&self) -> bool {
        self.token_rows.values().chain(self.path_rows.values()).flatten().all(|x| x.is_finite())
            && self.combine_weights.iter().all(|x| x.is_finite())
            && self.attention_vector.iter().all(|x| x.is_finite())
            && self.name_output.iter().all(|x| x.is_finite())
    }
}

fn densify(rows: &BTreeMap<u32, Vec<f64>>, n: usize, width: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * width];
    for (&r, g) in rows {
        out[r as usize * width..(r as usize + 1) * width].copy_from_slice(g);
    }
    out
}

/// Loss of one example and its forward pass.
#[derive(Debug, Clone)]
pub struct ExampleLoss {
    pub loss: f64,
    pub predicted: u32,
}

impl EmbeddingModel {
    /// Cross-entropy of predicting `target` from `contexts`, without gradients.
    pub fn example_loss(&self, contexts: &[PathContext], target: u32) -> Result<ExampleLoss, EmbedError> {
        let fwd = self.forward(contexts)?;
        let logits = self.name_logits(&fwd.code)?;
        Ok(loss_of(&logits, target))
    }

    /// Adds `scale * dLoss/dθ` for one example to `grad` and returns its loss.
    pub fn accumulate_gradient(
        &self,
        contexts: &[PathContext],
        target: u32,
        scale: f64,
        grad: &mut EmbeddingGradients,
    ) -> Result<ExampleLoss, EmbedError> {
        let fwd = self.forward(contexts)?;
        let logits = self.name_logits(&fwd.code)?;
        let result = loss_of(&logits, target);
        self.backward(&fwd, &logits, target, scale, grad);
        Ok(result)
    }

    fn backward(
        &self,
        fwd: &Forward,
        logits: &[f64],
        target: u32,
        scale: f64,
        grad: &mut EmbeddingGradients,
    ) {
        let d = self.dims.code;
        let m = self.dims.context_input();
        let n_names = self.name_rows();

        // d loss / d logits = softmax - onehot
        let mut g_logits = linalg::softmax(logits);
        g_logits[target as usize] -= 1.0;
        g_logits.iter_mut().for_each(|g| *g *= scale);

        linalg::outer_acc(&mut grad.name_output, d, &g_logits, &fwd.code);
        let mut g_code = vec![0.0; d];
        linalg::matvec_t_acc(&self.name_output, n_names, d, &g_logits, &mut g_code);

        // code = sum_i alpha_i c_i
        let alpha = &fwd.weights.0;
        let g_alpha: Vec<f64> = fwd.context_vectors.iter().map(|c| dot(c, &g_code)).collect();
        let mean = dot(alpha, &g_alpha);

        for (i, c) in fwd.context_vectors.iter().enumerate() {
            let g_score = alpha[i] * (g_alpha[i] - mean);
            linalg::axpy(g_score, c, &mut grad.attention_vector);

            // dc_i = alpha_i g_code + g_score a ; dz = dc (1 - c^2)
            let g_z: Vec<f64> = (0..d)
                .map(|k| (alpha[i] * g_code[k] + g_score * self.attention_vector[k]) * (1.0 - c[k] * c[k]))
                .collect();
            linalg::outer_acc(&mut grad.combine_weights, m, &g_z, &fwd.inputs[i]);

            let mut g_x = vec![0.0; m];
            linalg::matvec_t_acc(&self.combine_weights, d, m, &g_z, &mut g_x);
            let pc = fwd.contexts[i];
            let (dt, dp) = (self.dims.token, self.dims.path);
            add_row(&mut grad.token_rows, self.token_index(pc.start), &g_x[..dt]);
            add_row(&mut grad.path_rows, self.path_index(pc.path), &g_x[dt..dt + dp]);
            add_row(&mut grad.token_rows, self.token_index(pc.end), &g_x[dt + dp..]);
        }
    }
}

fn add_row(rows: &mut BTreeMap<u32, Vec<f64>>, row: u32, g: &[f64]) {
    let entry = rows.entry(row).or_insert_with(|| vec![0.0; g.len()]);
    linalg::axpy(1.0, g, entry);
}

fn loss_of(logits: &[f64], target: u32) -> ExampleLoss {
    let loss = linalg::log_sum_exp(logits) - logits[target as usize];
    let predicted = logits
        .iter()
        .enumerate()
        .fold((0usize, f64::NEG_INFINITY), |acc, (i, &z)| if z > acc.1 { (i, z) } else { acc })
        .0 as u32;
    ExampleLoss { loss, predicted }
}
