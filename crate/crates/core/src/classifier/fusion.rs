use serde::{Deserialize, Serialize};

use crate::linalg::sigmoid;

/// Per-label weights of `sigmoid(w_vanilla * p_v + w_composite * p_c + bias)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionWeights {
    pub vanilla: f64,
    pub composite: f64,
    pub bias: f64,
}

impl FusionWeights {
    pub const ZERO: FusionWeights = FusionWeights {
        vanilla: 0.0,
        composite: 0.0,
        bias: 0.0,
    };

    /// Prior used when fitting: an even blend centered on 0.5.
    pub const PRIOR: FusionWeights = FusionWeights {
        vanilla: 3.0,
        composite: 3.0,
        bias: -3.0,
    };

    pub fn new(vanilla: f64, composite: f64, bias: f64) -> Self {
        Self {
            vanilla,
            composite,
            bias,
        }
    }

    pub fn fuse(&self, p_vanilla: f64, p_composite: f64) -> f64 {
        sigmoid(self.vanilla * p_vanilla + self.composite * p_composite + self.bias)
    }

    fn as_array(&self) -> [f64; 3] {
        [self.vanilla, self.composite, self.bias]
    }
}

/// Logistic fusion of the two networks, one weight triple per label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionModel {
    pub weights: Vec<FusionWeights>,
}

impl FusionModel {
    pub fn fuse(&self, label: usize, p_vanilla: f64, p_composite: f64) -> f64 {
        self.weights[label].fuse(p_vanilla, p_composite)
    }
}

/// Fits one label's weights by Newton's method on the penalized log-likelihood
///
/// `sum BCE(fuse(p_v, p_c), y) + ridge/2 * |θ - prior|²`.
///
/// The penalty keeps tiny or single-class held-out sets from driving the
/// weights to infinity.
pub fn fit_label(samples: &[(f64, f64, bool)], prior: FusionWeights, ridge: f64, iterations: usize) -> FusionWeights {
    let prior = prior.as_array();
    let mut theta = prior;
    for _ in 0..iterations {
        let mut grad = [0.0; 3];
        let mut hess = [[0.0; 3]; 3];
        for &(pv, pc, y) in samples {
            let x = [pv, pc, 1.0];
            let p = sigmoid(theta[0] * x[0] + theta[1] * x[1] + theta[2]);
            let r = p - f64::from(u8::from(y));
            let w = p * (1.0 - p);
            for i in 0..3 {
                grad[i] += r * x[i];
                for j in 0..3 {
                    hess[i][j] += w * x[i] * x[j];
                }
            }
        }
        for i in 0..3 {
            grad[i] += ridge * (theta[i] - prior[i]);
            hess[i][i] += ridge;
        }
        let Some(step) = solve3(hess, grad) else {
            break;
        };
        for i in 0..3 {
            theta[i] -= step[i];
        }
        if step.iter().map(|s| s.abs()).fold(0.0, f64::max) < 1e-12 {
            break;
        }
    }
    FusionWeights::new(theta[0], theta[1], theta[2])
}

/// Solves a 3x3 system by Gaussian elimination with partial pivoting.
fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let pivot = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..3 {
            let f = a[row][col] / a[col][col];
            for k in col..3 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let s: f64 = (row + 1..3).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}
