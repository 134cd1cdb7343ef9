//! Linear classification head and its softmax cross-entropy loss.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::softmax_rows;
use crate::error::{Result, StcaError};
use crate::linalg::Matrix;

/// Affine map from `d_v` features to `C + 1` class logits (index 0 is background).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadParams {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl HeadParams {
    pub fn zeros(d_v: usize, num_classes: usize) -> Self {
        Self {
            weights: Matrix::zeros(d_v, num_classes + 1),
            bias: vec![0.0; num_classes + 1],
        }
    }

    pub fn init(d_v: usize, num_classes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            weights: Matrix::gaussian(d_v, num_classes + 1, crate::model::INIT_STD, &mut rng),
            bias: vec![0.0; num_classes + 1],
        }
    }

    /// Foreground class count `C`.
    pub fn num_classes(&self) -> usize {
        self.bias.len().saturating_sub(1)
    }

    pub fn validate(&self, d_v: usize) -> Result<()> {
        if self.weights.rows() != d_v || self.weights.cols() != self.bias.len() || self.bias.is_empty() {
            return Err(StcaError::ShapeMismatch {
                context: "head parameters".into(),
                lhs: self.weights.shape(),
                rhs: (d_v, self.bias.len()),
            });
        }
        Ok(())
    }
}

/// Class logits `F W + b`, one row per proposal.
pub fn head_forward(features: &Matrix, head: &HeadParams) -> Result<Matrix> {
    head.validate(features.cols())?;
    let mut logits = features.matmul(&head.weights)?;
    for r in 0..logits.rows() {
        for (v, b) in logits.row_mut(r).iter_mut().zip(&head.bias) {
            *v += b;
        }
    }
    Ok(logits)
}

/// Class posteriors from logits.
pub fn posteriors(logits: &Matrix) -> Matrix {
    softmax_rows(logits).0
}

/// Mean softmax cross-entropy and its gradient with respect to the logits.
pub fn softmax_cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    if labels.len() != logits.rows() {
        return Err(StcaError::LabelMismatch(format!(
            "{} labels for {} proposals",
            labels.len(),
            logits.rows()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= logits.cols()) {
        return Err(StcaError::LabelMismatch(format!(
            "label {bad} out of range for {} classes",
            logits.cols()
        )));
    }
    let n = labels.len().max(1) as f64;
    let mut grad = posteriors(logits);
    let mut loss = 0.0;
    for (r, &l) in labels.iter().enumerate() {
        let row = logits.row(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - row[l];
        let g = grad.row_mut(r);
        g[l] -= 1.0;
        for v in g.iter_mut() {
            *v /= n;
        }
    }
    Ok((loss / n, grad))
}

/// Gradients of the head given `∂L/∂logits`.
pub struct HeadGradients {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub features: Matrix,
}

pub fn head_backward(features: &Matrix, head: &HeadParams, d_logits: &Matrix) -> Result<HeadGradients> {
    let weights = features.t_matmul(d_logits)?;
    let mut bias = vec![0.0; d_logits.cols()];
    for r in 0..d_logits.rows() {
        for (b, v) in bias.iter_mut().zip(d_logits.row(r)) {
            *b += v;
        }
    }
    let features = d_logits.matmul_t(&head.weights)?;
    Ok(HeadGradients {
        weights,
        bias,
        features,
    })
}
