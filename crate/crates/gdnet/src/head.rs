//! Classification head: affine map on pooled features, softmax and negative
//! log-likelihood, with gradients for weights, bias and input features.

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct DenseHead {
    pub classes: usize,
    pub f_in: usize,
    /// Row-major [class][feature].
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseHead {
    pub fn zeros(classes: usize, f_in: usize) -> Self {
        DenseHead {
            classes,
            f_in,
            weights: vec![0.0; classes * f_in],
            bias: vec![0.0; classes],
        }
    }

    pub fn init(classes: usize, f_in: usize, rng: &mut Rng) -> Self {
        let mut head = DenseHead::zeros(classes, f_in);
        let std = (2.0 / f_in as f64).sqrt();
        for w in &mut head.weights {
            *w = rng.normal() * std;
        }
        head
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn logits(&self, features: &[f64]) -> Result<Vec<f64>> {
        if features.len() != self.f_in {
            return Err(Error::ShapeMismatch(format!(
                "head expects {} features, got {}",
                self.f_in,
                features.len()
            )));
        }
        Ok((0..self.classes)
            .map(|c| {
                let row = &self.weights[c * self.f_in..(c + 1) * self.f_in];
                row.iter().zip(features).map(|(w, x)| w * x).sum::<f64>() + self.bias[c]
            })
            .collect())
    }

    pub fn predict(&self, features: &[f64]) -> Result<usize> {
        let logits = self.logits(features)?;
        Ok(argmax(&logits))
    }
}

pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate() {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

#[derive(Clone, Debug)]
pub struct HeadGrads {
    pub d_weights: Vec<f64>,
    pub d_bias: Vec<f64>,
    pub d_features: Vec<f64>,
}

/// Cross-entropy of the softmax prediction against one label, with gradients
/// for every head parameter and the input features.
pub fn dense_softmax_xent(
    head: &DenseHead,
    features: &[f64],
    label: usize,
) -> Result<(f64, HeadGrads)> {
    if label >= head.classes {
        return Err(Error::LabelOutOfRange {
            label,
            classes: head.classes,
        });
    }
    let logits = head.logits(features)?;
    let probs = softmax(&logits);
    let loss = -probs[label].max(f64::MIN_POSITIVE).ln();

    let mut d_logits = probs;
    d_logits[label] -= 1.0;

    let mut grads = HeadGrads {
        d_weights: vec![0.0; head.weights.len()],
        d_bias: d_logits.clone(),
        d_features: vec![0.0; head.f_in],
    };
    for c in 0..head.classes {
        let g = d_logits[c];
        let row = &head.weights[c * head.f_in..(c + 1) * head.f_in];
        let drow = &mut grads.d_weights[c * head.f_in..(c + 1) * head.f_in];
        for i in 0..head.f_in {
            drow[i] = g * features[i];
            grads.d_features[i] += g * row[i];
        }
    }
    Ok((loss, grads))
}
