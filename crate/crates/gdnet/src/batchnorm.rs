//! Per-feature batch normalization over a batch of rank-3 tensors, with a
//! frozen-gamma variant where the statistics and gamma are pinned to the
//! identity and beta acts as a pure per-feature bias.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormState {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub moving_mean: Vec<f64>,
    pub moving_var: Vec<f64>,
    pub epsilon: f64,
    pub momentum: f64,
    /// When set: gamma stays 1, batch mean/variance are replaced by 0/1 and
    /// never estimated, so the op reduces to y = x + beta in both modes.
    pub frozen_gamma: bool,
}

pub const BN_DEFAULT_MOMENTUM: f64 = 0.9;
pub const BN_DEFAULT_EPSILON: f64 = 1e-5;

impl BatchNormState {
    pub fn new(features: usize, frozen_gamma: bool) -> Self {
        BatchNormState {
            gamma: vec![1.0; features],
            beta: vec![0.0; features],
            moving_mean: vec![0.0; features],
            moving_var: vec![1.0; features],
            epsilon: BN_DEFAULT_EPSILON,
            momentum: BN_DEFAULT_MOMENTUM,
            frozen_gamma,
        }
    }

    pub fn features(&self) -> usize {
        self.beta.len()
    }

    /// Trainable scalars: beta always, gamma only when not frozen.
    pub fn param_count(&self) -> usize {
        if self.frozen_gamma {
            self.beta.len()
        } else {
            2 * self.beta.len()
        }
    }
}

/// Everything the backward pass needs from a training-mode forward call.
#[derive(Clone, Debug)]
pub struct BnCache {
    /// Normalized inputs, one tensor per batch item; empty in frozen mode.
    xhat: Vec<Tensor>,
    inv_std: Vec<f64>,
    count: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BnGrads {
    pub d_gamma: Vec<f64>,
    pub d_beta: Vec<f64>,
}

fn check_batch(batch: &[Tensor], features: usize) -> Result<()> {
    let first = batch.first().ok_or(Error::EmptyBatch)?;
    if first.features != features {
        return Err(Error::ShapeMismatch(format!(
            "batch norm over {} features got input with {}",
            features, first.features
        )));
    }
    for t in batch {
        if !t.same_shape(first) {
            return Err(Error::ShapeMismatch(format!(
                "batch norm batch mixes shapes {:?} and {:?}",
                first.shape(),
                t.shape()
            )));
        }
    }
    Ok(())
}

/// Training-mode forward: normalizes with batch statistics, updates the
/// moving statistics in place and returns the cache for [`batchnorm_backward`].
pub fn batchnorm_train(
    state: &mut BatchNormState,
    batch: &[Tensor],
) -> Result<(Vec<Tensor>, BnCache)> {
    let features = state.features();
    check_batch(batch, features)?;
    if state.frozen_gamma {
        let out = batch
            .iter()
            .map(|t| {
                let mut o = t.clone();
                for chunk in o.data.chunks_mut(features) {
                    for (v, b) in chunk.iter_mut().zip(&state.beta) {
                        *v += b;
                    }
                }
                o
            })
            .collect();
        return Ok((
            out,
            BnCache {
                xhat: Vec::new(),
                inv_std: Vec::new(),
                count: 0,
            },
        ));
    }

    let per_item = batch[0].rows * batch[0].cols;
    let count = per_item * batch.len();
    let mut mean = vec![0.0; features];
    for t in batch {
        for chunk in t.data.chunks(features) {
            for (m, v) in mean.iter_mut().zip(chunk) {
                *m += v;
            }
        }
    }
    for m in &mut mean {
        *m /= count as f64;
    }
    let mut var = vec![0.0; features];
    for t in batch {
        for chunk in t.data.chunks(features) {
            for f in 0..features {
                let d = chunk[f] - mean[f];
                var[f] += d * d;
            }
        }
    }
    for v in &mut var {
        *v /= count as f64;
    }

    let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + state.epsilon).sqrt()).collect();
    let mut xhat = Vec::with_capacity(batch.len());
    let mut out = Vec::with_capacity(batch.len());
    for t in batch {
        let mut xh = t.clone();
        for chunk in xh.data.chunks_mut(features) {
            for f in 0..features {
                chunk[f] = (chunk[f] - mean[f]) * inv_std[f];
            }
        }
        let mut o = xh.clone();
        for chunk in o.data.chunks_mut(features) {
            for f in 0..features {
                chunk[f] = state.gamma[f] * chunk[f] + state.beta[f];
            }
        }
        xhat.push(xh);
        out.push(o);
    }

    for f in 0..features {
        state.moving_mean[f] = state.momentum * state.moving_mean[f] + (1.0 - state.momentum) * mean[f];
        state.moving_var[f] = state.momentum * state.moving_var[f] + (1.0 - state.momentum) * var[f];
    }

    Ok((out, BnCache { xhat, inv_std, count }))
}

/// Inference-mode forward: normalizes with the moving statistics; independent
/// of batch composition.
pub fn batchnorm_infer(state: &BatchNormState, batch: &[Tensor]) -> Result<Vec<Tensor>> {
    let features = state.features();
    check_batch(batch, features)?;
    if state.frozen_gamma {
        return Ok(batch
            .iter()
            .map(|t| {
                let mut o = t.clone();
                for chunk in o.data.chunks_mut(features) {
                    for (v, b) in chunk.iter_mut().zip(&state.beta) {
                        *v += b;
                    }
                }
                o
            })
            .collect());
    }
    let inv_std: Vec<f64> = state
        .moving_var
        .iter()
        .map(|&v| 1.0 / (v + state.epsilon).sqrt())
        .collect();
    Ok(batch
        .iter()
        .map(|t| {
            let mut o = t.clone();
            for chunk in o.data.chunks_mut(features) {
                for f in 0..features {
                    chunk[f] = state.gamma[f] * (chunk[f] - state.moving_mean[f]) * inv_std[f]
                        + state.beta[f];
                }
            }
            o
        })
        .collect())
}

/// Backward through a training-mode forward call, differentiating through the
/// batch statistics.
pub fn batchnorm_backward(
    state: &BatchNormState,
    cache: &BnCache,
    grad_out: &[Tensor],
) -> Result<(Vec<Tensor>, BnGrads)> {
    let features = state.features();
    check_batch(grad_out, features)?;
    let mut d_beta = vec![0.0; features];
    for g in grad_out {
        for chunk in g.data.chunks(features) {
            for (d, v) in d_beta.iter_mut().zip(chunk) {
                *d += v;
            }
        }
    }

    if state.frozen_gamma {
        return Ok((
            grad_out.to_vec(),
            BnGrads {
                d_gamma: vec![0.0; features],
                d_beta,
            },
        ));
    }

    if cache.xhat.len() != grad_out.len() {
        return Err(Error::ShapeMismatch(format!(
            "batch norm cache holds {} items, gradient batch has {}",
            cache.xhat.len(),
            grad_out.len()
        )));
    }
    let mut d_gamma = vec![0.0; features];
    for (g, xh) in grad_out.iter().zip(&cache.xhat) {
        for (gc, xc) in g.data.chunks(features).zip(xh.data.chunks(features)) {
            for f in 0..features {
                d_gamma[f] += gc[f] * xc[f];
            }
        }
    }

    // dx = gamma * inv_std / m * (m*g - sum(g) - xhat * sum(g*xhat))
    let m = cache.count as f64;
    let grad_in = grad_out
        .iter()
        .zip(&cache.xhat)
        .map(|(g, xh)| {
            let mut o = g.clone();
            for (oc, xc) in o.data.chunks_mut(features).zip(xh.data.chunks(features)) {
                for f in 0..features {
                    oc[f] = state.gamma[f] * cache.inv_std[f] / m
                        * (m * oc[f] - d_beta[f] - xc[f] * d_gamma[f]);
                }
            }
            o
        })
        .collect();

    Ok((grad_in, BnGrads { d_gamma, d_beta }))
}
