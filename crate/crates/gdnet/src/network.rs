//! Whole-model wiring: a stack of Gaussian derivative layers (each followed
//! by optional batch normalization and an activation), global average
//! pooling and a dense softmax head, with batched forward/backward and a
//! plain SGD update that reports exactly how many scalars it touched.

use crate::batchnorm::{batchnorm_backward, batchnorm_infer, batchnorm_train, BatchNormState, BnCache, BnGrads};
use crate::conv::Padding;
use crate::error::{Error, Result};
use crate::head::{argmax, dense_softmax_xent, DenseHead};
use crate::layer::{
    apply_sgd, init_params, param_count, CombinationMode, LayerCache, LayerConfig, LayerGrads,
    LayerParams, ParamCount,
};
use crate::rng::Rng;
use crate::tensor::{global_avg_pool, global_avg_pool_backward, Activation, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub layers: Vec<LayerConfig>,
    pub classes: usize,
}

impl ModelSpec {
    /// Four-layer reference architecture: widths 16-16-32-32, stride 2 in
    /// the second and fourth layers, K=3 bases of 10 kernels on 7x7 support,
    /// ReLU, batch norm with only the shift trainable, 10 classes.
    pub fn default_testbed() -> ModelSpec {
        let widths = [16usize, 16, 32, 32];
        let strides = [1usize, 2, 1, 2];
        let mut f_in = 1;
        let mut layers = Vec::with_capacity(4);
        for (w, s) in widths.into_iter().zip(strides) {
            layers.push(LayerConfig {
                f_in,
                f_out: w,
                bases: 1,
                order: 3,
                support: 7,
                stride: s,
                padding: Padding::Same,
                mode: CombinationMode::Standard,
                basis_trainable: true,
                activation: Activation::Relu,
                batchnorm: true,
                frozen_gamma: true,
            });
            f_in = w;
        }
        ModelSpec {
            layers,
            classes: 10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::ShapeMismatch("model has no layers".into()));
        }
        if self.classes < 2 {
            return Err(Error::ShapeMismatch(format!(
                "need at least 2 classes, got {}",
                self.classes
            )));
        }
        for (i, cfg) in self.layers.iter().enumerate() {
            cfg.validate()?;
            if i > 0 && cfg.f_in != self.layers[i - 1].f_out {
                return Err(Error::ShapeMismatch(format!(
                    "layer {} takes {} features but layer {} emits {}",
                    i,
                    cfg.f_in,
                    i - 1,
                    self.layers[i - 1].f_out
                )));
            }
        }
        Ok(())
    }

    pub fn input_features(&self) -> usize {
        self.layers[0].f_in
    }

    pub fn output_features(&self) -> usize {
        self.layers.last().unwrap().f_out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub spec: ModelSpec,
    pub layers: Vec<LayerParams>,
    pub bn: Vec<Option<BatchNormState>>,
    pub head: DenseHead,
}

/// Gradients for one optimizer step, averaged over the batch.
#[derive(Clone, Debug)]
pub struct NetGrads {
    pub layers: Vec<LayerGrads>,
    pub bn: Vec<Option<BnGrads>>,
    pub d_head_weights: Vec<f64>,
    pub d_head_bias: Vec<f64>,
}

/// Scalars mutated by one [`Network::sgd_step`], by component.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StepCount {
    pub layers: Vec<usize>,
    pub batchnorm: usize,
    pub head: usize,
}

impl StepCount {
    pub fn total(&self) -> usize {
        self.layers.iter().sum::<usize>() + self.batchnorm + self.head
    }
}

/// Everything backward needs from one training-mode forward pass.
pub struct TrainCache {
    /// Input batch to each layer (index 0 = network input).
    layer_inputs: Vec<Vec<Tensor>>,
    layer_caches: Vec<LayerCache>,
    bn_caches: Vec<Option<BnCache>>,
    /// Activation outputs of each layer (what the activation backward needs).
    act_outputs: Vec<Vec<Tensor>>,
    /// Pooled feature vector per sample.
    pooled: Vec<Vec<f64>>,
    labels: Vec<usize>,
}

impl Network {
    /// Deterministic initialization: one sub-seed per layer drawn from the
    /// master stream, then the head.
    pub fn init(spec: &ModelSpec, seed: u64) -> Result<Network> {
        spec.validate()?;
        let mut rng = Rng::new(seed);
        let mut layers = Vec::with_capacity(spec.layers.len());
        let mut bn = Vec::with_capacity(spec.layers.len());
        for cfg in &spec.layers {
            let layer_seed = rng.next_u64();
            layers.push(init_params(cfg, layer_seed)?);
            bn.push(if cfg.batchnorm {
                Some(BatchNormState::new(cfg.f_out, cfg.frozen_gamma))
            } else {
                None
            });
        }
        let head = DenseHead::init(spec.classes, spec.output_features(), &mut rng);
        Ok(Network {
            spec: spec.clone(),
            layers,
            bn,
            head,
        })
    }

    /// Trainable scalars per component; must agree with what
    /// [`Network::sgd_step`] actually mutates.
    pub fn param_counts(&self) -> (Vec<ParamCount>, usize, usize) {
        let per_layer = self.spec.layers.iter().map(param_count).collect();
        let bn: usize = self
            .bn
            .iter()
            .map(|s| s.as_ref().map_or(0, |b| b.param_count()))
            .sum();
        (per_layer, bn, self.head.param_count())
    }

    pub fn param_total(&self) -> usize {
        let (layers, bn, head) = self.param_counts();
        layers.iter().map(ParamCount::total).sum::<usize>() + bn + head
    }

    /// Training-mode forward over one mini-batch; returns the mean
    /// cross-entropy loss and the cache for [`Network::backward`]. Updates
    /// batch-norm moving statistics as a side effect.
    pub fn forward_train(&mut self, inputs: &[Tensor], labels: &[usize]) -> Result<(f64, TrainCache)> {
        if inputs.is_empty() {
            return Err(Error::EmptyBatch);
        }
        if inputs.len() != labels.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} inputs but {} labels",
                inputs.len(),
                labels.len()
            )));
        }
        for &l in labels {
            if l >= self.spec.classes {
                return Err(Error::LabelOutOfRange {
                    label: l,
                    classes: self.spec.classes,
                });
            }
        }

        let mut layer_inputs = Vec::with_capacity(self.layers.len());
        let mut layer_caches = Vec::with_capacity(self.layers.len());
        let mut bn_caches = Vec::with_capacity(self.layers.len());
        let mut act_outputs = Vec::with_capacity(self.layers.len());
        let mut current: Vec<Tensor> = inputs.to_vec();
        for (idx, layer) in self.layers.iter().enumerate() {
            let (conv_out, cache) = layer.forward_batch_cached(&current)?;
            layer_inputs.push(std::mem::take(&mut current));
            layer_caches.push(cache);
            let bn_out = match self.bn[idx].as_mut() {
                Some(state) => {
                    let (out, c) = batchnorm_train(state, &conv_out)?;
                    bn_caches.push(Some(c));
                    out
                }
                None => {
                    bn_caches.push(None);
                    conv_out
                }
            };
            let act = layer.config.activation;
            let out: Vec<Tensor> = bn_out.iter().map(|t| act.forward(t)).collect();
            act_outputs.push(out.clone());
            current = out;
        }

        let pooled: Vec<Vec<f64>> = current.iter().map(global_avg_pool).collect();
        let mut loss = 0.0;
        for (p, &l) in pooled.iter().zip(labels) {
            loss += dense_softmax_xent(&self.head, p, l)?.0;
        }
        loss /= inputs.len() as f64;

        Ok((
            loss,
            TrainCache {
                layer_inputs,
                layer_caches,
                bn_caches,
                act_outputs,
                pooled,
                labels: labels.to_vec(),
            },
        ))
    }

    /// Backward for the mean loss of the cached batch.
    pub fn backward(&self, cache: &TrainCache) -> Result<NetGrads> {
        let batch = cache.pooled.len() as f64;
        let mut d_head_weights = vec![0.0; self.head.weights.len()];
        let mut d_head_bias = vec![0.0; self.head.bias.len()];
        let last = self.layers.len() - 1;
        let last_maps = &cache.act_outputs[last];
        let mut grad: Vec<Tensor> = Vec::with_capacity(cache.pooled.len());
        for (s, (p, &l)) in cache.pooled.iter().zip(&cache.labels).enumerate() {
            let (_, hg) = dense_softmax_xent(&self.head, p, l)?;
            for (a, g) in d_head_weights.iter_mut().zip(&hg.d_weights) {
                *a += g / batch;
            }
            for (a, g) in d_head_bias.iter_mut().zip(&hg.d_bias) {
                *a += g / batch;
            }
            let d_pooled: Vec<f64> = hg.d_features.iter().map(|g| g / batch).collect();
            grad.push(global_avg_pool_backward(
                last_maps[s].rows,
                last_maps[s].cols,
                &d_pooled,
            ));
        }

        let mut layer_grads: Vec<Option<LayerGrads>> = vec![None; self.layers.len()];
        let mut bn_grads: Vec<Option<BnGrads>> = vec![None; self.layers.len()];
        for idx in (0..self.layers.len()).rev() {
            let layer = &self.layers[idx];
            let act = layer.config.activation;
            let mut g_bn: Vec<Tensor> = Vec::with_capacity(grad.len());
            for (g, y) in grad.iter().zip(&cache.act_outputs[idx]) {
                g_bn.push(act.backward(y, g)?);
            }
            let g_conv = match (&self.bn[idx], &cache.bn_caches[idx]) {
                (Some(state), Some(c)) => {
                    let (gi, bg) = batchnorm_backward(state, c, &g_bn)?;
                    bn_grads[idx] = Some(bg);
                    gi
                }
                _ => g_bn,
            };
            let (g_in, lg) = layer.backward_batch(
                &cache.layer_inputs[idx],
                &cache.layer_caches[idx],
                &g_conv,
            )?;
            layer_grads[idx] = Some(lg);
            grad = g_in;
        }

        Ok(NetGrads {
            layers: layer_grads.into_iter().map(Option::unwrap).collect(),
            bn: bn_grads,
            d_head_weights,
            d_head_bias,
        })
    }

    /// p <- p - lr*g over every trainable scalar; gamma additionally stays
    /// untouched when frozen. Returns per-component update counts.
    pub fn sgd_step(&mut self, grads: &NetGrads, lr: f64) -> Result<StepCount> {
        let mut counts = StepCount {
            layers: Vec::with_capacity(self.layers.len()),
            batchnorm: 0,
            head: 0,
        };
        for (layer, lg) in self.layers.iter_mut().zip(&grads.layers) {
            counts.layers.push(apply_sgd(layer, lg, lr)?);
        }
        for (state, bg) in self.bn.iter_mut().zip(&grads.bn) {
            if let (Some(state), Some(bg)) = (state, bg) {
                for (b, g) in state.beta.iter_mut().zip(&bg.d_beta) {
                    *b -= lr * g;
                }
                counts.batchnorm += state.beta.len();
                if !state.frozen_gamma {
                    for (w, g) in state.gamma.iter_mut().zip(&bg.d_gamma) {
                        *w -= lr * g;
                    }
                    counts.batchnorm += state.gamma.len();
                }
            }
        }
        if grads.d_head_weights.len() != self.head.weights.len()
            || grads.d_head_bias.len() != self.head.bias.len()
        {
            return Err(Error::ShapeMismatch("head gradient length".into()));
        }
        for (w, g) in self.head.weights.iter_mut().zip(&grads.d_head_weights) {
            *w -= lr * g;
        }
        for (b, g) in self.head.bias.iter_mut().zip(&grads.d_head_bias) {
            *b -= lr * g;
        }
        counts.head = self.head.param_count();
        Ok(counts)
    }

    /// Inference-mode logits for a batch (moving-statistics batch norm).
    pub fn infer_logits(&self, inputs: &[Tensor]) -> Result<Vec<Vec<f64>>> {
        let mut current: Vec<Tensor> = inputs.to_vec();
        for (idx, layer) in self.layers.iter().enumerate() {
            let conv_out = layer.forward_batch(&current)?;
            let bn_out = match &self.bn[idx] {
                Some(state) => batchnorm_infer(state, &conv_out)?,
                None => conv_out,
            };
            let act = layer.config.activation;
            current = bn_out.iter().map(|t| act.forward(t)).collect();
        }
        current
            .iter()
            .map(|t| self.head.logits(&global_avg_pool(t)))
            .collect()
    }

    pub fn predict(&self, inputs: &[Tensor]) -> Result<Vec<usize>> {
        Ok(self
            .infer_logits(inputs)?
            .iter()
            .map(|l| argmax(l))
            .collect())
    }
}
