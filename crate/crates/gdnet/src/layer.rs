//! Convolutional layer whose filters are linear combinations of sampled
//! Gaussian derivative kernels.
//!
//! Two combination schemes are supported. In standard mode every
//! (output, input) feature pair owns a full coefficient vector over the
//! basis kernels. In separated mode the coefficients factor into an
//! input-side vector beta (applied while convolving the basis kernels) and
//! an output-side vector lambda (applied to the resulting intermediate
//! maps). A layer may hold several independent bases; each basis serves an
//! equal contiguous block of output maps.

use crate::conv::{conv2d_backward_batch, conv2d_batch, KernelStack, Padding};
use crate::error::{Error, Result};
use crate::kernel::{
    basis_size, build_basis, kernel_jacobian, BasisSpec, KernelGrid, KernelParams,
};
use crate::rng::Rng;
use crate::tensor::{Activation, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CombinationMode {
    Standard,
    Separated,
}

impl CombinationMode {
    pub fn parse(name: &str) -> Option<CombinationMode> {
        match name {
            "standard" => Some(CombinationMode::Standard),
            "separated" => Some(CombinationMode::Separated),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            CombinationMode::Standard => "standard",
            CombinationMode::Separated => "separated",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerConfig {
    pub f_in: usize,
    pub f_out: usize,
    /// Number of independent kernel bases (B). Output maps are split into B
    /// equal contiguous blocks, block b driven by basis b.
    pub bases: usize,
    /// Maximum total derivative order (K); the basis holds (K+1)(K+2)/2
    /// kernels.
    pub order: usize,
    pub support: usize,
    pub stride: usize,
    pub padding: Padding,
    pub mode: CombinationMode,
    pub basis_trainable: bool,
    pub activation: Activation,
    pub batchnorm: bool,
    pub frozen_gamma: bool,
}

impl LayerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.f_in == 0 || self.f_out == 0 || self.bases == 0 {
            return Err(Error::ShapeMismatch(
                "layer feature and basis counts must be positive".into(),
            ));
        }
        if self.f_out % self.bases != 0 {
            return Err(Error::BasisCount {
                bases: self.bases,
                f_out: self.f_out,
            });
        }
        if self.support == 0 || self.support % 2 == 0 {
            return Err(Error::BadSupport(self.support));
        }
        if self.stride == 0 {
            return Err(Error::BadStride);
        }
        Ok(())
    }

    /// Kernels per basis.
    pub fn basis_len(&self) -> usize {
        basis_size(self.order)
    }

    pub fn maps_per_basis(&self) -> usize {
        self.f_out / self.bases
    }

    pub fn basis_of_output(&self, j: usize) -> usize {
        j / self.maps_per_basis()
    }
}

/// Combination coefficients, flattened in documented index order.
#[derive(Clone, Debug, PartialEq)]
pub enum LayerWeights {
    /// omega[(j * f_in + i) * N + n] for global output map j, input feature
    /// i, kernel n of the basis owning j.
    Standard { omega: Vec<f64> },
    /// lambda[j * N + n]; beta[(b * N + n) * f_in + i].
    Separated { lambda: Vec<f64>, beta: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub config: LayerConfig,
    pub bases: Vec<BasisSpec>,
    pub weights: LayerWeights,
}

/// Counts of trainable scalars implied by a layer configuration.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamCount {
    pub combination_weights: usize,
    pub basis_params: usize,
}

impl ParamCount {
    pub fn total(&self) -> usize {
        self.combination_weights + self.basis_params
    }
}

/// Trainable-scalar counts for a layer: standard mode pays f_in * N * f_out
/// combination weights, separated mode B * (f_in + f_out/B) * N; a trainable
/// basis adds 5 scalars (mu1, mu2, log sigma1, log sigma2, theta) per kernel.
pub fn param_count(config: &LayerConfig) -> ParamCount {
    let n = config.basis_len();
    let combination_weights = match config.mode {
        CombinationMode::Standard => config.f_in * n * config.f_out,
        CombinationMode::Separated => {
            config.bases * (config.f_in + config.maps_per_basis()) * n
        }
    };
    let basis_params = if config.basis_trainable {
        config.bases * n * 5
    } else {
        0
    };
    ParamCount {
        combination_weights,
        basis_params,
    }
}

/// Deterministic parameter draw. Order is part of the reproducibility
/// contract: per basis, per kernel mu1, mu2, theta (sigmas start at 1 with
/// no draw); then every combination weight in flat index order, lambda
/// before beta in separated mode.
///
/// The weight scale is sqrt(2 / (f_in * E)) where E is the mean total L2
/// energy of one basis' sampled grids. For unit-energy kernels E equals the
/// kernel count; using the measured energy keeps pre-batch-norm activations
/// near unit scale even though Gaussian derivative grids carry far less than
/// unit energy, which would otherwise shrink the signal at every layer.
pub fn init_params(config: &LayerConfig, seed: u64) -> Result<LayerParams> {
    config.validate()?;
    let mut rng = Rng::new(seed);
    let n = config.basis_len();
    let half_shift = config.support as f64 / 4.0;
    let mut bases = Vec::with_capacity(config.bases);
    for _ in 0..config.bases {
        let mut params = Vec::with_capacity(n);
        for _ in 0..n {
            let mu1 = rng.uniform(-half_shift, half_shift);
            let mu2 = rng.uniform(-half_shift, half_shift);
            let theta = rng.uniform(0.0, std::f64::consts::PI);
            params.push(KernelParams {
                mu1,
                mu2,
                sigma1: 1.0,
                sigma2: 1.0,
                theta,
            });
        }
        bases.push(BasisSpec::new(config.order, config.support, params)?);
    }
    let mut energy = 0.0;
    for basis in &bases {
        for grid in build_basis(basis)? {
            energy += grid.values.iter().map(|v| v * v).sum::<f64>();
        }
    }
    energy /= config.bases as f64;
    let weight_std = (2.0 / (config.f_in as f64 * energy.max(1e-12))).sqrt();
    let weights = match config.mode {
        CombinationMode::Standard => {
            let omega = (0..config.f_out * config.f_in * n)
                .map(|_| rng.normal() * weight_std)
                .collect();
            LayerWeights::Standard { omega }
        }
        CombinationMode::Separated => {
            // Each factor takes the square root of the standard scale so the
            // lambda*beta products start at the standard magnitude.
            let factor_std = weight_std.sqrt();
            let lambda = (0..config.f_out * n)
                .map(|_| rng.normal() * factor_std)
                .collect();
            let beta = (0..config.bases * n * config.f_in)
                .map(|_| rng.normal() * factor_std)
                .collect();
            LayerWeights::Separated { lambda, beta }
        }
    };
    Ok(LayerParams {
        config: config.clone(),
        bases,
        weights,
    })
}

/// Sampled basis grids kept between forward and backward.
#[derive(Clone, Debug)]
pub struct LayerCache {
    pub grids: Vec<Vec<KernelGrid>>,
}

/// Gradients for every trainable scalar of one layer. Scale gradients are
/// with respect to sigma itself; the optimizer chains them through the
/// log-parameterization.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelParamGrads {
    pub mu1: f64,
    pub mu2: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub theta: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrads {
    pub weights: LayerWeights,
    /// Per basis, per kernel; all zero when the basis is frozen.
    pub bases: Vec<Vec<KernelParamGrads>>,
}

impl LayerParams {
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let n = self.config.basis_len();
        if self.bases.len() != self.config.bases {
            return Err(Error::ShapeMismatch(format!(
                "layer declares {} bases, holds {}",
                self.config.bases,
                self.bases.len()
            )));
        }
        for b in &self.bases {
            if b.order != self.config.order || b.support != self.config.support {
                return Err(Error::ShapeMismatch(
                    "basis order/support disagrees with layer config".into(),
                ));
            }
        }
        let ok = match (&self.weights, self.config.mode) {
            (LayerWeights::Standard { omega }, CombinationMode::Standard) => {
                omega.len() == self.config.f_out * self.config.f_in * n
            }
            (LayerWeights::Separated { lambda, beta }, CombinationMode::Separated) => {
                lambda.len() == self.config.f_out * n
                    && beta.len() == self.config.bases * n * self.config.f_in
            }
            _ => false,
        };
        if !ok {
            return Err(Error::ShapeMismatch(
                "combination weight arrays disagree with layer config".into(),
            ));
        }
        Ok(())
    }

    pub fn sample_grids(&self) -> Result<Vec<Vec<KernelGrid>>> {
        self.bases.iter().map(build_basis).collect()
    }

    /// Coefficient of kernel n in the filter for (output j, input i).
    fn coeff(&self, j: usize, i: usize, n: usize) -> f64 {
        let nk = self.config.basis_len();
        match &self.weights {
            LayerWeights::Standard { omega } => omega[(j * self.config.f_in + i) * nk + n],
            LayerWeights::Separated { lambda, beta } => {
                let b = self.config.basis_of_output(j);
                lambda[j * nk + n] * beta[(b * nk + n) * self.config.f_in + i]
            }
        }
    }

    /// Assembles the per-output-map filters W[j][i] = sum_n coeff * grid_n.
    pub fn effective_kernels(&self, grids: &[Vec<KernelGrid>]) -> KernelStack {
        let cfg = &self.config;
        let nk = cfg.basis_len();
        let s2 = cfg.support * cfg.support;
        let mut stack = KernelStack::zeros(cfg.f_out, cfg.f_in, cfg.support);
        for j in 0..cfg.f_out {
            let b = cfg.basis_of_output(j);
            for i in 0..cfg.f_in {
                let base = (j * cfg.f_in + i) * s2;
                let dst = &mut stack.data[base..base + s2];
                for n in 0..nk {
                    let c = self.coeff(j, i, n);
                    if c == 0.0 {
                        continue;
                    }
                    for (d, &v) in dst.iter_mut().zip(&grids[b][n].values) {
                        *d += c * v;
                    }
                }
            }
        }
        stack
    }

    pub fn forward_batch(&self, inputs: &[Tensor]) -> Result<Vec<Tensor>> {
        Ok(self.forward_batch_cached(inputs)?.0)
    }

    /// Forward pass following each combination scheme as written: standard
    /// mode combines kernels into filters before convolving; separated mode
    /// convolves the beta-weighted basis once per kernel and applies lambda
    /// to the intermediate maps.
    pub fn forward_batch_cached(&self, inputs: &[Tensor]) -> Result<(Vec<Tensor>, LayerCache)> {
        self.validate()?;
        let grids = self.sample_grids()?;
        let cfg = &self.config;
        let out = match &self.weights {
            LayerWeights::Standard { .. } => {
                let stack = self.effective_kernels(&grids);
                conv2d_batch(inputs, &stack, cfg.stride, cfg.padding)?
            }
            LayerWeights::Separated { lambda, beta } => {
                let nk = cfg.basis_len();
                let s2 = cfg.support * cfg.support;
                // One intermediate map per (basis, kernel) pair.
                let mut mid = KernelStack::zeros(cfg.bases * nk, cfg.f_in, cfg.support);
                for b in 0..cfg.bases {
                    for n in 0..nk {
                        for i in 0..cfg.f_in {
                            let w = beta[(b * nk + n) * cfg.f_in + i];
                            let base = ((b * nk + n) * cfg.f_in + i) * s2;
                            for (d, &v) in mid.data[base..base + s2]
                                .iter_mut()
                                .zip(&grids[b][n].values)
                            {
                                *d = w * v;
                            }
                        }
                    }
                }
                let inter = conv2d_batch(inputs, &mid, cfg.stride, cfg.padding)?;
                inter
                    .into_iter()
                    .map(|m| {
                        let mut o = Tensor::zeros(m.rows, m.cols, cfg.f_out);
                        for pix in 0..m.rows * m.cols {
                            let src = &m.data[pix * m.features..(pix + 1) * m.features];
                            let dst = &mut o.data[pix * cfg.f_out..(pix + 1) * cfg.f_out];
                            for (j, d) in dst.iter_mut().enumerate() {
                                let b = cfg.basis_of_output(j);
                                let mut acc = 0.0;
                                for n in 0..nk {
                                    acc += lambda[j * nk + n] * src[b * nk + n];
                                }
                                *d = acc;
                            }
                        }
                        o
                    })
                    .collect()
            }
        };
        Ok((out, LayerCache { grids }))
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        Ok(self
            .forward_batch(std::slice::from_ref(input))?
            .pop()
            .unwrap())
    }

    /// Backward pass. Both modes route gradients through the assembled
    /// per-output-map filters: convolution backward yields per-filter-entry
    /// gradients, which are contracted against the basis grids for the
    /// combination weights and against the kernel Jacobians for the basis
    /// parameters.
    pub fn backward_batch(
        &self,
        inputs: &[Tensor],
        cache: &LayerCache,
        grad_outs: &[Tensor],
    ) -> Result<(Vec<Tensor>, LayerGrads)> {
        let cfg = &self.config;
        let nk = cfg.basis_len();
        let s2 = cfg.support * cfg.support;
        let stack = self.effective_kernels(&cache.grids);
        let (grad_inputs, grad_stack) =
            conv2d_backward_batch(inputs, &stack, cfg.stride, cfg.padding, grad_outs)?;

        // dots[(j * f_in + i) * nk + n] = <dW[j][i], grid[b(j)][n]>
        let mut dots = vec![0.0; cfg.f_out * cfg.f_in * nk];
        for j in 0..cfg.f_out {
            let b = cfg.basis_of_output(j);
            for i in 0..cfg.f_in {
                let gw = &grad_stack.data[(j * cfg.f_in + i) * s2..(j * cfg.f_in + i + 1) * s2];
                for n in 0..nk {
                    let mut acc = 0.0;
                    for (a, &v) in gw.iter().zip(&cache.grids[b][n].values) {
                        acc += a * v;
                    }
                    dots[(j * cfg.f_in + i) * nk + n] = acc;
                }
            }
        }

        let weight_grads = match &self.weights {
            LayerWeights::Standard { .. } => LayerWeights::Standard { omega: dots.clone() },
            LayerWeights::Separated { lambda, beta } => {
                let mut d_lambda = vec![0.0; cfg.f_out * nk];
                let mut d_beta = vec![0.0; cfg.bases * nk * cfg.f_in];
                for j in 0..cfg.f_out {
                    let b = cfg.basis_of_output(j);
                    for i in 0..cfg.f_in {
                        for n in 0..nk {
                            let d = dots[(j * cfg.f_in + i) * nk + n];
                            d_lambda[j * nk + n] += beta[(b * nk + n) * cfg.f_in + i] * d;
                            d_beta[(b * nk + n) * cfg.f_in + i] += lambda[j * nk + n] * d;
                        }
                    }
                }
                LayerWeights::Separated {
                    lambda: d_lambda,
                    beta: d_beta,
                }
            }
        };

        let mut basis_grads: Vec<Vec<KernelParamGrads>> = (0..cfg.bases)
            .map(|_| {
                (0..nk)
                    .map(|_| KernelParamGrads {
                        mu1: 0.0,
                        mu2: 0.0,
                        sigma1: 0.0,
                        sigma2: 0.0,
                        theta: 0.0,
                    })
                    .collect()
            })
            .collect();

        if cfg.basis_trainable {
            // dL/dgrid[b][n] = sum over maps served by b of coeff * dW.
            let mut grid_grads = vec![vec![0.0; s2]; cfg.bases * nk];
            for j in 0..cfg.f_out {
                let b = cfg.basis_of_output(j);
                for i in 0..cfg.f_in {
                    let gw =
                        &grad_stack.data[(j * cfg.f_in + i) * s2..(j * cfg.f_in + i + 1) * s2];
                    for n in 0..nk {
                        let c = self.coeff(j, i, n);
                        if c == 0.0 {
                            continue;
                        }
                        let acc = &mut grid_grads[b * nk + n];
                        for (a, &v) in acc.iter_mut().zip(gw) {
                            *a += c * v;
                        }
                    }
                }
            }
            for b in 0..cfg.bases {
                let spec = &self.bases[b];
                for n in 0..nk {
                    let (p, q) = spec.derivation_orders[n];
                    let jac = kernel_jacobian(p, q, &spec.params[n], cfg.support)?;
                    let gg = &grid_grads[b * nk + n];
                    let dot = |grid: &KernelGrid| -> f64 {
                        grid.values.iter().zip(gg).map(|(a, b)| a * b).sum()
                    };
                    basis_grads[b][n] = KernelParamGrads {
                        mu1: dot(&jac.d_mu1),
                        mu2: dot(&jac.d_mu2),
                        sigma1: dot(&jac.d_sigma1),
                        sigma2: dot(&jac.d_sigma2),
                        theta: dot(&jac.d_theta),
                    };
                }
            }
        }

        Ok((
            grad_inputs,
            LayerGrads {
                weights: weight_grads,
                bases: basis_grads,
            },
        ))
    }
}

/// One plain SGD step over a layer's trainable scalars. Scales update
/// through their log-parameterization (sigma <- sigma * exp(-lr * sigma *
/// d_sigma)), so they stay positive; frozen bases are untouched. Returns the
/// number of scalars updated.
pub fn apply_sgd(params: &mut LayerParams, grads: &LayerGrads, lr: f64) -> Result<usize> {
    let mut updated = 0;
    match (&mut params.weights, &grads.weights) {
        (LayerWeights::Standard { omega }, LayerWeights::Standard { omega: g }) => {
            if omega.len() != g.len() {
                return Err(Error::ShapeMismatch("weight gradient length".into()));
            }
            for (w, gv) in omega.iter_mut().zip(g) {
                *w -= lr * gv;
            }
            updated += omega.len();
        }
        (
            LayerWeights::Separated { lambda, beta },
            LayerWeights::Separated {
                lambda: gl,
                beta: gb,
            },
        ) => {
            if lambda.len() != gl.len() || beta.len() != gb.len() {
                return Err(Error::ShapeMismatch("weight gradient length".into()));
            }
            for (w, gv) in lambda.iter_mut().zip(gl) {
                *w -= lr * gv;
            }
            for (w, gv) in beta.iter_mut().zip(gb) {
                *w -= lr * gv;
            }
            updated += lambda.len() + beta.len();
        }
        _ => return Err(Error::ShapeMismatch("weight gradient mode".into())),
    }
    if params.config.basis_trainable {
        if grads.bases.len() != params.bases.len() {
            return Err(Error::ShapeMismatch("basis gradient count".into()));
        }
        for (spec, gs) in params.bases.iter_mut().zip(&grads.bases) {
            for (kp, g) in spec.params.iter_mut().zip(gs) {
                kp.mu1 -= lr * g.mu1;
                kp.mu2 -= lr * g.mu2;
                kp.theta -= lr * g.theta;
                kp.sigma1 = (kp.sigma1.ln() - lr * g.sigma1 * kp.sigma1).exp();
                kp.sigma2 = (kp.sigma2.ln() - lr * g.sigma2 * kp.sigma2).exp();
                updated += 5;
            }
        }
    }
    Ok(updated)
}
