//! SGD training loop with a cosine learning-rate schedule, plus accuracy
//! evaluation.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::network::{ModelSpec, Network};
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScheduleMode {
    /// Half-cosine decay from lr0 to alpha*lr0 over k_max steps.
    Standard,
    /// Full cosine cycle: starts at (2-alpha)*lr0, reaches alpha*lr0 at
    /// k_max/2 and returns to (2-alpha)*lr0 at k_max.
    FullCycle,
}

impl ScheduleMode {
    pub fn parse(name: &str) -> Option<ScheduleMode> {
        match name {
            "standard" => Some(ScheduleMode::Standard),
            "full_cycle" => Some(ScheduleMode::FullCycle),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ScheduleMode::Standard => "standard",
            ScheduleMode::FullCycle => "full_cycle",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr0: f64,
    pub alpha: f64,
    /// Decay horizon in optimizer steps; 0 means "resolve to the total
    /// number of planned steps when training starts".
    pub k_max: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub schedule: ScheduleMode,
    /// Cap on test items scored for the per-epoch history line; 0 scores the
    /// whole test set each epoch.
    pub test_eval_n: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 0.01,
            alpha: 0.01,
            k_max: 0,
            batch_size: 32,
            epochs: 30,
            seed: 42,
            schedule: ScheduleMode::Standard,
            test_eval_n: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0) || !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::ShapeMismatch(format!(
                "learning rate {} / alpha {} out of range",
                self.lr0, self.alpha
            )));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::ShapeMismatch(
                "batch_size and epochs must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Learning rate at step k. The schedule saturates at k_max: lr is constant
/// beyond it. cfg.k_max must already be resolved (positive).
pub fn cosine_lr(k: usize, cfg: &TrainConfig) -> f64 {
    debug_assert!(cfg.k_max > 0, "cosine_lr called with unresolved k_max");
    let frac = (k.min(cfg.k_max)) as f64 / cfg.k_max as f64;
    match cfg.schedule {
        ScheduleMode::Standard => {
            cfg.lr0
                * (cfg.alpha
                    + (1.0 - cfg.alpha) * (1.0 + (std::f64::consts::PI * frac).cos()) / 2.0)
        }
        ScheduleMode::FullCycle => {
            cfg.lr0 * (cfg.alpha + (1.0 - cfg.alpha) * (1.0 + (std::f64::consts::TAU * frac).cos()))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
}

impl std::fmt::Display for EpochStats {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "epoch {} loss {:.6} train_acc {:.6} test_acc {:.6}",
            self.epoch, self.loss, self.train_acc, self.test_acc
        )
    }
}

#[derive(Clone, Debug)]
pub struct TrainResult {
    pub network: Network,
    pub history: Vec<EpochStats>,
    /// The training config with k_max resolved to its effective value.
    pub resolved: TrainConfig,
}

const EVAL_CHUNK: usize = 64;

/// Argmax accuracy over the first n items (n = 0: all), inference-mode
/// batch norm.
pub fn evaluate_n(net: &Network, data: &Dataset, n: usize) -> Result<f64> {
    let take = if n == 0 { data.len() } else { n.min(data.len()) };
    if take == 0 {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    let mut offset = 0;
    while offset < take {
        let end = (offset + EVAL_CHUNK).min(take);
        let preds = net.predict(&data.images[offset..end])?;
        correct += preds
            .iter()
            .zip(&data.labels[offset..end])
            .filter(|(p, l)| *p == *l)
            .count();
        offset = end;
    }
    Ok(correct as f64 / take as f64)
}

pub fn evaluate(net: &Network, data: &Dataset) -> Result<f64> {
    evaluate_n(net, data, 0)
}

/// Trains a freshly initialized network. Deterministic for a fixed config:
/// initialization and the per-epoch shuffles all derive from cfg.seed. The
/// per-epoch loss is the mean of the step losses; train accuracy is measured
/// by a full inference pass after each epoch; test accuracy scores the test
/// set (capped at cfg.test_eval_n items) or repeats the train accuracy when
/// no test set is given. Calls on_epoch after each epoch.
pub fn train(
    spec: &ModelSpec,
    train_data: &Dataset,
    test_data: Option<&Dataset>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainResult> {
    cfg.validate()?;
    spec.validate()?;
    if train_data.is_empty() {
        return Err(Error::EmptyBatch);
    }
    for &l in &train_data.labels {
        if l >= spec.classes {
            return Err(Error::LabelOutOfRange {
                label: l,
                classes: spec.classes,
            });
        }
    }

    let steps_per_epoch = train_data.len().div_ceil(cfg.batch_size);
    let mut resolved = cfg.clone();
    if resolved.k_max == 0 {
        resolved.k_max = steps_per_epoch * cfg.epochs;
    }

    let mut master = Rng::new(cfg.seed);
    let net_seed = master.next_u64();
    let mut net = Network::init(spec, net_seed)?;

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..train_data.len()).collect();
    let mut step = 0usize;
    for epoch in 1..=cfg.epochs {
        master.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let inputs: Vec<_> = chunk.iter().map(|&i| train_data.images[i].clone()).collect();
            let labels: Vec<_> = chunk.iter().map(|&i| train_data.labels[i]).collect();
            let (loss, cache) = net.forward_train(&inputs, &labels)?;
            let grads = net.backward(&cache)?;
            net.sgd_step(&grads, cosine_lr(step, &resolved))?;
            epoch_loss += loss;
            step += 1;
        }
        let train_acc = evaluate(&net, train_data)?;
        let test_acc = match test_data {
            Some(t) => evaluate_n(&net, t, cfg.test_eval_n)?,
            None => train_acc,
        };
        let stats = EpochStats {
            epoch,
            loss: epoch_loss / steps_per_epoch as f64,
            train_acc,
            test_acc,
        };
        on_epoch(&stats);
        history.push(stats);
    }

    Ok(TrainResult {
        network: net,
        history,
        resolved,
    })
}
