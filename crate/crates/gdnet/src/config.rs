//! Experiment config files: flat-sectioned `key = value` text with `#`
//! comments, chosen so any language can parse one with string splitting.
//!
//! Sections and defaults (an empty file yields the default testbed):
//!
//! ```text
//! [model]
//! layers  = 4     # resizes the layer list; extra layers clone the last default
//! classes = 10
//!
//! [layer 1]               # 1-based; defaults per layer follow the testbed:
//! f_out = 16              # widths 16-16-32-32
//! bases = 1
//! order = 3
//! support = 7
//! stride = 1              # testbed strides 1-2-1-2
//! padding = same          # same | valid
//! mode = standard         # standard | separated
//! basis_trainable = true
//! activation = relu       # relu | sigmoid | identity
//! batchnorm = true
//! frozen_gamma = true
//!
//! [train]
//! lr0 = 0.01
//! alpha = 0.01
//! k_max = 0               # 0 = span all planned steps
//! batch_size = 32
//! epochs = 30
//! seed = 42
//! schedule = standard     # standard | full_cycle
//! test_eval_n = 0         # test samples scored per epoch; 0 = all
//!
//! [data]
//! train_images = data/fashion-mnist/train-images-idx3-ubyte
//! train_labels = data/fashion-mnist/train-labels-idx1-ubyte
//! test_images  = data/fashion-mnist/t10k-images-idx3-ubyte
//! test_labels  = data/fashion-mnist/t10k-labels-idx1-ubyte
//! subset = 0              # training samples drawn without replacement; 0 = all
//! subset_seed = 42
//! ```
//!
//! Unknown sections or keys are errors, as are malformed values; every error
//! carries the offending line number.

use crate::conv::Padding;
use crate::error::{Error, Result};
use crate::layer::{CombinationMode, LayerConfig};
use crate::network::ModelSpec;
use crate::tensor::Activation;
use crate::train::{ScheduleMode, TrainConfig};
use std::path::Path;

pub const DEFAULT_TRAIN_IMAGES: &str = "data/fashion-mnist/train-images-idx3-ubyte";
pub const DEFAULT_TRAIN_LABELS: &str = "data/fashion-mnist/train-labels-idx1-ubyte";
pub const DEFAULT_TEST_IMAGES: &str = "data/fashion-mnist/t10k-images-idx3-ubyte";
pub const DEFAULT_TEST_LABELS: &str = "data/fashion-mnist/t10k-labels-idx1-ubyte";
pub const DEFAULT_SUBSET_SEED: u64 = 42;

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub train_images: String,
    pub train_labels: String,
    pub test_images: String,
    pub test_labels: String,
    /// Training samples drawn without replacement; 0 keeps the full set.
    pub subset: usize,
    pub subset_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            train_images: DEFAULT_TRAIN_IMAGES.to_string(),
            train_labels: DEFAULT_TRAIN_LABELS.to_string(),
            test_images: DEFAULT_TEST_IMAGES.to_string(),
            test_labels: DEFAULT_TEST_LABELS.to_string(),
            subset: 0,
            subset_seed: DEFAULT_SUBSET_SEED,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    pub train: TrainConfig,
    pub data: DataConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            model: ModelSpec::default_testbed(),
            train: TrainConfig::default(),
            data: DataConfig::default(),
        }
    }
}

#[derive(Debug)]
enum Section {
    Model,
    Layer(usize),
    Train,
    Data,
}

struct Entry {
    line: usize,
    key: String,
    value: String,
}

fn err(path: &str, line: usize, msg: impl Into<String>) -> Error {
    Error::Config {
        path: path.to_string(),
        line,
        msg: msg.into(),
    }
}

fn strip_comment(line: &str) -> &str {
    match line.find('#') {
        Some(i) => &line[..i],
        None => line,
    }
}

fn parse_sections(path: &str, text: &str) -> Result<Vec<(usize, Section, Vec<Entry>)>> {
    let mut sections: Vec<(usize, Section, Vec<Entry>)> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = strip_comment(raw).trim();
        if line.is_empty() {
            continue;
        }
        if let Some(inner) = line.strip_prefix('[') {
            let Some(name) = inner.strip_suffix(']') else {
                return Err(err(path, line_no, "unterminated section header"));
            };
            let name = name.trim();
            let section = if name == "model" {
                Section::Model
            } else if name == "train" {
                Section::Train
            } else if name == "data" {
                Section::Data
            } else if let Some(n) = name.strip_prefix("layer ") {
                let n: usize = n
                    .trim()
                    .parse()
                    .map_err(|_| err(path, line_no, format!("bad layer index `{n}`")))?;
                if n == 0 {
                    return Err(err(path, line_no, "layer indices start at 1"));
                }
                Section::Layer(n)
            } else {
                return Err(err(path, line_no, format!("unknown section `[{name}]`")));
            };
            sections.push((line_no, section, Vec::new()));
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(err(path, line_no, format!("expected `key = value`, got `{line}`")));
        };
        let Some((_, _, entries)) = sections.last_mut() else {
            return Err(err(path, line_no, "key before any section header"));
        };
        entries.push(Entry {
            line: line_no,
            key: key.trim().to_string(),
            value: value.trim().to_string(),
        });
    }
    Ok(sections)
}

fn parse_value<T: std::str::FromStr>(path: &str, e: &Entry, what: &str) -> Result<T> {
    e.value
        .parse()
        .map_err(|_| err(path, e.line, format!("`{}`: expected {what}, got `{}`", e.key, e.value)))
}

fn parse_bool(path: &str, e: &Entry) -> Result<bool> {
    match e.value.as_str() {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(err(path, e.line, format!("`{}`: expected true|false, got `{other}`", e.key))),
    }
}

/// Template for layers beyond the testbed when `layers` exceeds 4: the last
/// testbed layer with stride reset to 1.
fn extension_layer(last: &LayerConfig) -> LayerConfig {
    let mut layer = last.clone();
    layer.f_in = last.f_out;
    layer.stride = 1;
    layer
}

fn resize_layers(layers: &mut Vec<LayerConfig>, n: usize) {
    if n < layers.len() {
        layers.truncate(n);
    }
    while layers.len() < n {
        let last = layers.last().expect("testbed has at least one layer");
        layers.push(extension_layer(last));
    }
}

fn apply_layer_entry(path: &str, layer: &mut LayerConfig, e: &Entry) -> Result<()> {
    match e.key.as_str() {
        "f_out" => layer.f_out = parse_value(path, e, "a positive integer")?,
        "bases" => layer.bases = parse_value(path, e, "a positive integer")?,
        "order" => layer.order = parse_value(path, e, "an integer")?,
        "support" => layer.support = parse_value(path, e, "an odd integer")?,
        "stride" => layer.stride = parse_value(path, e, "a positive integer")?,
        "padding" => {
            layer.padding = Padding::parse(&e.value)
                .ok_or_else(|| err(path, e.line, format!("`padding`: expected same|valid, got `{}`", e.value)))?
        }
        "mode" => {
            layer.mode = CombinationMode::parse(&e.value).ok_or_else(|| {
                err(path, e.line, format!("`mode`: expected standard|separated, got `{}`", e.value))
            })?
        }
        "basis_trainable" => layer.basis_trainable = parse_bool(path, e)?,
        "activation" => {
            layer.activation = Activation::parse(&e.value).ok_or_else(|| {
                err(
                    path,
                    e.line,
                    format!("`activation`: expected relu|sigmoid|identity, got `{}`", e.value),
                )
            })?
        }
        "batchnorm" => layer.batchnorm = parse_bool(path, e)?,
        "frozen_gamma" => layer.frozen_gamma = parse_bool(path, e)?,
        other => return Err(err(path, e.line, format!("unknown layer key `{other}`"))),
    }
    Ok(())
}

fn apply_train_entry(path: &str, train: &mut TrainConfig, e: &Entry) -> Result<()> {
    match e.key.as_str() {
        "lr0" => train.lr0 = parse_value(path, e, "a float")?,
        "alpha" => train.alpha = parse_value(path, e, "a float")?,
        "k_max" => train.k_max = parse_value(path, e, "an integer")?,
        "batch_size" => train.batch_size = parse_value(path, e, "a positive integer")?,
        "epochs" => train.epochs = parse_value(path, e, "an integer")?,
        "seed" => train.seed = parse_value(path, e, "an integer")?,
        "schedule" => {
            train.schedule = ScheduleMode::parse(&e.value).ok_or_else(|| {
                err(
                    path,
                    e.line,
                    format!("`schedule`: expected standard|full_cycle, got `{}`", e.value),
                )
            })?
        }
        "test_eval_n" => train.test_eval_n = parse_value(path, e, "an integer")?,
        other => return Err(err(path, e.line, format!("unknown train key `{other}`"))),
    }
    Ok(())
}

fn apply_data_entry(path: &str, data: &mut DataConfig, e: &Entry) -> Result<()> {
    match e.key.as_str() {
        "train_images" => data.train_images = e.value.clone(),
        "train_labels" => data.train_labels = e.value.clone(),
        "test_images" => data.test_images = e.value.clone(),
        "test_labels" => data.test_labels = e.value.clone(),
        "subset" => data.subset = parse_value(path, e, "an integer")?,
        "subset_seed" => data.subset_seed = parse_value(path, e, "an integer")?,
        other => return Err(err(path, e.line, format!("unknown data key `{other}`"))),
    }
    Ok(())
}

/// Parses config text. Starts from the default testbed and applies overrides,
/// so any subset of keys is valid; input feature counts are chained from the
/// previous layer's `f_out` and never set directly.
pub fn parse_config(path: &str, text: &str) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    let sections = parse_sections(path, text)?;

    for (_, section, entries) in &sections {
        if let Section::Model = section {
            for e in entries {
                match e.key.as_str() {
                    "layers" => {
                        let n: usize = parse_value(path, e, "a positive integer")?;
                        if n == 0 {
                            return Err(err(path, e.line, "`layers` must be at least 1"));
                        }
                        resize_layers(&mut cfg.model.layers, n);
                    }
                    "classes" => cfg.model.classes = parse_value(path, e, "an integer")?,
                    other => return Err(err(path, e.line, format!("unknown model key `{other}`"))),
                }
            }
        }
    }
    for (line, section, _) in &sections {
        if let Section::Layer(n) = section {
            if *n > cfg.model.layers.len() {
                return Err(err(
                    path,
                    *line,
                    format!("layer {n} out of range; model has {} layers", cfg.model.layers.len()),
                ));
            }
        }
    }

    for (_, section, entries) in &sections {
        match section {
            Section::Model => {}
            Section::Layer(n) => {
                let layer = &mut cfg.model.layers[*n - 1];
                for e in entries {
                    apply_layer_entry(path, layer, e)?;
                }
            }
            Section::Train => {
                for e in entries {
                    apply_train_entry(path, &mut cfg.train, e)?;
                }
            }
            Section::Data => {
                for e in entries {
                    apply_data_entry(path, &mut cfg.data, e)?;
                }
            }
        }
    }

    for i in 1..cfg.model.layers.len() {
        cfg.model.layers[i].f_in = cfg.model.layers[i - 1].f_out;
    }

    cfg.model.validate().map_err(|e| err(path, 0, e.to_string()))?;
    cfg.train.validate().map_err(|e| err(path, 0, e.to_string()))?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_config(&path.display().to_string(), &text)
}
