//! Versioned human-readable model files. Floats are written with 17
//! significant digits so a save/load round trip reproduces every scalar
//! bit-exactly.

use crate::batchnorm::BatchNormState;
use crate::conv::Padding;
use crate::error::{Error, Result};
use crate::head::DenseHead;
use crate::kernel::{BasisSpec, KernelParams};
use crate::layer::{CombinationMode, LayerConfig, LayerParams, LayerWeights};
use crate::network::{ModelSpec, Network};
use crate::tensor::Activation;
use crate::train::{ScheduleMode, TrainConfig};
use std::fmt::Write as _;
use std::path::Path;

pub const MODEL_FORMAT: &str = "gdnet-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct SavedModel {
    pub network: Network,
    pub train: TrainConfig,
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn push_floats(out: &mut String, name: &str, values: &[f64]) {
    let _ = writeln!(out, "array {name} {}", values.len());
    for chunk in values.chunks(8) {
        let line: Vec<String> = chunk.iter().map(|&v| fmt_f64(v)).collect();
        let _ = writeln!(out, "{}", line.join(" "));
    }
}

pub fn serialize_model(net: &Network, train: &TrainConfig) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{MODEL_FORMAT} v{MODEL_VERSION}");
    let _ = writeln!(out, "classes {}", net.spec.classes);
    let _ = writeln!(out, "layers {}", net.spec.layers.len());
    let _ = writeln!(
        out,
        "train lr0 {} alpha {} k_max {} batch_size {} epochs {} seed {} schedule {} test_eval_n {}",
        fmt_f64(train.lr0),
        fmt_f64(train.alpha),
        train.k_max,
        train.batch_size,
        train.epochs,
        train.seed,
        train.schedule.name(),
        train.test_eval_n
    );
    for (idx, (cfg, params)) in net.spec.layers.iter().zip(&net.layers).enumerate() {
        let _ = writeln!(
            out,
            "layer {idx} f_in {} f_out {} bases {} order {} support {} stride {} padding {} mode {} basis_trainable {} activation {} batchnorm {} frozen_gamma {}",
            cfg.f_in,
            cfg.f_out,
            cfg.bases,
            cfg.order,
            cfg.support,
            cfg.stride,
            cfg.padding.name(),
            cfg.mode.name(),
            cfg.basis_trainable,
            cfg.activation.name(),
            cfg.batchnorm,
            cfg.frozen_gamma
        );
        for (b, basis) in params.bases.iter().enumerate() {
            let _ = writeln!(out, "basis {idx} {b} kernels {}", basis.params.len());
            for (n, kp) in basis.params.iter().enumerate() {
                let _ = writeln!(
                    out,
                    "kernel {idx} {b} {n} {} {} {} {} {}",
                    fmt_f64(kp.mu1),
                    fmt_f64(kp.mu2),
                    fmt_f64(kp.sigma1),
                    fmt_f64(kp.sigma2),
                    fmt_f64(kp.theta)
                );
            }
        }
        match &params.weights {
            LayerWeights::Standard { omega } => {
                push_floats(&mut out, &format!("layer{idx}.omega"), omega);
            }
            LayerWeights::Separated { lambda, beta } => {
                push_floats(&mut out, &format!("layer{idx}.lambda"), lambda);
                push_floats(&mut out, &format!("layer{idx}.beta"), beta);
            }
        }
        if let Some(bn) = &net.bn[idx] {
            let _ = writeln!(
                out,
                "batchnorm {idx} features {} epsilon {} momentum {} frozen_gamma {}",
                bn.features(),
                fmt_f64(bn.epsilon),
                fmt_f64(bn.momentum),
                bn.frozen_gamma
            );
            push_floats(&mut out, &format!("bn{idx}.gamma"), &bn.gamma);
            push_floats(&mut out, &format!("bn{idx}.beta"), &bn.beta);
            push_floats(&mut out, &format!("bn{idx}.moving_mean"), &bn.moving_mean);
            push_floats(&mut out, &format!("bn{idx}.moving_var"), &bn.moving_var);
        }
    }
    let _ = writeln!(out, "head classes {} f_in {}", net.head.classes, net.head.f_in);
    push_floats(&mut out, "head.weights", &net.head.weights);
    push_floats(&mut out, "head.bias", &net.head.bias);
    out
}

pub fn save_model(path: &Path, net: &Network, train: &TrainConfig) -> Result<()> {
    std::fs::write(path, serialize_model(net, train))
        .map_err(|e| Error::io(path.display().to_string(), e))
}

/// Token reader over the whole file, tracking line numbers for error
/// messages.
struct Tokens<'a> {
    tokens: Vec<(usize, &'a str)>,
    pos: usize,
}

impl<'a> Tokens<'a> {
    fn new(text: &'a str) -> Self {
        let mut tokens = Vec::new();
        for (i, line) in text.lines().enumerate() {
            for tok in line.split_whitespace() {
                tokens.push((i + 1, tok));
            }
        }
        Tokens { tokens, pos: 0 }
    }

    fn line(&self) -> usize {
        self.tokens
            .get(self.pos.min(self.tokens.len().saturating_sub(1)))
            .map_or(0, |(l, _)| *l)
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        Error::MalformedModel {
            line: self.line(),
            msg: msg.into(),
        }
    }

    fn next(&mut self, what: &str) -> Result<&'a str> {
        match self.tokens.get(self.pos) {
            Some((_, t)) => {
                self.pos += 1;
                Ok(t)
            }
            None => Err(Error::MalformedModel {
                line: self.tokens.last().map_or(0, |(l, _)| *l),
                msg: format!("unexpected end of file, expected {what}"),
            }),
        }
    }

    fn expect(&mut self, literal: &str) -> Result<()> {
        let t = self.next(literal)?;
        if t != literal {
            return Err(self.err(format!("expected `{literal}`, found `{t}`")));
        }
        Ok(())
    }

    fn usize(&mut self, what: &str) -> Result<usize> {
        let t = self.next(what)?;
        t.parse()
            .map_err(|_| self.err(format!("bad {what}: `{t}`")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let t = self.next(what)?;
        t.parse()
            .map_err(|_| self.err(format!("bad {what}: `{t}`")))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        let t = self.next(what)?;
        t.parse()
            .map_err(|_| self.err(format!("bad {what}: `{t}`")))
    }

    fn bool(&mut self, what: &str) -> Result<bool> {
        let t = self.next(what)?;
        match t {
            "true" => Ok(true),
            "false" => Ok(false),
            _ => Err(self.err(format!("bad {what}: `{t}`"))),
        }
    }

    fn keyed_usize(&mut self, key: &str) -> Result<usize> {
        self.expect(key)?;
        self.usize(key)
    }

    fn keyed_f64(&mut self, key: &str) -> Result<f64> {
        self.expect(key)?;
        self.f64(key)
    }

    fn keyed_bool(&mut self, key: &str) -> Result<bool> {
        self.expect(key)?;
        self.bool(key)
    }

    fn array(&mut self, name: &str) -> Result<Vec<f64>> {
        self.expect("array")?;
        let got = self.next("array name")?;
        if got != name {
            return Err(self.err(format!("expected array `{name}`, found `{got}`")));
        }
        let len = self.usize("array length")?;
        let mut out = Vec::with_capacity(len);
        for _ in 0..len {
            out.push(self.f64("array value")?);
        }
        Ok(out)
    }
}

pub fn parse_model(text: &str) -> Result<SavedModel> {
    let mut t = Tokens::new(text);
    let fmt = t.next("format tag")?;
    if fmt != MODEL_FORMAT {
        return Err(t.err(format!("not a model file (starts with `{fmt}`)")));
    }
    let ver = t.next("format version")?;
    let expected = format!("v{MODEL_VERSION}");
    if ver != expected {
        return Err(Error::VersionMismatch {
            found: ver.to_string(),
            expected,
        });
    }

    let classes = t.keyed_usize("classes")?;
    let layer_count = t.keyed_usize("layers")?;

    t.expect("train")?;
    let lr0 = t.keyed_f64("lr0")?;
    let alpha = t.keyed_f64("alpha")?;
    let k_max = t.keyed_usize("k_max")?;
    let batch_size = t.keyed_usize("batch_size")?;
    let epochs = t.keyed_usize("epochs")?;
    t.expect("seed")?;
    let seed = t.u64("seed")?;
    t.expect("schedule")?;
    let sched_tok = t.next("schedule")?;
    let schedule = ScheduleMode::parse(sched_tok)
        .ok_or_else(|| t.err(format!("unknown schedule `{sched_tok}`")))?;
    let test_eval_n = t.keyed_usize("test_eval_n")?;
    let train = TrainConfig {
        lr0,
        alpha,
        k_max,
        batch_size,
        epochs,
        seed,
        schedule,
        test_eval_n,
    };

    let mut layer_cfgs = Vec::with_capacity(layer_count);
    let mut layer_params = Vec::with_capacity(layer_count);
    let mut bn_states: Vec<Option<BatchNormState>> = Vec::with_capacity(layer_count);
    for idx in 0..layer_count {
        t.expect("layer")?;
        let got = t.usize("layer index")?;
        if got != idx {
            return Err(t.err(format!("expected layer {idx}, found {got}")));
        }
        let f_in = t.keyed_usize("f_in")?;
        let f_out = t.keyed_usize("f_out")?;
        let bases = t.keyed_usize("bases")?;
        let order = t.keyed_usize("order")?;
        let support = t.keyed_usize("support")?;
        let stride = t.keyed_usize("stride")?;
        t.expect("padding")?;
        let pad_tok = t.next("padding")?;
        let padding = Padding::parse(pad_tok)
            .ok_or_else(|| t.err(format!("unknown padding `{pad_tok}`")))?;
        t.expect("mode")?;
        let mode_tok = t.next("mode")?;
        let mode = CombinationMode::parse(mode_tok)
            .ok_or_else(|| t.err(format!("unknown mode `{mode_tok}`")))?;
        let basis_trainable = t.keyed_bool("basis_trainable")?;
        t.expect("activation")?;
        let act_tok = t.next("activation")?;
        let activation = Activation::parse(act_tok)
            .ok_or_else(|| t.err(format!("unknown activation `{act_tok}`")))?;
        let batchnorm = t.keyed_bool("batchnorm")?;
        let frozen_gamma = t.keyed_bool("frozen_gamma")?;
        let cfg = LayerConfig {
            f_in,
            f_out,
            bases,
            order,
            support,
            stride,
            padding,
            mode,
            basis_trainable,
            activation,
            batchnorm,
            frozen_gamma,
        };

        let mut basis_specs = Vec::with_capacity(bases);
        for b in 0..bases {
            t.expect("basis")?;
            let li = t.usize("layer index")?;
            let bi = t.usize("basis index")?;
            if li != idx || bi != b {
                return Err(t.err(format!("expected basis {idx} {b}, found {li} {bi}")));
            }
            let kernels = t.keyed_usize("kernels")?;
            if kernels != cfg.basis_len() {
                return Err(t.err(format!(
                    "order {order} implies {} kernels, file declares {kernels}",
                    cfg.basis_len()
                )));
            }
            let mut kps = Vec::with_capacity(kernels);
            for n in 0..kernels {
                t.expect("kernel")?;
                let li = t.usize("layer index")?;
                let bi = t.usize("basis index")?;
                let ni = t.usize("kernel index")?;
                if li != idx || bi != b || ni != n {
                    return Err(t.err(format!("expected kernel {idx} {b} {n}")));
                }
                kps.push(KernelParams {
                    mu1: t.f64("mu1")?,
                    mu2: t.f64("mu2")?,
                    sigma1: t.f64("sigma1")?,
                    sigma2: t.f64("sigma2")?,
                    theta: t.f64("theta")?,
                });
            }
            basis_specs.push(
                BasisSpec::new(order, support, kps)
                    .map_err(|e| t.err(format!("bad basis: {e}")))?,
            );
        }

        let weights = match mode {
            CombinationMode::Standard => LayerWeights::Standard {
                omega: t.array(&format!("layer{idx}.omega"))?,
            },
            CombinationMode::Separated => LayerWeights::Separated {
                lambda: t.array(&format!("layer{idx}.lambda"))?,
                beta: t.array(&format!("layer{idx}.beta"))?,
            },
        };
        let params = LayerParams {
            config: cfg.clone(),
            bases: basis_specs,
            weights,
        };
        params.validate().map_err(|e| t.err(format!("{e}")))?;

        if batchnorm {
            t.expect("batchnorm")?;
            let li = t.usize("layer index")?;
            if li != idx {
                return Err(t.err(format!("expected batchnorm {idx}, found {li}")));
            }
            let features = t.keyed_usize("features")?;
            let epsilon = t.keyed_f64("epsilon")?;
            let momentum = t.keyed_f64("momentum")?;
            let fg = t.keyed_bool("frozen_gamma")?;
            let gamma = t.array(&format!("bn{idx}.gamma"))?;
            let beta = t.array(&format!("bn{idx}.beta"))?;
            let moving_mean = t.array(&format!("bn{idx}.moving_mean"))?;
            let moving_var = t.array(&format!("bn{idx}.moving_var"))?;
            if gamma.len() != features || beta.len() != features {
                return Err(t.err("batch norm array length mismatch"));
            }
            bn_states.push(Some(BatchNormState {
                gamma,
                beta,
                moving_mean,
                moving_var,
                epsilon,
                momentum,
                frozen_gamma: fg,
            }));
        } else {
            bn_states.push(None);
        }

        layer_cfgs.push(cfg);
        layer_params.push(params);
    }

    t.expect("head")?;
    let head_classes = t.keyed_usize("classes")?;
    let head_f_in = t.keyed_usize("f_in")?;
    let weights = t.array("head.weights")?;
    let bias = t.array("head.bias")?;
    if weights.len() != head_classes * head_f_in || bias.len() != head_classes {
        return Err(t.err("head array length mismatch"));
    }
    if head_classes != classes {
        return Err(t.err(format!(
            "model declares {classes} classes, head has {head_classes}"
        )));
    }
    let head = DenseHead {
        classes: head_classes,
        f_in: head_f_in,
        weights,
        bias,
    };

    let spec = ModelSpec {
        layers: layer_cfgs,
        classes,
    };
    spec.validate()
        .map_err(|e| Error::MalformedModel { line: 0, msg: format!("{e}") })?;
    Ok(SavedModel {
        network: Network {
            spec,
            layers: layer_params,
            bn: bn_states,
            head,
        },
        train,
    })
}

pub fn load_model(path: &Path) -> Result<SavedModel> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_model(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Network;

    fn sample_network(seed: u64) -> Network {
        let mut spec = ModelSpec::default_testbed();
        spec.layers.truncate(2);
        spec.layers[0].f_out = 3;
        spec.layers[0].order = 2;
        spec.layers[0].support = 5;
        spec.layers[1].f_in = 3;
        spec.layers[1].f_out = 4;
        spec.layers[1].order = 2;
        spec.layers[1].support = 5;
        spec.layers[1].mode = CombinationMode::Separated;
        spec.layers[1].bases = 2;
        spec.classes = 5;
        Network::init(&spec, seed).unwrap()
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let net = sample_network(31);
        let cfg = TrainConfig {
            lr0: 0.0173,
            alpha: 0.003,
            k_max: 120,
            ..TrainConfig::default()
        };
        let text = serialize_model(&net, &cfg);
        let loaded = parse_model(&text).unwrap();
        assert_eq!(loaded.network, net);
        assert_eq!(loaded.train, cfg);
        // And the round trip is a fixed point of serialization.
        assert_eq!(serialize_model(&loaded.network, &loaded.train), text);
    }

    #[test]
    fn roundtrip_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.txt");
        let net = sample_network(32);
        let cfg = TrainConfig::default();
        save_model(&path, &net, &cfg).unwrap();
        let loaded = load_model(&path).unwrap();
        assert_eq!(loaded.network, net);
    }

    #[test]
    fn version_bump_rejected() {
        let net = sample_network(33);
        let text = serialize_model(&net, &TrainConfig::default());
        let bumped = text.replacen("v1", "v2", 1);
        assert!(matches!(
            parse_model(&bumped),
            Err(Error::VersionMismatch { .. })
        ));
    }

    #[test]
    fn corrupt_header_rejected() {
        assert!(matches!(
            parse_model("not-a-model v1\n"),
            Err(Error::MalformedModel { .. })
        ));
        assert!(matches!(
            parse_model(""),
            Err(Error::MalformedModel { .. })
        ));
    }

    #[test]
    fn truncated_body_rejected() {
        let net = sample_network(34);
        let text = serialize_model(&net, &TrainConfig::default());
        let cut = &text[..text.len() / 2];
        let err = parse_model(cut).unwrap_err();
        assert!(matches!(err, Error::MalformedModel { .. }), "{err}");
    }

    #[test]
    fn mangled_float_reports_line() {
        let net = sample_network(35);
        let mut text = serialize_model(&net, &TrainConfig::default());
        text = text.replacen("e0", "eX", 1);
        match parse_model(&text) {
            Err(Error::MalformedModel { line, .. }) => assert!(line > 0),
            other => panic!("expected malformed-model error, got {other:?}"),
        }
    }
}
