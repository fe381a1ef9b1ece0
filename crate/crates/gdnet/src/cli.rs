//! Command-line front end: `train`, `eval`, `gradcheck`, `params` and
//! `inspect-kernels`. Flags override config values; omitted config files mean
//! the built-in defaults, so every subcommand runs without arguments.

use crate::config::{load_config, ExperimentConfig, DEFAULT_SUBSET_SEED, DEFAULT_TEST_IMAGES, DEFAULT_TEST_LABELS};
use crate::data::{load_idx, subset, Dataset};
use crate::error::{Error, Result};
use crate::export::export_kernels;
use crate::gradcheck::{run_gradcheck, GRADCHECK_TOL};
use crate::layer::{param_count, CombinationMode, LayerConfig};
use crate::model_io::{load_model, save_model};
use crate::network::Network;
use crate::train::{evaluate, train};
use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "gdnet", version, about = "Trainable Gaussian derivative networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write the model plus history files.
    Train(TrainArgs),
    /// Score a saved model on a labeled IDX dataset.
    Eval(EvalArgs),
    /// Compare every analytic gradient against finite differences.
    Gradcheck(GradcheckArgs),
    /// Print trainable-parameter counts, including the other combination mode.
    Params(ParamsArgs),
    /// Export kernel grids as portable graymaps plus raw float dumps.
    InspectKernels(InspectKernelsArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Experiment config file; omit for the built-in defaults
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the [train] seed from the config (default 42)
    #[arg(long)]
    seed: Option<u64>,
    /// Model output path; history lines go to <out>.history
    #[arg(long, default_value = "model.txt")]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Saved model file
    #[arg(long, default_value = "model.txt")]
    model: PathBuf,
    /// IDX image file to score
    #[arg(long, default_value = DEFAULT_TEST_IMAGES)]
    data_images: PathBuf,
    /// IDX label file to score against
    #[arg(long, default_value = DEFAULT_TEST_LABELS)]
    data_labels: PathBuf,
    /// Score a random sample of this many items (0 = all)
    #[arg(long, default_value_t = 0)]
    subset: usize,
    /// Seed for the subset draw
    #[arg(long, default_value_t = DEFAULT_SUBSET_SEED)]
    seed: u64,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Experiment config file; omit for the built-in defaults
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for the random probe instances
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Test hook: inject a known error into one gradient
    #[arg(long, hide = true)]
    corrupt: bool,
}

#[derive(Args)]
struct ParamsArgs {
    /// Experiment config file; omit for the built-in defaults
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct InspectKernelsArgs {
    /// Saved model file to read kernels from
    #[arg(long, conflicts_with = "config")]
    model: Option<PathBuf>,
    /// Experiment config file; kernels come from a fresh initialization
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the initialization seed (default: the config's [train] seed)
    #[arg(long)]
    seed: Option<u64>,
    /// Output prefix; files are <out>_l<layer>_b<basis>_p<p>_q<q>.pgm/.txt
    #[arg(long, default_value = "kernels")]
    out: String,
}

fn config_or_default(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => load_config(p),
        None => Ok(ExperimentConfig::default()),
    }
}

/// Loads an image/label pair, naming the config field on a missing file so
/// the error says which setting to fix.
fn load_dataset_named(
    images_field: &str,
    images: &str,
    labels_field: &str,
    labels: &str,
) -> Result<Dataset> {
    for (field, path) in [(images_field, images), (labels_field, labels)] {
        if !Path::new(path).exists() {
            return Err(Error::MissingField(format!("{field} (no file at `{path}`)")));
        }
    }
    load_idx(Path::new(images), Path::new(labels))
}

fn cmd_train(args: &TrainArgs) -> Result<i32> {
    let mut cfg = config_or_default(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        cfg.train.seed = seed;
    }
    let full = load_dataset_named(
        "train_images",
        &cfg.data.train_images,
        "train_labels",
        &cfg.data.train_labels,
    )?;
    let train_data = if cfg.data.subset > 0 {
        subset(&full, cfg.data.subset, cfg.data.subset_seed)?
    } else {
        full
    };
    let test_data = load_dataset_named(
        "test_images",
        &cfg.data.test_images,
        "test_labels",
        &cfg.data.test_labels,
    )?;

    let result = train(&cfg.model, &train_data, Some(&test_data), &cfg.train, |stats| {
        println!("{stats}");
    })?;

    save_model(&args.out, &result.network, &result.resolved)?;
    let history_path = PathBuf::from(format!("{}.history", args.out.display()));
    let mut history = String::new();
    for stats in &result.history {
        history.push_str(&stats.to_string());
        history.push('\n');
    }
    std::fs::write(&history_path, history)
        .map_err(|e| Error::io(history_path.display().to_string(), e))?;
    println!("wrote {} and {}", args.out.display(), history_path.display());
    Ok(0)
}

fn cmd_eval(args: &EvalArgs) -> Result<i32> {
    let saved = load_model(&args.model)?;
    let data = load_dataset_named(
        "data_images",
        &args.data_images.display().to_string(),
        "data_labels",
        &args.data_labels.display().to_string(),
    )?;
    let data = if args.subset > 0 {
        subset(&data, args.subset, args.seed)?
    } else {
        data
    };
    let acc = evaluate(&saved.network, &data)?;
    println!("accuracy {acc:.6}");
    Ok(0)
}

fn cmd_gradcheck(args: &GradcheckArgs) -> Result<i32> {
    let cfg = config_or_default(args.config.as_deref())?;
    let reports = run_gradcheck(&cfg.model, args.seed, args.corrupt)?;
    let mut failed = false;
    for r in &reports {
        if r.skipped {
            println!("{} skipped (frozen basis)", r.name);
        } else {
            let verdict = if r.passed() { "pass" } else { "FAIL" };
            println!("{} max_rel_err {:.3e} {verdict}", r.name, r.max_rel_err);
        }
        failed |= !r.passed();
    }
    if failed {
        println!("gradcheck FAILED (tolerance {GRADCHECK_TOL:.0e})");
        Ok(1)
    } else {
        println!("gradcheck passed (tolerance {GRADCHECK_TOL:.0e})");
        Ok(0)
    }
}

fn other_mode(cfg: &LayerConfig) -> LayerConfig {
    let mut flipped = cfg.clone();
    flipped.mode = match cfg.mode {
        CombinationMode::Standard => CombinationMode::Separated,
        CombinationMode::Separated => CombinationMode::Standard,
    };
    flipped
}

fn bn_params(cfg: &LayerConfig) -> usize {
    if !cfg.batchnorm {
        0
    } else if cfg.frozen_gamma {
        cfg.f_out
    } else {
        2 * cfg.f_out
    }
}

fn cmd_params(args: &ParamsArgs) -> Result<i32> {
    let cfg = config_or_default(args.config.as_deref())?;
    let mut total = (0usize, 0usize);
    let mut flipped_total = (0usize, 0usize);
    let mut bn_total = 0usize;
    for (i, layer) in cfg.model.layers.iter().enumerate() {
        let counts = param_count(layer);
        let flipped = param_count(&other_mode(layer));
        println!(
            "layer {} mode {} combination_weights {} basis_params {} total {} ({}: {} weights, total {})",
            i + 1,
            layer.mode.name(),
            counts.combination_weights,
            counts.basis_params,
            counts.total(),
            other_mode(layer).mode.name(),
            flipped.combination_weights,
            flipped.total(),
        );
        total.0 += counts.combination_weights;
        total.1 += counts.basis_params;
        flipped_total.0 += flipped.combination_weights;
        flipped_total.1 += flipped.basis_params;
        bn_total += bn_params(layer);
    }
    let head = cfg.model.output_features() * cfg.model.classes + cfg.model.classes;
    println!("total combination_weights {} basis_params {}", total.0, total.1);
    println!("batchnorm_params {bn_total}");
    println!("head_params {head}");
    println!("network_total {}", total.0 + total.1 + bn_total + head);
    println!(
        "other_mode_network_total {}",
        flipped_total.0 + flipped_total.1 + bn_total + head
    );
    Ok(0)
}

fn cmd_inspect_kernels(args: &InspectKernelsArgs) -> Result<i32> {
    let layers = match &args.model {
        Some(path) => load_model(path)?.network.layers,
        None => {
            let cfg = config_or_default(args.config.as_deref())?;
            let seed = args.seed.unwrap_or(cfg.train.seed);
            Network::init(&cfg.model, seed)?.layers
        }
    };
    let mut count = 0;
    for (i, params) in layers.iter().enumerate() {
        let files = export_kernels(params, &format!("{}_l{}", args.out, i + 1))?;
        count += files.len();
    }
    println!("wrote {count} files with prefix {}", args.out);
    Ok(0)
}

/// Parses the process arguments, runs the subcommand and returns the exit
/// code; errors are printed to standard error.
pub fn run() -> i32 {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
        Command::Params(args) => cmd_params(args),
        Command::InspectKernels(args) => cmd_inspect_kernels(args),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
