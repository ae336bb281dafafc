//! `canopy` command line: retraining, optimization, inspection,
//! classification and the HTTP recognition service.
//!
//! Every flag can also be set through a `CANOPY_`-prefixed environment
//! variable (for example `CANOPY_MODEL`, `CANOPY_LISTEN`); explicit flags win.

mod inspect;
pub mod server;

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use canopy_core::fixtures::{write_synthetic_dataset, SyntheticSpec};
use canopy_core::graph::{build_mini_inception, load_bundle, ModelBundle};
use canopy_core::optimize::{optimize, Pass};
use canopy_core::recognizer::Recognizer;
use canopy_core::retrain::{retrain, Augmentation, Extractor, RetrainOptions, TrainConfig};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

pub use inspect::{inspect_bundle, BundleSummary};
pub use server::{ServeConfig, DEFAULT_MAX_UPLOAD};

#[derive(Debug, Parser)]
#[command(name = "canopy", version, about = "Tree species recognition: retrain, optimize, inspect, classify, serve")]
#[command(arg_required_else_help = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a new classifier head on a data/<class>/<image> tree.
    Retrain(RetrainArgs),
    /// Run graph optimization passes over a bundle.
    Optimize(OptimizeArgs),
    /// Classify one image file.
    Classify(ClassifyArgs),
    /// Describe a bundle: topology, parameters, size, quantization.
    Inspect(InspectArgs),
    /// Serve the HTTP recognition API.
    Serve(ServeArgs),
    /// Write a seeded synthetic image dataset (one folder per class).
    SynthDataset(SynthArgs),
}

#[derive(Debug, Args)]
pub struct RetrainArgs {
    /// Dataset root with one subfolder per class.
    #[arg(long, env = "CANOPY_DATA")]
    pub data: PathBuf,
    /// Output folder for model.trmb, labels.txt and report.json.
    #[arg(long, env = "CANOPY_OUT")]
    pub out: PathBuf,
    /// Bottleneck cache folder; caching is off when omitted.
    #[arg(long, env = "CANOPY_CACHE_DIR")]
    pub cache_dir: Option<PathBuf>,
    /// Existing bundle to use as the frozen feature extractor.
    #[arg(long, env = "CANOPY_EXTRACTOR", conflicts_with = "extractor_seed")]
    pub extractor: Option<PathBuf>,
    /// Seed of the default MiniInception extractor.
    #[arg(long, env = "CANOPY_EXTRACTOR_SEED", default_value_t = 0)]
    pub extractor_seed: u64,
    #[arg(long, env = "CANOPY_LEARNING_RATE", default_value_t = 0.01)]
    pub learning_rate: f64,
    #[arg(long, env = "CANOPY_EPOCHS", default_value_t = 40)]
    pub epochs: usize,
    #[arg(long, env = "CANOPY_BATCH_SIZE", default_value_t = 32)]
    pub batch_size: usize,
    /// Seed for batch order and augmentation.
    #[arg(long, env = "CANOPY_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, env = "CANOPY_VALIDATION_FRACTION", default_value_t = 0.10)]
    pub validation_fraction: f64,
    #[arg(long, env = "CANOPY_TEST_FRACTION", default_value_t = 0.10)]
    pub test_fraction: f64,
    /// none, flip or flip+brightness.
    #[arg(long, env = "CANOPY_AUGMENTATION", default_value = "none")]
    pub augmentation: String,
}

#[derive(Debug, Args)]
pub struct OptimizeArgs {
    #[arg(long = "in", env = "CANOPY_IN")]
    pub input: PathBuf,
    #[arg(long, env = "CANOPY_OUT")]
    pub out: PathBuf,
    /// Comma-separated pass names, applied in order.
    #[arg(
        long,
        env = "CANOPY_PASSES",
        default_value = "fold_batch_norm,fold_constants,eliminate_dead_nodes,quantize_weights"
    )]
    pub passes: String,
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    #[arg(long, env = "CANOPY_MODEL")]
    pub model: PathBuf,
    #[arg(long, env = "CANOPY_IMAGE")]
    pub image: PathBuf,
    #[arg(long, env = "CANOPY_TOP", default_value_t = 3)]
    pub top: usize,
    /// Species catalog for display names and descriptions.
    #[arg(long, env = "CANOPY_CATALOG")]
    pub catalog: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long, env = "CANOPY_MODEL")]
    pub model: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "CANOPY_MODEL")]
    pub model: PathBuf,
    #[arg(long, env = "CANOPY_CATALOG")]
    pub catalog: PathBuf,
    #[arg(long, env = "CANOPY_LISTEN", default_value = "127.0.0.1:8080")]
    pub listen: SocketAddr,
    #[arg(long, env = "CANOPY_MAX_UPLOAD_BYTES", default_value_t = DEFAULT_MAX_UPLOAD)]
    pub max_upload_bytes: usize,
    /// Allowed CORS origin(s), comma separated, or `*`.
    #[arg(long, env = "CANOPY_CORS_ORIGIN", default_value = "*")]
    pub cors_origin: String,
    /// Folder of static UI assets served at `/`.
    #[arg(long, env = "CANOPY_STATIC_DIR")]
    pub static_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, env = "CANOPY_OUT")]
    pub out: PathBuf,
    #[arg(long, env = "CANOPY_SYNTH_PER_CLASS", default_value_t = 10)]
    pub per_class: usize,
    #[arg(long, env = "CANOPY_SYNTH_SIZE", default_value_t = 64)]
    pub size: u32,
    /// Seed of the generated images
    #[arg(long, env = "CANOPY_SYNTH_SEED", default_value_t = 7)]
    pub seed: u64,
}

/// Error chain flattened into one line.
pub fn one_line(e: &anyhow::Error) -> String {
    e.chain().map(|c| c.to_string()).collect::<Vec<_>>().join(": ")
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Retrain(a) => cmd_retrain(a),
        Command::Optimize(a) => cmd_optimize(a),
        Command::Classify(a) => cmd_classify(a),
        Command::Inspect(a) => print_json(&inspect_bundle(&a.model)?),
        Command::Serve(a) => {
            let config = ServeConfig {
                model: a.model,
                catalog: a.catalog,
                listen: a.listen,
                max_upload_bytes: a.max_upload_bytes,
                cors_origin: a.cors_origin,
                static_dir: a.static_dir,
            };
            tokio::runtime::Runtime::new()?.block_on(server::serve(config))
        }
        Command::SynthDataset(a) => {
            let spec = SyntheticSpec {
                per_class: a.per_class,
                size: a.size,
                seed: a.seed,
                ..Default::default()
            };
            let files = write_synthetic_dataset(&a.out, &spec)?;
            println!("wrote {} images under {}", files.len(), a.out.display());
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct RetrainSummary<'a> {
    model: &'a Path,
    labels: &'a Path,
    report: &'a Path,
    classes: &'a [String],
    examples: &'a canopy_core::retrain::SplitCounts,
    train_accuracy: f64,
    validation_accuracy: Option<f64>,
    test_accuracy: Option<f64>,
    skipped: usize,
    cache_hits: usize,
    evaluations: usize,
}

fn cmd_retrain(a: RetrainArgs) -> Result<()> {
    let config = TrainConfig {
        learning_rate: a.learning_rate,
        epochs: a.epochs,
        batch_size: a.batch_size,
        seed: a.seed,
        validation_fraction: a.validation_fraction,
        test_fraction: a.test_fraction,
        augmentation: Augmentation::parse(&a.augmentation)?,
    };
    let extractor = match &a.extractor {
        Some(path) => {
            let (graph, _) = load_bundle(path).with_context(|| format!("loading extractor {}", path.display()))?;
            Extractor::Graph(graph)
        }
        None => Extractor::Seeded(a.extractor_seed),
    };
    let options = RetrainOptions {
        data_dir: a.data,
        out_dir: a.out,
        cache_dir: a.cache_dir,
        config,
        extractor,
    };
    let run = retrain(&options)?;
    let r = &run.report;
    print_json(&RetrainSummary {
        model: &run.paths.model,
        labels: &run.paths.labels,
        report: &run.report_path,
        classes: &r.classes,
        examples: &r.examples,
        train_accuracy: r.train.accuracy,
        validation_accuracy: r.validation.as_ref().map(|e| e.accuracy),
        test_accuracy: r.test.as_ref().map(|e| e.accuracy),
        skipped: r.skipped.len(),
        cache_hits: r.cache.hits,
        evaluations: r.cache.evaluations,
    })
}

fn cmd_optimize(a: OptimizeArgs) -> Result<()> {
    let passes = Pass::parse_list(&a.passes)?;
    let bytes = std::fs::read(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let bundle = ModelBundle::from_bytes(&bytes).with_context(|| format!("decoding {}", a.input.display()))?;
    let (optimized, reports) = optimize(&bundle, &passes)?;
    std::fs::write(&a.out, optimized.to_bytes()).with_context(|| format!("writing {}", a.out.display()))?;
    print_json(&reports)
}

fn cmd_classify(a: ClassifyArgs) -> Result<()> {
    if a.top == 0 {
        bail!("--top must be at least 1");
    }
    let recognizer = Recognizer::load(&a.model, a.catalog.as_deref())?;
    let bytes = std::fs::read(&a.image).with_context(|| format!("reading {}", a.image.display()))?;
    let prediction = recognizer
        .classify(&bytes, a.top)
        .with_context(|| format!("classifying {}", a.image.display()))?;
    print_json(&prediction)
}

/// Builds a seeded MiniInception bundle with placeholder labels. Used by the
/// benchmarks and tests that need a bundle without training one.
pub fn seeded_bundle(labels: &[&str], seed: u64) -> Result<ModelBundle> {
    let labels = canopy_core::graph::LabelList::sorted(labels.iter().copied())?;
    let graph = build_mini_inception(labels.len(), seed)?;
    Ok(ModelBundle::new(graph, labels)?)
}
