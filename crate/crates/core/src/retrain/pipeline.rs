use std::path::{Path, PathBuf};

use serde::Serialize;

use super::dataset::{index_dataset, DatasetIndex, Split};
use super::features::{compute_bottlenecks, Bottlenecks, CacheStats, FeatureOptions, SkippedImage};
use super::train::{evaluate_head, train_head, EpochStats, Evaluation, TrainConfig, TrainedHead};
use crate::error::{Error, Result};
use crate::graph::{build_mini_inception, emit_labels, save_bundle, CompGraph, LabelList};

pub const MODEL_FILE: &str = "model.trmb";
pub const LABELS_FILE: &str = "labels.txt";
pub const REPORT_FILE: &str = "report.json";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExportPaths {
    pub model: PathBuf,
    pub labels: PathBuf,
}

/// Installs the trained head into the extractor graph and writes
/// `model.trmb` and `labels.txt` into `out_dir`.
pub fn export_retrained(
    graph: &CompGraph,
    head: &TrainedHead,
    labels: &LabelList,
    out_dir: &Path,
) -> Result<ExportPaths> {
    if head.num_classes() != labels.len() {
        return Err(Error::Labels(format!(
            "head has {} classes but {} labels were given",
            head.num_classes(),
            labels.len()
        )));
    }
    let model = graph.install_head(&head.weights, &head.bias)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let paths = ExportPaths {
        model: out_dir.join(MODEL_FILE),
        labels: out_dir.join(LABELS_FILE),
    };
    save_bundle(&model, labels, &paths.model)?;
    emit_labels(labels, &paths.labels)?;
    Ok(paths)
}

/// Feature extractor used by [`retrain`].
#[derive(Clone, Debug)]
pub enum Extractor {
    /// A freshly built MiniInception with this seed.
    Seeded(u64),
    /// Any valid graph with a bottleneck; its head is replaced.
    Graph(CompGraph),
}

impl Default for Extractor {
    fn default() -> Self {
        Extractor::Seeded(0)
    }
}

#[derive(Clone, Debug)]
pub struct RetrainOptions {
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub cache_dir: Option<PathBuf>,
    pub config: TrainConfig,
    pub extractor: Extractor,
}

impl RetrainOptions {
    pub fn new(data_dir: impl Into<PathBuf>, out_dir: impl Into<PathBuf>) -> Self {
        RetrainOptions {
            data_dir: data_dir.into(),
            out_dir: out_dir.into(),
            cache_dir: None,
            config: TrainConfig::default(),
            extractor: Extractor::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SplitCounts {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExtractorInfo {
    pub name: String,
    pub version: String,
    pub bottleneck_width: usize,
}

/// Everything a retraining run measured. Written as `report.json`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainingReport {
    pub classes: Vec<String>,
    pub extractor: ExtractorInfo,
    pub config: TrainConfig,
    /// Feature rows per split, after skipping and augmentation.
    pub examples: SplitCounts,
    pub history: Vec<EpochStats>,
    pub train: Evaluation,
    pub validation: Option<Evaluation>,
    pub test: Option<Evaluation>,
    pub skipped: Vec<SkippedImage>,
    pub cache: CacheStats,
}

#[derive(Clone, Debug)]
pub struct RetrainOutcome {
    pub index: DatasetIndex,
    pub extractor: CompGraph,
    pub bottlenecks: Bottlenecks,
    pub head: TrainedHead,
    pub report: TrainingReport,
    pub paths: ExportPaths,
    pub report_path: PathBuf,
}

/// Index, extract, train, evaluate and export in one run.
pub fn retrain(options: &RetrainOptions) -> Result<RetrainOutcome> {
    let config = &options.config;
    config.validate()?;
    let index = index_dataset(&options.data_dir, config.fractions()?)?;
    let labels = index.classes.clone();
    let extractor = match &options.extractor {
        Extractor::Seeded(seed) => build_mini_inception(labels.len(), *seed)?,
        Extractor::Graph(g) => g.clone(),
    };
    log::info!(
        "indexed {} images in {} classes ({} train, {} validation, {} test)",
        index.entries.len(),
        labels.len(),
        index.count(Split::Train),
        index.count(Split::Validation),
        index.count(Split::Test)
    );

    let bottlenecks = compute_bottlenecks(
        &extractor,
        &index,
        options.cache_dir.as_deref(),
        FeatureOptions {
            augmentation: config.augmentation,
            seed: config.seed,
        },
    )?;
    log::info!(
        "bottlenecks ready: {} cached, {} computed, {} skipped",
        bottlenecks.stats.hits,
        bottlenecks.stats.evaluations,
        bottlenecks.skipped.len()
    );

    let mut present = vec![false; labels.len()];
    bottlenecks.train.labels.iter().for_each(|&l| present[l] = true);
    if let Some(missing) = present.iter().position(|p| !p) {
        return Err(Error::Dataset(format!(
            "class '{}' has no usable images in the train split",
            labels.get(missing).unwrap_or("?")
        )));
    }

    let validation = (!bottlenecks.validation.is_empty()).then_some(&bottlenecks.validation);
    let head = train_head(&bottlenecks.train, validation, labels.len(), config)?;
    let optional_eval = |split: Split| -> Result<Option<Evaluation>> {
        let set = bottlenecks.split(split);
        if set.is_empty() {
            Ok(None)
        } else {
            evaluate_head(&head, set).map(Some)
        }
    };
    let report = TrainingReport {
        classes: labels.as_slice().to_vec(),
        extractor: ExtractorInfo {
            name: extractor.name().to_string(),
            version: extractor.version().to_string(),
            bottleneck_width: extractor.bottleneck_width(),
        },
        config: *config,
        examples: SplitCounts {
            train: bottlenecks.train.len(),
            validation: bottlenecks.validation.len(),
            test: bottlenecks.test.len(),
        },
        history: head.history.clone(),
        train: evaluate_head(&head, &bottlenecks.train)?,
        validation: optional_eval(Split::Validation)?,
        test: optional_eval(Split::Test)?,
        skipped: bottlenecks.skipped.clone(),
        cache: bottlenecks.stats.clone(),
    };

    let paths = export_retrained(&extractor, &head, &labels, &options.out_dir)?;
    let report_path = options.out_dir.join(REPORT_FILE);
    let json = serde_json::to_vec_pretty(&report)?;
    std::fs::write(&report_path, json).map_err(|e| Error::io(&report_path, e))?;
    Ok(RetrainOutcome {
        index,
        extractor,
        bottlenecks,
        head,
        report,
        paths,
        report_path,
    })
}
