//! Final-layer retraining on a `data/<class>/<image>` tree.
//!
//! The extractor graph is frozen; only the last fully connected layer is
//! learned, from cached bottleneck features.

mod dataset;
mod features;
mod pipeline;
mod train;

pub use dataset::{assign_split, index_dataset, name_hash, DatasetIndex, ImageEntry, Split, SplitFractions, IMAGE_EXTENSIONS};
pub use features::{
    cache_file, cache_key, compute_bottlenecks, Augmentation, Bottlenecks, CacheStats, FeatureOptions, FeatureSet,
    SkippedImage,
};
pub use pipeline::{
    export_retrained, retrain, ExportPaths, Extractor, ExtractorInfo, RetrainOptions, RetrainOutcome, SplitCounts,
    TrainingReport, LABELS_FILE, MODEL_FILE, REPORT_FILE,
};
pub use train::{evaluate, evaluate_head, train_head, EpochStats, Evaluation, TrainConfig, TrainedHead};

pub use crate::preprocess::load_training_image;
