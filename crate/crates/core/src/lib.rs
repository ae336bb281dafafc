//! Tree species recognition toolkit.
//!
//! * [`tensor`]: NHWC tensors and the CNN operators.
//! * [`graph`]: computation graphs, inception builders, evaluation and the
//!   `TRMB` model bundle / label file formats.
//! * [`optimize`]: batch-norm folding, constant folding, dead-node
//!   elimination and int8 weight quantization.
//! * [`retrain`]: dataset indexing, bottleneck caching and final-layer training.
//! * [`recognizer`]: top-k classification with species descriptions.

pub mod error;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
pub mod graph;
pub mod optimize;
pub mod preprocess;
pub mod recognizer;
pub mod retrain;
pub mod fixtures;
