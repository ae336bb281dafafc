use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::dataset::{name_hash, DatasetIndex, ImageEntry, Split};
use crate::error::{Error, Result};
use crate::graph::CompGraph;
use crate::preprocess::prepare_image;
use crate::tensor::Tensor;

const CACHE_MAGIC: [u8; 4] = *b"TRBC";
const KEY_DOMAIN: &[u8] = b"canopy-bottleneck/1";

/// Extra training views generated per image. Only train-split images are
/// augmented.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Augmentation {
    #[default]
    #[serde(rename = "none")]
    None,
    #[serde(rename = "flip")]
    Flip,
    #[serde(rename = "flip+brightness")]
    FlipBrightness,
}

impl Augmentation {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Augmentation::None),
            "flip" => Ok(Augmentation::Flip),
            "flip+brightness" => Ok(Augmentation::FlipBrightness),
            other => Err(Error::Config(format!(
                "unknown augmentation '{other}' (expected none, flip or flip+brightness)"
            ))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Augmentation::None => "none",
            Augmentation::Flip => "flip",
            Augmentation::FlipBrightness => "flip+brightness",
        }
    }
}

impl std::fmt::Display for Augmentation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One view of an image fed to the extractor.
#[derive(Clone, Copy, Debug, PartialEq)]
enum View {
    Original,
    Flipped,
    /// Scales `(x + 1)` by the factor, clamped back into `[-1, 1]`.
    Brightness(f64),
}

impl View {
    fn tag(self) -> String {
        match self {
            View::Original => "original".into(),
            View::Flipped => "flip".into(),
            View::Brightness(f) => format!("brightness:{:016x}", f.to_bits()),
        }
    }

    fn apply(self, image: Tensor) -> Result<Tensor> {
        match self {
            View::Original => Ok(image),
            View::Flipped => {
                let [n, h, w, c] = image.dims4()?;
                let src = image.data();
                let mut out = Vec::with_capacity(src.len());
                for row in src.chunks_exact(w * c) {
                    for x in (0..w).rev() {
                        out.extend_from_slice(&row[x * c..(x + 1) * c]);
                    }
                }
                Tensor::new(vec![n, h, w, c], out)
            }
            View::Brightness(f) => image.map("brightness", |v| ((v + 1.0) * f - 1.0).clamp(-1.0, 1.0)),
        }
    }
}

fn views(entry: &ImageEntry, augmentation: Augmentation, seed: u64) -> Vec<View> {
    if entry.split != Split::Train {
        return vec![View::Original];
    }
    match augmentation {
        Augmentation::None => vec![View::Original],
        Augmentation::Flip => vec![View::Original, View::Flipped],
        Augmentation::FlipBrightness => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ name_hash(&entry.path));
            let factor = rng.random_range(0.8..1.2);
            vec![View::Original, View::Flipped, View::Brightness(factor)]
        }
    }
}

/// Bottleneck rows for one split, in index order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FeatureSet {
    pub width: usize,
    pub data: Vec<f64>,
    pub labels: Vec<usize>,
    pub sources: Vec<PathBuf>,
}

impl FeatureSet {
    fn new(width: usize) -> Self {
        FeatureSet {
            width,
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.width..(i + 1) * self.width]
    }

    /// Builds a set from an `[n, d]` feature tensor.
    pub fn from_tensor(features: &Tensor, labels: Vec<usize>) -> Result<Self> {
        let [n, d] = features.dims2()?;
        if labels.len() != n {
            return Err(Error::shape(format!("{n} feature rows but {} labels", labels.len())));
        }
        Ok(FeatureSet {
            width: d,
            data: features.data().to_vec(),
            labels,
            sources: Vec::new(),
        })
    }

    /// `[n, d]` tensor of all rows. Errors when empty.
    pub fn tensor(&self) -> Result<Tensor> {
        if self.is_empty() {
            return Err(Error::Dataset("feature set is empty".into()));
        }
        Tensor::new(vec![self.len(), self.width], self.data.clone())
    }

    fn push(&mut self, row: &[f64], label: usize, source: &Path) {
        self.data.extend_from_slice(row);
        self.labels.push(label);
        self.sources.push(source.to_path_buf());
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct CacheStats {
    pub hits: usize,
    pub evaluations: usize,
    /// Entries present on disk whose stored key or layout did not match.
    pub rejected: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SkippedImage {
    pub path: PathBuf,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Bottlenecks {
    pub train: FeatureSet,
    pub validation: FeatureSet,
    pub test: FeatureSet,
    pub stats: CacheStats,
    pub skipped: Vec<SkippedImage>,
}

impl Bottlenecks {
    pub fn split(&self, split: Split) -> &FeatureSet {
        match split {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FeatureOptions {
    pub augmentation: Augmentation,
    pub seed: u64,
}

/// Cache key for one image view under one extractor.
pub fn cache_key(content: &[u8], graph_fingerprint: &[u8; 32], target: (usize, usize), view_tag: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(KEY_DOMAIN);
    h.update(Sha256::digest(content));
    h.update(graph_fingerprint);
    h.update((target.0 as u64).to_le_bytes());
    h.update((target.1 as u64).to_le_bytes());
    h.update((view_tag.len() as u64).to_le_bytes());
    h.update(view_tag.as_bytes());
    h.finalize().into()
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn cache_file(cache_dir: &Path, key: &[u8; 32]) -> PathBuf {
    cache_dir.join(format!("{}.bin", hex(key)))
}

fn encode_entry(key: &[u8; 32], row: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 32 + 4 + row.len() * 8);
    out.extend_from_slice(&CACHE_MAGIC);
    out.extend_from_slice(key);
    out.extend_from_slice(&(row.len() as u32).to_le_bytes());
    for v in row {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn decode_entry(bytes: &[u8], key: &[u8; 32], width: usize) -> Option<Vec<f64>> {
    let rest = bytes.strip_prefix(&CACHE_MAGIC)?.strip_prefix(key)?;
    let (len, values) = rest.split_at_checked(4)?;
    if u32::from_le_bytes(len.try_into().ok()?) as usize != width || values.len() != width * 8 {
        return None;
    }
    let row: Vec<f64> = values
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    row.iter().all(|v| v.is_finite()).then_some(row)
}

enum Lookup {
    Hit(Vec<f64>),
    Miss,
    Rejected,
}

fn lookup(path: &Path, key: &[u8; 32], width: usize) -> Lookup {
    match std::fs::read(path) {
        Ok(bytes) => decode_entry(&bytes, key, width).map_or(Lookup::Rejected, Lookup::Hit),
        Err(_) => Lookup::Miss,
    }
}

/// Writes via a temporary file and rename so concurrent readers never see a
/// partial entry.
fn store(path: &Path, bytes: &[u8]) -> Result<()> {
    static NEXT: AtomicUsize = AtomicUsize::new(0);
    let n = NEXT.fetch_add(1, Ordering::Relaxed);
    let tmp = path.with_extension(format!("tmp{}-{n}", std::process::id()));
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

struct Outcome {
    rows: Vec<Vec<f64>>,
    error: Option<String>,
}

/// Bottleneck features for every indexed image, split by bucket.
///
/// Images are processed in parallel and merged back in index order.
/// Undecodable images are skipped and reported. With a `cache_dir`, each
/// view's features are stored in one file named after its key; entries whose
/// stored key does not match are recomputed.
pub fn compute_bottlenecks(
    graph: &CompGraph,
    index: &DatasetIndex,
    cache_dir: Option<&Path>,
    options: FeatureOptions,
) -> Result<Bottlenecks> {
    if let Some(dir) = cache_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let (h, w, _) = graph.input_shape();
    let width = graph.bottleneck_width();
    let fingerprint = graph.feature_fingerprint();
    let hits = AtomicUsize::new(0);
    let evaluations = AtomicUsize::new(0);
    let rejected = AtomicUsize::new(0);

    let outcomes: Vec<Result<Outcome>> = index
        .entries
        .par_iter()
        .map(|entry| {
            let content = std::fs::read(&entry.path).map_err(|e| Error::io(&entry.path, e))?;
            let mut decoded: Option<Tensor> = None;
            let mut rows = Vec::new();
            for view in views(entry, options.augmentation, options.seed) {
                let key = cache_key(&content, &fingerprint, (h, w), &view.tag());
                let file = cache_dir.map(|d| cache_file(d, &key));
                if let Some(file) = &file {
                    match lookup(file, &key, width) {
                        Lookup::Hit(row) => {
                            hits.fetch_add(1, Ordering::Relaxed);
                            rows.push(row);
                            continue;
                        }
                        Lookup::Rejected => {
                            log::warn!("discarding stale cache entry {}", file.display());
                            rejected.fetch_add(1, Ordering::Relaxed);
                        }
                        Lookup::Miss => {}
                    }
                }
                let image = match &decoded {
                    Some(t) => t.clone(),
                    None => match prepare_image(&content, h, w, &entry.path) {
                        Ok(t) => {
                            decoded = Some(t.clone());
                            t
                        }
                        Err(e @ Error::Decode { .. }) => {
                            return Ok(Outcome {
                                rows: Vec::new(),
                                error: Some(e.to_string()),
                            })
                        }
                        Err(e) => return Err(e),
                    },
                };
                let features = graph.bottleneck(&view.apply(image)?)?;
                evaluations.fetch_add(1, Ordering::Relaxed);
                if let Some(file) = &file {
                    store(file, &encode_entry(&key, features.data()))?;
                }
                rows.push(features.into_data());
            }
            Ok(Outcome { rows, error: None })
        })
        .collect();

    let mut out = Bottlenecks {
        train: FeatureSet::new(width),
        validation: FeatureSet::new(width),
        test: FeatureSet::new(width),
        stats: CacheStats::default(),
        skipped: Vec::new(),
    };
    for (entry, outcome) in index.entries.iter().zip(outcomes) {
        let outcome = outcome?;
        if let Some(reason) = outcome.error {
            log::warn!("skipping {}: {reason}", entry.path.display());
            out.skipped.push(SkippedImage {
                path: entry.path.clone(),
                reason,
            });
            continue;
        }
        let set = match entry.split {
            Split::Train => &mut out.train,
            Split::Validation => &mut out.validation,
            Split::Test => &mut out.test,
        };
        for row in &outcome.rows {
            set.push(row, entry.class, &entry.path);
        }
    }
    out.stats = CacheStats {
        hits: hits.into_inner(),
        evaluations: evaluations.into_inner(),
        rejected: rejected.into_inner(),
    };
    Ok(out)
}
