use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::LabelList;

/// File extensions accepted as training images (case-insensitive).
pub const IMAGE_EXTENSIONS: [&str; 3] = ["jpg", "jpeg", "png"];

const SPLIT_BUCKETS: u64 = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub validation: f64,
    pub test: f64,
}

impl SplitFractions {
    pub fn new(validation: f64, test: f64) -> Result<Self> {
        for (name, v) in [("validation", validation), ("test", test)] {
            if !(0.0..0.5).contains(&v) {
                return Err(Error::Config(format!(
                    "{name} fraction must lie in [0, 0.5), got {v}"
                )));
            }
        }
        Ok(SplitFractions { validation, test })
    }
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions {
            validation: 0.10,
            test: 0.10,
        }
    }
}

/// Stable 64-bit hash of a file's base name.
pub fn name_hash(path: &Path) -> u64 {
    let name = path.file_name().map_or_else(
        || path.as_os_str().as_encoded_bytes().to_vec(),
        |n| n.as_encoded_bytes().to_vec(),
    );
    let digest = Sha256::digest(&name);
    u64::from_be_bytes(digest[..8].try_into().unwrap())
}

/// Bucket for a file: depends only on its base name and the fractions.
pub fn assign_split(path: &Path, fractions: SplitFractions) -> Split {
    let bucket = (name_hash(path) % SPLIT_BUCKETS) as f64;
    let buckets = SPLIT_BUCKETS as f64;
    if bucket < fractions.validation * buckets {
        Split::Validation
    } else if bucket < (fractions.validation + fractions.test) * buckets {
        Split::Test
    } else {
        Split::Train
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ImageEntry {
    pub path: PathBuf,
    pub class: usize,
    pub split: Split,
}

/// Scan of a `root/<class>/<image>` tree.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetIndex {
    pub root: PathBuf,
    pub classes: LabelList,
    /// Sorted by class, then file name.
    pub entries: Vec<ImageEntry>,
}

impl DatasetIndex {
    pub fn files_of(&self, class: usize) -> impl Iterator<Item = &ImageEntry> {
        self.entries.iter().filter(move |e| e.class == class)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ImageEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.split(split).count()
    }
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.iter().any(|x| e.eq_ignore_ascii_case(x)))
}

fn read_dir_sorted(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name();
        if name.as_encoded_bytes().first() == Some(&b'.') {
            continue;
        }
        out.push(entry.path());
    }
    out.sort();
    Ok(out)
}

/// Indexes a directory-per-class image tree.
///
/// Each visible immediate subdirectory is a class; classes are sorted by
/// name. Files with an image extension are listed per class in name order;
/// everything else is ignored.
pub fn index_dataset(root: &Path, fractions: SplitFractions) -> Result<DatasetIndex> {
    if !root.is_dir() {
        return Err(Error::Dataset(format!(
            "{} is not a directory",
            root.display()
        )));
    }
    let mut classes = Vec::new();
    for dir in read_dir_sorted(root)?.into_iter().filter(|p| p.is_dir()) {
        let name = dir
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| Error::Dataset(format!("class folder {} is not UTF-8", dir.display())))?
            .to_string();
        let files: Vec<PathBuf> = read_dir_sorted(&dir)?
            .into_iter()
            .filter(|p| p.is_file() && is_image(p))
            .collect();
        classes.push((name, files));
    }
    if classes.len() < 2 {
        return Err(Error::Dataset(format!(
            "{} holds {} class folder(s); at least 2 are required",
            root.display(),
            classes.len()
        )));
    }
    classes.sort_by(|a, b| a.0.as_bytes().cmp(b.0.as_bytes()));
    if let Some((name, _)) = classes.iter().find(|(_, f)| f.is_empty()) {
        return Err(Error::Dataset(format!("class '{name}' contains no images")));
    }
    let labels = LabelList::new(classes.iter().map(|(n, _)| n.clone()).collect())?;
    let entries = classes
        .into_iter()
        .enumerate()
        .flat_map(|(class, (_, files))| {
            files.into_iter().map(move |path| {
                let split = assign_split(&path, fractions);
                ImageEntry { path, class, split }
            })
        })
        .collect();
    Ok(DatasetIndex {
        root: root.to_path_buf(),
        classes: labels,
        entries,
    })
}
