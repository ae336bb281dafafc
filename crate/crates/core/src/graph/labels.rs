use std::collections::HashSet;
use std::path::Path;

use crate::error::{Error, Result};

/// Class names; position is the class index.
///
/// Non-empty, unique, non-blank, free of line breaks, sorted ascending by
/// byte value.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LabelList(Vec<String>);

impl LabelList {
    pub fn new(labels: Vec<String>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Labels("label list is empty".into()));
        }
        let mut seen = HashSet::new();
        for (i, l) in labels.iter().enumerate() {
            if l.trim().is_empty() {
                return Err(Error::Labels(format!("label {i} is blank")));
            }
            if l.contains(['\n', '\r']) {
                return Err(Error::Labels(format!("label {i} contains a line break")));
            }
            if !seen.insert(l.as_str()) {
                return Err(Error::Labels(format!("duplicate label '{l}'")));
            }
        }
        if let Some(w) = labels.windows(2).find(|w| w[0].as_bytes() > w[1].as_bytes()) {
            return Err(Error::Labels(format!(
                "labels must be sorted: '{}' precedes '{}'",
                w[0], w[1]
            )));
        }
        Ok(LabelList(labels))
    }

    /// Sorts then validates.
    pub fn sorted<I, S>(labels: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut v: Vec<String> = labels.into_iter().map(Into::into).collect();
        v.sort();
        LabelList::new(v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<&str> {
        self.0.get(index).map(String::as_str)
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.0.binary_search_by(|l| l.as_bytes().cmp(label.as_bytes())).ok()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }

    pub fn as_slice(&self) -> &[String] {
        &self.0
    }

    /// One label per line, each terminated by `\n`.
    pub fn to_text(&self) -> String {
        self.0.iter().flat_map(|l| [l.as_str(), "\n"]).collect()
    }

    pub fn parse(text: &str) -> Result<Self> {
        if text.is_empty() {
            return Err(Error::Labels("label file is empty".into()));
        }
        let body = text
            .strip_suffix('\n')
            .ok_or_else(|| Error::Labels("label file must end with a newline".into()))?;
        let lines: Vec<String> = body.split('\n').map(str::to_string).collect();
        if let Some(i) = lines.iter().position(|l| l.ends_with('\r')) {
            return Err(Error::Labels(format!(
                "line {} has a CR line ending; use LF only",
                i + 1
            )));
        }
        LabelList::new(lines)
    }
}

pub fn emit_labels(labels: &LabelList, path: &Path) -> Result<()> {
    std::fs::write(path, labels.to_text()).map_err(|e| Error::io(path, e))
}

pub fn load_labels(path: &Path) -> Result<LabelList> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let text = String::from_utf8(bytes)
        .map_err(|_| Error::Labels(format!("{} is not valid UTF-8", path.display())))?;
    LabelList::parse(&text)
}
