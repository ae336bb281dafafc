//! Top-k species recognition with catalog descriptions.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{CompGraph, LabelList};
use crate::preprocess::prepare_image;
use crate::tensor::Tensor;

/// Longest accepted description, in characters.
pub const MAX_DESCRIPTION_CHARS: usize = 2000;

/// Shown for labels that have no catalog entry.
pub const FALLBACK_DESCRIPTION: &str = "No description is available for this species yet.";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeciesInfo {
    pub display_name: String,
    pub description: String,
}

/// Editable mapping from class label to display name and description.
///
/// Lookups are total: a label without an entry gets its own name as display
/// name and [`FALLBACK_DESCRIPTION`].
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SpeciesCatalog {
    entries: BTreeMap<String, SpeciesInfo>,
}

impl SpeciesCatalog {
    pub fn new(entries: BTreeMap<String, SpeciesInfo>) -> Result<Self> {
        for (label, info) in &entries {
            if info.display_name.trim().is_empty() {
                return Err(Error::Catalog(format!("'{label}' has an empty display name")));
            }
            let chars = info.description.chars().count();
            if chars > MAX_DESCRIPTION_CHARS {
                return Err(Error::Catalog(format!(
                    "description for '{label}' is {chars} characters; the limit is {MAX_DESCRIPTION_CHARS}"
                )));
            }
        }
        Ok(SpeciesCatalog { entries })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let entries: BTreeMap<String, SpeciesInfo> =
            serde_json::from_str(text).map_err(|e| Error::Catalog(e.to_string()))?;
        Self::new(entries)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Catalog(m) => Error::Catalog(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("catalog serializes")
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, label: &str) -> Option<&SpeciesInfo> {
        self.entries.get(label)
    }

    pub fn lookup(&self, label: &str) -> SpeciesInfo {
        self.get(label).cloned().unwrap_or_else(|| SpeciesInfo {
            display_name: label.to_string(),
            description: FALLBACK_DESCRIPTION.to_string(),
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &SpeciesInfo)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedSpecies {
    pub label: String,
    pub display_name: String,
    pub probability: f64,
    pub description: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub name: String,
    pub version: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub predictions: Vec<RankedSpecies>,
    pub model: ModelInfo,
}

/// One entry of the species listing: every catalog entry plus every model
/// label, whether or not the other side knows it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeciesListing {
    pub label: String,
    pub display_name: String,
    pub description: String,
    /// True when the loaded model can predict this label.
    pub recognized: bool,
}

/// Indices of the `k` largest probabilities, descending, ties broken by
/// ascending label.
pub fn top_k(probabilities: &[f64], labels: &LabelList, k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..probabilities.len()).collect();
    order.sort_by(|&a, &b| {
        probabilities[b]
            .total_cmp(&probabilities[a])
            .then_with(|| labels.as_slice()[a].as_bytes().cmp(labels.as_slice()[b].as_bytes()))
    });
    order.truncate(k);
    order
}

/// An immutable model plus catalog, safe to share across threads.
#[derive(Clone, Debug)]
pub struct Recognizer {
    graph: CompGraph,
    labels: LabelList,
    catalog: SpeciesCatalog,
}

impl Recognizer {
    pub fn new(graph: CompGraph, labels: LabelList, catalog: SpeciesCatalog) -> Result<Self> {
        if labels.len() != graph.num_classes() {
            return Err(Error::Config(format!(
                "model predicts {} classes but {} labels were supplied",
                graph.num_classes(),
                labels.len()
            )));
        }
        Ok(Recognizer { graph, labels, catalog })
    }

    pub fn load(model: &Path, catalog: Option<&Path>) -> Result<Self> {
        let (graph, labels) = crate::graph::load_bundle(model)?;
        let catalog = match catalog {
            Some(path) => SpeciesCatalog::load(path)?,
            None => SpeciesCatalog::default(),
        };
        Self::new(graph, labels, catalog)
    }

    pub fn graph(&self) -> &CompGraph {
        &self.graph
    }

    pub fn labels(&self) -> &LabelList {
        &self.labels
    }

    pub fn catalog(&self) -> &SpeciesCatalog {
        &self.catalog
    }

    pub fn model_info(&self) -> ModelInfo {
        ModelInfo {
            name: self.graph.name().to_string(),
            version: self.graph.version().to_string(),
        }
    }

    /// Decodes and preprocesses image bytes into the model's input tensor.
    pub fn prepare(&self, image: &[u8]) -> Result<Tensor> {
        let (h, w, _) = self.graph.input_shape();
        prepare_image(image, h, w, Path::new("<upload>"))
    }

    /// Full softmax row for one image.
    pub fn probabilities(&self, image: &[u8]) -> Result<Vec<f64>> {
        Ok(self.graph.forward(&self.prepare(image)?)?.into_data())
    }

    pub fn rank(&self, probabilities: &[f64], k: usize) -> Result<Prediction> {
        if k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        let predictions = top_k(probabilities, &self.labels, k)
            .into_iter()
            .map(|i| {
                let label = self.labels.as_slice()[i].clone();
                let info = self.catalog.lookup(&label);
                RankedSpecies {
                    label,
                    display_name: info.display_name,
                    probability: probabilities[i],
                    description: info.description,
                }
            })
            .collect();
        Ok(Prediction {
            predictions,
            model: self.model_info(),
        })
    }

    /// Top-`k` species for an encoded image. `k` larger than the class count
    /// returns every class.
    pub fn classify(&self, image: &[u8], k: usize) -> Result<Prediction> {
        if k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        self.rank(&self.probabilities(image)?, k)
    }

    pub fn species(&self) -> Vec<SpeciesListing> {
        let mut labels: Vec<&str> = self.labels.iter().collect();
        labels.extend(self.catalog.iter().map(|(l, _)| l));
        labels.sort_unstable_by(|a, b| a.as_bytes().cmp(b.as_bytes()));
        labels.dedup();
        labels
            .into_iter()
            .map(|label| {
                let info = self.catalog.lookup(label);
                SpeciesListing {
                    label: label.to_string(),
                    display_name: info.display_name,
                    description: info.description,
                    recognized: self.labels.index_of(label).is_some(),
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ties_break_alphabetically() {
        let labels = LabelList::sorted(["b", "a", "c"]).unwrap();
        assert_eq!(top_k(&[0.25, 0.5, 0.25], &labels, 3), vec![1, 0, 2]);
        assert_eq!(top_k(&[1.0 / 3.0; 3], &labels, 2), vec![0, 1]);
        assert_eq!(top_k(&[0.2, 0.3, 0.5], &labels, 10), vec![2, 1, 0]);
    }

    #[test]
    fn catalog_limits_and_fallback() {
        let long = "x".repeat(MAX_DESCRIPTION_CHARS + 1);
        let text = format!(r#"{{"pine": {{"display_name": "Pine", "description": "{long}"}}}}"#);
        assert!(matches!(SpeciesCatalog::parse(&text), Err(Error::Catalog(_))));
        let ok = format!(r#"{{"pine": {{"display_name": "Pine", "description": "{}"}}}}"#, &long[1..]);
        let catalog = SpeciesCatalog::parse(&ok).unwrap();
        assert_eq!(catalog.lookup("pine").display_name, "Pine");
        let missing = catalog.lookup("oak");
        assert_eq!(missing.display_name, "oak");
        assert_eq!(missing.description, FALLBACK_DESCRIPTION);
        assert!(SpeciesCatalog::parse(r#"{"pine": {"display_name": " ", "description": ""}}"#).is_err());
        assert!(SpeciesCatalog::parse("[1, 2]").is_err());
    }

    #[test]
    fn description_limit_counts_characters_not_bytes() {
        let text = "松".repeat(MAX_DESCRIPTION_CHARS);
        let mut entries = BTreeMap::new();
        entries.insert(
            "pine".to_string(),
            SpeciesInfo {
                display_name: "Pine".into(),
                description: text,
            },
        );
        assert!(SpeciesCatalog::new(entries).is_ok());
    }
}
