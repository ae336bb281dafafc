use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{Context, Result};
use canopy_core::graph::{Dtype, ModelBundle, NodeId};
use serde::Serialize;

#[derive(Debug, Serialize)]
pub struct ParamSummary {
    pub name: &'static str,
    pub shape: Vec<usize>,
    pub dtype: Dtype,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub zero_point: Option<i32>,
}

#[derive(Debug, Serialize)]
pub struct NodeSummary {
    pub id: usize,
    pub name: String,
    pub op: &'static str,
    pub inputs: Vec<String>,
    pub output_shape: Vec<usize>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub params: Vec<ParamSummary>,
}

#[derive(Debug, Serialize)]
pub struct QuantizationSummary {
    /// `int8` when every weight tensor is quantized, `float` when none is,
    /// `mixed` otherwise.
    pub state: &'static str,
    pub tensors_by_dtype: BTreeMap<Dtype, usize>,
}

#[derive(Debug, Serialize)]
pub struct BundleSummary {
    pub file_bytes: usize,
    pub name: String,
    pub version: String,
    pub metadata: BTreeMap<String, String>,
    pub labels: Vec<String>,
    pub input_shape: [usize; 3],
    pub bottleneck: String,
    pub bottleneck_width: usize,
    pub output: String,
    pub node_count: usize,
    pub op_histogram: BTreeMap<&'static str, usize>,
    pub parameter_count: usize,
    pub weight_payload_bytes: usize,
    pub quantization: QuantizationSummary,
    pub nodes: Vec<NodeSummary>,
}

pub fn summarize(bundle: &ModelBundle, file_bytes: usize) -> BundleSummary {
    let g = &bundle.graph;
    let name_of = |id: NodeId| g.node(id).name.clone();
    let mut by_dtype = BTreeMap::new();
    let nodes = g
        .nodes()
        .iter()
        .enumerate()
        .map(|(i, n)| NodeSummary {
            id: i,
            name: n.name.clone(),
            op: n.op.kind(),
            inputs: n.inputs.iter().map(|&id| name_of(id)).collect(),
            output_shape: g.shape(NodeId(i)).to_vec(),
            params: n
                .op
                .params()
                .into_iter()
                .map(|(name, p)| {
                    *by_dtype.entry(p.dtype()).or_insert(0) += 1;
                    let q = p.quant().map(|(d, _)| d);
                    ParamSummary {
                        name,
                        shape: p.shape().to_vec(),
                        dtype: p.dtype(),
                        scale: q.map(|d| d.scale),
                        zero_point: q.map(|d| d.zero_point),
                    }
                })
                .collect(),
        })
        .collect();
    let total: usize = by_dtype.values().sum();
    let int8 = by_dtype.get(&Dtype::I8).copied().unwrap_or(0);
    let state = match int8 {
        0 => "float",
        n if n == total => "int8",
        _ => "mixed",
    };
    let (h, w, c) = g.input_shape();
    BundleSummary {
        file_bytes,
        name: g.name().to_string(),
        version: g.version().to_string(),
        metadata: g.metadata().clone(),
        labels: bundle.labels.as_slice().to_vec(),
        input_shape: [h, w, c],
        bottleneck: name_of(g.bottleneck_id()),
        bottleneck_width: g.bottleneck_width(),
        output: name_of(g.output_id()),
        node_count: g.nodes().len(),
        op_histogram: g.op_histogram(),
        parameter_count: g.parameter_count(),
        weight_payload_bytes: g.weight_payload_bytes(),
        quantization: QuantizationSummary {
            state,
            tensors_by_dtype: by_dtype,
        },
        nodes,
    }
}

pub fn inspect_bundle(path: &Path) -> Result<BundleSummary> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let bundle = ModelBundle::from_bytes(&bytes).with_context(|| format!("decoding {}", path.display()))?;
    Ok(summarize(&bundle, bytes.len()))
}
