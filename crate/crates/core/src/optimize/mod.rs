//! Graph compression passes.
//!
//! Every pass is a pure graph-to-graph rewrite producing a fresh, validated
//! [`CompGraph`]. [`optimize`] runs a named pipeline over a [`ModelBundle`]
//! and reports node counts, serialized sizes and the output deviation on a
//! fixed probe batch after each pass.

mod fold;
mod quantize;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

pub use fold::{eliminate_dead_nodes, fold_batch_norm, fold_constants};
pub use quantize::{quantize_param, quantize_tensor, quantize_weights};

use crate::error::{Error, Result};
use crate::graph::{CompGraph, ModelBundle, Node, NodeId};
use crate::tensor::Tensor;

/// Probe inputs used for equivalence measurements.
pub const PROBE_BATCH: usize = 16;
pub const PROBE_SEED: u64 = 0x0070_726f_6265;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pass {
    FoldBatchNorm,
    FoldConstants,
    EliminateDeadNodes,
    QuantizeWeights,
}

pub const DEFAULT_PASSES: [Pass; 4] = [
    Pass::FoldBatchNorm,
    Pass::FoldConstants,
    Pass::EliminateDeadNodes,
    Pass::QuantizeWeights,
];

impl Pass {
    pub const ALL: [Pass; 4] = DEFAULT_PASSES;

    pub fn name(self) -> &'static str {
        match self {
            Pass::FoldBatchNorm => "fold_batch_norm",
            Pass::FoldConstants => "fold_constants",
            Pass::EliminateDeadNodes => "eliminate_dead_nodes",
            Pass::QuantizeWeights => "quantize_weights",
        }
    }

    pub fn apply(self, graph: &CompGraph) -> Result<CompGraph> {
        match self {
            Pass::FoldBatchNorm => fold_batch_norm(graph),
            Pass::FoldConstants => fold_constants(graph),
            Pass::EliminateDeadNodes => eliminate_dead_nodes(graph),
            Pass::QuantizeWeights => quantize_weights(graph, 8),
        }
    }

    /// Parses a comma-separated pass list; blank entries are ignored.
    pub fn parse_list(list: &str) -> Result<Vec<Pass>> {
        list.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::parse)
            .collect()
    }
}

impl fmt::Display for Pass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Pass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Pass::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::UnknownPass {
                name: s.to_string(),
                valid: Pass::ALL.map(Pass::name).join(", "),
            })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PassReport {
    pub pass: String,
    pub nodes_before: usize,
    pub nodes_after: usize,
    pub bytes_before: usize,
    pub bytes_after: usize,
    pub weight_bytes_before: usize,
    pub weight_bytes_after: usize,
    /// Max absolute difference of the softmax outputs on the probe batch,
    /// relative to the graph before this pass.
    pub max_output_deviation: f64,
}

/// The fixed, seeded probe batch for a graph's input shape; values in `[-1, 1]`.
pub fn probe_batch(graph: &CompGraph, count: usize, seed: u64) -> Tensor {
    let (h, w, c) = graph.input_shape();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..count * h * w * c)
        .map(|_| rng.random_range(-1.0..=1.0))
        .collect();
    Tensor::new(vec![count, h, w, c], data).expect("finite probe values")
}

/// Applies `passes` in order.
pub fn optimize(bundle: &ModelBundle, passes: &[Pass]) -> Result<(ModelBundle, Vec<PassReport>)> {
    let probe = probe_batch(&bundle.graph, PROBE_BATCH, PROBE_SEED);
    let mut graph = bundle.graph.clone();
    let mut bytes = bundle.to_bytes().len();
    let mut outputs = if passes.is_empty() {
        None
    } else {
        Some(graph.forward(&probe)?)
    };
    let mut reports = Vec::with_capacity(passes.len());
    for &pass in passes {
        let next = pass.apply(&graph)?;
        let next_bytes = crate::graph::encode_bundle(&next, &bundle.labels).len();
        let next_out = next.forward(&probe)?;
        let prev_out = outputs.as_ref().expect("set when passes are non-empty");
        reports.push(PassReport {
            pass: pass.name().to_string(),
            nodes_before: graph.nodes().len(),
            nodes_after: next.nodes().len(),
            bytes_before: bytes,
            bytes_after: next_bytes,
            weight_bytes_before: graph.weight_payload_bytes(),
            weight_bytes_after: next.weight_payload_bytes(),
            max_output_deviation: prev_out.max_abs_diff(&next_out),
        });
        log::debug!("{} -> {:?}", pass, reports.last());
        graph = next;
        bytes = next_bytes;
        outputs = Some(next_out);
    }
    Ok((ModelBundle::new(graph, bundle.labels.clone())?, reports))
}

/// Builds a new graph node by node. Callers emit nodes with inputs expressed
/// as ids of the source graph; they are remapped on insertion.
pub(crate) struct Rewriter<'g> {
    source: &'g CompGraph,
    nodes: Vec<Node>,
    map: Vec<Option<NodeId>>,
}

impl<'g> Rewriter<'g> {
    pub fn new(source: &'g CompGraph) -> Self {
        Rewriter {
            source,
            nodes: Vec::with_capacity(source.nodes().len()),
            map: vec![None; source.nodes().len()],
        }
    }

    pub fn mapped(&self, old: NodeId) -> Option<NodeId> {
        self.map[old.0]
    }

    /// The rewritten node an old id now refers to.
    pub fn new_node(&self, old: NodeId) -> Option<&Node> {
        self.map[old.0].map(|id| &self.nodes[id.0])
    }

    pub fn emit(&mut self, old: NodeId, mut node: Node) -> Result<NodeId> {
        node.inputs = node
            .inputs
            .iter()
            .map(|p| {
                self.map[p.0].ok_or_else(|| {
                    Error::Graph(format!("node '{}' consumes a removed node", node.name))
                })
            })
            .collect::<Result<_>>()?;
        self.nodes.push(node);
        let id = NodeId(self.nodes.len() - 1);
        self.map[old.0] = Some(id);
        Ok(id)
    }

    pub fn node_mut(&mut self, id: NodeId) -> &mut Node {
        &mut self.nodes[id.0]
    }

    /// Makes `old` resolve to an already emitted node.
    pub fn alias(&mut self, old: NodeId, to: NodeId) {
        self.map[old.0] = Some(to);
    }

    pub fn finish(self) -> Result<CompGraph> {
        let g = self.source;
        let resolve = |id: NodeId, what: &str| {
            self.map[id.0].ok_or_else(|| Error::Graph(format!("rewrite removed the {what} node")))
        };
        let input = resolve(g.input_id(), "input")?;
        let bottleneck = resolve(g.bottleneck_id(), "bottleneck")?;
        let output = resolve(g.output_id(), "output")?;
        CompGraph::new(self.nodes, input, bottleneck, output, g.metadata().clone())
    }
}

/// One-to-one rewrite: `f` maps each node (old input ids) to its replacement,
/// or `None` to drop it.
pub(crate) fn rebuild_with(
    graph: &CompGraph,
    mut f: impl FnMut(Node) -> Result<Option<Node>>,
) -> Result<CompGraph> {
    let mut rw = Rewriter::new(graph);
    for (i, node) in graph.nodes().iter().enumerate() {
        if let Some(n) = f(node.clone())? {
            rw.emit(NodeId(i), n)?;
        }
    }
    rw.finish()
}
