//! Computation graphs over [`Tensor`]s.
//!
//! Nodes are stored in topological order: a node may only consume nodes that
//! precede it, which makes every graph acyclic by construction and fixes a
//! deterministic evaluation order.

mod builder;
mod bundle;
pub(crate) mod eval;
mod labels;
mod param;

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

pub use builder::{build_mini_inception, BranchLayer, GraphBuilder, MINI_INCEPTION_INPUT};
pub use bundle::{
    decode_bundle, encode_bundle, load_bundle, save_bundle, ModelBundle, FORMAT_VERSION, MAGIC,
};
pub use labels::{emit_labels, load_labels, LabelList};
pub use param::{Dtype, Param, QuantDescriptor};

use crate::error::{Error, Result};
use crate::tensor::{output_extent, Padding, PoolMode, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub usize);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    /// Graph input with per-example shape `[height, width, channels]`.
    Input {
        height: usize,
        width: usize,
        channels: usize,
    },
    /// A constant value; its leading dimension is 1 and broadcasts over the batch.
    Constant { value: Param },
    Conv2d {
        kernel: Param,
        bias: Option<Param>,
        stride: (usize, usize),
        padding: Padding,
    },
    BatchNorm {
        mean: Param,
        variance: Param,
        gamma: Param,
        beta: Param,
        epsilon: f64,
    },
    Relu,
    Pool {
        mode: PoolMode,
        window: (usize, usize),
        stride: (usize, usize),
        padding: Padding,
    },
    GlobalAvgPool,
    Concat,
    Add,
    FullyConnected { weights: Param, bias: Param },
    Softmax,
}

impl Op {
    pub fn kind(&self) -> &'static str {
        match self {
            Op::Input { .. } => "input",
            Op::Constant { .. } => "constant",
            Op::Conv2d { .. } => "conv2d",
            Op::BatchNorm { .. } => "batch_norm",
            Op::Relu => "relu",
            Op::Pool { .. } => "pool",
            Op::GlobalAvgPool => "global_avg_pool",
            Op::Concat => "concat",
            Op::Add => "add",
            Op::FullyConnected { .. } => "fully_connected",
            Op::Softmax => "softmax",
        }
    }

    /// Named weight tensors in a fixed order.
    pub fn params(&self) -> Vec<(&'static str, &Param)> {
        match self {
            Op::Constant { value } => vec![("value", value)],
            Op::Conv2d { kernel, bias, .. } => {
                let mut v = vec![("kernel", kernel)];
                if let Some(b) = bias {
                    v.push(("bias", b));
                }
                v
            }
            Op::BatchNorm {
                mean,
                variance,
                gamma,
                beta,
                ..
            } => vec![
                ("mean", mean),
                ("variance", variance),
                ("gamma", gamma),
                ("beta", beta),
            ],
            Op::FullyConnected { weights, bias } => vec![("weights", weights), ("bias", bias)],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        match self {
            Op::Constant { value } => vec![value],
            Op::Conv2d { kernel, bias, .. } => {
                let mut v = vec![kernel];
                if let Some(b) = bias {
                    v.push(b);
                }
                v
            }
            Op::BatchNorm {
                mean,
                variance,
                gamma,
                beta,
                ..
            } => vec![mean, variance, gamma, beta],
            Op::FullyConnected { weights, bias } => vec![weights, bias],
            _ => Vec::new(),
        }
    }

    fn arity_ok(&self, n: usize) -> bool {
        match self {
            Op::Input { .. } | Op::Constant { .. } => n == 0,
            Op::Add => n == 2,
            Op::Concat => n >= 1,
            _ => n == 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Node {
    pub name: String,
    pub op: Op,
    pub inputs: Vec<NodeId>,
}

/// An immutable, validated computation graph.
#[derive(Clone, Debug, PartialEq)]
pub struct CompGraph {
    nodes: Vec<Node>,
    shapes: Vec<Vec<usize>>,
    input: NodeId,
    bottleneck: NodeId,
    output: NodeId,
    metadata: BTreeMap<String, String>,
}

impl CompGraph {
    /// Validates and assembles a graph.
    ///
    /// Checks that edges point backwards, names are unique, there is exactly
    /// one input node, the output is a softmax, every input-to-output path
    /// passes through the bottleneck, and that all shapes are consistent.
    pub fn new(
        nodes: Vec<Node>,
        input: NodeId,
        bottleneck: NodeId,
        output: NodeId,
        metadata: BTreeMap<String, String>,
    ) -> Result<Self> {
        let n = nodes.len();
        for id in [input, bottleneck, output] {
            if id.0 >= n {
                return Err(Error::Graph(format!("node {id} does not exist")));
            }
        }
        let mut names = HashSet::new();
        for (i, node) in nodes.iter().enumerate() {
            if !names.insert(node.name.as_str()) {
                return Err(Error::Graph(format!("duplicate node name '{}'", node.name)));
            }
            if let Some(bad) = node.inputs.iter().find(|p| p.0 >= i) {
                return Err(Error::Graph(format!(
                    "node '{}' consumes {bad}, which does not precede it",
                    node.name
                )));
            }
            if !node.op.arity_ok(node.inputs.len()) {
                return Err(Error::Graph(format!(
                    "node '{}' ({}) has {} inputs",
                    node.name,
                    node.op.kind(),
                    node.inputs.len()
                )));
            }
        }
        let inputs: Vec<usize> = (0..n)
            .filter(|&i| matches!(nodes[i].op, Op::Input { .. }))
            .collect();
        if inputs != [input.0] {
            return Err(Error::Graph(format!(
                "expected exactly one input node at {input}, found {inputs:?}"
            )));
        }
        if !matches!(nodes[output.0].op, Op::Softmax) {
            return Err(Error::Graph(format!(
                "output node '{}' must be a softmax",
                nodes[output.0].name
            )));
        }
        // Every path input -> output must pass through the bottleneck: with the
        // bottleneck removed the output must become unreachable from the input.
        let reach_skipping = |skip: Option<NodeId>| {
            let mut reach = vec![false; n];
            reach[input.0] = true;
            for (i, node) in nodes.iter().enumerate() {
                if Some(NodeId(i)) != skip && node.inputs.iter().any(|p| reach[p.0]) {
                    reach[i] = true;
                }
            }
            reach
        };
        let reach = reach_skipping(None);
        if !reach[bottleneck.0] || !reach[output.0] {
            return Err(Error::Graph(
                "bottleneck and output must be reachable from the input".into(),
            ));
        }
        if bottleneck != output && reach_skipping(Some(bottleneck))[output.0] {
            return Err(Error::Graph(format!(
                "a path from input to output bypasses the bottleneck '{}'",
                nodes[bottleneck.0].name
            )));
        }
        let mut shapes: Vec<Vec<usize>> = Vec::with_capacity(n);
        for node in &nodes {
            let ins: Vec<&[usize]> = node.inputs.iter().map(|p| shapes[p.0].as_slice()).collect();
            let shape = infer_shape(&node.op, &ins).map_err(|e| Error::Node {
                node: node.name.clone(),
                source: Box::new(e),
            })?;
            shapes.push(shape);
        }
        if shapes[output.0].len() != 1 {
            return Err(Error::Graph("output must be a [batch, classes] matrix".into()));
        }
        Ok(CompGraph {
            nodes,
            shapes,
            input,
            bottleneck,
            output,
            metadata,
        })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    /// Per-example output shape of a node (batch dimension omitted).
    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.shapes[id.0]
    }

    pub fn input_id(&self) -> NodeId {
        self.input
    }

    pub fn bottleneck_id(&self) -> NodeId {
        self.bottleneck
    }

    pub fn output_id(&self) -> NodeId {
        self.output
    }

    pub fn metadata(&self) -> &BTreeMap<String, String> {
        &self.metadata
    }

    pub fn with_metadata(mut self, key: &str, value: impl Into<String>) -> Self {
        self.metadata.insert(key.to_string(), value.into());
        self
    }

    pub fn name(&self) -> &str {
        self.metadata.get("name").map_or("unnamed", String::as_str)
    }

    pub fn version(&self) -> &str {
        self.metadata.get("version").map_or("0", String::as_str)
    }

    /// `(height, width, channels)` expected at the input.
    pub fn input_shape(&self) -> (usize, usize, usize) {
        match self.nodes[self.input.0].op {
            Op::Input {
                height,
                width,
                channels,
            } => (height, width, channels),
            _ => unreachable!("validated input node"),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.shapes[self.output.0][0]
    }

    pub fn bottleneck_width(&self) -> usize {
        self.shapes[self.bottleneck.0].iter().product()
    }

    /// The fully connected node feeding the output softmax, if the head has
    /// the canonical `bottleneck -> fully_connected -> softmax` form.
    pub fn head_id(&self) -> Option<NodeId> {
        let fc = *self.nodes[self.output.0].inputs.first()?;
        match &self.nodes[fc.0] {
            Node {
                op: Op::FullyConnected { .. },
                inputs,
                ..
            } if inputs[..] == [self.bottleneck] => Some(fc),
            _ => None,
        }
    }

    /// Replaces the final classifier weights, possibly changing the class count.
    pub fn install_head(&self, weights: &Tensor, bias: &Tensor) -> Result<CompGraph> {
        let fc = self
            .head_id()
            .ok_or_else(|| Error::Graph("graph has no bottleneck -> fully_connected -> softmax head".into()))?;
        let [d, k] = weights.dims2()?;
        if d != self.bottleneck_width() {
            return Err(Error::shape(format!(
                "head expects {d} features but the bottleneck is {} wide",
                self.bottleneck_width()
            )));
        }
        if bias.shape() != [k] {
            return Err(Error::shape(format!(
                "head bias shape {:?} does not match {k} classes",
                bias.shape()
            )));
        }
        let mut nodes = self.nodes.clone();
        nodes[fc.0].op = Op::FullyConnected {
            weights: Param::float(weights.clone()),
            bias: Param::float(bias.clone()),
        };
        let mut metadata = self.metadata.clone();
        metadata.insert("num_classes".into(), k.to_string());
        CompGraph::new(nodes, self.input, self.bottleneck, self.output, metadata)
    }

    /// Total number of weight scalars.
    pub fn parameter_count(&self) -> usize {
        self.nodes
            .iter()
            .flat_map(|n| n.op.params())
            .map(|(_, p)| p.len())
            .sum()
    }

    /// Ids of nodes the given target depends on (including itself).
    pub fn ancestors(&self, target: NodeId) -> Vec<bool> {
        let mut live = vec![false; self.nodes.len()];
        live[target.0] = true;
        for i in (0..=target.0).rev() {
            if live[i] {
                for p in &self.nodes[i].inputs {
                    live[p.0] = true;
                }
            }
        }
        live
    }

    /// Node count per op kind.
    pub fn op_histogram(&self) -> BTreeMap<&'static str, usize> {
        let mut h = BTreeMap::new();
        for n in &self.nodes {
            *h.entry(n.op.kind()).or_insert(0) += 1;
        }
        h
    }

    pub fn into_parts(self) -> (Vec<Node>, NodeId, NodeId, NodeId, BTreeMap<String, String>) {
        (self.nodes, self.input, self.bottleneck, self.output, self.metadata)
    }
}

/// Per-example output shape of `op` given its inputs' per-example shapes.
pub(crate) fn infer_shape(op: &Op, inputs: &[&[usize]]) -> Result<Vec<usize>> {
    let spatial = |s: &[usize]| -> Result<(usize, usize, usize)> {
        match *s {
            [h, w, c] => Ok((h, w, c)),
            _ => Err(Error::shape(format!("expected an [h, w, c] activation, got {s:?}"))),
        }
    };
    match op {
        Op::Input {
            height,
            width,
            channels,
        } => {
            if *height == 0 || *width == 0 || *channels == 0 {
                return Err(Error::shape("input dimensions must be positive"));
            }
            Ok(vec![*height, *width, *channels])
        }
        Op::Constant { value } => {
            let s = value.shape();
            if s.len() < 2 || s[0] != 1 {
                return Err(Error::shape(format!(
                    "constants need a leading batch dimension of 1, got {s:?}"
                )));
            }
            Ok(s[1..].to_vec())
        }
        Op::Conv2d {
            kernel,
            bias,
            stride,
            padding,
        } => {
            let (h, w, c) = spatial(inputs[0])?;
            let [kh, kw, cin, cout] = kernel.value().dims4()?;
            if cin != c {
                return Err(Error::shape(format!(
                    "conv input has {c} channels but kernel expects {cin}"
                )));
            }
            if let Some(b) = bias {
                if b.shape() != [cout] {
                    return Err(Error::shape(format!("conv bias shape {:?}", b.shape())));
                }
            }
            let (oh, _) = output_extent(h, kh, stride.0, *padding)?;
            let (ow, _) = output_extent(w, kw, stride.1, *padding)?;
            Ok(vec![oh, ow, cout])
        }
        Op::BatchNorm {
            mean,
            variance,
            gamma,
            beta,
            epsilon,
        } => {
            let c = crate::tensor::BatchNormParams {
                mean: mean.value(),
                variance: variance.value(),
                gamma: gamma.value(),
                beta: beta.value(),
                epsilon: *epsilon,
            }
            .validate()?;
            let s = inputs[0];
            if s.last() != Some(&c) {
                return Err(Error::shape(format!("batch-norm over {c} channels, input {s:?}")));
            }
            Ok(s.to_vec())
        }
        Op::Relu => Ok(inputs[0].to_vec()),
        Op::Pool {
            window,
            stride,
            padding,
            ..
        } => {
            let (h, w, c) = spatial(inputs[0])?;
            let (oh, _) = output_extent(h, window.0, stride.0, *padding)?;
            let (ow, _) = output_extent(w, window.1, stride.1, *padding)?;
            Ok(vec![oh, ow, c])
        }
        Op::GlobalAvgPool => {
            let (_, _, c) = spatial(inputs[0])?;
            Ok(vec![c])
        }
        Op::Concat => {
            let first = inputs[0];
            let lead = &first[..first.len() - 1];
            let mut total = 0;
            for s in inputs {
                if s.len() != first.len() || &s[..s.len() - 1] != lead {
                    return Err(Error::shape(format!(
                        "concat branches disagree spatially: {first:?} vs {s:?}"
                    )));
                }
                total += s[s.len() - 1];
            }
            let mut out = lead.to_vec();
            out.push(total);
            Ok(out)
        }
        Op::Add => {
            if inputs[0] != inputs[1] {
                return Err(Error::shape(format!(
                    "add operands differ: {:?} vs {:?}",
                    inputs[0], inputs[1]
                )));
            }
            Ok(inputs[0].to_vec())
        }
        Op::FullyConnected { weights, bias } => {
            let [d, k] = weights.value().dims2()?;
            if inputs[0] != [d] {
                return Err(Error::shape(format!(
                    "fully_connected expects [{d}] features, got {:?}",
                    inputs[0]
                )));
            }
            if bias.shape() != [k] {
                return Err(Error::shape(format!("fully_connected bias shape {:?}", bias.shape())));
            }
            Ok(vec![k])
        }
        Op::Softmax => match inputs[0] {
            [k] if *k >= 1 => Ok(vec![*k]),
            s => Err(Error::shape(format!("softmax expects [classes], got {s:?}"))),
        },
    }
}
