use super::{rebuild_with, Rewriter};
use crate::error::Result;
use crate::graph::eval::apply;
use crate::graph::{CompGraph, Node, NodeId, Op, Param};
use crate::tensor::Tensor;

/// Merges every `conv -> batch_norm` pair into a single biased conv.
///
/// With `s = gamma / sqrt(var + eps)` per output channel the folded kernel is
/// `k * s` and the bias `beta + (b - mean) * s`, where `b` is the conv's prior
/// bias (zero if absent). Folded values are rounded to `f32`. Batch norms whose
/// conv feeds other nodes too, or that follow anything but a conv, are kept.
pub fn fold_batch_norm(graph: &CompGraph) -> Result<CompGraph> {
    let mut consumers = vec![0usize; graph.nodes().len()];
    for n in graph.nodes() {
        for p in &n.inputs {
            consumers[p.0] += 1;
        }
    }
    let mut rw = Rewriter::new(graph);
    for (i, node) in graph.nodes().iter().enumerate() {
        if let Op::BatchNorm {
            mean,
            variance,
            gamma,
            beta,
            epsilon,
        } = &node.op
        {
            let src = node.inputs[0];
            let foldable = consumers[src.0] == 1
                && matches!(rw.new_node(src).map(|n| &n.op), Some(Op::Conv2d { .. }));
            if foldable {
                let conv_id = rw.mapped(src).expect("conv emitted");
                let conv = rw.node_mut(conv_id);
                let Op::Conv2d { kernel, bias, .. } = &mut conv.op else {
                    unreachable!("checked above")
                };
                let scale: Vec<f64> = gamma
                    .value()
                    .data()
                    .iter()
                    .zip(variance.value().data())
                    .map(|(g, v)| g / (v + epsilon).sqrt())
                    .collect();
                let cout = scale.len();
                let k = kernel.value();
                let folded_k: Vec<f64> = k
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(idx, &w)| w * scale[idx % cout])
                    .collect();
                let prior = bias
                    .as_ref()
                    .map(|b| b.value().data().to_vec())
                    .unwrap_or_else(|| vec![0.0; cout]);
                let folded_b: Vec<f64> = (0..cout)
                    .map(|c| beta.value().data()[c] + (prior[c] - mean.value().data()[c]) * scale[c])
                    .collect();
                *kernel = Param::float(Tensor::new(k.shape().to_vec(), folded_k)?.round_to_f32());
                *bias = Some(Param::float(Tensor::new(vec![cout], folded_b)?.round_to_f32()));
                rw.alias(NodeId(i), conv_id);
                continue;
            }
        }
        rw.emit(NodeId(i), node.clone())?;
    }
    rw.finish()
}

/// Replaces every node whose inputs are all constants by its precomputed value.
pub fn fold_constants(graph: &CompGraph) -> Result<CompGraph> {
    let mut rw = Rewriter::new(graph);
    for (i, node) in graph.nodes().iter().enumerate() {
        let const_inputs: Option<Vec<&Tensor>> = if node.inputs.is_empty() {
            None
        } else {
            node.inputs
                .iter()
                .map(|p| match rw.new_node(*p).map(|n| &n.op) {
                    Some(Op::Constant { value }) => Some(value.value()),
                    _ => None,
                })
                .collect()
        };
        let replacement = match const_inputs {
            Some(args) => {
                let value = apply(&node.op, &args, None)?;
                Node {
                    name: node.name.clone(),
                    op: Op::Constant {
                        value: Param::float(value),
                    },
                    inputs: Vec::new(),
                }
            }
            None => node.clone(),
        };
        rw.emit(NodeId(i), replacement)?;
    }
    rw.finish()
}

/// Drops nodes the output does not depend on.
pub fn eliminate_dead_nodes(graph: &CompGraph) -> Result<CompGraph> {
    let live = graph.ancestors(graph.output_id());
    let mut index = 0;
    rebuild_with(graph, |node| {
        let keep = live[index];
        index += 1;
        Ok(keep.then_some(node))
    })
}
