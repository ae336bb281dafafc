use super::{CompGraph, NodeId, Op};
use crate::error::{Error, Result};
use crate::tensor::{self, BatchNormParams, ConvSpec, Tensor};

impl CompGraph {
    /// Softmax probabilities `[batch, classes]` for an NHWC input batch.
    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        self.evaluate(input, self.output)
    }

    /// Penultimate feature vectors `[batch, width]`.
    pub fn bottleneck(&self, input: &Tensor) -> Result<Tensor> {
        self.evaluate(input, self.bottleneck)
    }

    /// Evaluates the graph up to `target`, computing only the nodes it
    /// depends on and releasing intermediates after their last use.
    pub fn evaluate(&self, input: &Tensor, target: NodeId) -> Result<Tensor> {
        let (h, w, c) = self.input_shape();
        let [batch, ih, iw, ic] = input.dims4().map_err(|e| self.node_error(self.input, e))?;
        if (ih, iw, ic) != (h, w, c) {
            return Err(self.node_error(
                self.input,
                Error::shape(format!(
                    "expected [batch, {h}, {w}, {c}], got [{batch}, {ih}, {iw}, {ic}]"
                )),
            ));
        }
        if target.0 >= self.nodes.len() {
            return Err(Error::Graph(format!("node {target} does not exist")));
        }

        let live = self.ancestors(target);
        let mut remaining = vec![0usize; self.nodes.len()];
        for (i, node) in self.nodes.iter().enumerate().take(target.0 + 1) {
            if live[i] {
                for p in &node.inputs {
                    remaining[p.0] += 1;
                }
            }
        }

        let mut values: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        for i in 0..=target.0 {
            if !live[i] {
                continue;
            }
            let node = &self.nodes[i];
            let args: Vec<&Tensor> = node
                .inputs
                .iter()
                .map(|p| values[p.0].as_ref().expect("inputs evaluated first"))
                .collect();
            let out = apply(&node.op, &args, Some(input)).map_err(|e| self.node_error(NodeId(i), e))?;
            for p in &node.inputs {
                remaining[p.0] -= 1;
                if remaining[p.0] == 0 && p.0 != target.0 {
                    values[p.0] = None;
                }
            }
            values[i] = Some(out);
        }
        let out = values[target.0].take().expect("target evaluated");
        // Batch-1 constants broadcast lazily; make the result match the batch.
        if out.shape()[0] != batch {
            return broadcast_batch(&out, batch);
        }
        Ok(out)
    }

    fn node_error(&self, id: NodeId, e: Error) -> Error {
        Error::Node {
            node: self.nodes[id.0].name.clone(),
            source: Box::new(e),
        }
    }
}

fn broadcast_batch(t: &Tensor, batch: usize) -> Result<Tensor> {
    if t.shape()[0] == batch {
        return Ok(t.clone());
    }
    if t.shape()[0] != 1 {
        return Err(Error::shape(format!(
            "cannot broadcast batch {} to {batch}",
            t.shape()[0]
        )));
    }
    Tensor::stack_batch(&vec![t.clone(); batch])
}

/// Applies a single op. Constant operands have batch 1 and are broadcast
/// where they meet batched activations.
pub(crate) fn apply(op: &Op, args: &[&Tensor], graph_input: Option<&Tensor>) -> Result<Tensor> {
    match op {
        Op::Input { .. } => graph_input
            .cloned()
            .ok_or_else(|| Error::Graph("input value unavailable".into())),
        Op::Constant { value } => Ok(value.value().clone()),
        Op::Conv2d {
            kernel,
            bias,
            stride,
            padding,
        } => tensor::conv2d(
            args[0],
            &ConvSpec {
                kernel: kernel.value(),
                bias: bias.as_ref().map(|b| b.value()),
                stride: *stride,
                padding: *padding,
            },
        ),
        Op::BatchNorm {
            mean,
            variance,
            gamma,
            beta,
            epsilon,
        } => tensor::batch_norm(
            args[0],
            &BatchNormParams {
                mean: mean.value(),
                variance: variance.value(),
                gamma: gamma.value(),
                beta: beta.value(),
                epsilon: *epsilon,
            },
        ),
        Op::Relu => tensor::relu(args[0]),
        Op::Pool {
            mode,
            window,
            stride,
            padding,
        } => tensor::pool(args[0], *mode, *window, *stride, *padding),
        Op::GlobalAvgPool => tensor::global_avg_pool(args[0]),
        Op::Concat => {
            let batch = args.iter().map(|t| t.shape()[0]).max().unwrap_or(1);
            if args.iter().all(|t| t.shape()[0] == batch) {
                tensor::concat_channels(args)
            } else {
                let owned = args
                    .iter()
                    .map(|t| broadcast_batch(t, batch))
                    .collect::<Result<Vec<_>>>()?;
                tensor::concat_channels(&owned.iter().collect::<Vec<_>>())
            }
        }
        Op::Add => {
            let batch = args[0].shape()[0].max(args[1].shape()[0]);
            let a = broadcast_batch(args[0], batch)?;
            let b = broadcast_batch(args[1], batch)?;
            tensor::add(&a, &b)
        }
        Op::FullyConnected { weights, bias } => {
            let x = args[0];
            let flat = if x.rank() == 2 {
                x.clone()
            } else {
                x.reshape(vec![x.shape()[0], x.len() / x.shape()[0]])?
            };
            tensor::fully_connected(&flat, weights.value(), bias.value())
        }
        Op::Softmax => tensor::softmax(args[0]),
    }
}
