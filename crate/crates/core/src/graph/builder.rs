use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{infer_shape, CompGraph, Node, NodeId, Op, Param};
use crate::error::{Error, Result};
use crate::tensor::{Padding, PoolMode, Tensor};

/// Input resolution of the desk-scale inception network.
pub const MINI_INCEPTION_INPUT: (usize, usize, usize) = (64, 64, 3);

const BN_EPSILON: f64 = 1e-3;

/// One step of an inception branch. Branch convolutions are followed by
/// batch norm and ReLU.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BranchLayer {
    Conv {
        kernel: (usize, usize),
        out_channels: usize,
        stride: (usize, usize),
        padding: Padding,
    },
    Pool {
        mode: PoolMode,
        window: (usize, usize),
        stride: (usize, usize),
        padding: Padding,
    },
}

impl BranchLayer {
    /// Stride-1 `same` convolution.
    pub fn conv(kh: usize, kw: usize, out_channels: usize) -> Self {
        BranchLayer::Conv {
            kernel: (kh, kw),
            out_channels,
            stride: (1, 1),
            padding: Padding::Same,
        }
    }

    /// Stride-1 `same` pooling.
    pub fn pool(mode: PoolMode, window: usize) -> Self {
        BranchLayer::Pool {
            mode,
            window: (window, window),
            stride: (1, 1),
            padding: Padding::Same,
        }
    }
}

/// Incremental graph construction with shape checking and seeded He
/// initialization. Weights are rounded to `f32` so bundles store them losslessly.
pub struct GraphBuilder {
    nodes: Vec<Node>,
    shapes: Vec<Vec<usize>>,
    rng: ChaCha8Rng,
}

impl GraphBuilder {
    pub fn new(seed: u64) -> Self {
        GraphBuilder {
            nodes: Vec::new(),
            shapes: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.shapes[id.0]
    }

    /// Appends a node after checking arity and shapes.
    pub fn push(&mut self, name: impl Into<String>, op: Op, inputs: &[NodeId]) -> Result<NodeId> {
        let name = name.into();
        if self.nodes.iter().any(|n| n.name == name) {
            return Err(Error::Graph(format!("duplicate node name '{name}'")));
        }
        if let Some(bad) = inputs.iter().find(|p| p.0 >= self.nodes.len()) {
            return Err(Error::Graph(format!("node '{name}' consumes unknown node {bad}")));
        }
        if !op.arity_ok(inputs.len()) {
            return Err(Error::Graph(format!(
                "node '{name}' ({}) cannot take {} inputs",
                op.kind(),
                inputs.len()
            )));
        }
        let ins: Vec<&[usize]> = inputs.iter().map(|p| self.shapes[p.0].as_slice()).collect();
        let shape = infer_shape(&op, &ins).map_err(|e| Error::Node {
            node: name.clone(),
            source: Box::new(e),
        })?;
        self.nodes.push(Node {
            name,
            op,
            inputs: inputs.to_vec(),
        });
        self.shapes.push(shape);
        Ok(NodeId(self.nodes.len() - 1))
    }

    pub fn input(&mut self, height: usize, width: usize, channels: usize) -> Result<NodeId> {
        self.push(
            "input",
            Op::Input {
                height,
                width,
                channels,
            },
            &[],
        )
    }

    fn normal(&mut self, shape: &[usize], std: f64) -> Tensor {
        let dist = Normal::new(0.0, std).expect("positive std");
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| dist.sample(&mut self.rng) as f32 as f64)
            .collect();
        Tensor::new(shape.to_vec(), data).expect("finite samples")
    }

    fn uniform(&mut self, n: usize, lo: f64, hi: f64) -> Tensor {
        let data = (0..n)
            .map(|_| self.rng.random_range(lo..hi) as f32 as f64)
            .collect();
        Tensor::new(vec![n], data).expect("finite samples")
    }

    fn channels(&self, id: NodeId) -> usize {
        *self.shapes[id.0].last().expect("non-empty shape")
    }

    /// He-initialized convolution without bias.
    pub fn conv(
        &mut self,
        name: impl Into<String>,
        input: NodeId,
        kernel: (usize, usize),
        out_channels: usize,
        stride: (usize, usize),
        padding: Padding,
    ) -> Result<NodeId> {
        let cin = self.channels(input);
        let fan_in = kernel.0 * kernel.1 * cin;
        let k = self.normal(&[kernel.0, kernel.1, cin, out_channels], (2.0 / fan_in as f64).sqrt());
        self.push(
            name,
            Op::Conv2d {
                kernel: Param::float(k),
                bias: None,
                stride,
                padding,
            },
            &[input],
        )
    }

    /// Batch norm with seeded, non-trivial inference statistics.
    pub fn batch_norm(&mut self, name: impl Into<String>, input: NodeId) -> Result<NodeId> {
        let c = self.channels(input);
        let mean = self.uniform(c, -0.1, 0.1);
        let variance = self.uniform(c, 0.5, 1.5);
        let gamma = self.uniform(c, 0.8, 1.2);
        let beta = self.uniform(c, -0.1, 0.1);
        self.push(
            name,
            Op::BatchNorm {
                mean: Param::float(mean),
                variance: Param::float(variance),
                gamma: Param::float(gamma),
                beta: Param::float(beta),
                epsilon: BN_EPSILON,
            },
            &[input],
        )
    }

    pub fn relu(&mut self, name: impl Into<String>, input: NodeId) -> Result<NodeId> {
        self.push(name, Op::Relu, &[input])
    }

    /// `conv -> batch_norm -> relu`; returns the relu node.
    pub fn conv_bn_relu(
        &mut self,
        name: &str,
        input: NodeId,
        kernel: (usize, usize),
        out_channels: usize,
        stride: (usize, usize),
        padding: Padding,
    ) -> Result<NodeId> {
        let c = self.conv(format!("{name}/conv"), input, kernel, out_channels, stride, padding)?;
        let b = self.batch_norm(format!("{name}/bn"), c)?;
        self.relu(format!("{name}/relu"), b)
    }

    pub fn pool(
        &mut self,
        name: impl Into<String>,
        input: NodeId,
        mode: PoolMode,
        window: (usize, usize),
        stride: (usize, usize),
        padding: Padding,
    ) -> Result<NodeId> {
        self.push(
            name,
            Op::Pool {
                mode,
                window,
                stride,
                padding,
            },
            &[input],
        )
    }

    /// Parallel branches merged by channel concatenation.
    ///
    /// Takes 2 to 4 non-empty branches; every branch must end at the same
    /// spatial size. Returns the concat node.
    pub fn inception_module(
        &mut self,
        name: &str,
        input: NodeId,
        branches: &[Vec<BranchLayer>],
    ) -> Result<NodeId> {
        if !(2..=4).contains(&branches.len()) {
            return Err(Error::Graph(format!(
                "inception module '{name}' needs 2 to 4 branches, got {}",
                branches.len()
            )));
        }
        let mut ends = Vec::with_capacity(branches.len());
        for (b, layers) in branches.iter().enumerate() {
            if layers.is_empty() {
                return Err(Error::Graph(format!("inception module '{name}' branch {b} is empty")));
            }
            let mut cur = input;
            for (l, layer) in layers.iter().enumerate() {
                let prefix = format!("{name}/branch{b}/{l}");
                cur = match *layer {
                    BranchLayer::Conv {
                        kernel,
                        out_channels,
                        stride,
                        padding,
                    } => self.conv_bn_relu(&prefix, cur, kernel, out_channels, stride, padding)?,
                    BranchLayer::Pool {
                        mode,
                        window,
                        stride,
                        padding,
                    } => self.pool(format!("{prefix}/pool"), cur, mode, window, stride, padding)?,
                };
            }
            ends.push(cur);
        }
        let spatial = &self.shapes[ends[0].0][..2];
        if let Some(bad) = ends.iter().find(|e| &self.shapes[e.0][..2] != spatial) {
            return Err(Error::Graph(format!(
                "inception module '{name}' branches end at different spatial sizes: {:?} vs {:?}",
                spatial,
                &self.shapes[bad.0][..2]
            )));
        }
        self.push(format!("{name}/concat"), Op::Concat, &ends)
    }

    pub fn global_avg_pool(&mut self, name: impl Into<String>, input: NodeId) -> Result<NodeId> {
        self.push(name, Op::GlobalAvgPool, &[input])
    }

    /// He-initialized weights, zero bias.
    pub fn fully_connected(
        &mut self,
        name: impl Into<String>,
        input: NodeId,
        outputs: usize,
    ) -> Result<NodeId> {
        let d: usize = self.shapes[input.0].iter().product();
        let w = self.normal(&[d, outputs], (2.0 / d as f64).sqrt());
        self.push(
            name,
            Op::FullyConnected {
                weights: Param::float(w),
                bias: Param::float(Tensor::zeros(&[outputs])),
            },
            &[input],
        )
    }

    pub fn softmax(&mut self, name: impl Into<String>, input: NodeId) -> Result<NodeId> {
        self.push(name, Op::Softmax, &[input])
    }

    pub fn finish(
        self,
        input: NodeId,
        bottleneck: NodeId,
        output: NodeId,
        metadata: BTreeMap<String, String>,
    ) -> Result<CompGraph> {
        CompGraph::new(self.nodes, input, bottleneck, output, metadata)
    }
}

/// Desk-scale member of the inception family.
///
/// ```text
/// input 64x64x3
/// conv 3x3/2 16ch + bn + relu      -> 32x32x16
/// conv 3x3/1 32ch + bn + relu      -> 32x32x32
/// maxpool 3x3/2                    -> 16x16x32
/// mixed_a (16 | 16>24 | 8>12>12 | avgpool>12)   -> 16x16x64
/// mixed_b (24 | 24>32 | 12>16>16 | avgpool>24)  -> 16x16x96
/// global average pool (bottleneck) -> 96
/// fully connected -> softmax       -> num_classes
/// ```
pub fn build_mini_inception(num_classes: usize, seed: u64) -> Result<CompGraph> {
    if num_classes < 2 {
        return Err(Error::invalid(format!(
            "a classifier needs at least 2 classes, got {num_classes}"
        )));
    }
    let (h, w, c) = MINI_INCEPTION_INPUT;
    let mut g = GraphBuilder::new(seed);
    let input = g.input(h, w, c)?;
    let x = g.conv_bn_relu("stem1", input, (3, 3), 16, (2, 2), Padding::Same)?;
    let x = g.conv_bn_relu("stem2", x, (3, 3), 32, (1, 1), Padding::Same)?;
    let x = g.pool("stem_pool", x, PoolMode::Max, (3, 3), (2, 2), Padding::Same)?;
    let x = g.inception_module("mixed_a", x, &inception_branches([16, 16, 24, 8, 12, 12]))?;
    let x = g.inception_module("mixed_b", x, &inception_branches([24, 24, 32, 12, 16, 24]))?;
    let bottleneck = g.global_avg_pool("bottleneck", x)?;
    let logits = g.fully_connected("logits", bottleneck, num_classes)?;
    let output = g.softmax("probabilities", logits)?;

    let metadata = BTreeMap::from([
        ("architecture".to_string(), "mini-inception".to_string()),
        ("name".to_string(), "mini-inception".to_string()),
        ("version".to_string(), "1".to_string()),
        ("num_classes".to_string(), num_classes.to_string()),
        ("seed".to_string(), seed.to_string()),
    ]);
    g.finish(input, bottleneck, output, metadata)
}

/// Classic four-branch layout: `1x1 | 1x1>3x3 | 1x1>3x3>3x3 | avgpool>1x1`.
fn inception_branches(widths: [usize; 6]) -> Vec<Vec<BranchLayer>> {
    let [single, reduce3, out3, reduce_dbl, out_dbl, pool_proj] = widths;
    vec![
        vec![BranchLayer::conv(1, 1, single)],
        vec![BranchLayer::conv(1, 1, reduce3), BranchLayer::conv(3, 3, out3)],
        vec![
            BranchLayer::conv(1, 1, reduce_dbl),
            BranchLayer::conv(3, 3, out_dbl),
            BranchLayer::conv(3, 3, out_dbl),
        ],
        vec![
            BranchLayer::pool(PoolMode::Avg, 3),
            BranchLayer::conv(1, 1, pool_proj),
        ],
    ]
}
