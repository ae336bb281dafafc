//! `TRMB` model bundle container.
//!
//! ```text
//! "TRMB"            4 bytes magic
//! format_version    u32 little-endian
//! manifest_len      u64 little-endian
//! manifest          UTF-8 JSON: topology, attributes, blob table, labels, metadata
//! weights_len       u64 little-endian
//! weights           concatenated blobs (f32/f64 little-endian or int8)
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{CompGraph, Dtype, LabelList, Node, NodeId, Op, Param, QuantDescriptor};
use crate::error::{Error, Result};
use crate::tensor::{Padding, PoolMode, Tensor};

pub const MAGIC: [u8; 4] = *b"TRMB";
pub const FORMAT_VERSION: u32 = 1;

/// A graph together with the class names of its output.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle {
    pub graph: CompGraph,
    pub labels: LabelList,
}

impl ModelBundle {
    pub fn new(graph: CompGraph, labels: LabelList) -> Result<Self> {
        if graph.num_classes() != labels.len() {
            return Err(Error::ManifestMismatch(format!(
                "graph outputs {} classes but {} labels were supplied",
                graph.num_classes(),
                labels.len()
            )));
        }
        Ok(ModelBundle { graph, labels })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        encode_bundle(&self.graph, &self.labels)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (graph, labels) = decode_bundle(bytes)?;
        Ok(ModelBundle { graph, labels })
    }
}

#[derive(Serialize, Deserialize)]
struct BlobRef {
    dtype: Dtype,
    shape: Vec<usize>,
    offset: u64,
    length: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    quant: Option<QuantRecord>,
}

#[derive(Serialize, Deserialize)]
struct QuantRecord {
    scale: f64,
    zero_point: i32,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
enum OpRecord {
    Input {
        height: usize,
        width: usize,
        channels: usize,
    },
    Constant {
        value: BlobRef,
    },
    Conv2d {
        stride: [usize; 2],
        padding: Padding,
        kernel: BlobRef,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bias: Option<BlobRef>,
    },
    BatchNorm {
        epsilon: f64,
        mean: BlobRef,
        variance: BlobRef,
        gamma: BlobRef,
        beta: BlobRef,
    },
    Relu,
    Pool {
        mode: PoolMode,
        window: [usize; 2],
        stride: [usize; 2],
        padding: Padding,
    },
    GlobalAvgPool,
    Concat,
    Add,
    FullyConnected {
        weights: BlobRef,
        bias: BlobRef,
    },
    Softmax,
}

#[derive(Serialize, Deserialize)]
struct NodeRecord {
    name: String,
    #[serde(flatten)]
    op: OpRecord,
    inputs: Vec<NodeId>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    metadata: BTreeMap<String, String>,
    labels: Vec<String>,
    input: NodeId,
    bottleneck: NodeId,
    output: NodeId,
    nodes: Vec<NodeRecord>,
    weights_len: u64,
}

struct BlobWriter(Vec<u8>);

impl BlobWriter {
    fn put(&mut self, p: &Param) -> BlobRef {
        let offset = self.0.len() as u64;
        let dtype = p.dtype();
        let quant = match p.quant() {
            Some((desc, codes)) => {
                self.0.extend(codes.iter().map(|&q| q as u8));
                Some(QuantRecord {
                    scale: desc.scale,
                    zero_point: desc.zero_point,
                })
            }
            None => {
                for &v in p.value().data() {
                    match dtype {
                        Dtype::F32 => self.0.extend_from_slice(&(v as f32).to_le_bytes()),
                        _ => self.0.extend_from_slice(&v.to_le_bytes()),
                    }
                }
                None
            }
        };
        BlobRef {
            dtype,
            shape: p.shape().to_vec(),
            offset,
            length: self.0.len() as u64 - offset,
            quant,
        }
    }
}

fn pair(v: (usize, usize)) -> [usize; 2] {
    [v.0, v.1]
}

fn encode_parts(graph: &CompGraph, labels: &[String]) -> (Vec<u8>, Vec<u8>) {
    let mut blobs = BlobWriter(Vec::new());
    let nodes = graph
        .nodes()
        .iter()
        .map(|n| {
            let op = match &n.op {
                Op::Input {
                    height,
                    width,
                    channels,
                } => OpRecord::Input {
                    height: *height,
                    width: *width,
                    channels: *channels,
                },
                Op::Constant { value } => OpRecord::Constant {
                    value: blobs.put(value),
                },
                Op::Conv2d {
                    kernel,
                    bias,
                    stride,
                    padding,
                } => OpRecord::Conv2d {
                    stride: pair(*stride),
                    padding: *padding,
                    kernel: blobs.put(kernel),
                    bias: bias.as_ref().map(|b| blobs.put(b)),
                },
                Op::BatchNorm {
                    mean,
                    variance,
                    gamma,
                    beta,
                    epsilon,
                } => OpRecord::BatchNorm {
                    epsilon: *epsilon,
                    mean: blobs.put(mean),
                    variance: blobs.put(variance),
                    gamma: blobs.put(gamma),
                    beta: blobs.put(beta),
                },
                Op::Relu => OpRecord::Relu,
                Op::Pool {
                    mode,
                    window,
                    stride,
                    padding,
                } => OpRecord::Pool {
                    mode: *mode,
                    window: pair(*window),
                    stride: pair(*stride),
                    padding: *padding,
                },
                Op::GlobalAvgPool => OpRecord::GlobalAvgPool,
                Op::Concat => OpRecord::Concat,
                Op::Add => OpRecord::Add,
                Op::FullyConnected { weights, bias } => OpRecord::FullyConnected {
                    weights: blobs.put(weights),
                    bias: blobs.put(bias),
                },
                Op::Softmax => OpRecord::Softmax,
            };
            NodeRecord {
                name: n.name.clone(),
                op,
                inputs: n.inputs.clone(),
            }
        })
        .collect();
    let manifest = Manifest {
        metadata: graph.metadata().clone(),
        labels: labels.to_vec(),
        input: graph.input_id(),
        bottleneck: graph.bottleneck_id(),
        output: graph.output_id(),
        nodes,
        weights_len: blobs.0.len() as u64,
    };
    let json = serde_json::to_vec(&manifest).expect("manifest serializes");
    (json, blobs.0)
}

/// Serializes a graph and its labels into the `TRMB` container.
pub fn encode_bundle(graph: &CompGraph, labels: &LabelList) -> Vec<u8> {
    let (manifest, weights) = encode_parts(graph, labels.as_slice());
    let mut out = Vec::with_capacity(24 + manifest.len() + weights.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
    out.extend_from_slice(&manifest);
    out.extend_from_slice(&(weights.len() as u64).to_le_bytes());
    out.extend_from_slice(&weights);
    out
}

impl CompGraph {
    /// SHA-256 over the graph's canonical encoding (topology, attributes,
    /// weights, metadata).
    pub fn fingerprint(&self) -> [u8; 32] {
        let (manifest, weights) = encode_parts(self, &[]);
        let mut h = Sha256::new();
        h.update((manifest.len() as u64).to_le_bytes());
        h.update(&manifest);
        h.update(&weights);
        h.finalize().into()
    }

    /// SHA-256 over the nodes that feed the bottleneck only. Two graphs with
    /// the same feature extractor but different heads or metadata share it.
    pub fn feature_fingerprint(&self) -> [u8; 32] {
        let keep = self.ancestors(self.bottleneck_id());
        let mut h = Sha256::new();
        for (i, node) in self.nodes().iter().enumerate().filter(|(i, _)| keep[*i]) {
            let record = format!("{i}|{}|{:?}|{:?}\n", node.name, node.inputs, node.op);
            h.update((record.len() as u64).to_le_bytes());
            h.update(record.as_bytes());
        }
        h.update((self.bottleneck_id().0 as u64).to_le_bytes());
        h.finalize().into()
    }

    /// Total bytes of weight payload as it would be serialized.
    pub fn weight_payload_bytes(&self) -> usize {
        self.nodes()
            .iter()
            .flat_map(|n| n.op.params())
            .map(|(_, p)| p.payload_bytes())
            .sum()
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::Truncated(format!(
                    "{what} needs {n} bytes at offset {}, only {} remain",
                    self.pos,
                    self.bytes.len() - self.pos
                ))
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

fn read_blob(weights: &[u8], blob: &BlobRef, node: &str) -> Result<Param> {
    let mismatch = |msg: String| Error::ManifestMismatch(format!("node '{node}': {msg}"));
    let count: usize = blob.shape.iter().product();
    if blob.shape.is_empty() || count == 0 {
        return Err(mismatch(format!("invalid blob shape {:?}", blob.shape)));
    }
    let expected = count as u64 * blob.dtype.size() as u64;
    if blob.length != expected {
        return Err(mismatch(format!(
            "blob of shape {:?} ({:?}) should span {expected} bytes, manifest says {}",
            blob.shape, blob.dtype, blob.length
        )));
    }
    let end = blob
        .offset
        .checked_add(blob.length)
        .filter(|&e| e <= weights.len() as u64)
        .ok_or_else(|| {
            mismatch(format!(
                "blob {}..+{} exceeds the {}-byte weight section",
                blob.offset,
                blob.length,
                weights.len()
            ))
        })?;
    let raw = &weights[blob.offset as usize..end as usize];
    match (blob.dtype, &blob.quant) {
        (Dtype::I8, Some(q)) => {
            let desc = QuantDescriptor {
                scale: q.scale,
                zero_point: q.zero_point,
                shape: blob.shape.clone(),
            };
            Param::quantized(raw.iter().map(|&b| b as i8).collect(), desc)
                .map_err(|e| mismatch(e.to_string()))
        }
        (Dtype::F32, None) => {
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect();
            Ok(Param::float(Tensor::new(blob.shape.clone(), data).map_err(|e| mismatch(e.to_string()))?))
        }
        (Dtype::F64, None) => {
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            Ok(Param::float(Tensor::new(blob.shape.clone(), data).map_err(|e| mismatch(e.to_string()))?))
        }
        (dtype, q) => Err(mismatch(format!(
            "dtype {dtype:?} {} quantization parameters",
            if q.is_some() { "must not carry" } else { "requires" }
        ))),
    }
}

fn unpair(v: [usize; 2]) -> (usize, usize) {
    (v[0], v[1])
}

/// Parses a `TRMB` container.
pub fn decode_bundle(bytes: &[u8]) -> Result<(CompGraph, LabelList)> {
    let mut r = Reader { bytes, pos: 0 };
    let magic: [u8; 4] = r.take(4, "magic")?.try_into().unwrap();
    if magic != MAGIC {
        return Err(Error::BadMagic(magic));
    }
    let version = u32::from_le_bytes(r.take(4, "format version")?.try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let manifest_len = r.u64("manifest length")?;
    let manifest_bytes = r.take(usize::try_from(manifest_len).unwrap_or(usize::MAX), "manifest")?;
    let weights_len = r.u64("weights length")?;
    let weights = r.take(usize::try_from(weights_len).unwrap_or(usize::MAX), "weights")?;
    if r.pos != bytes.len() {
        return Err(Error::ManifestMismatch(format!(
            "{} unexpected trailing bytes",
            bytes.len() - r.pos
        )));
    }
    let manifest: Manifest = serde_json::from_slice(manifest_bytes)?;
    if manifest.weights_len != weights_len {
        return Err(Error::ManifestMismatch(format!(
            "manifest declares {} weight bytes, container holds {weights_len}",
            manifest.weights_len
        )));
    }

    let mut nodes = Vec::with_capacity(manifest.nodes.len());
    for rec in manifest.nodes {
        let name = rec.name;
        let blob = |b: &BlobRef| read_blob(weights, b, &name);
        let op = match &rec.op {
            OpRecord::Input {
                height,
                width,
                channels,
            } => Op::Input {
                height: *height,
                width: *width,
                channels: *channels,
            },
            OpRecord::Constant { value } => Op::Constant { value: blob(value)? },
            OpRecord::Conv2d {
                stride,
                padding,
                kernel,
                bias,
            } => Op::Conv2d {
                kernel: blob(kernel)?,
                bias: bias.as_ref().map(blob).transpose()?,
                stride: unpair(*stride),
                padding: *padding,
            },
            OpRecord::BatchNorm {
                epsilon,
                mean,
                variance,
                gamma,
                beta,
            } => Op::BatchNorm {
                mean: blob(mean)?,
                variance: blob(variance)?,
                gamma: blob(gamma)?,
                beta: blob(beta)?,
                epsilon: *epsilon,
            },
            OpRecord::Relu => Op::Relu,
            OpRecord::Pool {
                mode,
                window,
                stride,
                padding,
            } => Op::Pool {
                mode: *mode,
                window: unpair(*window),
                stride: unpair(*stride),
                padding: *padding,
            },
            OpRecord::GlobalAvgPool => Op::GlobalAvgPool,
            OpRecord::Concat => Op::Concat,
            OpRecord::Add => Op::Add,
            OpRecord::FullyConnected { weights: w, bias } => Op::FullyConnected {
                weights: blob(w)?,
                bias: blob(bias)?,
            },
            OpRecord::Softmax => Op::Softmax,
        };
        nodes.push(Node {
            name,
            op,
            inputs: rec.inputs,
        });
    }
    let graph = CompGraph::new(
        nodes,
        manifest.input,
        manifest.bottleneck,
        manifest.output,
        manifest.metadata,
    )?;
    let labels = LabelList::new(manifest.labels)?;
    let bundle = ModelBundle::new(graph, labels)?;
    Ok((bundle.graph, bundle.labels))
}

pub fn save_bundle(graph: &CompGraph, labels: &LabelList, path: &Path) -> Result<()> {
    ModelBundle::new(graph.clone(), labels.clone())?;
    std::fs::write(path, encode_bundle(graph, labels)).map_err(|e| Error::io(path, e))
}

pub fn load_bundle(path: &Path) -> Result<(CompGraph, LabelList)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_bundle(&bytes)
}
