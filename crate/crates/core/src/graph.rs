//! Layer-structured computation graph and its graph-JSON serialization.
//!
//! A graph is an ordered list of layers, each an ordered list of operator
//! nodes. Intra-layer order is execution order. Every operator input carries
//! the batch as its leading dimension, equal to the graph's traced
//! `global_batch_size`; the partitioner rewrites that dimension to the
//! per-GPU batch.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const GRAPH_FORMAT_VERSION: &str = "1";

/// Per-operator floating-point precision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Precision {
    FP32,
    FP16,
}

impl Precision {
    /// Bytes per element.
    pub const fn bytes(self) -> u64 {
        match self {
            Precision::FP32 => 4,
            Precision::FP16 => 2,
        }
    }

    pub const fn as_str(self) -> &'static str {
        match self {
            Precision::FP32 => "FP32",
            Precision::FP16 => "FP16",
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Closed set of operator kinds understood by the cast rules and the latency db.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OpKind {
    Matmul,
    Conv,
    Softmax,
    Reduction,
    Elementwise,
    Embedding,
    Norm,
}

impl OpKind {
    pub const ALL: [OpKind; 7] = [
        OpKind::Matmul,
        OpKind::Conv,
        OpKind::Softmax,
        OpKind::Reduction,
        OpKind::Elementwise,
        OpKind::Embedding,
        OpKind::Norm,
    ];

    pub const fn as_str(self) -> &'static str {
        match self {
            OpKind::Matmul => "matmul",
            OpKind::Conv => "conv",
            OpKind::Softmax => "softmax",
            OpKind::Reduction => "reduction",
            OpKind::Elementwise => "elementwise",
            OpKind::Embedding => "embedding",
            OpKind::Norm => "norm",
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OpKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        OpKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::UnknownKind(s.to_string()))
    }
}

/// Product of the dimensions of `shape`. Returns `None` on overflow.
pub fn checked_element_count(shape: &[u64]) -> Option<u64> {
    shape.iter().try_fold(1u64, |acc, &d| acc.checked_mul(d))
}

/// Product of the dimensions of `shape`.
///
/// Shapes that passed graph validation never overflow.
pub fn element_count(shape: &[u64]) -> u64 {
    shape.iter().product()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TensorSpec {
    pub shape: Vec<u64>,
    /// Assigned by [`crate::precision::assign_precision`]; never read from or
    /// written to graph-JSON.
    #[serde(skip)]
    pub elem_precision: Option<Precision>,
}

impl TensorSpec {
    pub fn new(shape: Vec<u64>) -> Self {
        Self {
            shape,
            elem_precision: None,
        }
    }

    pub fn element_count(&self) -> u64 {
        element_count(&self.shape)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct WeightSpec {
    pub name: String,
    pub shape: Vec<u64>,
    /// Dimension eligible for tensor-parallel slicing.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slice_dim: Option<usize>,
    pub trainable: bool,
    #[serde(skip)]
    pub elem_precision: Option<Precision>,
}

impl WeightSpec {
    pub fn new(name: impl Into<String>, shape: Vec<u64>, slice_dim: Option<usize>, trainable: bool) -> Self {
        Self {
            name: name.into(),
            shape,
            slice_dim,
            trainable,
            elem_precision: None,
        }
    }

    pub fn element_count(&self) -> u64 {
        element_count(&self.shape)
    }

    /// Gradient bytes at the assigned precision; zero for frozen weights.
    ///
    /// Returns `None` if precision has not been assigned yet.
    pub fn gradient_bytes(&self) -> Option<u64> {
        if !self.trainable {
            return Some(0);
        }
        self.elem_precision.map(|p| self.element_count() * p.bytes())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct OperatorNode {
    pub id: String,
    pub kind: OpKind,
    pub layer_index: usize,
    pub inputs: Vec<TensorSpec>,
    pub weights: Vec<WeightSpec>,
    /// Operator-level precision, mirrored onto every input and weight.
    #[serde(skip)]
    pub precision: Option<Precision>,
}

impl OperatorNode {
    pub fn new(
        id: impl Into<String>,
        kind: OpKind,
        layer_index: usize,
        inputs: Vec<TensorSpec>,
        weights: Vec<WeightSpec>,
    ) -> Self {
        Self {
            id: id.into(),
            kind,
            layer_index,
            inputs,
            weights,
            precision: None,
        }
    }

    /// Input shapes followed by weight shapes, in declaration order.
    pub fn shapes(&self) -> Vec<Vec<u64>> {
        self.inputs
            .iter()
            .map(|t| t.shape.clone())
            .chain(self.weights.iter().map(|w| w.shape.clone()))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComputationGraph {
    pub model_name: String,
    pub global_batch_size: u64,
    pub layers: Vec<Vec<OperatorNode>>,
}

impl ComputationGraph {
    /// Builds a graph and checks every structural invariant.
    pub fn new(model_name: impl Into<String>, global_batch_size: u64, layers: Vec<Vec<OperatorNode>>) -> Result<Self> {
        let g = Self {
            model_name: model_name.into(),
            global_batch_size,
            layers,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn operator_count(&self) -> usize {
        self.layers.iter().map(Vec::len).sum()
    }

    pub fn operators(&self) -> impl Iterator<Item = &OperatorNode> {
        self.layers.iter().flatten()
    }

    pub fn validate(&self) -> Result<()> {
        if self.global_batch_size == 0 {
            return Err(Error::schema("<graph>", "global_batch_size must be >= 1"));
        }
        if self.layers.is_empty() {
            return Err(Error::schema("<graph>", "graph has no layers"));
        }
        let mut ids = HashSet::new();
        let mut weight_names = HashSet::new();
        for (li, layer) in self.layers.iter().enumerate() {
            if layer.is_empty() {
                return Err(Error::schema(format!("<layer {li}>"), "layer has no operators"));
            }
            for node in layer {
                let fail = |reason: String| Err(Error::schema(node.id.clone(), reason));
                if node.id.is_empty() {
                    return Err(Error::schema(format!("<layer {li}>"), "operator id is empty"));
                }
                if !ids.insert(node.id.as_str()) {
                    return fail("duplicate operator id".into());
                }
                if node.layer_index != li {
                    return fail(format!("layer_index {} but listed in layer {li}", node.layer_index));
                }
                for (i, input) in node.inputs.iter().enumerate() {
                    check_shape(&input.shape).or_else(|r| fail(format!("input {i}: {r}")))?;
                    if input.shape[0] != self.global_batch_size {
                        return fail(format!(
                            "input {i} leading dim {} != global_batch_size {}",
                            input.shape[0], self.global_batch_size
                        ));
                    }
                }
                for w in &node.weights {
                    if w.name.is_empty() {
                        return fail("weight with empty name".into());
                    }
                    check_shape(&w.shape).or_else(|r| fail(format!("weight {}: {r}", w.name)))?;
                    if let Some(d) = w.slice_dim {
                        if d >= w.shape.len() {
                            return fail(format!("weight {} slice_dim {d} out of range for rank {}", w.name, w.shape.len()));
                        }
                    }
                    if !weight_names.insert(w.name.as_str()) {
                        return fail(format!("duplicate weight name {}", w.name));
                    }
                }
            }
        }
        Ok(())
    }
}

fn check_shape(shape: &[u64]) -> std::result::Result<(), String> {
    if shape.is_empty() {
        return Err("empty shape".into());
    }
    if shape.contains(&0) {
        return Err(format!("zero dimension in {shape:?}"));
    }
    if checked_element_count(shape).is_none() {
        return Err(format!("element count of {shape:?} overflows"));
    }
    Ok(())
}

// On-disk documents. Kinds are read as strings so unknown kinds can be
// reported against the node that carries them.

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphDoc {
    format_version: String,
    model_name: String,
    global_batch_size: u64,
    layers: Vec<Vec<NodeDoc>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeDoc {
    id: String,
    kind: String,
    layer_index: usize,
    #[serde(default)]
    inputs: Vec<TensorDoc>,
    #[serde(default)]
    weights: Vec<WeightDoc>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorDoc {
    shape: Vec<u64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WeightDoc {
    name: String,
    shape: Vec<u64>,
    #[serde(default)]
    slice_dim: Option<usize>,
    trainable: bool,
}

#[derive(Serialize)]
struct GraphDocOut<'a> {
    format_version: &'a str,
    model_name: &'a str,
    global_batch_size: u64,
    layers: &'a [Vec<OperatorNode>],
}

/// Parses graph-JSON text. `origin` names the source in error messages.
pub fn parse_graph(text: &str, origin: &str) -> Result<ComputationGraph> {
    let doc: GraphDoc = serde_json::from_str(text).map_err(|e| Error::parse(origin, e))?;
    if doc.format_version != GRAPH_FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            origin: origin.to_string(),
            found: doc.format_version,
            expected: GRAPH_FORMAT_VERSION.to_string(),
        });
    }
    let mut layers = Vec::with_capacity(doc.layers.len());
    for layer in doc.layers {
        let mut nodes = Vec::with_capacity(layer.len());
        for n in layer {
            let kind = n
                .kind
                .parse::<OpKind>()
                .map_err(|_| Error::schema(n.id.clone(), format!("unknown operator kind {:?}", n.kind)))?;
            let inputs = n.inputs.into_iter().map(|t| TensorSpec::new(t.shape)).collect();
            let weights = n
                .weights
                .into_iter()
                .map(|w| WeightSpec::new(w.name, w.shape, w.slice_dim, w.trainable))
                .collect();
            nodes.push(OperatorNode::new(n.id, kind, n.layer_index, inputs, weights));
        }
        layers.push(nodes);
    }
    ComputationGraph::new(doc.model_name, doc.global_batch_size, layers)
}

/// Serializes a graph to graph-JSON. Output is deterministic for equal graphs.
pub fn graph_to_json(graph: &ComputationGraph) -> String {
    let doc = GraphDocOut {
        format_version: GRAPH_FORMAT_VERSION,
        model_name: &graph.model_name,
        global_batch_size: graph.global_batch_size,
        layers: &graph.layers,
    };
    let mut s = serde_json::to_string_pretty(&doc).expect("graph serialization is infallible");
    s.push('\n');
    s
}

pub fn load_graph(path: impl AsRef<Path>) -> Result<ComputationGraph> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_graph(&text, &path.display().to_string())
}

pub fn save_graph(graph: &ComputationGraph, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, graph_to_json(graph)).map_err(|e| Error::io(path, e))
}
