//! Model intermediate representation.
//!
//! A [`Graph`] is a directed acyclic graph of [`LayerNode`]s over one-dimensional
//! tensors laid out channel-major (`[channel][sample]`). Every node produces exactly
//! one tensor; multi-input nodes (currently only `Add`) consume several.

mod document;
mod shape;
mod templates;
mod topo;
mod validate;

use std::collections::BTreeMap;
use std::fmt;

pub use document::{load_model, load_model_file, load_model_str, save_model, save_model_string, DocumentError};
pub use shape::{infer_shapes, output_length};
pub use templates::{build_cnn, build_mlp, build_resnet_v1_6, CnnConfig, MlpConfig};
pub use topo::topo_order;
pub use validate::{validate, ValidationReport, Violation, ViolationKind};

pub type NodeId = String;

/// Errors raised by IR operations that require a well-formed graph.
#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum IrError {
    #[error("graph contains a cycle through node `{0}`")]
    CycleDetected(NodeId),
    #[error("node `{node}`: window of {window} does not fit padded input of {padded} samples")]
    NonPositiveOutputLength {
        node: NodeId,
        window: usize,
        padded: usize,
    },
    #[error("node `{node}` references unknown node `{missing}`")]
    UnknownNode { node: NodeId, missing: NodeId },
    #[error("node `{node}`: {message}")]
    ShapeMismatch { node: NodeId, message: String },
    #[error("invalid template configuration: {0}")]
    InvalidConfig(String),
    #[error("graph failed validation:\n{0}")]
    Invalid(ValidationReport),
}

/// Tensor shape of a single activation.
///
/// Post-`Flatten` and `Dense` outputs use `channels = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub channels: usize,
    pub samples: usize,
}

impl Shape {
    pub const fn new(channels: usize, samples: usize) -> Self {
        Self { channels, samples }
    }

    pub const fn len(&self) -> usize {
        self.channels * self.samples
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.channels, self.samples)
    }
}

/// Dense real-valued parameter array, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightArray {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl WeightArray {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(dims.iter().product::<usize>(), data.len());
        Self { dims, data }
    }

    pub fn zeros(dims: Vec<usize>) -> Self {
        let len = dims.iter().product();
        Self {
            dims,
            data: vec![0.0; len],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            dims: vec![data.len()],
            data,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv1dAttrs {
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad_left: usize,
    pub pad_right: usize,
    pub fused_relu: bool,
}

impl Conv1dAttrs {
    /// Unpadded, stride-1 convolution.
    pub const fn valid(filters: usize, kernel: usize) -> Self {
        Self {
            filters,
            kernel,
            stride: 1,
            pad_left: 0,
            pad_right: 0,
            fused_relu: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolAttrs {
    pub size: usize,
    pub stride: usize,
    pub fused_relu: bool,
}

impl PoolAttrs {
    pub const fn new(size: usize) -> Self {
        Self {
            size,
            stride: size,
            fused_relu: false,
        }
    }
}

/// Layer kind together with its attributes and parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Input,
    /// Kernel indexed `[filter][in_channel][tap]`, bias `[filter]`.
    Conv1D {
        attrs: Conv1dAttrs,
        kernel: WeightArray,
        bias: WeightArray,
    },
    /// Kernel indexed `[unit][in_feature]` over the flattened input.
    Dense {
        units: usize,
        fused_relu: bool,
        kernel: WeightArray,
        bias: WeightArray,
    },
    MaxPool1D(PoolAttrs),
    AvgPool1D(PoolAttrs),
    BatchNorm {
        epsilon: f64,
        mean: WeightArray,
        variance: WeightArray,
        gamma: WeightArray,
        beta: WeightArray,
    },
    /// Per-channel `y = scale * x + offset`, the folded form of `BatchNorm`.
    Affine {
        scale: WeightArray,
        offset: WeightArray,
    },
    Add {
        fused_relu: bool,
    },
    ReLU,
    ZeroPad1D {
        pad_left: usize,
        pad_right: usize,
    },
    Flatten,
    SoftMax,
}

/// Field-less discriminant of [`Layer`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LayerKind {
    Input,
    Conv1D,
    Dense,
    MaxPool1D,
    AvgPool1D,
    BatchNorm,
    Affine,
    Add,
    ReLU,
    ZeroPad1D,
    Flatten,
    SoftMax,
}

impl LayerKind {
    pub const ALL: [LayerKind; 12] = [
        LayerKind::Input,
        LayerKind::Conv1D,
        LayerKind::Dense,
        LayerKind::MaxPool1D,
        LayerKind::AvgPool1D,
        LayerKind::BatchNorm,
        LayerKind::Affine,
        LayerKind::Add,
        LayerKind::ReLU,
        LayerKind::ZeroPad1D,
        LayerKind::Flatten,
        LayerKind::SoftMax,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LayerKind::Input => "Input",
            LayerKind::Conv1D => "Conv1D",
            LayerKind::Dense => "Dense",
            LayerKind::MaxPool1D => "MaxPool1D",
            LayerKind::AvgPool1D => "AvgPool1D",
            LayerKind::BatchNorm => "BatchNorm",
            LayerKind::Affine => "Affine",
            LayerKind::Add => "Add",
            LayerKind::ReLU => "ReLU",
            LayerKind::ZeroPad1D => "ZeroPad1D",
            LayerKind::Flatten => "Flatten",
            LayerKind::SoftMax => "SoftMax",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Layer {
    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Input => LayerKind::Input,
            Layer::Conv1D { .. } => LayerKind::Conv1D,
            Layer::Dense { .. } => LayerKind::Dense,
            Layer::MaxPool1D(_) => LayerKind::MaxPool1D,
            Layer::AvgPool1D(_) => LayerKind::AvgPool1D,
            Layer::BatchNorm { .. } => LayerKind::BatchNorm,
            Layer::Affine { .. } => LayerKind::Affine,
            Layer::Add { .. } => LayerKind::Add,
            Layer::ReLU => LayerKind::ReLU,
            Layer::ZeroPad1D { .. } => LayerKind::ZeroPad1D,
            Layer::Flatten => LayerKind::Flatten,
            Layer::SoftMax => LayerKind::SoftMax,
        }
    }

    pub fn fused_relu(&self) -> bool {
        match self {
            Layer::Conv1D { attrs, .. } => attrs.fused_relu,
            Layer::Dense { fused_relu, .. } | Layer::Add { fused_relu } => *fused_relu,
            Layer::MaxPool1D(p) | Layer::AvgPool1D(p) => p.fused_relu,
            _ => false,
        }
    }

    /// Number of real-valued parameters stored by this layer.
    pub fn parameter_count(&self) -> usize {
        match self {
            Layer::Conv1D { kernel, bias, .. } | Layer::Dense { kernel, bias, .. } => {
                kernel.len() + bias.len()
            }
            Layer::BatchNorm {
                mean,
                variance,
                gamma,
                beta,
                ..
            } => mean.len() + variance.len() + gamma.len() + beta.len(),
            Layer::Affine { scale, offset } => scale.len() + offset.len(),
            _ => 0,
        }
    }

    /// Parameters split into (multiplicands, addends). Addends are the arrays
    /// that live at accumulator precision once quantized.
    pub fn parameter_split(&self) -> (usize, usize) {
        match self {
            Layer::Conv1D { kernel, bias, .. } | Layer::Dense { kernel, bias, .. } => {
                (kernel.len(), bias.len())
            }
            Layer::Affine { scale, offset } => (scale.len(), offset.len()),
            Layer::BatchNorm { .. } => (self.parameter_count(), 0),
            _ => (0, 0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNode {
    pub id: NodeId,
    pub inputs: Vec<NodeId>,
    pub layer: Layer,
}

impl LayerNode {
    pub fn new(id: impl Into<NodeId>, inputs: Vec<NodeId>, layer: Layer) -> Self {
        Self {
            id: id.into(),
            inputs,
            layer,
        }
    }

    pub fn kind(&self) -> LayerKind {
        self.layer.kind()
    }
}

/// Model graph. Nodes are keyed by id; iteration order is ascending id.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    pub nodes: BTreeMap<NodeId, LayerNode>,
    pub input_shape: Shape,
    pub output: NodeId,
}

impl Graph {
    pub fn new(input_shape: Shape, output: impl Into<NodeId>) -> Self {
        Self {
            nodes: BTreeMap::new(),
            input_shape,
            output: output.into(),
        }
    }

    pub fn insert(&mut self, node: LayerNode) {
        self.nodes.insert(node.id.clone(), node);
    }

    pub fn node(&self, id: &str) -> Option<&LayerNode> {
        self.nodes.get(id)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Id of the (first) `Input` node.
    pub fn input_id(&self) -> Option<&NodeId> {
        self.nodes
            .values()
            .find(|n| n.kind() == LayerKind::Input)
            .map(|n| &n.id)
    }

    /// Consumers of every node, in ascending consumer id order. A consumer
    /// appears once per edge, so `Add(a, a)` lists its consumer twice.
    pub fn consumers(&self) -> BTreeMap<NodeId, Vec<NodeId>> {
        let mut out: BTreeMap<NodeId, Vec<NodeId>> =
            self.nodes.keys().map(|k| (k.clone(), Vec::new())).collect();
        for node in self.nodes.values() {
            for input in &node.inputs {
                if let Some(list) = out.get_mut(input) {
                    list.push(node.id.clone());
                }
            }
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.nodes.values().map(|n| n.layer.parameter_count()).sum()
    }

    /// Returns an error listing every violation unless the graph validates.
    pub fn ensure_valid(&self) -> Result<(), IrError> {
        let report = validate(self);
        if report.is_empty() {
            Ok(())
        } else {
            Err(IrError::Invalid(report))
        }
    }

    /// Replace every parameter with a deterministic pseudo-random value drawn
    /// uniformly from `±sqrt(3 / fan_in)`. Batch-norm variances stay positive.
    pub fn reinit_weights(&mut self, seed: u64) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        for node in self.nodes.values_mut() {
            match &mut node.layer {
                Layer::Conv1D { kernel, bias, .. } | Layer::Dense { kernel, bias, .. } => {
                    let fan_in: usize = kernel.dims.iter().skip(1).product::<usize>().max(1);
                    let limit = (3.0 / fan_in as f64).sqrt();
                    for v in kernel.data.iter_mut() {
                        *v = rng.gen_range(-limit..limit);
                    }
                    for v in bias.data.iter_mut() {
                        *v = rng.gen_range(-0.1..0.1);
                    }
                }
                Layer::BatchNorm {
                    mean,
                    variance,
                    gamma,
                    beta,
                    ..
                } => {
                    for v in mean.data.iter_mut() {
                        *v = rng.gen_range(-0.5..0.5);
                    }
                    for v in variance.data.iter_mut() {
                        *v = rng.gen_range(0.25..2.0);
                    }
                    for v in gamma.data.iter_mut() {
                        *v = rng.gen_range(0.5..1.5);
                    }
                    for v in beta.data.iter_mut() {
                        *v = rng.gen_range(-0.5..0.5);
                    }
                }
                Layer::Affine { scale, offset } => {
                    for v in scale.data.iter_mut() {
                        *v = rng.gen_range(0.5..1.5);
                    }
                    for v in offset.data.iter_mut() {
                        *v = rng.gen_range(-0.5..0.5);
                    }
                }
                _ => {}
            }
        }
    }
}

/// Incremental graph construction helper used by the templates and tests.
///
/// Weight arrays are created zero-filled with the correct dimensions; call
/// [`Graph::reinit_weights`] or assign them afterwards.
#[derive(Debug)]
pub struct GraphBuilder {
    graph: Graph,
    shapes: BTreeMap<NodeId, Shape>,
    last: NodeId,
}

impl GraphBuilder {
    pub fn new(input_id: &str, input_shape: Shape) -> Self {
        let mut graph = Graph::new(input_shape, input_id);
        graph.insert(LayerNode::new(input_id, vec![], Layer::Input));
        let mut shapes = BTreeMap::new();
        shapes.insert(input_id.to_string(), input_shape);
        Self {
            graph,
            shapes,
            last: input_id.to_string(),
        }
    }

    /// Id of the most recently added node.
    pub fn last(&self) -> &str {
        &self.last
    }

    pub fn shape_of(&self, id: &str) -> Shape {
        self.shapes[id]
    }

    /// Add a node; its shape is inferred immediately.
    pub fn push(&mut self, id: &str, inputs: &[&str], layer: Layer) -> Result<&mut Self, IrError> {
        let input_shapes: Vec<Shape> = inputs
            .iter()
            .map(|i| {
                self.shapes.get(*i).copied().ok_or_else(|| IrError::UnknownNode {
                    node: id.to_string(),
                    missing: i.to_string(),
                })
            })
            .collect::<Result<_, _>>()?;
        let node = LayerNode::new(id, inputs.iter().map(|s| s.to_string()).collect(), layer);
        let shape = shape::node_output_shape(&node, &input_shapes)?;
        self.graph.insert(node);
        self.shapes.insert(id.to_string(), shape);
        self.last = id.to_string();
        Ok(self)
    }

    pub fn conv1d(&mut self, id: &str, input: &str, attrs: Conv1dAttrs) -> Result<&mut Self, IrError> {
        let c = self.input_shape(id, input)?.channels;
        let layer = Layer::Conv1D {
            attrs,
            kernel: WeightArray::zeros(vec![attrs.filters, c, attrs.kernel]),
            bias: WeightArray::zeros(vec![attrs.filters]),
        };
        self.push(id, &[input], layer)
    }

    pub fn dense(&mut self, id: &str, input: &str, units: usize) -> Result<&mut Self, IrError> {
        let features = self.input_shape(id, input)?.len();
        let layer = Layer::Dense {
            units,
            fused_relu: false,
            kernel: WeightArray::zeros(vec![units, features]),
            bias: WeightArray::zeros(vec![units]),
        };
        self.push(id, &[input], layer)
    }

    pub fn batch_norm(&mut self, id: &str, input: &str, epsilon: f64) -> Result<&mut Self, IrError> {
        let c = self.input_shape(id, input)?.channels;
        let layer = Layer::BatchNorm {
            epsilon,
            mean: WeightArray::zeros(vec![c]),
            variance: WeightArray::new(vec![c], vec![1.0; c]),
            gamma: WeightArray::new(vec![c], vec![1.0; c]),
            beta: WeightArray::zeros(vec![c]),
        };
        self.push(id, &[input], layer)
    }

    pub fn simple(&mut self, id: &str, input: &str, layer: Layer) -> Result<&mut Self, IrError> {
        self.push(id, &[input], layer)
    }

    pub fn add(&mut self, id: &str, inputs: &[&str]) -> Result<&mut Self, IrError> {
        self.push(id, inputs, Layer::Add { fused_relu: false })
    }

    fn input_shape(&self, id: &str, input: &str) -> Result<Shape, IrError> {
        self.shapes.get(input).copied().ok_or_else(|| IrError::UnknownNode {
            node: id.to_string(),
            missing: input.to_string(),
        })
    }

    /// Finish with the most recently added node as the graph output.
    pub fn finish(mut self) -> Graph {
        self.graph.output = self.last;
        self.graph
    }

    pub fn finish_at(mut self, output: &str) -> Graph {
        self.graph.output = output.to_string();
        self.graph
    }
}
