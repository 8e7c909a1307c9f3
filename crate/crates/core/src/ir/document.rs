//! JSON model document I/O.
//!
//! ```json
//! { "format_version": 1,
//!   "input": {"channels": 9, "samples": 128},
//!   "nodes": [ {"id": "input", "kind": "Input", "inputs": []},
//!              {"id": "conv1", "kind": "Conv1D", "inputs": ["input"],
//!               "attrs": {"filters": 16, "kernel": 3, "stride": 1, "pad_left": 1, "pad_right": 1},
//!               "weights": {"kernel": [[[...]]], "bias": [...]}} ],
//!   "output": "conv1" }
//! ```
//!
//! Unknown keys are rejected. Errors carry a `$.path` to the offending value.

use std::path::Path;

use serde_json::{json, Map, Value};

use super::{topo_order, Conv1dAttrs, Graph, Layer, LayerKind, LayerNode, PoolAttrs, Shape, WeightArray};

pub const FORMAT_VERSION: u64 = 1;

#[derive(Debug, thiserror::Error)]
pub enum DocumentError {
    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },
    #[error("unsupported format_version {0} (expected {FORMAT_VERSION})")]
    Version(u64),
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

type Result<T> = std::result::Result<T, DocumentError>;

#[derive(Clone)]
struct Cursor<'v> {
    value: &'v Value,
    path: String,
}

fn schema<T>(path: &str, message: impl Into<String>) -> Result<T> {
    Err(DocumentError::Schema {
        path: path.to_string(),
        message: message.into(),
    })
}

impl<'v> Cursor<'v> {
    fn root(value: &'v Value) -> Self {
        Self {
            value,
            path: "$".into(),
        }
    }

    fn object(&self) -> Result<&'v Map<String, Value>> {
        match self.value.as_object() {
            Some(m) => Ok(m),
            None => schema(&self.path, "expected an object"),
        }
    }

    fn deny_unknown(&self, allowed: &[&str]) -> Result<()> {
        for key in self.object()?.keys() {
            if !allowed.contains(&key.as_str()) {
                return schema(&format!("{}.{key}", self.path), "unknown key");
            }
        }
        Ok(())
    }

    fn opt(&self, key: &str) -> Result<Option<Cursor<'v>>> {
        Ok(self.object()?.get(key).map(|value| Cursor {
            value,
            path: format!("{}.{key}", self.path),
        }))
    }

    fn req(&self, key: &str) -> Result<Cursor<'v>> {
        match self.opt(key)? {
            Some(c) => Ok(c),
            None => schema(&format!("{}.{key}", self.path), "missing required key"),
        }
    }

    fn index(&self, i: usize, value: &'v Value) -> Cursor<'v> {
        Cursor {
            value,
            path: format!("{}[{i}]", self.path),
        }
    }

    fn usize(&self) -> Result<usize> {
        match self.value.as_u64() {
            Some(v) => Ok(v as usize),
            None => schema(&self.path, "expected a non-negative integer"),
        }
    }

    fn f64(&self) -> Result<f64> {
        match self.value.as_f64() {
            Some(v) => Ok(v),
            None => schema(&self.path, "expected a number"),
        }
    }

    fn bool(&self) -> Result<bool> {
        match self.value.as_bool() {
            Some(v) => Ok(v),
            None => schema(&self.path, "expected a boolean"),
        }
    }

    fn str(&self) -> Result<&'v str> {
        match self.value.as_str() {
            Some(v) => Ok(v),
            None => schema(&self.path, "expected a string"),
        }
    }

    fn array(&self) -> Result<&'v Vec<Value>> {
        match self.value.as_array() {
            Some(v) => Ok(v),
            None => schema(&self.path, "expected an array"),
        }
    }
}

fn req_usize(c: &Cursor<'_>, key: &str) -> Result<usize> {
    c.req(key)?.usize()
}

/// Parse a rectangular nested array of numbers of the given rank.
fn weight_array(c: &Cursor<'_>, rank: usize) -> Result<WeightArray> {
    fn walk(
        c: &Cursor<'_>,
        depth: usize,
        rank: usize,
        dims: &mut Vec<usize>,
        out: &mut Vec<f64>,
    ) -> Result<()> {
        if depth == rank {
            out.push(c.f64()?);
            return Ok(());
        }
        let items = c.array()?;
        if dims.len() == depth {
            dims.push(items.len());
        } else if dims[depth] != items.len() {
            return schema(
                &c.path,
                format!("ragged array: expected {} entries, found {}", dims[depth], items.len()),
            );
        }
        for (i, item) in items.iter().enumerate() {
            walk(&c.index(i, item), depth + 1, rank, dims, out)?;
        }
        // empty arrays never reach the leaves
        if items.is_empty() {
            dims.resize(rank, 0);
        }
        Ok(())
    }
    let mut dims = Vec::new();
    let mut data = Vec::new();
    walk(c, 0, rank, &mut dims, &mut data)?;
    Ok(WeightArray { dims, data })
}

fn weights_object(node: &Cursor<'_>, names: &[(&str, usize)]) -> Result<Vec<WeightArray>> {
    let w = node.req("weights")?;
    let allowed: Vec<&str> = names.iter().map(|(n, _)| *n).collect();
    w.deny_unknown(&allowed)?;
    names
        .iter()
        .map(|(name, rank)| weight_array(&w.req(name)?, *rank))
        .collect()
}

fn attrs_object<'v>(node: &Cursor<'v>, allowed: &[&str]) -> Result<Cursor<'v>> {
    static EMPTY: Value = Value::Null;
    match node.opt("attrs")? {
        Some(a) => {
            a.deny_unknown(allowed)?;
            Ok(a)
        }
        None => Ok(Cursor {
            value: &EMPTY,
            path: format!("{}.attrs", node.path),
        }),
    }
}

impl Cursor<'_> {
    /// Lookup in an attrs object that may be absent (null).
    fn attr(&self, key: &str) -> Result<Option<Cursor<'_>>> {
        if self.value.is_null() {
            Ok(None)
        } else {
            self.opt(key)
        }
    }
}

fn attr_usize(a: &Cursor<'_>, key: &str) -> Result<usize> {
    match a.attr(key)? {
        Some(v) => v.usize(),
        None => schema(&format!("{}.{key}", a.path), "missing required key"),
    }
}

fn attr_usize_or(a: &Cursor<'_>, key: &str, default: usize) -> Result<usize> {
    a.attr(key)?.map_or(Ok(default), |v| v.usize())
}

fn attr_bool(a: &Cursor<'_>, key: &str) -> Result<bool> {
    a.attr(key)?.map_or(Ok(false), |v| v.bool())
}

fn parse_node(c: &Cursor<'_>) -> Result<LayerNode> {
    c.deny_unknown(&["id", "kind", "inputs", "attrs", "weights"])?;
    let id = c.req("id")?.str()?.to_string();
    let kind_field = c.req("kind")?;
    let kind_name = kind_field.str()?;
    let Some(kind) = LayerKind::from_name(kind_name) else {
        return schema(&kind_field.path, format!("unknown layer kind `{kind_name}`"));
    };
    let inputs_field = c.req("inputs")?;
    let inputs = inputs_field
        .array()?
        .iter()
        .enumerate()
        .map(|(i, v)| inputs_field.index(i, v).str().map(str::to_string))
        .collect::<Result<Vec<_>>>()?;

    let has_weights = matches!(
        kind,
        LayerKind::Conv1D | LayerKind::Dense | LayerKind::BatchNorm | LayerKind::Affine
    );
    if !has_weights && c.object()?.contains_key("weights") {
        return schema(&format!("{}.weights", c.path), format!("{kind} takes no weights"));
    }

    let layer = match kind {
        LayerKind::Input => {
            attrs_object(c, &[])?;
            Layer::Input
        }
        LayerKind::Conv1D => {
            let a = attrs_object(
                c,
                &["filters", "kernel", "stride", "pad_left", "pad_right", "fused_relu"],
            )?;
            let attrs = Conv1dAttrs {
                filters: attr_usize(&a, "filters")?,
                kernel: attr_usize(&a, "kernel")?,
                stride: attr_usize_or(&a, "stride", 1)?,
                pad_left: attr_usize_or(&a, "pad_left", 0)?,
                pad_right: attr_usize_or(&a, "pad_right", 0)?,
                fused_relu: attr_bool(&a, "fused_relu")?,
            };
            let mut w = weights_object(c, &[("kernel", 3), ("bias", 1)])?;
            let bias = w.pop().unwrap();
            let kernel = w.pop().unwrap();
            Layer::Conv1D { attrs, kernel, bias }
        }
        LayerKind::Dense => {
            let a = attrs_object(c, &["units", "fused_relu"])?;
            let units = attr_usize(&a, "units")?;
            let fused_relu = attr_bool(&a, "fused_relu")?;
            let mut w = weights_object(c, &[("kernel", 2), ("bias", 1)])?;
            let bias = w.pop().unwrap();
            let kernel = w.pop().unwrap();
            Layer::Dense {
                units,
                fused_relu,
                kernel,
                bias,
            }
        }
        LayerKind::MaxPool1D | LayerKind::AvgPool1D => {
            let a = attrs_object(c, &["pool_size", "stride", "fused_relu"])?;
            let size = attr_usize(&a, "pool_size")?;
            let attrs = PoolAttrs {
                size,
                stride: attr_usize_or(&a, "stride", size)?,
                fused_relu: attr_bool(&a, "fused_relu")?,
            };
            if kind == LayerKind::MaxPool1D {
                Layer::MaxPool1D(attrs)
            } else {
                Layer::AvgPool1D(attrs)
            }
        }
        LayerKind::BatchNorm => {
            let a = attrs_object(c, &["epsilon"])?;
            let epsilon = a.attr("epsilon")?.map_or(Ok(1e-3), |e| e.f64())?;
            let mut w = weights_object(c, &[("mean", 1), ("variance", 1), ("gamma", 1), ("beta", 1)])?;
            let beta = w.pop().unwrap();
            let gamma = w.pop().unwrap();
            let variance = w.pop().unwrap();
            let mean = w.pop().unwrap();
            Layer::BatchNorm {
                epsilon,
                mean,
                variance,
                gamma,
                beta,
            }
        }
        LayerKind::Affine => {
            attrs_object(c, &[])?;
            let mut w = weights_object(c, &[("scale", 1), ("offset", 1)])?;
            let offset = w.pop().unwrap();
            let scale = w.pop().unwrap();
            Layer::Affine { scale, offset }
        }
        LayerKind::Add => {
            let a = attrs_object(c, &["fused_relu"])?;
            Layer::Add {
                fused_relu: attr_bool(&a, "fused_relu")?,
            }
        }
        LayerKind::ZeroPad1D => {
            let a = attrs_object(c, &["pad_left", "pad_right"])?;
            Layer::ZeroPad1D {
                pad_left: attr_usize_or(&a, "pad_left", 0)?,
                pad_right: attr_usize_or(&a, "pad_right", 0)?,
            }
        }
        LayerKind::ReLU | LayerKind::Flatten | LayerKind::SoftMax => {
            attrs_object(c, &[])?;
            match kind {
                LayerKind::ReLU => Layer::ReLU,
                LayerKind::Flatten => Layer::Flatten,
                _ => Layer::SoftMax,
            }
        }
    };
    Ok(LayerNode { id, inputs, layer })
}

/// Parse a model document from a JSON value.
pub fn load_model(doc: &Value) -> Result<Graph> {
    let root = Cursor::root(doc);
    root.deny_unknown(&["format_version", "input", "nodes", "output"])?;
    let version = root.req("format_version")?.usize()? as u64;
    if version != FORMAT_VERSION {
        return Err(DocumentError::Version(version));
    }

    let input = root.req("input")?;
    input.deny_unknown(&["channels", "samples"])?;
    let input_shape = Shape::new(req_usize(&input, "channels")?, req_usize(&input, "samples")?);

    let nodes_field = root.req("nodes")?;
    let nodes = nodes_field.array()?;
    let output = root.req("output")?.str()?.to_string();

    let mut graph = Graph::new(input_shape, output);
    for (i, value) in nodes.iter().enumerate() {
        let c = nodes_field.index(i, value);
        let node = parse_node(&c)?;
        if graph.nodes.contains_key(&node.id) {
            return schema(&format!("{}.id", c.path), format!("duplicate node id `{}`", node.id));
        }
        graph.insert(node);
    }
    Ok(graph)
}

pub fn load_model_str(text: &str) -> Result<Graph> {
    load_model(&serde_json::from_str(text)?)
}

/// Read and parse a model document file.
pub fn load_model_file(path: &Path) -> Result<Graph> {
    load_model_str(&std::fs::read_to_string(path)?)
}

fn nested(array: &WeightArray) -> Value {
    fn build(dims: &[usize], data: &[f64]) -> Value {
        match dims {
            [] => json!(data[0]),
            [_] => Value::Array(data.iter().map(|v| json!(v)).collect()),
            [n, rest @ ..] => {
                let stride: usize = rest.iter().product();
                Value::Array(
                    (0..*n)
                        .map(|i| build(rest, &data[i * stride..(i + 1) * stride]))
                        .collect(),
                )
            }
        }
    }
    build(&array.dims, &array.data)
}

fn node_value(node: &LayerNode) -> Value {
    let mut obj = Map::new();
    obj.insert("id".into(), json!(node.id));
    obj.insert("kind".into(), json!(node.kind().name()));
    obj.insert("inputs".into(), json!(node.inputs));
    let (attrs, weights) = match &node.layer {
        Layer::Input | Layer::ReLU | Layer::Flatten | Layer::SoftMax => (None, None),
        Layer::Conv1D { attrs, kernel, bias } => (
            Some(json!({
                "filters": attrs.filters, "kernel": attrs.kernel, "stride": attrs.stride,
                "pad_left": attrs.pad_left, "pad_right": attrs.pad_right,
                "fused_relu": attrs.fused_relu,
            })),
            Some(json!({"kernel": nested(kernel), "bias": nested(bias)})),
        ),
        Layer::Dense {
            units,
            fused_relu,
            kernel,
            bias,
        } => (
            Some(json!({"units": units, "fused_relu": fused_relu})),
            Some(json!({"kernel": nested(kernel), "bias": nested(bias)})),
        ),
        Layer::MaxPool1D(p) | Layer::AvgPool1D(p) => (
            Some(json!({"pool_size": p.size, "stride": p.stride, "fused_relu": p.fused_relu})),
            None,
        ),
        Layer::BatchNorm {
            epsilon,
            mean,
            variance,
            gamma,
            beta,
        } => (
            Some(json!({"epsilon": epsilon})),
            Some(json!({
                "mean": nested(mean), "variance": nested(variance),
                "gamma": nested(gamma), "beta": nested(beta),
            })),
        ),
        Layer::Affine { scale, offset } => (
            None,
            Some(json!({"scale": nested(scale), "offset": nested(offset)})),
        ),
        Layer::Add { fused_relu } => (Some(json!({"fused_relu": fused_relu})), None),
        Layer::ZeroPad1D {
            pad_left,
            pad_right,
        } => (Some(json!({"pad_left": pad_left, "pad_right": pad_right})), None),
    };
    if let Some(a) = attrs {
        obj.insert("attrs".into(), a);
    }
    if let Some(w) = weights {
        obj.insert("weights".into(), w);
    }
    Value::Object(obj)
}

/// Serialize a graph. Nodes are written in topological order when the graph
/// is acyclic, otherwise in id order.
pub fn save_model(graph: &Graph) -> Value {
    let order = topo_order(graph).unwrap_or_else(|_| graph.nodes.keys().cloned().collect());
    json!({
        "format_version": FORMAT_VERSION,
        "input": {"channels": graph.input_shape.channels, "samples": graph.input_shape.samples},
        "nodes": order.iter().map(|id| node_value(&graph.nodes[id])).collect::<Vec<_>>(),
        "output": graph.output,
    })
}

pub fn save_model_string(graph: &Graph) -> String {
    let mut s = serde_json::to_string_pretty(&save_model(graph)).expect("JSON values serialize");
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{build_resnet_v1_6, validate};

    const MINIMAL: &str = r#"{"format_version": 1, "input": {"channels": 2, "samples": 4},
        "nodes": [{"id": "input", "kind": "Input", "inputs": []}], "output": "input"}"#;

    fn schema_path(err: DocumentError) -> String {
        match err {
            DocumentError::Schema { path, .. } => path,
            other => panic!("expected schema error, got {other}"),
        }
    }

    #[test]
    fn minimal_document() {
        let g = load_model_str(MINIMAL).unwrap();
        assert!(validate(&g).is_empty());
        assert_eq!(g.input_shape, Shape::new(2, 4));
    }

    #[test]
    fn missing_output() {
        let err = load_model_str(
            r#"{"format_version": 1, "input": {"channels": 2, "samples": 4}, "nodes": []}"#,
        )
        .unwrap_err();
        assert_eq!(schema_path(err), "$.output");
    }

    #[test]
    fn unknown_version_and_keys() {
        let doc = MINIMAL.replace("\"format_version\": 1", "\"format_version\": 7");
        assert!(matches!(load_model_str(&doc), Err(DocumentError::Version(7))));
        let doc = MINIMAL.replace("\"inputs\": []", "\"inputs\": [], \"colour\": 3");
        assert_eq!(schema_path(load_model_str(&doc).unwrap_err()), "$.nodes[0].colour");
    }

    #[test]
    fn ragged_kernel() {
        let doc = r#"{"format_version": 1, "input": {"channels": 1, "samples": 4},
          "nodes": [{"id": "input", "kind": "Input", "inputs": []},
            {"id": "c", "kind": "Conv1D", "inputs": ["input"], "attrs": {"filters": 2, "kernel": 2},
             "weights": {"kernel": [[[1, 2]], [[3]]], "bias": [0, 0]}}],
          "output": "c"}"#;
        assert_eq!(schema_path(load_model_str(doc).unwrap_err()), "$.nodes[1].weights.kernel[1][0]");
    }

    #[test]
    fn resnet_round_trip() {
        let g = build_resnet_v1_6(4, Shape::new(3, 16), 3).unwrap();
        let text = save_model_string(&g);
        let back = load_model_str(&text).unwrap();
        assert_eq!(back, g);
        assert_eq!(save_model_string(&back), text);
    }
}
