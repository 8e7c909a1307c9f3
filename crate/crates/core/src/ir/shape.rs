use std::collections::BTreeMap;

use super::{topo_order, Graph, IrError, Layer, LayerNode, NodeId, Shape};

/// Output length of a sliding window of `kernel` taps over `samples` inputs,
/// or `None` when the window does not fit the padded input.
pub fn output_length(
    samples: usize,
    kernel: usize,
    stride: usize,
    pad_left: usize,
    pad_right: usize,
) -> Option<usize> {
    let padded = samples + pad_left + pad_right;
    if kernel == 0 || stride == 0 || kernel > padded {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

fn window(
    node: &LayerNode,
    input: Shape,
    kernel: usize,
    stride: usize,
    pad_left: usize,
    pad_right: usize,
) -> Result<usize, IrError> {
    output_length(input.samples, kernel, stride, pad_left, pad_right).ok_or_else(|| {
        IrError::NonPositiveOutputLength {
            node: node.id.clone(),
            window: kernel,
            padded: input.samples + pad_left + pad_right,
        }
    })
}

/// Shape produced by `node` given the shapes of its inputs, in input order.
pub(crate) fn node_output_shape(node: &LayerNode, inputs: &[Shape]) -> Result<Shape, IrError> {
    let first = || {
        inputs.first().copied().ok_or_else(|| IrError::ShapeMismatch {
            node: node.id.clone(),
            message: "missing input".into(),
        })
    };
    let shape = match &node.layer {
        Layer::Input => return Err(IrError::ShapeMismatch {
            node: node.id.clone(),
            message: "input node shape comes from the graph".into(),
        }),
        Layer::Conv1D { attrs, .. } => {
            let s = first()?;
            let len = window(node, s, attrs.kernel, attrs.stride, attrs.pad_left, attrs.pad_right)?;
            Shape::new(attrs.filters, len)
        }
        Layer::MaxPool1D(p) | Layer::AvgPool1D(p) => {
            let s = first()?;
            Shape::new(s.channels, window(node, s, p.size, p.stride, 0, 0)?)
        }
        Layer::Dense { units, .. } => {
            first()?;
            Shape::new(1, *units)
        }
        Layer::Flatten => Shape::new(1, first()?.len()),
        Layer::ZeroPad1D { pad_left, pad_right } => {
            let s = first()?;
            Shape::new(s.channels, s.samples + pad_left + pad_right)
        }
        Layer::BatchNorm { .. } | Layer::Affine { .. } | Layer::ReLU | Layer::SoftMax => first()?,
        Layer::Add { .. } => {
            let s = first()?;
            if let Some(other) = inputs.iter().find(|o| **o != s) {
                return Err(IrError::ShapeMismatch {
                    node: node.id.clone(),
                    message: format!("Add operands have shapes {s} and {other}"),
                });
            }
            s
        }
    };
    if shape.channels == 0 || shape.samples == 0 {
        return Err(IrError::ShapeMismatch {
            node: node.id.clone(),
            message: format!("empty output shape {shape}"),
        });
    }
    Ok(shape)
}

/// Infer the output shape of every node.
pub fn infer_shapes(graph: &Graph) -> Result<BTreeMap<NodeId, Shape>, IrError> {
    let order = topo_order(graph)?;
    let mut shapes: BTreeMap<NodeId, Shape> = BTreeMap::new();
    for id in order {
        let node = &graph.nodes[&id];
        let shape = if let Layer::Input = node.layer {
            graph.input_shape
        } else {
            let inputs: Vec<Shape> = node
                .inputs
                .iter()
                .map(|i| shapes[i])
                .collect();
            node_output_shape(node, &inputs)?
        };
        shapes.insert(id, shape);
    }
    Ok(shapes)
}
