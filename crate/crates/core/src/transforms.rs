//! Graph rewrites applied before quantization and code generation.
//!
//! Every pass takes a graph and returns a new one; none adds nodes.

use crate::ir::{Graph, IrError, Layer, LayerKind, NodeId, WeightArray};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum TransformError {
    #[error("ZeroPad1D `{node}` cannot be folded: {reason}")]
    UnfusablePadding { node: NodeId, reason: String },
    #[error("SoftMax `{0}` is not the graph output")]
    InteriorSoftmax(NodeId),
    #[error("BatchNorm `{node}` channel {channel}: variance + epsilon is not positive")]
    DegenerateVariance { node: NodeId, channel: usize },
    #[error(transparent)]
    Ir(#[from] IrError),
}

/// Per-channel multiplicand and addend equivalent to a BatchNorm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldedBatchNorm {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl FoldedBatchNorm {
    /// `sigma = sqrt(V + eps)`, `w = gamma / sigma`, `b = beta - gamma * mu / sigma`.
    /// Returns the offending channel when `V + eps <= 0`.
    pub fn fold(mean: &[f64], variance: &[f64], gamma: &[f64], beta: &[f64], epsilon: f64) -> Result<Self, usize> {
        let mut w = Vec::with_capacity(mean.len());
        let mut b = Vec::with_capacity(mean.len());
        for c in 0..mean.len() {
            let var = variance[c] + epsilon;
            if !(var > 0.0) {
                return Err(c);
            }
            let sigma = var.sqrt();
            w.push(gamma[c] / sigma);
            b.push(beta[c] - gamma[c] * mean[c] / sigma);
        }
        Ok(Self { w, b })
    }
}

/// Replace every reference to `from` (inputs and graph output) with `to`.
fn redirect(graph: &mut Graph, from: &str, to: &str) {
    for node in graph.nodes.values_mut() {
        for input in node.inputs.iter_mut() {
            if input == from {
                *input = to.to_string();
            }
        }
    }
    if graph.output == from {
        graph.output = to.to_string();
    }
}

/// Drop a terminal SoftMax; its input becomes the graph output.
pub fn remove_softmax(graph: &Graph) -> Result<Graph, TransformError> {
    let mut g = graph.clone();
    let consumers = graph.consumers();
    for node in graph.nodes.values().filter(|n| n.kind() == LayerKind::SoftMax) {
        if node.id != graph.output || !consumers[&node.id].is_empty() {
            return Err(TransformError::InteriorSoftmax(node.id.clone()));
        }
        g.nodes.remove(&node.id);
        g.output = node.inputs[0].clone();
    }
    Ok(g)
}

/// Merge each ZeroPad1D into the padding of the Conv1D that consumes it.
pub fn fold_zero_padding(graph: &Graph) -> Result<Graph, TransformError> {
    let mut g = graph.clone();
    let consumers = graph.consumers();
    for node in graph.nodes.values() {
        let Layer::ZeroPad1D { pad_left, pad_right } = node.layer else {
            continue;
        };
        let unfusable = |reason: String| TransformError::UnfusablePadding {
            node: node.id.clone(),
            reason,
        };
        let users = &consumers[&node.id];
        if node.id == graph.output || users.len() != 1 {
            return Err(unfusable(format!("has {} consumers, expected one Conv1D", users.len())));
        }
        let target = g.nodes.get_mut(&users[0]).expect("consumer exists");
        let Layer::Conv1D { attrs, .. } = &mut target.layer else {
            return Err(unfusable(format!("feeds {} `{}`", target.kind(), target.id)));
        };
        attrs.pad_left += pad_left;
        attrs.pad_right += pad_right;
        target.inputs[0] = node.inputs[0].clone();
        g.nodes.remove(&node.id);
    }
    Ok(g)
}

/// Replace each BatchNorm by the equivalent per-channel affine node.
pub fn fold_batchnorm(graph: &Graph) -> Result<Graph, TransformError> {
    let mut g = graph.clone();
    for node in g.nodes.values_mut() {
        if let Layer::BatchNorm {
            epsilon,
            mean,
            variance,
            gamma,
            beta,
        } = &node.layer
        {
            let folded = FoldedBatchNorm::fold(&mean.data, &variance.data, &gamma.data, &beta.data, *epsilon)
                .map_err(|channel| TransformError::DegenerateVariance {
                    node: node.id.clone(),
                    channel,
                })?;
            node.layer = Layer::Affine {
                scale: WeightArray::vector(folded.w),
                offset: WeightArray::vector(folded.b),
            };
        }
    }
    Ok(g)
}

/// Fold standalone ReLUs into a producing Conv1D, MaxPool1D, Dense or Add.
/// A ReLU stays standalone when its producer has other consumers.
pub fn fuse_relu(graph: &Graph) -> Graph {
    let mut g = graph.clone();
    let consumers = graph.consumers();
    for relu in graph.nodes.values().filter(|n| n.kind() == LayerKind::ReLU) {
        let producer_id = &relu.inputs[0];
        if consumers[producer_id].len() != 1 || *producer_id == graph.output {
            continue;
        }
        let producer = g.nodes.get_mut(producer_id).expect("producer exists");
        let flag = match &mut producer.layer {
            Layer::Conv1D { attrs, .. } => &mut attrs.fused_relu,
            Layer::Dense { fused_relu, .. } | Layer::Add { fused_relu } => fused_relu,
            Layer::MaxPool1D(p) => &mut p.fused_relu,
            _ => continue,
        };
        *flag = true;
        g.nodes.remove(&relu.id);
        redirect(&mut g, &relu.id, producer_id);
    }
    g
}

/// `remove_softmax`, `fold_zero_padding`, `fold_batchnorm`, `fuse_relu`;
/// input and result are validated.
pub fn run_pipeline(graph: &Graph) -> Result<Graph, TransformError> {
    graph.ensure_valid()?;
    let g = remove_softmax(graph)?;
    let g = fold_zero_padding(&g)?;
    let g = fold_batchnorm(&g)?;
    let g = fuse_relu(&g);
    g.ensure_valid()?;
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interpreter::{run_float, Tensor};
    use crate::ir::{build_resnet_v1_6, Conv1dAttrs, GraphBuilder, PoolAttrs, Shape};

    fn input(shape: Shape) -> Tensor<f64> {
        Tensor::new(shape, (0..shape.len()).map(|i| (i as f64 * 0.37).sin()).collect())
    }

    #[test]
    fn folds_padding() {
        let mut b = GraphBuilder::new("in", Shape::new(2, 10));
        b.simple("pad", "in", Layer::ZeroPad1D { pad_left: 1, pad_right: 2 }).unwrap();
        b.conv1d("conv", "pad", Conv1dAttrs::valid(3, 3)).unwrap();
        let mut g = b.finish();
        g.reinit_weights(1);
        let folded = fold_zero_padding(&g).unwrap();
        assert_eq!(folded.len(), g.len() - 1);
        let Layer::Conv1D { attrs, .. } = &folded.nodes["conv"].layer else { panic!() };
        assert_eq!((attrs.pad_left, attrs.pad_right), (1, 2));
        assert_eq!(folded.nodes["conv"].inputs, ["in"]);
        let x = input(g.input_shape);
        assert_eq!(run_float(&g, &x).unwrap(), run_float(&folded, &x).unwrap());

        let plain = GraphBuilder::new("in", Shape::new(1, 4)).finish();
        assert_eq!(fold_zero_padding(&plain).unwrap(), plain);
    }

    #[test]
    fn padding_into_add_is_unfusable() {
        let mut b = GraphBuilder::new("in", Shape::new(1, 4));
        b.simple("pad", "in", Layer::ZeroPad1D { pad_left: 1, pad_right: 1 }).unwrap();
        b.simple("pad2", "in", Layer::ZeroPad1D { pad_left: 2, pad_right: 0 }).unwrap();
        b.add("add", &["pad", "pad2"]).unwrap();
        let err = fold_zero_padding(&b.finish()).unwrap_err();
        assert!(matches!(err, TransformError::UnfusablePadding { .. }));
    }

    #[test]
    fn fuses_relu() {
        let mut b = GraphBuilder::new("in", Shape::new(1, 8));
        b.conv1d("conv", "in", Conv1dAttrs::valid(2, 3)).unwrap();
        b.simple("relu", "conv", Layer::ReLU).unwrap();
        b.batch_norm("bn", "relu", 1e-3).unwrap();
        b.simple("relu2", "bn", Layer::ReLU).unwrap();
        let g = b.finish();
        let fused = fuse_relu(&g);
        assert!(!fused.nodes.contains_key("relu"));
        assert!(fused.nodes["conv"].layer.fused_relu());
        assert_eq!(fused.nodes["bn"].inputs, ["conv"]);
        assert!(fused.nodes.contains_key("relu2"));
        assert_eq!(fused.output, "relu2");
    }

    #[test]
    fn shared_producer_keeps_relu() {
        let mut b = GraphBuilder::new("in", Shape::new(1, 8));
        b.simple("pool", "in", Layer::MaxPool1D(PoolAttrs::new(2))).unwrap();
        b.simple("relu", "pool", Layer::ReLU).unwrap();
        b.add("add", &["pool", "relu"]).unwrap();
        b.simple("relu_out", "add", Layer::ReLU).unwrap();
        let fused = fuse_relu(&b.finish());
        assert!(fused.nodes.contains_key("relu"));
        assert!(fused.nodes["add"].layer.fused_relu());
        assert_eq!(fused.output, "add");
    }

    #[test]
    fn batchnorm_examples() {
        let f = FoldedBatchNorm::fold(&[0.0], &[1.0], &[1.0], &[0.0], 0.0).unwrap();
        assert_eq!((f.w[0], f.b[0]), (1.0, 0.0));
        let f = FoldedBatchNorm::fold(&[3.0], &[4.0], &[2.0], &[1.0], 0.0).unwrap();
        assert_eq!((f.w[0], f.b[0]), (1.0, -2.0));
        let f = FoldedBatchNorm::fold(&[0.0], &[3.0], &[1.0], &[0.0], 1.0).unwrap();
        assert_eq!((f.w[0], f.b[0]), (0.5, 0.0));
        assert_eq!(FoldedBatchNorm::fold(&[0.0, 0.0], &[1.0, -1.0], &[1.0; 2], &[0.0; 2], 0.5), Err(1));
    }

    #[test]
    fn batchnorm_becomes_affine() {
        let mut b = GraphBuilder::new("in", Shape::new(3, 5));
        b.batch_norm("bn", "in", 1e-3).unwrap();
        let mut g = b.finish();
        g.reinit_weights(4);
        let folded = fold_batchnorm(&g).unwrap();
        assert_eq!(folded.nodes["bn"].kind(), LayerKind::Affine);
        let x = input(g.input_shape);
        let (a, b) = (run_float(&g, &x).unwrap(), run_float(&folded, &x).unwrap());
        for (u, v) in a.data.iter().zip(&b.data) {
            assert!((u - v).abs() <= 1e-12 * u.abs().max(1.0));
        }
        if let Layer::BatchNorm { variance, .. } = &mut g.nodes.get_mut("bn").unwrap().layer {
            variance.data[2] = -1.0;
        }
        assert!(matches!(
            fold_batchnorm(&g),
            Err(TransformError::DegenerateVariance { channel: 2, .. })
        ));
    }

    #[test]
    fn softmax() {
        let mut b = GraphBuilder::new("in", Shape::new(1, 4));
        b.dense("fc", "in", 3).unwrap();
        b.simple("sm", "fc", Layer::SoftMax).unwrap();
        let g = b.finish();
        let removed = remove_softmax(&g).unwrap();
        assert_eq!(removed.output, "fc");
        assert_eq!(removed.len(), 2);
        assert_eq!(remove_softmax(&removed).unwrap(), removed);

        let mut b = GraphBuilder::new("in", Shape::new(1, 4));
        b.simple("sm", "in", Layer::SoftMax).unwrap();
        b.dense("fc", "sm", 3).unwrap();
        assert_eq!(
            remove_softmax(&b.finish()),
            Err(TransformError::InteriorSoftmax("sm".into()))
        );
    }

    #[test]
    fn pipeline_on_resnet() {
        let g = build_resnet_v1_6(8, Shape::new(9, 128), 6).unwrap();
        let t = run_pipeline(&g).unwrap();
        let kinds: Vec<LayerKind> = t.nodes.values().map(|n| n.kind()).collect();
        assert!(!kinds.contains(&LayerKind::ReLU));
        assert!(!kinds.contains(&LayerKind::ZeroPad1D));
        assert_eq!(run_pipeline(&t).unwrap(), t);
        assert_eq!(t.parameter_count(), g.parameter_count());
        let x = input(g.input_shape);
        assert_eq!(run_float(&g, &x).unwrap(), run_float(&t, &x).unwrap());
    }
}
