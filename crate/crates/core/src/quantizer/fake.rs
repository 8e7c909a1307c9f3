//! Float forward pass with quantize-dequantize at every fixed-point boundary.

use std::collections::BTreeMap;

use super::{quantize_model, CalibrationStats, QuantError, QuantizationScheme, QuantizedModel};
use crate::fxp::{dequantize, long_bits, quantize_bits};
use crate::interpreter::{eval_float_node, InterpError, Tensor};
use crate::ir::{Layer, NodeId, WeightArray};

fn round_trip(values: &[f64], frac: i32, bits: u32) -> Vec<f64> {
    values
        .iter()
        .map(|&v| dequantize(quantize_bits(v, frac, bits), frac))
        .collect()
}

impl QuantizedModel {
    /// Layer with its parameters replaced by their dequantized integers.
    fn dequantized_layer(&self, id: &str) -> Layer {
        let layer = self.graph.nodes[id].layer.clone();
        let Some(p) = self.params.get(id) else {
            return layer;
        };
        let n_b = self.info[id].n_b.expect("parameterised layer");
        let w = WeightArray::new(p.weights.dims().to_vec(), p.weights.dequantize());
        let b = WeightArray::vector(p.bias.iter().map(|&v| dequantize(v, n_b)).collect());
        match layer {
            Layer::Conv1D { attrs, .. } => Layer::Conv1D {
                attrs,
                kernel: w,
                bias: b,
            },
            Layer::Dense { units, fused_relu, .. } => Layer::Dense {
                units,
                fused_relu,
                kernel: w,
                bias: b,
            },
            Layer::Affine { .. } => Layer::Affine { scale: w, offset: b },
            other => other,
        }
    }

    /// Evaluate in float with quantization applied to the input, every
    /// parameter, Add operands (at the common precision) and every node output.
    pub fn fake_forward(&self, input: &Tensor<f64>) -> Result<Tensor<f64>, InterpError> {
        if input.shape != self.graph.input_shape {
            return Err(InterpError::ShapeMismatch {
                expected: self.graph.input_shape,
                found: input.shape,
            });
        }
        let w = self.width;
        let mut values: BTreeMap<NodeId, Tensor<f64>> = BTreeMap::new();
        for id in &self.order {
            let node = &self.graph.nodes[id];
            let info = &self.info[id];
            let shape = self.shapes[id];
            let raw = if let Layer::Input = node.layer {
                input.data.clone()
            } else {
                let aligned: Vec<Tensor<f64>>;
                let inputs: Vec<&Tensor<f64>> = if let Layer::Add { .. } = node.layer {
                    aligned = node
                        .inputs
                        .iter()
                        .map(|i| {
                            let t = &values[i];
                            Tensor::new(t.shape, round_trip(&t.data, info.n_x, long_bits(w)))
                        })
                        .collect();
                    aligned.iter().collect()
                } else {
                    node.inputs.iter().map(|i| &values[i]).collect()
                };
                eval_float_node(&self.dequantized_layer(id), &inputs, shape)?
            };
            values.insert(id.clone(), Tensor::new(shape, round_trip(&raw, info.n_y, w)));
        }
        Ok(values.remove(&self.graph.output).expect("output evaluated"))
    }
}

/// Quantize `graph` under `scheme` and run [`QuantizedModel::fake_forward`].
pub fn fake_quantize_forward(
    graph: &crate::ir::Graph,
    scheme: &QuantizationScheme,
    stats: Option<&CalibrationStats>,
    input: &Tensor<f64>,
) -> Result<Tensor<f64>, QuantError> {
    let qm = quantize_model(graph, scheme, stats)?;
    Ok(qm.fake_forward(input)?)
}
