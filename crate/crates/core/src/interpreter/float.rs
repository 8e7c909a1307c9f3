//! Floating-point reference kernels.
//!
//! Accumulation order is fixed: bias first, then channel-major, then kernel
//! tap. The generated C performs the same operations in the same order, so
//! outputs agree bit for bit at equal precision.

use std::collections::BTreeMap;

use super::{InterpError, Tensor};
use crate::ir::{infer_shapes, topo_order, Conv1dAttrs, Graph, Layer, NodeId, PoolAttrs, Shape};

/// Scalar type of the float interpreter.
pub trait Real:
    num_traits::Float + std::fmt::Debug + std::fmt::Display + Default + Send + Sync + 'static
{
    fn lit(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    fn lit(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn lit(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
}

pub(crate) fn relu<T: Real>(v: T) -> T {
    if v > T::zero() {
        v
    } else {
        T::zero()
    }
}

fn cast<T: Real>(values: &[f64]) -> Vec<T> {
    values.iter().map(|&v| T::lit(v)).collect()
}

pub(crate) fn conv1d<T: Real>(
    x: &[T],
    input: Shape,
    attrs: &Conv1dAttrs,
    kernel: &[T],
    bias: &[T],
    out: Shape,
) -> Vec<T> {
    let (cin, s, k) = (input.channels, input.samples, attrs.kernel);
    let mut y = Vec::with_capacity(out.len());
    for f in 0..attrs.filters {
        for j in 0..out.samples {
            let mut acc = bias[f];
            for c in 0..cin {
                for t in 0..k {
                    let pos = j * attrs.stride + t;
                    if pos < attrs.pad_left || pos - attrs.pad_left >= s {
                        continue;
                    }
                    acc = acc + x[c * s + pos - attrs.pad_left] * kernel[(f * cin + c) * k + t];
                }
            }
            y.push(acc);
        }
    }
    y
}

pub(crate) fn dense<T: Real>(x: &[T], units: usize, kernel: &[T], bias: &[T]) -> Vec<T> {
    let n = x.len();
    (0..units)
        .map(|u| {
            let mut acc = bias[u];
            for (i, &v) in x.iter().enumerate() {
                acc = acc + v * kernel[u * n + i];
            }
            acc
        })
        .collect()
}

pub(crate) fn max_pool<T: Real>(x: &[T], input: Shape, p: &PoolAttrs, out: Shape) -> Vec<T> {
    let s = input.samples;
    let mut y = Vec::with_capacity(out.len());
    for c in 0..input.channels {
        for j in 0..out.samples {
            let base = c * s + j * p.stride;
            let mut m = x[base];
            for t in 1..p.size {
                if x[base + t] > m {
                    m = x[base + t];
                }
            }
            y.push(m);
        }
    }
    y
}

pub(crate) fn avg_pool<T: Real>(x: &[T], input: Shape, p: &PoolAttrs, out: Shape) -> Vec<T> {
    let s = input.samples;
    let div = T::lit(p.size as f64);
    let mut y = Vec::with_capacity(out.len());
    for c in 0..input.channels {
        for j in 0..out.samples {
            let base = c * s + j * p.stride;
            let mut acc = T::zero();
            for t in 0..p.size {
                acc = acc + x[base + t];
            }
            y.push(acc / div);
        }
    }
    y
}

pub(crate) fn affine<T: Real>(x: &[T], shape: Shape, scale: &[T], offset: &[T]) -> Vec<T> {
    let s = shape.samples;
    x.iter()
        .enumerate()
        .map(|(i, &v)| {
            let c = i / s;
            offset[c] + v * scale[c]
        })
        .collect()
}

pub(crate) fn zero_pad<T: Real>(x: &[T], input: Shape, left: usize, right: usize) -> Vec<T> {
    let s = input.samples;
    let mut y = Vec::with_capacity(input.channels * (s + left + right));
    for c in 0..input.channels {
        y.extend(std::iter::repeat(T::zero()).take(left));
        y.extend_from_slice(&x[c * s..(c + 1) * s]);
        y.extend(std::iter::repeat(T::zero()).take(right));
    }
    y
}

/// Evaluate one node on float inputs.
pub(crate) fn eval_node<T: Real>(
    layer: &Layer,
    inputs: &[&Tensor<T>],
    out: Shape,
) -> Result<Vec<T>, InterpError> {
    let x = inputs.first().map(|t| t.data.as_slice()).unwrap_or(&[]);
    let in_shape = inputs.first().map(|t| t.shape).unwrap_or(out);
    let mut y = match layer {
        Layer::Input => unreachable!("input is bound by the caller"),
        Layer::Conv1D { attrs, kernel, bias } => {
            conv1d(x, in_shape, attrs, &cast(&kernel.data), &cast(&bias.data), out)
        }
        Layer::Dense {
            units, kernel, bias, ..
        } => dense(x, *units, &cast(&kernel.data), &cast(&bias.data)),
        Layer::MaxPool1D(p) => max_pool(x, in_shape, p, out),
        Layer::AvgPool1D(p) => avg_pool(x, in_shape, p, out),
        Layer::BatchNorm {
            epsilon,
            mean,
            variance,
            gamma,
            beta,
        } => {
            let s = in_shape.samples;
            let eps = T::lit(*epsilon);
            x.iter()
                .enumerate()
                .map(|(i, &v)| {
                    let c = i / s;
                    let sigma = (T::lit(variance.data[c]) + eps).sqrt();
                    (v - T::lit(mean.data[c])) / sigma * T::lit(gamma.data[c]) + T::lit(beta.data[c])
                })
                .collect()
        }
        Layer::Affine { scale, offset } => affine(x, in_shape, &cast(&scale.data), &cast(&offset.data)),
        Layer::Add { .. } => {
            let mut acc = inputs[0].data.clone();
            for other in &inputs[1..] {
                for (a, &b) in acc.iter_mut().zip(&other.data) {
                    *a = *a + b;
                }
            }
            acc
        }
        Layer::ReLU => x.iter().map(|&v| relu(v)).collect(),
        Layer::ZeroPad1D {
            pad_left,
            pad_right,
        } => zero_pad(x, in_shape, *pad_left, *pad_right),
        Layer::Flatten => x.to_vec(),
        Layer::SoftMax => return Err(InterpError::Unsupported("SoftMax".into())),
    };
    if layer.fused_relu() {
        y.iter_mut().for_each(|v| *v = relu(*v));
    }
    Ok(y)
}

/// Run the graph and return every node's output.
pub fn run_float_all<T: Real>(
    graph: &Graph,
    input: &Tensor<T>,
) -> Result<BTreeMap<NodeId, Tensor<T>>, InterpError> {
    if input.shape != graph.input_shape || input.data.len() != input.shape.len() {
        return Err(InterpError::ShapeMismatch {
            expected: graph.input_shape,
            found: input.shape,
        });
    }
    let order = topo_order(graph)?;
    let shapes = infer_shapes(graph)?;
    let mut values: BTreeMap<NodeId, Tensor<T>> = BTreeMap::new();
    for id in &order {
        let node = &graph.nodes[id];
        let out = shapes[id];
        let tensor = if let Layer::Input = node.layer {
            input.clone()
        } else {
            let inputs: Vec<&Tensor<T>> = node.inputs.iter().map(|i| &values[i]).collect();
            Tensor {
                shape: out,
                data: eval_node(&node.layer, &inputs, out)?,
            }
        };
        values.insert(id.clone(), tensor);
    }
    Ok(values)
}

/// Run the graph in floating point and return the output node's tensor.
pub fn run_float<T: Real>(graph: &Graph, input: &Tensor<T>) -> Result<Tensor<T>, InterpError> {
    let mut all = run_float_all(graph, input)?;
    Ok(all.remove(&graph.output).expect("output node evaluated"))
}
