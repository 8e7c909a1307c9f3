//! Bit-exact fixed-point execution.
//!
//! Products of `w`-bit operands accumulate in a `2w`-bit long that wraps on
//! overflow (two's complement, as the emitted C does). Biases enter the
//! accumulator at `n_w + n_x`; the result is requantized to `n_y` with a
//! flooring shift and saturated to `w` bits. A fused ReLU clamps afterwards.

use std::cell::Cell;
use std::collections::BTreeMap;

use super::InterpError;
use crate::costmodel::OpCounts;
use crate::fxp::{long_bits, requantize, saturate, shift_right_floor, wrap, FixedTensor, QFormat};
use crate::ir::{Layer, NodeId, Shape};
use crate::quantizer::{LayerQuantInfo, QuantizedModel};

/// Per-node outputs and operation tallies of one fixed-point run.
#[derive(Debug, Clone, PartialEq)]
pub struct ExecutionTrace {
    pub outputs: BTreeMap<NodeId, FixedTensor>,
    pub counts: BTreeMap<NodeId, OpCounts>,
    /// Accumulator additions that wrapped around the double-width range.
    pub wraps: BTreeMap<NodeId, u64>,
}

impl ExecutionTrace {
    pub fn total(&self) -> OpCounts {
        self.counts.values().copied().sum()
    }

    pub fn total_wraps(&self) -> u64 {
        self.wraps.values().sum()
    }
}

struct Ctx {
    width: u32,
    long: u32,
    wraps: Cell<u64>,
}

impl Ctx {
    fn acc(&self, v: i64) -> i64 {
        let w = wrap(v, self.long);
        if w != v {
            self.wraps.set(self.wraps.get() + 1);
        }
        w
    }

    fn finish(&self, acc: i64, from: i32, to: i32, relu: bool) -> i64 {
        let y = requantize(acc, from, to, self.width);
        if relu {
            y.max(0)
        } else {
            y
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv(
    ctx: &Ctx,
    x: &[i64],
    input: Shape,
    attrs: &crate::ir::Conv1dAttrs,
    kernel: &[i64],
    bias: &[i64],
    out: Shape,
    info: &LayerQuantInfo,
    ops: &mut OpCounts,
) -> Vec<i64> {
    let (cin, s, k) = (input.channels, input.samples, attrs.kernel);
    let from = info.acc_frac();
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
                    let p = x[c * s + pos - attrs.pad_left] * kernel[(f * cin + c) * k + t];
                    acc = ctx.acc(acc + p);
                    ops.macc += 1;
                }
            }
            y.push(ctx.finish(acc, from, info.n_y, attrs.fused_relu));
            ops.shift += 2;
            ops.maxsat += 1;
        }
    }
    y
}

fn eval_node(
    ctx: &Ctx,
    qm: &QuantizedModel,
    id: &str,
    inputs: &[(&[i64], Shape)],
    out: Shape,
    ops: &mut OpCounts,
) -> Result<Vec<i64>, InterpError> {
    let node = &qm.graph.nodes[id];
    let info = &qm.info[id];
    let (x, in_shape) = inputs.first().copied().unwrap_or((&[], out));
    let relu = node.layer.fused_relu();
    let y = match &node.layer {
        Layer::Input => unreachable!("input is bound by the caller"),
        Layer::Conv1D { attrs, .. } => {
            let p = &qm.params[id];
            conv(ctx, x, in_shape, attrs, &p.weights.values(), &p.bias, out, info, ops)
        }
        Layer::Dense { units, .. } => {
            let p = &qm.params[id];
            let w = p.weights.values();
            let n = x.len();
            let mut y = Vec::with_capacity(*units);
            for u in 0..*units {
                let mut acc = p.bias[u];
                for (i, &v) in x.iter().enumerate() {
                    acc = ctx.acc(acc + v * w[u * n + i]);
                }
                ops.macc += n as u64;
                ops.shift += 2;
                ops.maxsat += 1;
                y.push(ctx.finish(acc, info.acc_frac(), info.n_y, relu));
            }
            y
        }
        Layer::Affine { .. } => {
            let p = &qm.params[id];
            let scale = p.weights.values();
            let s = in_shape.samples;
            x.iter()
                .enumerate()
                .map(|(i, &v)| {
                    let c = i / s;
                    let acc = ctx.acc(p.bias[c] + v * scale[c]);
                    ops.macc += 1;
                    ops.shift += 2;
                    ops.maxsat += 1;
                    ctx.finish(acc, info.acc_frac(), info.n_y, false)
                })
                .collect()
        }
        Layer::Add { .. } => {
            let mut y = Vec::with_capacity(out.len());
            let shifts: Vec<u32> = node
                .inputs
                .iter()
                .map(|p| (qm.info[p].n_y - info.n_x) as u32)
                .collect();
            for e in 0..out.len() {
                let mut acc = 0i64;
                for (k, ((v, _), &sh)) in inputs.iter().zip(&shifts).enumerate() {
                    let term = shift_right_floor(v[e], sh);
                    acc = if k == 0 { term } else { ctx.acc(acc + term) };
                }
                y.push(ctx.finish(acc, info.n_x, info.n_y, relu));
            }
            let (i, len) = (inputs.len() as u64, out.len() as u64);
            ops.add += len * (i - 1);
            ops.shift += len * i;
            ops.maxsat += len;
            y
        }
        Layer::MaxPool1D(p) => {
            let s = in_shape.samples;
            let mut y = Vec::with_capacity(out.len());
            for c in 0..in_shape.channels {
                for j in 0..out.samples {
                    let base = c * s + j * p.stride;
                    let mut m = x[base];
                    for t in 1..p.size {
                        m = m.max(x[base + t]);
                    }
                    y.push(if p.fused_relu { m.max(0) } else { m });
                }
            }
            ops.maxsat += (out.len() * p.size) as u64;
            y
        }
        Layer::AvgPool1D(p) => {
            let s = in_shape.samples;
            let div = p.size as i64;
            let mut y = Vec::with_capacity(out.len());
            for c in 0..in_shape.channels {
                for j in 0..out.samples {
                    let base = c * s + j * p.stride;
                    let mut acc = 0i64;
                    for t in 0..p.size {
                        acc = ctx.acc(acc + x[base + t]);
                    }
                    let v = saturate(acc.div_euclid(div), ctx.width);
                    y.push(if p.fused_relu { v.max(0) } else { v });
                }
            }
            ops.add += (out.len() * (p.size - 1)) as u64;
            ops.maxsat += out.len() as u64;
            y
        }
        Layer::ReLU => {
            ops.maxsat += x.len() as u64;
            x.iter().map(|&v| v.max(0)).collect()
        }
        Layer::ZeroPad1D {
            pad_left,
            pad_right,
        } => {
            let s = in_shape.samples;
            let mut y = Vec::with_capacity(out.len());
            for c in 0..in_shape.channels {
                y.extend(std::iter::repeat(0).take(*pad_left));
                y.extend_from_slice(&x[c * s..(c + 1) * s]);
                y.extend(std::iter::repeat(0).take(*pad_right));
            }
            y
        }
        Layer::Flatten => x.to_vec(),
        Layer::BatchNorm { .. } | Layer::SoftMax => {
            return Err(InterpError::Unsupported(node.kind().name().into()))
        }
    };
    Ok(y)
}

struct Run {
    values: BTreeMap<NodeId, Vec<i64>>,
    counts: BTreeMap<NodeId, OpCounts>,
    wraps: BTreeMap<NodeId, u64>,
}

/// Execute every node, keeping integer outputs, counts and wraps per node.
fn execute(qm: &QuantizedModel, input: &FixedTensor) -> Result<Run, InterpError> {
    let expected = qm.input_format();
    if input.format() != expected {
        return Err(InterpError::FormatMismatch {
            expected,
            found: input.format(),
        });
    }
    let in_shape = qm.graph.input_shape;
    let found = match input.dims() {
        [c, s] => Shape::new(*c, *s),
        _ => Shape::new(1, input.len()),
    };
    if found != in_shape {
        return Err(InterpError::ShapeMismatch {
            expected: in_shape,
            found,
        });
    }
    let ctx = Ctx {
        width: qm.width,
        long: long_bits(qm.width),
        wraps: Cell::new(0),
    };
    let mut values: BTreeMap<NodeId, Vec<i64>> = BTreeMap::new();
    let mut counts = BTreeMap::new();
    let mut wraps = BTreeMap::new();
    for id in &qm.order {
        let node = &qm.graph.nodes[id];
        let mut ops = OpCounts::default();
        let y = if let Layer::Input = node.layer {
            input.values()
        } else {
            let inputs: Vec<(&[i64], Shape)> = node
                .inputs
                .iter()
                .map(|i| (values[i].as_slice(), qm.shapes[i]))
                .collect();
            eval_node(&ctx, qm, id, &inputs, qm.shapes[id], &mut ops)?
        };
        counts.insert(id.clone(), ops);
        wraps.insert(id.clone(), ctx.wraps.replace(0));
        values.insert(id.clone(), y);
    }
    Ok(Run { values, counts, wraps })
}

fn to_tensor(qm: &QuantizedModel, id: &str, values: &[i64]) -> FixedTensor {
    let s = qm.shapes[id];
    let fmt = QFormat::new(qm.width, qm.info[id].n_y).expect("model width validated");
    FixedTensor::from_values(fmt, vec![s.channels, s.samples], values)
}

/// Run the quantized model on an input already converted to the input format.
pub fn run_fixed(qm: &QuantizedModel, input: &FixedTensor) -> Result<FixedTensor, InterpError> {
    let run = execute(qm, input)?;
    Ok(to_tensor(qm, &qm.graph.output, &run.values[&qm.graph.output]))
}

/// As [`run_fixed`], keeping every node's output and operation counts.
pub fn run_instrumented(qm: &QuantizedModel, input: &FixedTensor) -> Result<ExecutionTrace, InterpError> {
    let run = execute(qm, input)?;
    let outputs = run
        .values
        .iter()
        .map(|(id, v)| (id.clone(), to_tensor(qm, id, v)))
        .collect();
    Ok(ExecutionTrace {
        outputs,
        counts: run.counts,
        wraps: run.wraps,
    })
}
