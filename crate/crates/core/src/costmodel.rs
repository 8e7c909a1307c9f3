//! Operation counts, cycle estimates and memory footprint.
//!
//! | layer   | MACC      | add        | shift   | max/sat   |
//! |---------|-----------|------------|---------|-----------|
//! | Conv1D  | f·s·c·k   |            | 2·f·s   | f·s       |
//! | Dense   | n·s       |            | 2·n     | n         |
//! | Add     |           | s·c·(i−1)  | s·c·i   | s·c       |
//! | MaxPool |           |            |         | c·s·k     |
//! | ReLU    |           |            |         | c·s       |
//!
//! `s` is the output length for Conv1D/MaxPool and the input length for
//! Dense. Padded convolutions count only the products actually performed.
//! A fused ReLU is folded into the saturation and adds nothing. Affine,
//! AvgPool1D, BatchNorm and ZeroPad1D are outside the table and marked
//! as extrapolated. Cycles weigh max/sat twice, everything else once.

use std::collections::BTreeMap;
use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign};

use serde_json::{json, Value};

use crate::allocator::{plan_buffers, ram_bytes};
use crate::fxp::{container_bytes, long_bits};
use crate::ir::{infer_shapes, topo_order, Graph, IrError, Layer, LayerKind, NodeId, Shape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct OpCounts {
    pub macc: u64,
    pub add: u64,
    pub shift: u64,
    pub maxsat: u64,
}

impl OpCounts {
    pub fn cycles(&self) -> u64 {
        estimate_cycles(self)
    }
}

impl Add for OpCounts {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self {
            macc: self.macc + o.macc,
            add: self.add + o.add,
            shift: self.shift + o.shift,
            maxsat: self.maxsat + o.maxsat,
        }
    }
}

impl AddAssign for OpCounts {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl Sum for OpCounts {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), Add::add)
    }
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum CostError {
    #[error("layer `{0}` of kind {1} has no cost formula")]
    UnsupportedLayer(NodeId, LayerKind),
    #[error(transparent)]
    Ir(#[from] IrError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerCost {
    pub counts: OpCounts,
    /// Counted by an extension formula rather than the published table.
    pub extrapolated: bool,
}

/// `macc + add + shift + 2 * maxsat`.
pub fn estimate_cycles(c: &OpCounts) -> u64 {
    c.macc + c.add + c.shift + 2 * c.maxsat
}

/// Number of kernel taps that land on real (non-padding) samples, summed
/// over output positions.
fn valid_taps(attrs: &crate::ir::Conv1dAttrs, in_samples: usize, out_samples: usize) -> u64 {
    let mut taps = 0u64;
    for j in 0..out_samples {
        let start = (j * attrs.stride) as i64 - attrs.pad_left as i64;
        let lo = start.max(0);
        let hi = (start + attrs.kernel as i64).min(in_samples as i64);
        taps += (hi - lo).max(0) as u64;
    }
    taps
}

fn layer_cost(layer: &Layer, inputs: &[Shape], out: Shape) -> Option<LayerCost> {
    let table = |counts| LayerCost {
        counts,
        extrapolated: false,
    };
    let extra = |counts| LayerCost {
        counts,
        extrapolated: true,
    };
    let len = out.len() as u64;
    let zero = OpCounts::default();
    Some(match layer {
        Layer::Input | Layer::Flatten => table(zero),
        Layer::Conv1D { attrs, .. } => {
            let x = inputs[0];
            let f = attrs.filters as u64;
            let fs = f * out.samples as u64;
            table(OpCounts {
                macc: f * x.channels as u64 * valid_taps(attrs, x.samples, out.samples),
                shift: 2 * fs,
                maxsat: fs,
                ..zero
            })
        }
        Layer::Dense { units, .. } => {
            let n = *units as u64;
            table(OpCounts {
                macc: n * inputs[0].len() as u64,
                shift: 2 * n,
                maxsat: n,
                ..zero
            })
        }
        Layer::Add { .. } => {
            let i = inputs.len() as u64;
            table(OpCounts {
                add: len * (i - 1),
                shift: len * i,
                maxsat: len,
                ..zero
            })
        }
        Layer::MaxPool1D(p) => table(OpCounts {
            maxsat: len * p.size as u64,
            ..zero
        }),
        Layer::ReLU => table(OpCounts { maxsat: len, ..zero }),
        Layer::AvgPool1D(p) => extra(OpCounts {
            add: len * (p.size as u64 - 1),
            maxsat: len,
            ..zero
        }),
        Layer::Affine { .. } | Layer::BatchNorm { .. } => extra(OpCounts {
            macc: len,
            shift: 2 * len,
            maxsat: len,
            ..zero
        }),
        Layer::ZeroPad1D { .. } => extra(zero),
        Layer::SoftMax => return None,
    })
}

/// Static per-node counts from the layer formulas.
pub fn count_static(
    graph: &Graph,
    shapes: &BTreeMap<NodeId, Shape>,
) -> Result<BTreeMap<NodeId, LayerCost>, CostError> {
    graph
        .nodes
        .values()
        .map(|node| {
            let inputs: Vec<Shape> = node.inputs.iter().map(|i| shapes[i]).collect();
            layer_cost(&node.layer, &inputs, shapes[&node.id])
                .map(|c| (node.id.clone(), c))
                .ok_or_else(|| CostError::UnsupportedLayer(node.id.clone(), node.kind()))
        })
        .collect()
}

/// Numeric representation used for footprint figures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    Fixed(u32),
    Float32,
}

impl Precision {
    fn element_bytes(self) -> usize {
        match self {
            Precision::Fixed(w) => container_bytes(w),
            Precision::Float32 => 4,
        }
    }

    fn addend_bytes(self) -> usize {
        match self {
            Precision::Fixed(w) => long_bits(w) as usize / 8,
            Precision::Float32 => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RomMode {
    /// Every parameter at the element container size.
    PaperCompatible,
    /// Biases and offsets at the double-width container they are stored in.
    Deployed,
}

/// Parameter storage in bytes.
pub fn rom_report(graph: &Graph, precision: Precision, mode: RomMode) -> usize {
    graph
        .nodes
        .values()
        .map(|n| {
            let (mul, add) = n.layer.parameter_split();
            match mode {
                RomMode::PaperCompatible => (mul + add) * precision.element_bytes(),
                RomMode::Deployed => mul * precision.element_bytes() + add * precision.addend_bytes(),
            }
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeCost {
    pub id: NodeId,
    pub kind: LayerKind,
    pub cost: LayerCost,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostReport {
    /// Nodes in execution order.
    pub nodes: Vec<NodeCost>,
    pub total: OpCounts,
    pub cycles: u64,
    pub parameters: usize,
    pub rom_bytes: usize,
    pub rom_bytes_deployed: usize,
    pub ram_bytes: usize,
    pub pools: Vec<usize>,
}

pub fn cost_report(graph: &Graph, precision: Precision) -> Result<CostReport, CostError> {
    let order = topo_order(graph)?;
    let shapes = infer_shapes(graph)?;
    let counts = count_static(graph, &shapes)?;
    let plan = plan_buffers(graph, &shapes)?;
    let nodes: Vec<NodeCost> = order
        .iter()
        .map(|id| NodeCost {
            id: id.clone(),
            kind: graph.nodes[id].kind(),
            cost: counts[id],
        })
        .collect();
    let total: OpCounts = nodes.iter().map(|n| n.cost.counts).sum();
    let ram = match precision {
        Precision::Fixed(w) => ram_bytes(&plan, w),
        Precision::Float32 => plan.total_elements() * 4,
    };
    Ok(CostReport {
        total,
        cycles: estimate_cycles(&total),
        parameters: graph.parameter_count(),
        rom_bytes: rom_report(graph, precision, RomMode::PaperCompatible),
        rom_bytes_deployed: rom_report(graph, precision, RomMode::Deployed),
        ram_bytes: ram,
        pools: plan.pool_sizes,
        nodes,
    })
}

impl CostReport {
    pub fn to_json(&self) -> Value {
        let nodes: Vec<Value> = self
            .nodes
            .iter()
            .map(|n| {
                json!({
                    "id": n.id,
                    "kind": n.kind.name(),
                    "macc": n.cost.counts.macc,
                    "add": n.cost.counts.add,
                    "shift": n.cost.counts.shift,
                    "maxsat": n.cost.counts.maxsat,
                    "cycles": n.cost.counts.cycles(),
                    "extrapolated": n.cost.extrapolated,
                })
            })
            .collect();
        json!({
            "nodes": nodes,
            "total": {
                "macc": self.total.macc,
                "add": self.total.add,
                "shift": self.total.shift,
                "maxsat": self.total.maxsat,
            },
            "cycles": self.cycles,
            "parameters": self.parameters,
            "rom_bytes": self.rom_bytes,
            "rom_bytes_deployed": self.rom_bytes_deployed,
            "ram_bytes": self.ram_bytes,
            "pools": self.pools,
        })
    }
}

impl fmt::Display for CostReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<24} {:<10} {:>10} {:>8} {:>8} {:>8} {:>10}",
            "node", "kind", "macc", "add", "shift", "maxsat", "cycles"
        )?;
        for n in &self.nodes {
            let c = n.cost.counts;
            writeln!(
                f,
                "{:<24} {:<10} {:>10} {:>8} {:>8} {:>8} {:>10}{}",
                n.id,
                n.kind.name(),
                c.macc,
                c.add,
                c.shift,
                c.maxsat,
                c.cycles(),
                if n.cost.extrapolated { "  (extrapolated)" } else { "" }
            )?;
        }
        let t = self.total;
        writeln!(
            f,
            "{:<24} {:<10} {:>10} {:>8} {:>8} {:>8} {:>10}",
            "total", "", t.macc, t.add, t.shift, t.maxsat, self.cycles
        )?;
        writeln!(f, "parameters: {}", self.parameters)?;
        writeln!(f, "ROM: {}", self.rom_bytes)?;
        writeln!(f, "ROM (deployed): {}", self.rom_bytes_deployed)?;
        write!(f, "RAM: {} ({} pools)", self.ram_bytes, self.pools.len())
    }
}
