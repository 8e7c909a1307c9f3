use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use super::shape::node_output_shape;
use super::{topo_order, Graph, IrError, Layer, LayerKind, LayerNode, NodeId, Shape, WeightArray};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ViolationKind {
    InputCount,
    UnknownOutput,
    DanglingReference,
    Arity,
    Cycle,
    Unreachable,
    Unconsumed,
    Attribute,
    WeightDimension,
    NonFiniteWeight,
    ShapeMismatch,
    NonPositiveOutputLength,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub node: Option<NodeId>,
    pub kind: ViolationKind,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.node {
            Some(n) => write!(f, "[{:?}] {}: {}", self.kind, n, self.message),
            None => write!(f, "[{:?}] {}", self.kind, self.message),
        }
    }
}

/// Every invariant violation found in a graph. Empty means well-formed.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, kind: ViolationKind) -> bool {
        self.violations.iter().any(|v| v.kind == kind)
    }

    fn push(&mut self, node: Option<&str>, kind: ViolationKind, message: impl Into<String>) {
        self.violations.push(Violation {
            node: node.map(str::to_string),
            kind,
            message: message.into(),
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.violations {
            writeln!(f, "  {v}")?;
        }
        Ok(())
    }
}

pub fn validate(graph: &Graph) -> ValidationReport {
    let mut report = ValidationReport::default();

    let inputs: Vec<&LayerNode> = graph
        .nodes
        .values()
        .filter(|n| n.kind() == LayerKind::Input)
        .collect();
    if inputs.len() != 1 {
        report.push(
            None,
            ViolationKind::InputCount,
            format!("expected exactly one Input node, found {}", inputs.len()),
        );
    }
    if !graph.nodes.contains_key(&graph.output) {
        report.push(
            None,
            ViolationKind::UnknownOutput,
            format!("output `{}` is not a node", graph.output),
        );
    }
    if graph.input_shape.channels == 0 || graph.input_shape.samples == 0 {
        report.push(None, ViolationKind::Attribute, "input shape must be positive");
    }

    let mut dangling = false;
    for node in graph.nodes.values() {
        let id = Some(node.id.as_str());
        for input in &node.inputs {
            if !graph.nodes.contains_key(input) {
                dangling = true;
                report.push(
                    id,
                    ViolationKind::DanglingReference,
                    format!("input `{input}` does not exist"),
                );
            }
        }
        let arity_ok = match node.kind() {
            LayerKind::Input => node.inputs.is_empty(),
            LayerKind::Add => node.inputs.len() >= 2,
            _ => node.inputs.len() == 1,
        };
        if !arity_ok {
            report.push(
                id,
                ViolationKind::Arity,
                format!("{} node has {} inputs", node.kind(), node.inputs.len()),
            );
        }
        check_attributes(node, &mut report);
    }
    if dangling {
        return report;
    }

    let order = match topo_order(graph) {
        Ok(o) => o,
        Err(IrError::CycleDetected(id)) => {
            report.push(Some(&id), ViolationKind::Cycle, "node lies on a cycle");
            return report;
        }
        Err(e) => {
            report.push(None, ViolationKind::DanglingReference, e.to_string());
            return report;
        }
    };

    // Reachability from the input and consumption of every non-output node.
    if let (Some(input), true) = (inputs.first(), graph.nodes.contains_key(&graph.output)) {
        let consumers = graph.consumers();
        let mut reached: BTreeSet<&str> = BTreeSet::new();
        let mut stack = vec![input.id.as_str()];
        while let Some(id) = stack.pop() {
            if reached.insert(id) {
                stack.extend(consumers[id].iter().map(String::as_str));
            }
        }
        if !reached.contains(graph.output.as_str()) {
            report.push(
                Some(&graph.output),
                ViolationKind::Unreachable,
                "output is not reachable from the input",
            );
        }
        for (id, users) in &consumers {
            if users.is_empty() && *id != graph.output {
                report.push(Some(id), ViolationKind::Unconsumed, "result is never consumed");
            }
        }
    }

    let mut shapes: BTreeMap<&str, Shape> = BTreeMap::new();
    for id in &order {
        let node = &graph.nodes[id];
        if node.kind() == LayerKind::Input {
            shapes.insert(id, graph.input_shape);
            continue;
        }
        let Some(in_shapes) = node
            .inputs
            .iter()
            .map(|i| shapes.get(i.as_str()).copied())
            .collect::<Option<Vec<Shape>>>()
        else {
            continue;
        };
        if in_shapes.is_empty() {
            continue;
        }
        check_weights(node, in_shapes[0], &mut report);
        match node_output_shape(node, &in_shapes) {
            Ok(s) => {
                shapes.insert(id, s);
            }
            Err(IrError::NonPositiveOutputLength { window, padded, .. }) => report.push(
                Some(id),
                ViolationKind::NonPositiveOutputLength,
                format!("window {window} exceeds padded input length {padded}"),
            ),
            Err(e) => report.push(Some(id), ViolationKind::ShapeMismatch, e.to_string()),
        }
    }

    report
}

fn check_attributes(node: &LayerNode, report: &mut ValidationReport) {
    let id = Some(node.id.as_str());
    let mut bad = |what: &str| report.push(id, ViolationKind::Attribute, what.to_string());
    match &node.layer {
        Layer::Conv1D { attrs, .. } => {
            if attrs.filters == 0 {
                bad("filters must be >= 1");
            }
            if attrs.kernel == 0 {
                bad("kernel must be >= 1");
            }
            if attrs.stride == 0 {
                bad("stride must be >= 1");
            }
        }
        Layer::Dense { units, .. } if *units == 0 => bad("units must be >= 1"),
        Layer::MaxPool1D(p) | Layer::AvgPool1D(p) => {
            if p.size == 0 {
                bad("pool size must be >= 1");
            }
            if p.stride == 0 {
                bad("stride must be >= 1");
            }
        }
        Layer::BatchNorm { epsilon, .. } if !epsilon.is_finite() || *epsilon < 0.0 => {
            bad("epsilon must be finite and non-negative")
        }
        _ => {}
    }
}

fn check_weights(node: &LayerNode, input: Shape, report: &mut ValidationReport) {
    let id = Some(node.id.as_str());
    let mut expect = |name: &str, array: &WeightArray, dims: &[usize]| {
        if array.dims != dims || array.data.len() != dims.iter().product::<usize>() {
            report.push(
                id,
                ViolationKind::WeightDimension,
                format!("{name} has dims {:?}, expected {:?}", array.dims, dims),
            );
        } else if array.data.iter().any(|v| !v.is_finite()) {
            report.push(id, ViolationKind::NonFiniteWeight, format!("{name} has non-finite values"));
        }
    };
    let c = input.channels;
    match &node.layer {
        Layer::Conv1D { attrs, kernel, bias } => {
            expect("kernel", kernel, &[attrs.filters, c, attrs.kernel]);
            expect("bias", bias, &[attrs.filters]);
        }
        Layer::Dense {
            units, kernel, bias, ..
        } => {
            expect("kernel", kernel, &[*units, input.len()]);
            expect("bias", bias, &[*units]);
        }
        Layer::BatchNorm {
            mean,
            variance,
            gamma,
            beta,
            ..
        } => {
            expect("mean", mean, &[c]);
            expect("variance", variance, &[c]);
            expect("gamma", gamma, &[c]);
            expect("beta", beta, &[c]);
        }
        Layer::Affine { scale, offset } => {
            expect("scale", scale, &[c]);
            expect("offset", offset, &[c]);
        }
        _ => {}
    }
}
