use std::collections::{BTreeMap, BTreeSet};

use super::{Graph, IrError, NodeId};

/// Topological order of the graph's nodes. Among ready nodes the smallest id
/// goes first, so the order is fully deterministic.
pub fn topo_order(graph: &Graph) -> Result<Vec<NodeId>, IrError> {
    let mut pending: BTreeMap<&str, usize> = BTreeMap::new();
    let mut consumers: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for node in graph.nodes.values() {
        for input in &node.inputs {
            if !graph.nodes.contains_key(input) {
                return Err(IrError::UnknownNode {
                    node: node.id.clone(),
                    missing: input.clone(),
                });
            }
            consumers.entry(input.as_str()).or_default().push(&node.id);
        }
        pending.insert(&node.id, node.inputs.len());
    }

    let mut ready: BTreeSet<&str> = pending
        .iter()
        .filter(|(_, n)| **n == 0)
        .map(|(id, _)| *id)
        .collect();
    let mut order = Vec::with_capacity(graph.nodes.len());
    while let Some(id) = ready.pop_first() {
        order.push(id.to_string());
        for consumer in consumers.get(id).into_iter().flatten() {
            let n = pending.get_mut(consumer).expect("consumer is a node");
            *n -= 1;
            if *n == 0 {
                ready.insert(consumer);
            }
        }
    }

    if order.len() != graph.nodes.len() {
        let stuck = pending
            .iter()
            .find(|(_, n)| **n > 0)
            .map(|(id, _)| id.to_string())
            .unwrap_or_default();
        return Err(IrError::CycleDetected(stuck));
    }
    Ok(order)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{Layer, LayerNode, Shape};

    fn graph(edges: &[(&str, &[&str])]) -> Graph {
        let mut g = Graph::new(Shape::new(1, 4), edges.last().unwrap().0);
        for (id, inputs) in edges {
            let layer = match inputs.len() {
                0 => Layer::Input,
                1 => Layer::ReLU,
                _ => Layer::Add { fused_relu: false },
            };
            g.insert(LayerNode::new(*id, inputs.iter().map(|s| s.to_string()).collect(), layer));
        }
        g
    }

    #[test]
    fn chain() {
        let g = graph(&[("In", &[]), ("A", &["In"]), ("B", &["A"])]);
        assert_eq!(topo_order(&g).unwrap(), ["In", "A", "B"]);
    }

    #[test]
    fn diamond() {
        let g = graph(&[
            ("In", &[]),
            ("A", &["In"]),
            ("C", &["A"]),
            ("B", &["A"]),
            ("Add", &["B", "C"]),
        ]);
        let order = topo_order(&g).unwrap();
        let pos = |id: &str| order.iter().position(|x| x == id).unwrap();
        assert!(pos("A") < pos("B") && pos("A") < pos("C"));
        assert_eq!(order.last().unwrap(), "Add");
        // ties go to the smaller id
        assert!(pos("B") < pos("C"));
    }

    #[test]
    fn self_loop() {
        let g = graph(&[("In", &[]), ("A", &["A"])]);
        assert_eq!(topo_order(&g), Err(IrError::CycleDetected("A".into())));
    }

    #[test]
    fn dangling_reference() {
        let g = graph(&[("In", &[]), ("A", &["nope"])]);
        assert!(matches!(topo_order(&g), Err(IrError::UnknownNode { .. })));
    }
}
