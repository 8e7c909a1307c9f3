//! Greedy first-fit assignment of layer outputs to static buffer pools.

use std::collections::BTreeMap;

use serde_json::{json, Value};

use crate::fxp::container_bytes;
use crate::ir::{topo_order, Graph, IrError, LayerKind, NodeId, Shape};

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AllocationPlan {
    /// Pool index of every non-Input node.
    pub assignment: BTreeMap<NodeId, usize>,
    /// Element count of each pool: the largest buffer assigned to it.
    pub pool_sizes: Vec<usize>,
}

impl AllocationPlan {
    pub fn pool_count(&self) -> usize {
        self.pool_sizes.len()
    }

    pub fn pool_of(&self, id: &str) -> Option<usize> {
        self.assignment.get(id).copied()
    }

    pub fn total_elements(&self) -> usize {
        self.pool_sizes.iter().sum()
    }

    pub fn to_json(&self) -> Value {
        json!({
            "pools": self.pool_sizes,
            "assignment": self.assignment,
        })
    }
}

/// Walk nodes in topological order; each output takes the lowest-index pool
/// whose current occupant has no pending consumer, or opens a new pool.
/// Inputs of the node being placed are still pending at that point, so a node
/// never writes over its own operands. The graph output stays live.
pub fn plan_buffers(graph: &Graph, shapes: &BTreeMap<NodeId, Shape>) -> Result<AllocationPlan, IrError> {
    let order = topo_order(graph)?;
    let mut pending: BTreeMap<&str, usize> = graph
        .consumers()
        .into_iter()
        .map(|(id, users)| (graph.nodes.get_key_value(&id).unwrap().0.as_str(), users.len()))
        .collect();
    *pending.get_mut(graph.output.as_str()).expect("output exists") += 1;

    let mut plan = AllocationPlan::default();
    let mut occupant: Vec<&str> = Vec::new();
    for id in &order {
        let node = &graph.nodes[id];
        if node.kind() == LayerKind::Input {
            continue;
        }
        let size = shapes[id].len();
        let pool = match occupant.iter().position(|o| pending[o] == 0) {
            Some(p) => {
                occupant[p] = id;
                p
            }
            None => {
                occupant.push(id);
                plan.pool_sizes.push(0);
                occupant.len() - 1
            }
        };
        plan.pool_sizes[pool] = plan.pool_sizes[pool].max(size);
        plan.assignment.insert(id.clone(), pool);
        for input in &node.inputs {
            *pending.get_mut(input.as_str()).expect("validated input") -= 1;
        }
    }
    Ok(plan)
}

/// Bytes of all pools at `width`-bit elements.
pub fn ram_bytes(plan: &AllocationPlan, width: u32) -> usize {
    plan.total_elements() * container_bytes(width)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{infer_shapes, GraphBuilder, Layer};

    fn plan(g: &Graph) -> AllocationPlan {
        plan_buffers(g, &infer_shapes(g).unwrap()).unwrap()
    }

    #[test]
    fn chain_uses_two_pools() {
        let mut b = GraphBuilder::new("in", Shape::new(1, 8));
        b.simple("a", "in", Layer::ReLU).unwrap();
        b.simple("b", "a", Layer::ReLU).unwrap();
        b.simple("c", "b", Layer::ReLU).unwrap();
        let p = plan(&b.finish());
        assert_eq!(p.pool_count(), 2);
        assert_eq!((p.pool_of("a"), p.pool_of("b"), p.pool_of("c")), (Some(0), Some(1), Some(0)));
        assert_eq!(p.pool_of("in"), None);
    }

    #[test]
    fn residual_uses_three_pools() {
        let mut b = GraphBuilder::new("in", Shape::new(1, 8));
        b.simple("a", "in", Layer::ReLU).unwrap();
        b.simple("b", "a", Layer::ReLU).unwrap();
        b.add("add", &["a", "b"]).unwrap();
        let p = plan(&b.finish());
        assert_eq!(p.pool_count(), 3);
        assert_eq!(p.pool_of("add"), Some(2));
    }

    #[test]
    fn single_layer_and_sizes() {
        let mut b = GraphBuilder::new("in", Shape::new(1, 8));
        b.dense("fc", "in", 3).unwrap();
        let p = plan(&b.finish());
        assert_eq!(p.pool_sizes, [3]);
        let empty = plan(&GraphBuilder::new("in", Shape::new(1, 8)).finish());
        assert_eq!(ram_bytes(&empty, 16), 0);
        let two = AllocationPlan {
            assignment: BTreeMap::new(),
            pool_sizes: vec![128, 64],
        };
        assert_eq!(ram_bytes(&two, 16), 384);
        assert_eq!(ram_bytes(&two, 8), 192);
        assert_eq!(two.to_json()["pools"], json!([128, 64]));
    }
}
