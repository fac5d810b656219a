//! Computation graph of a trained model.
//!
//! Operators and tensors live in one node list tagged by [`NodeKind`]. Every
//! edge must join an operator to a tensor (in either direction), so the graph
//! is bipartite, and it must be acyclic. A deterministic topological order is
//! computed at parse time and is what clients use for layered layout.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("malformed graph document: {0}")]
    Syntax(String),
    #[error("edge {from} -> {to} joins two {kind} nodes")]
    BipartiteViolation {
        from: NodeId,
        to: NodeId,
        kind: NodeKind,
    },
    #[error("graph contains a cycle through {0}")]
    CycleDetected(NodeId),
    #[error("edge {from} -> {to} references undeclared node {missing}")]
    DanglingEdge {
        from: NodeId,
        to: NodeId,
        missing: NodeId,
    },
    #[error("duplicate node id {0}")]
    DuplicateNodeId(NodeId),
    #[error("invalid node {id}: {reason}")]
    InvalidNode { id: String, reason: String },
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
}

impl GraphError {
    pub fn code(&self) -> &'static str {
        match self {
            GraphError::Syntax(_) => "SyntaxError",
            GraphError::BipartiteViolation { .. } => "BipartiteViolation",
            GraphError::CycleDetected(_) => "CycleDetected",
            GraphError::DanglingEdge { .. } => "DanglingEdge",
            GraphError::DuplicateNodeId(_) => "DuplicateNodeId",
            GraphError::InvalidNode { .. } => "InvalidNode",
            GraphError::UnknownNode(_) => "UnknownNode",
        }
    }
}

/// Identifier of a graph node. Case-sensitive, never empty.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(String);

impl NodeId {
    pub fn new(id: impl Into<String>) -> Self {
        NodeId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for NodeId {
    fn from(s: &str) -> Self {
        NodeId(s.to_owned())
    }
}

impl std::borrow::Borrow<str> for NodeId {
    fn borrow(&self) -> &str {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Operator,
    Tensor,
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeKind::Operator => f.write_str("operator"),
            NodeKind::Tensor => f.write_str("tensor"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphNode {
    pub id: NodeId,
    pub kind: NodeKind,
    pub display_name: String,
    /// Present exactly for operators.
    pub op_type: Option<String>,
    /// Member of the developer-declared default set. Always false for operators.
    pub inspectable: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub from: NodeId,
    pub to: NodeId,
}

/// Wire form of a node in `graph.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeDoc {
    id: String,
    kind: NodeKind,
    name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    op_type: Option<String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    inspectable: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct GraphDoc {
    nodes: Vec<NodeDoc>,
    edges: Vec<Edge>,
}

/// Validated, immutable bipartite DAG.
#[derive(Debug, Clone)]
pub struct ComputationGraph {
    nodes: Vec<GraphNode>,
    edges: Vec<Edge>,
    topo_order: Vec<NodeId>,
    index: HashMap<NodeId, usize>,
    preds: Vec<Vec<usize>>,
    succs: Vec<Vec<usize>>,
}

impl PartialEq for ComputationGraph {
    fn eq(&self, other: &Self) -> bool {
        self.nodes == other.nodes && self.edges == other.edges && self.topo_order == other.topo_order
    }
}

/// Direct neighbours of a node, split by edge direction, in edge declaration order.
#[derive(Debug, Clone, PartialEq)]
pub struct Neighbors<'a> {
    pub predecessors: Vec<&'a GraphNode>,
    pub successors: Vec<&'a GraphNode>,
}

/// Parse and validate a `graph.json` document.
pub fn parse_graph(document: &str) -> Result<ComputationGraph, GraphError> {
    let doc: GraphDoc =
        serde_json::from_str(document).map_err(|e| GraphError::Syntax(e.to_string()))?;
    let nodes = doc
        .nodes
        .into_iter()
        .map(|n| {
            if n.id.is_empty() {
                return Err(GraphError::InvalidNode {
                    id: n.id,
                    reason: "empty id".into(),
                });
            }
            Ok(GraphNode {
                id: NodeId(n.id),
                kind: n.kind,
                display_name: n.name,
                op_type: n.op_type,
                inspectable: n.inspectable,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    ComputationGraph::new(nodes, doc.edges)
}

impl ComputationGraph {
    /// Build a graph from parts, enforcing every structural invariant.
    pub fn new(nodes: Vec<GraphNode>, edges: Vec<Edge>) -> Result<Self, GraphError> {
        let mut index = HashMap::with_capacity(nodes.len());
        for (i, node) in nodes.iter().enumerate() {
            match node.kind {
                NodeKind::Operator if node.op_type.is_none() => {
                    return Err(GraphError::InvalidNode {
                        id: node.id.0.clone(),
                        reason: "operator without op_type".into(),
                    })
                }
                NodeKind::Operator if node.inspectable => {
                    return Err(GraphError::InvalidNode {
                        id: node.id.0.clone(),
                        reason: "operators cannot be inspectable".into(),
                    })
                }
                NodeKind::Tensor if node.op_type.is_some() => {
                    return Err(GraphError::InvalidNode {
                        id: node.id.0.clone(),
                        reason: "op_type on a tensor".into(),
                    })
                }
                _ => {}
            }
            if index.insert(node.id.clone(), i).is_some() {
                return Err(GraphError::DuplicateNodeId(node.id.clone()));
            }
        }

        let mut preds = vec![Vec::new(); nodes.len()];
        let mut succs = vec![Vec::new(); nodes.len()];
        for edge in &edges {
            let resolve = |id: &NodeId| {
                index.get(id).copied().ok_or_else(|| GraphError::DanglingEdge {
                    from: edge.from.clone(),
                    to: edge.to.clone(),
                    missing: id.clone(),
                })
            };
            let from = resolve(&edge.from)?;
            let to = resolve(&edge.to)?;
            if nodes[from].kind == nodes[to].kind {
                return Err(GraphError::BipartiteViolation {
                    from: edge.from.clone(),
                    to: edge.to.clone(),
                    kind: nodes[from].kind,
                });
            }
            succs[from].push(to);
            preds[to].push(from);
        }

        let topo = topological_order(&preds, &succs)
            .map_err(|stuck| GraphError::CycleDetected(nodes[stuck].id.clone()))?;
        let topo_order = topo.into_iter().map(|i| nodes[i].id.clone()).collect();

        Ok(ComputationGraph {
            nodes,
            edges,
            topo_order,
            index,
            preds,
            succs,
        })
    }

    pub fn nodes(&self) -> &[GraphNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn topo_order(&self) -> &[NodeId] {
        &self.topo_order
    }

    pub fn node(&self, id: &str) -> Option<&GraphNode> {
        self.index.get(id).map(|&i| &self.nodes[i])
    }

    pub fn neighbors(&self, id: &str) -> Result<Neighbors<'_>, GraphError> {
        let &i = self
            .index
            .get(id)
            .ok_or_else(|| GraphError::UnknownNode(NodeId::from(id)))?;
        Ok(Neighbors {
            predecessors: self.preds[i].iter().map(|&p| &self.nodes[p]).collect(),
            successors: self.succs[i].iter().map(|&s| &self.nodes[s]).collect(),
        })
    }

    /// Tensor nodes in the default inspection set, in topological order.
    pub fn inspectable_nodes(&self) -> Vec<&GraphNode> {
        self.topo_order
            .iter()
            .map(|id| &self.nodes[self.index[id]])
            .filter(|n| n.kind == NodeKind::Tensor && n.inspectable)
            .collect()
    }

    /// Canonical `graph.json` form. Parsing the output yields an equal graph.
    pub fn to_document(&self) -> String {
        serde_json::to_string_pretty(&self.doc()).expect("graph document serializes")
    }

    /// The document value, used by the HTTP layer to attach the topological order.
    pub fn to_json_value(&self) -> serde_json::Value {
        let mut value = serde_json::to_value(self.doc()).expect("graph document serializes");
        value["topo_order"] = serde_json::to_value(&self.topo_order).expect("ids serialize");
        value
    }

    fn doc(&self) -> GraphDoc {
        GraphDoc {
            nodes: self
                .nodes
                .iter()
                .map(|n| NodeDoc {
                    id: n.id.0.clone(),
                    kind: n.kind,
                    name: n.display_name.clone(),
                    op_type: n.op_type.clone(),
                    inspectable: n.inspectable,
                })
                .collect(),
            edges: self.edges.clone(),
        }
    }
}

/// Kahn's algorithm; among ready nodes the earliest-declared goes first.
/// On a cycle, returns the index of some node that could not be scheduled.
fn topological_order(preds: &[Vec<usize>], succs: &[Vec<usize>]) -> Result<Vec<usize>, usize> {
    let mut in_degree: Vec<usize> = preds.iter().map(Vec::len).collect();
    let mut ready: BTreeSet<usize> = (0..preds.len()).filter(|&i| in_degree[i] == 0).collect();
    let mut order = Vec::with_capacity(preds.len());
    while let Some(next) = ready.pop_first() {
        order.push(next);
        for &s in &succs[next] {
            in_degree[s] -= 1;
            if in_degree[s] == 0 {
                ready.insert(s);
            }
        }
    }
    if order.len() == preds.len() {
        Ok(order)
    } else {
        Err(in_degree.iter().position(|&d| d > 0).unwrap_or(0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const CHAIN: &str = r#"{
        "nodes": [
            {"id": "t_in", "kind": "tensor", "name": "input"},
            {"id": "conv", "kind": "operator", "name": "Conv", "op_type": "conv"},
            {"id": "t_out", "kind": "tensor", "name": "output", "inspectable": true}
        ],
        "edges": [{"from": "t_in", "to": "conv"}, {"from": "conv", "to": "t_out"}]
    }"#;

    fn ids(nodes: &[&GraphNode]) -> Vec<String> {
        nodes.iter().map(|n| n.id.to_string()).collect()
    }

    #[test]
    fn chain_parses_in_order() {
        let g = parse_graph(CHAIN).unwrap();
        assert_eq!(g.nodes().len(), 3);
        let order: Vec<_> = g.topo_order().iter().map(NodeId::as_str).collect();
        assert_eq!(order, ["t_in", "conv", "t_out"]);
    }

    #[test]
    fn chain_neighbors() {
        let g = parse_graph(CHAIN).unwrap();
        let n = g.neighbors("conv").unwrap();
        assert_eq!(ids(&n.predecessors), ["t_in"]);
        assert_eq!(ids(&n.successors), ["t_out"]);
        let n = g.neighbors("t_in").unwrap();
        assert!(n.predecessors.is_empty());
        assert_eq!(ids(&n.successors), ["conv"]);
        assert_eq!(
            g.neighbors("nope").unwrap_err(),
            GraphError::UnknownNode("nope".into())
        );
    }

    #[test]
    fn same_kind_edge_rejected() {
        let doc = r#"{"nodes": [
            {"id": "t1", "kind": "tensor", "name": "t1"},
            {"id": "op1", "kind": "operator", "name": "a", "op_type": "relu"},
            {"id": "op2", "kind": "operator", "name": "b", "op_type": "relu"}],
            "edges": [{"from": "op1", "to": "op2"}]}"#;
        let err = parse_graph(doc).unwrap_err();
        assert_eq!(err.code(), "BipartiteViolation");
    }

    #[test]
    fn structural_errors() {
        let dup = r#"{"nodes": [{"id": "a", "kind": "tensor", "name": "a"},
            {"id": "a", "kind": "tensor", "name": "b"}], "edges": []}"#;
        assert_eq!(parse_graph(dup).unwrap_err().code(), "DuplicateNodeId");

        let dangling = r#"{"nodes": [{"id": "a", "kind": "tensor", "name": "a"}],
            "edges": [{"from": "a", "to": "ghost"}]}"#;
        assert_eq!(parse_graph(dangling).unwrap_err().code(), "DanglingEdge");

        let cycle = r#"{"nodes": [{"id": "a", "kind": "tensor", "name": "a"},
            {"id": "f", "kind": "operator", "name": "f", "op_type": "add"}],
            "edges": [{"from": "a", "to": "f"}, {"from": "f", "to": "a"}]}"#;
        assert_eq!(parse_graph(cycle).unwrap_err().code(), "CycleDetected");

        assert_eq!(parse_graph("{nodes: ").unwrap_err().code(), "SyntaxError");
        assert_eq!(parse_graph(r#"{"nodes": []}"#).unwrap_err().code(), "SyntaxError");

        let tensor_op = r#"{"nodes": [{"id": "a", "kind": "tensor", "name": "a", "op_type": "x"}],
            "edges": []}"#;
        assert_eq!(parse_graph(tensor_op).unwrap_err().code(), "InvalidNode");
    }

    #[test]
    fn ids_are_case_sensitive() {
        let doc = r#"{"nodes": [{"id": "a", "kind": "tensor", "name": "a"},
            {"id": "A", "kind": "tensor", "name": "A"}], "edges": []}"#;
        let g = parse_graph(doc).unwrap();
        assert!(g.node("a").is_some() && g.node("A").is_some());
    }

    #[test]
    fn no_inspectable_tensors() {
        let doc = r#"{"nodes": [{"id": "a", "kind": "tensor", "name": "a"}], "edges": []}"#;
        assert!(parse_graph(doc).unwrap().inspectable_nodes().is_empty());
    }

    #[test]
    fn document_round_trip() {
        let g = parse_graph(CHAIN).unwrap();
        assert_eq!(parse_graph(&g.to_document()).unwrap(), g);
    }
}
