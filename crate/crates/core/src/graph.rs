//! Computation graphs whose vertices are tensors and whose edges are operator
//! applications. Binary operators are hyperedges with an ordered source list.

use crate::ops::{OpKind, Operator};
use crate::tensor::numel;
use sha2::{Digest as _, Sha256};
use std::collections::BTreeSet;
use std::fmt;
use thiserror::Error;

pub type VertexId = usize;
pub type EdgeId = usize;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Vertex {
    /// Channel annotation; checked against inferred shapes when present.
    pub channels: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub op: Operator,
    pub inputs: Vec<VertexId>,
    pub output: VertexId,
    pub weights: Vec<Vec<f32>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Port {
    pub vertex: VertexId,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Graph {
    pub vertices: Vec<Vertex>,
    pub edges: Vec<Edge>,
    pub entries: Vec<Port>,
    pub exits: Vec<Port>,
}

/// A repeated backbone substructure: single entry, single exit.
pub type Block = Graph;
/// Container graph of a head, neck or backbone: several entries and exits allowed.
pub type ComponentGraph = Graph;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("edge {edge} ({kind}): {reason}")]
    ShapeMismatch { edge: EdgeId, kind: OpKind, reason: String },
    #[error("vertex {0} is not reachable from any entry")]
    UnreachableVertex(VertexId),
    #[error("expected {expected} entry shapes, got {found}")]
    EntryCount { expected: usize, found: usize },
    #[error("vertex {vertex}: shape {shape:?} contradicts channel annotation {channels}")]
    ChannelAnnotation {
        vertex: VertexId,
        shape: Vec<usize>,
        channels: usize,
    },
    #[error("edge {edge}: weight buffer {index} holds {found} values, expected {expected}")]
    WeightMismatch {
        edge: EdgeId,
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("malformed graph: {0}")]
    Malformed(String),
    #[error("invalid block: {0:?}")]
    InvalidBlock(Vec<Violation>),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Violation {
    BadReference { edge: EdgeId, vertex: VertexId },
    ArityMismatch { edge: EdgeId },
    MultipleProducers { vertex: VertexId },
    EntryProduced { vertex: VertexId },
    EntryCount(usize),
    ExitCount(usize),
    CycleDetected,
    Disconnected,
    UnreachableExit { vertex: VertexId },
}

impl Graph {
    pub fn producers(&self) -> Vec<Option<EdgeId>> {
        let mut p = vec![None; self.vertices.len()];
        for (e, edge) in self.edges.iter().enumerate() {
            if edge.output < p.len() {
                p[edge.output] = Some(e);
            }
        }
        p
    }

    pub fn consumers(&self) -> Vec<Vec<EdgeId>> {
        let mut c = vec![Vec::new(); self.vertices.len()];
        for (e, edge) in self.edges.iter().enumerate() {
            for &v in &edge.inputs {
                if v < c.len() && !c[v].contains(&e) {
                    c[v].push(e);
                }
            }
        }
        c
    }

    pub fn entry_vertices(&self) -> Vec<VertexId> {
        self.entries.iter().map(|p| p.vertex).collect()
    }

    pub fn exit_vertices(&self) -> Vec<VertexId> {
        self.exits.iter().map(|p| p.vertex).collect()
    }

    pub fn op_kinds(&self) -> BTreeSet<OpKind> {
        self.edges.iter().map(|e| e.op.kind()).collect()
    }

    /// Evaluation order of edges: an edge runs once all of its inputs are
    /// available, lowest edge index first. Edges that can never run are
    /// omitted.
    pub fn topo_order(&self) -> Vec<EdgeId> {
        let n = self.vertices.len();
        let mut available = vec![false; n];
        for p in &self.entries {
            if p.vertex < n {
                available[p.vertex] = true;
            }
        }
        let consumers = self.consumers();
        let mut missing: Vec<usize> = self
            .edges
            .iter()
            .map(|e| e.inputs.iter().filter(|&&v| v >= n || !available[v]).count())
            .collect();
        let mut ready: BTreeSet<EdgeId> = (0..self.edges.len()).filter(|&e| missing[e] == 0).collect();
        let mut done = vec![false; self.edges.len()];
        let mut order = Vec::with_capacity(self.edges.len());
        while let Some(e) = ready.pop_first() {
            if done[e] {
                continue;
            }
            done[e] = true;
            order.push(e);
            let out = self.edges[e].output;
            if out >= n || available[out] {
                continue;
            }
            available[out] = true;
            for &c in &consumers[out] {
                if done[c] {
                    continue;
                }
                let uses = self.edges[c].inputs.iter().filter(|&&v| v == out).count();
                missing[c] -= uses;
                if missing[c] == 0 {
                    ready.insert(c);
                }
            }
        }
        order
    }

    pub fn check_weights(&self) -> Result<(), GraphError> {
        for (e, edge) in self.edges.iter().enumerate() {
            let shapes = edge.op.weight_shapes();
            if shapes.len() != edge.weights.len() {
                return Err(GraphError::WeightMismatch {
                    edge: e,
                    index: edge.weights.len().min(shapes.len()),
                    expected: shapes.len(),
                    found: edge.weights.len(),
                });
            }
            for (i, (s, w)) in shapes.iter().zip(&edge.weights).enumerate() {
                if numel(s) != w.len() {
                    return Err(GraphError::WeightMismatch {
                        edge: e,
                        index: i,
                        expected: numel(s),
                        found: w.len(),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Assigns a shape to every vertex, given shapes for the entries in order.
pub fn infer_shapes(graph: &Graph, entry_shapes: &[Vec<usize>]) -> Result<Vec<Vec<usize>>, GraphError> {
    if entry_shapes.len() != graph.entries.len() {
        return Err(GraphError::EntryCount {
            expected: graph.entries.len(),
            found: entry_shapes.len(),
        });
    }
    check_refs(graph)?;
    let mut shapes: Vec<Option<Vec<usize>>> = vec![None; graph.vertices.len()];
    for (port, shape) in graph.entries.iter().zip(entry_shapes) {
        assign(graph, &mut shapes, port.vertex, shape.clone())?;
    }
    for e in graph.topo_order() {
        let edge = &graph.edges[e];
        let ins: Vec<&[usize]> = edge
            .inputs
            .iter()
            .map(|&v| shapes[v].as_deref().expect("topological order guarantees inputs"))
            .collect();
        let out = edge.op.infer(&ins).map_err(|reason| GraphError::ShapeMismatch {
            edge: e,
            kind: edge.op.kind(),
            reason,
        })?;
        if shapes[edge.output].is_some() {
            return Err(GraphError::Malformed(format!(
                "vertex {} is produced twice",
                edge.output
            )));
        }
        assign(graph, &mut shapes, edge.output, out)?;
    }
    shapes
        .into_iter()
        .enumerate()
        .map(|(v, s)| s.ok_or(GraphError::UnreachableVertex(v)))
        .collect()
}

fn assign(graph: &Graph, shapes: &mut [Option<Vec<usize>>], v: VertexId, shape: Vec<usize>) -> Result<(), GraphError> {
    if let Some(c) = graph.vertices[v].channels {
        if shape.first() != Some(&c) {
            return Err(GraphError::ChannelAnnotation {
                vertex: v,
                shape,
                channels: c,
            });
        }
    }
    shapes[v] = Some(shape);
    Ok(())
}

fn check_refs(graph: &Graph) -> Result<(), GraphError> {
    let n = graph.vertices.len();
    let ports = graph.entries.iter().chain(&graph.exits);
    if let Some(p) = ports.into_iter().find(|p| p.vertex >= n) {
        return Err(GraphError::Malformed(format!(
            "port `{}` names missing vertex {}",
            p.label, p.vertex
        )));
    }
    for (e, edge) in graph.edges.iter().enumerate() {
        if edge.output >= n || edge.inputs.iter().any(|&v| v >= n) {
            return Err(GraphError::Malformed(format!("edge {e} names a missing vertex")));
        }
        if edge.inputs.len() != edge.op.kind().arity().0 {
            return Err(GraphError::Malformed(format!("edge {e} has wrong arity")));
        }
    }
    Ok(())
}

fn reference_violations(graph: &Graph) -> Vec<Violation> {
    let n = graph.vertices.len();
    let mut out = Vec::new();
    let mut produced = vec![0usize; n];
    for (e, edge) in graph.edges.iter().enumerate() {
        for &v in edge.inputs.iter().chain(std::iter::once(&edge.output)) {
            if v >= n {
                out.push(Violation::BadReference { edge: e, vertex: v });
            }
        }
        if edge.inputs.len() != edge.op.kind().arity().0 {
            out.push(Violation::ArityMismatch { edge: e });
        }
        if edge.output < n {
            produced[edge.output] += 1;
        }
    }
    for (v, &count) in produced.iter().enumerate() {
        if count > 1 {
            out.push(Violation::MultipleProducers { vertex: v });
        }
    }
    for p in graph.entries.iter().chain(&graph.exits) {
        if p.vertex >= n {
            out.push(Violation::BadReference {
                edge: usize::MAX,
                vertex: p.vertex,
            });
        }
    }
    for p in &graph.entries {
        if p.vertex < n && produced[p.vertex] > 0 {
            out.push(Violation::EntryProduced { vertex: p.vertex });
        }
    }
    out
}

/// Arcs of the vertex-level digraph: one per (source, destination) pair of
/// every edge, references already checked.
fn arcs(graph: &Graph) -> impl Iterator<Item = (VertexId, VertexId)> + '_ {
    graph
        .edges
        .iter()
        .flat_map(|e| e.inputs.iter().map(move |&i| (i, e.output)))
}

fn has_cycle(graph: &Graph) -> bool {
    let n = graph.vertices.len();
    let mut indeg = vec![0usize; n];
    let mut succ = vec![Vec::new(); n];
    for (a, b) in arcs(graph) {
        indeg[b] += 1;
        succ[a].push(b);
    }
    let mut stack: Vec<VertexId> = (0..n).filter(|&v| indeg[v] == 0).collect();
    let mut seen = 0;
    while let Some(v) = stack.pop() {
        seen += 1;
        for &w in &succ[v] {
            indeg[w] -= 1;
            if indeg[w] == 0 {
                stack.push(w);
            }
        }
    }
    seen != n
}

fn weakly_connected(graph: &Graph) -> bool {
    let n = graph.vertices.len();
    if n <= 1 {
        return true;
    }
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    let mut components = n;
    for (a, b) in arcs(graph) {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra] = rb;
            components -= 1;
        }
    }
    components == 1
}

/// Block validity: directed, acyclic, weakly connected, one entry, one exit.
pub fn validate_structure(block: &Block) -> Result<(), Vec<Violation>> {
    let mut v = reference_violations(block);
    if block.entries.len() != 1 {
        v.push(Violation::EntryCount(block.entries.len()));
    }
    if block.exits.len() != 1 {
        v.push(Violation::ExitCount(block.exits.len()));
    }
    if v.iter().all(|x| !matches!(x, Violation::BadReference { .. })) {
        if has_cycle(block) {
            v.push(Violation::CycleDetected);
        }
        if !weakly_connected(block) {
            v.push(Violation::Disconnected);
        }
    }
    if v.is_empty() {
        Ok(())
    } else {
        Err(v)
    }
}

/// Component-graph validity: acyclic, at least one entry and exit, and every
/// exit reachable from some entry.
pub fn validate_component(graph: &ComponentGraph) -> Result<(), Vec<Violation>> {
    let mut v = reference_violations(graph);
    if graph.entries.is_empty() {
        v.push(Violation::EntryCount(0));
    }
    if graph.exits.is_empty() {
        v.push(Violation::ExitCount(0));
    }
    if v.iter().all(|x| !matches!(x, Violation::BadReference { .. })) {
        if has_cycle(graph) {
            v.push(Violation::CycleDetected);
        }
        let n = graph.vertices.len();
        let mut reach = vec![false; n];
        let mut stack = graph.entry_vertices();
        let mut succ = vec![Vec::new(); n];
        for (a, b) in arcs(graph) {
            succ[a].push(b);
        }
        while let Some(x) = stack.pop() {
            if !reach[x] {
                reach[x] = true;
                stack.extend(&succ[x]);
            }
        }
        for p in &graph.exits {
            if !reach[p.vertex] {
                v.push(Violation::UnreachableExit { vertex: p.vertex });
            }
        }
    }
    if v.is_empty() {
        Ok(())
    } else {
        Err(v)
    }
}

/// Hex digest of a structure. Weights never contribute.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Digest(pub String);

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Canonical edge order and vertex labels. Entries are labelled 0..n in
/// order; afterwards the ready edge with the smallest
/// (kind name, attributes, input labels) key is taken next and its output
/// receives the next label.
pub fn canonical_labeling(graph: &Graph) -> (Vec<EdgeId>, Vec<Option<usize>>) {
    let mut labels: Vec<Option<usize>> = vec![None; graph.vertices.len()];
    let mut next = 0;
    for p in &graph.entries {
        if labels[p.vertex].is_none() {
            labels[p.vertex] = Some(next);
            next += 1;
        }
    }
    let keys: Vec<(&'static str, String)> = graph
        .edges
        .iter()
        .map(|e| (e.op.kind().name(), e.op.attr_string()))
        .collect();
    let mut taken = vec![false; graph.edges.len()];
    let mut order = Vec::with_capacity(graph.edges.len());
    loop {
        let mut best: Option<(EdgeId, Vec<usize>)> = None;
        for (e, edge) in graph.edges.iter().enumerate() {
            if taken[e] {
                continue;
            }
            let Some(ins) = edge.inputs.iter().map(|&v| labels[v]).collect::<Option<Vec<_>>>() else {
                continue;
            };
            let better = match &best {
                None => true,
                Some((b, bins)) => (&keys[e], &ins) < (&keys[*b], bins),
            };
            if better {
                best = Some((e, ins));
            }
        }
        let Some((e, _)) = best else { break };
        taken[e] = true;
        order.push(e);
        let out = graph.edges[e].output;
        if labels[out].is_none() {
            labels[out] = Some(next);
            next += 1;
        }
    }
    (order, labels)
}

fn canonical_text(graph: &Graph) -> String {
    let (order, labels) = canonical_labeling(graph);
    let mut s = String::new();
    for e in order {
        let edge = &graph.edges[e];
        let ins: Vec<String> = edge
            .inputs
            .iter()
            .map(|&v| labels[v].map_or("?".into(), |l| l.to_string()))
            .collect();
        let out = labels[edge.output].map_or("?".into(), |l| l.to_string());
        s.push_str(&format!(
            "{}[{}]({})->{}\n",
            edge.op.kind().name(),
            edge.op.attr_string(),
            ins.join(","),
            out
        ));
    }
    let exits: Vec<String> = graph
        .exits
        .iter()
        .map(|p| labels[p.vertex].map_or("?".into(), |l| l.to_string()))
        .collect();
    s.push_str(&format!("exits:{}\n", exits.join(",")));
    s
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Digest over topology, operator kinds and attributes of a valid block.
pub fn structural_hash(block: &Block) -> Result<Digest, GraphError> {
    validate_structure(block).map_err(GraphError::InvalidBlock)?;
    Ok(Digest(sha256_hex(canonical_text(block).as_bytes())[..32].to_string()))
}

/// Same digest construction for multi-entry component graphs; only
/// requires well-formed references.
pub fn graph_digest(graph: &Graph) -> Digest {
    Digest(sha256_hex(canonical_text(graph).as_bytes())[..32].to_string())
}

/// Extracts the subgraph spanned by `edges` as a standalone graph. Entries are
/// vertices consumed but not produced inside the span, exits are vertices
/// produced but not consumed inside it. Returns the local→global vertex map.
pub fn extract_subgraph(graph: &Graph, edges: &[EdgeId]) -> (Graph, Vec<VertexId>) {
    let span: BTreeSet<EdgeId> = edges.iter().copied().collect();
    let produced: BTreeSet<VertexId> = span.iter().map(|&e| graph.edges[e].output).collect();
    let consumed: BTreeSet<VertexId> = span
        .iter()
        .flat_map(|&e| graph.edges[e].inputs.iter().copied())
        .collect();
    let mut local_to_global: Vec<VertexId> = consumed.difference(&produced).copied().collect();
    let entry_count = local_to_global.len();
    for &e in edges {
        let out = graph.edges[e].output;
        if !local_to_global.contains(&out) {
            local_to_global.push(out);
        }
    }
    let local = |g: VertexId| local_to_global.iter().position(|&x| x == g).unwrap();
    let mut sub = Graph {
        vertices: local_to_global.iter().map(|&g| graph.vertices[g].clone()).collect(),
        ..Graph::default()
    };
    for &e in edges {
        let edge = &graph.edges[e];
        sub.edges.push(Edge {
            op: edge.op.clone(),
            inputs: edge.inputs.iter().map(|&v| local(v)).collect(),
            output: local(edge.output),
            weights: edge.weights.clone(),
        });
    }
    sub.entries = (0..entry_count)
        .map(|i| Port {
            vertex: i,
            label: format!("in{i}"),
        })
        .collect();
    let exits: Vec<VertexId> = produced.difference(&consumed).map(|&g| local(g)).collect();
    sub.exits = exits
        .into_iter()
        .enumerate()
        .map(|(i, v)| Port {
            vertex: v,
            label: format!("out{i}"),
        })
        .collect();
    (sub, local_to_global)
}

/// Incremental graph construction.
#[derive(Debug, Default)]
pub struct GraphBuilder {
    graph: Graph,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Continues building on top of an existing graph.
    pub fn from_graph(graph: Graph) -> Self {
        Self { graph }
    }

    pub fn vertex(&mut self, channels: Option<usize>) -> VertexId {
        self.graph.vertices.push(Vertex { channels });
        self.graph.vertices.len() - 1
    }

    pub fn input(&mut self, label: impl Into<String>, channels: Option<usize>) -> VertexId {
        let v = self.vertex(channels);
        self.graph.entries.push(Port {
            vertex: v,
            label: label.into(),
        });
        v
    }

    /// Appends an operator application and returns its fresh output vertex.
    pub fn push(&mut self, op: Operator, inputs: &[VertexId], weights: Vec<Vec<f32>>) -> VertexId {
        let ch = |v: VertexId| self.graph.vertices[v].channels;
        let channels = match op.kind() {
            OpKind::Conv2D => Some(op.int("out_channels")),
            OpKind::DepthwiseConv2D | OpKind::BatchNorm => Some(op.int("channels")),
            OpKind::MatMul => Some(op.int("out_features")),
            OpKind::Concat if op.int("axis") == 0 => match (ch(inputs[0]), ch(inputs[1])) {
                (Some(a), Some(b)) => Some(a + b),
                _ => None,
            },
            OpKind::Concat => ch(inputs[0]),
            _ => ch(inputs[0]),
        };
        let out = self.vertex(channels);
        self.graph.edges.push(Edge {
            op,
            inputs: inputs.to_vec(),
            output: out,
            weights,
        });
        out
    }

    pub fn output(&mut self, v: VertexId, label: impl Into<String>) {
        self.graph.exits.push(Port {
            vertex: v,
            label: label.into(),
        });
    }

    /// Copies `other` into this graph, binding its entries to `bind` in order.
    /// Returns the vertices now holding `other`'s exits, in exit order.
    pub fn splice(&mut self, other: &Graph, bind: &[VertexId]) -> Vec<VertexId> {
        assert_eq!(bind.len(), other.entries.len(), "one binding per entry");
        let mut map: Vec<Option<VertexId>> = vec![None; other.vertices.len()];
        for (p, &b) in other.entries.iter().zip(bind) {
            map[p.vertex] = Some(b);
        }
        for (v, vertex) in other.vertices.iter().enumerate() {
            if map[v].is_none() {
                map[v] = Some(self.vertex(vertex.channels));
            }
        }
        let map: Vec<VertexId> = map.into_iter().map(|m| m.unwrap()).collect();
        for e in &other.edges {
            self.graph.edges.push(Edge {
                op: e.op.clone(),
                inputs: e.inputs.iter().map(|&v| map[v]).collect(),
                output: map[e.output],
                weights: e.weights.clone(),
            });
        }
        other.exits.iter().map(|p| map[p.vertex]).collect()
    }

    pub fn edge_count(&self) -> usize {
        self.graph.edges.len()
    }

    pub fn finish(self) -> Graph {
        self.graph
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attrs;

    fn conv(i: usize, o: usize, s: usize) -> Operator {
        Operator::new(
            OpKind::Conv2D,
            attrs!["in_channels" => i, "out_channels" => o, "stride" => s],
        )
        .unwrap()
    }

    fn conv_w(i: usize, o: usize, fill: f32) -> Vec<Vec<f32>> {
        vec![vec![fill; o * i * 9], vec![0.0; o]]
    }

    fn chain(kinds: &[Operator]) -> Block {
        let mut b = GraphBuilder::new();
        let mut v = b.input("x", None);
        for op in kinds {
            let w = op.weight_shapes().iter().map(|s| vec![0.5; numel(s)]).collect();
            v = b.push(op.clone(), &[v], w);
        }
        b.output(v, "y");
        b.finish()
    }

    #[test]
    fn infer_conv_relu_chain() {
        let g = chain(&[conv(3, 16, 1), Operator::simple(OpKind::ReLU)]);
        let shapes = infer_shapes(&g, &[vec![3, 32, 32]]).unwrap();
        assert_eq!(shapes[2], vec![16, 32, 32]);
        assert!(matches!(
            infer_shapes(&g, &[vec![4, 32, 32]]),
            Err(GraphError::ShapeMismatch { edge: 0, .. })
        ));
        assert!(matches!(infer_shapes(&g, &[]), Err(GraphError::EntryCount { .. })));
    }

    #[test]
    fn infer_reports_unreachable() {
        let mut g = chain(&[Operator::simple(OpKind::ReLU)]);
        g.vertices.push(Vertex::default());
        assert_eq!(
            infer_shapes(&g, &[vec![2, 2, 2]]),
            Err(GraphError::UnreachableVertex(2))
        );
    }

    #[test]
    fn validate_chain_cycle_and_disconnected() {
        let g = chain(&[conv(3, 3, 1), Operator::simple(OpKind::ReLU)]);
        assert_eq!(validate_structure(&g), Ok(()));

        let mut cyc = g.clone();
        // feed the exit back into an Add with the entry, writing the middle vertex
        cyc.edges[0] = Edge {
            op: Operator::simple(OpKind::Add),
            inputs: vec![0, 2],
            output: 1,
            weights: vec![],
        };
        assert!(validate_structure(&cyc)
            .unwrap_err()
            .contains(&Violation::CycleDetected));

        let mut b = GraphBuilder::new();
        let x = b.input("x", None);
        let y = b.push(Operator::simple(OpKind::ReLU), &[x], vec![]);
        let z = b.vertex(None);
        let w = b.push(Operator::simple(OpKind::Tanh), &[z], vec![]);
        b.output(y, "a");
        let mut two = b.finish();
        two.exits.truncate(1);
        let _ = w;
        let v = validate_structure(&two).unwrap_err();
        assert!(v.contains(&Violation::Disconnected), "{v:?}");
    }

    #[test]
    fn hash_ignores_weights_but_not_kinds_or_attrs() {
        let a = chain(&[conv(3, 3, 1), Operator::simple(OpKind::ReLU)]);
        let mut b = a.clone();
        b.edges[0].weights = conv_w(3, 3, 0.25);
        assert_eq!(structural_hash(&a).unwrap(), structural_hash(&b).unwrap());

        let c = chain(&[conv(3, 3, 1), Operator::simple(OpKind::Sigmoid)]);
        assert_ne!(structural_hash(&a).unwrap(), structural_hash(&c).unwrap());

        let d = chain(&[conv(3, 3, 2), Operator::simple(OpKind::ReLU)]);
        assert_ne!(structural_hash(&a).unwrap(), structural_hash(&d).unwrap());
    }

    #[test]
    fn hash_is_independent_of_edge_storage_order() {
        // residual block built in two different edge orders
        let build = |flip: bool| {
            let mut g = Graph {
                vertices: vec![Vertex::default(); 4],
                ..Graph::default()
            };
            g.entries.push(Port {
                vertex: 0,
                label: "x".into(),
            });
            let relu = Edge {
                op: Operator::simple(OpKind::ReLU),
                inputs: vec![0],
                output: 1,
                weights: vec![],
            };
            let id = Edge {
                op: Operator::simple(OpKind::Identity),
                inputs: vec![0],
                output: 2,
                weights: vec![],
            };
            let add = Edge {
                op: Operator::simple(OpKind::Add),
                inputs: vec![1, 2],
                output: 3,
                weights: vec![],
            };
            g.edges = if flip { vec![add, id, relu] } else { vec![relu, id, add] };
            g.exits.push(Port {
                vertex: 3,
                label: "y".into(),
            });
            g
        };
        assert_eq!(
            structural_hash(&build(false)).unwrap(),
            structural_hash(&build(true)).unwrap()
        );
        assert_eq!(build(true).topo_order(), vec![1, 2, 0]);
    }

    #[test]
    fn hash_rejects_invalid_block() {
        let mut g = chain(&[Operator::simple(OpKind::ReLU)]);
        g.exits.clear();
        assert!(matches!(structural_hash(&g), Err(GraphError::InvalidBlock(_))));
    }

    #[test]
    fn extract_and_splice() {
        let g = chain(&[
            conv(3, 4, 1),
            Operator::simple(OpKind::ReLU),
            Operator::simple(OpKind::Tanh),
        ]);
        let (sub, map) = extract_subgraph(&g, &[1, 2]);
        assert_eq!(map, vec![1, 2, 3]);
        assert_eq!(sub.entries.len(), 1);
        assert_eq!(sub.exits.len(), 1);
        assert_eq!(validate_structure(&sub), Ok(()));

        let mut b = GraphBuilder::new();
        let x = b.input("x", Some(4));
        let outs = b.splice(&sub, &[x]);
        b.output(outs[0], "y");
        let spliced = b.finish();
        assert_eq!(spliced.edges.len(), 2);
        assert_eq!(infer_shapes(&spliced, &[vec![4, 2, 2]]).unwrap().len(), 3);
    }

    #[test]
    fn weight_check() {
        let mut g = chain(&[conv(3, 4, 1)]);
        assert!(g.check_weights().is_ok());
        g.edges[0].weights[1].pop();
        assert!(matches!(
            g.check_weights(),
            Err(GraphError::WeightMismatch { index: 1, .. })
        ));
    }
}
