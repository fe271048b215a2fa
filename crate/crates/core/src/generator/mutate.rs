//! Block-wise backbone mutation.
//!
//! Blocks are grouped by structural hash. For each group one representative
//! has the operator on a random single-input edge `i -> j` replaced; the
//! same replacement is applied to every block of the group, giving one
//! mutated backbone per group.

use super::init::{operator_for, random_weights};
use super::ledger::ContributionLedger;
use super::{select_operator, unary_catalog, SelectError};
use crate::graph::{
    canonical_labeling, extract_subgraph, infer_shapes, structural_hash, validate_structure, Digest, EdgeId, Graph,
};
use crate::ops::OpKind;
use crate::repo::{Component, ComponentKind, Origin};
use rand::Rng;
use thiserror::Error;

pub const MAX_ATTEMPTS: usize = 100;
/// Vertex-pair draws allowed when looking for a single-input edge.
const MAX_PAIR_DRAWS: usize = 10_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MutateError {
    #[error("component `{0}` is not a backbone")]
    NotBackbone(String),
    #[error("backbone `{0}` declares no blocks")]
    NoBlocks(String),
    #[error("block group {group} has no mutable single-input edge")]
    NoMutableEdge { group: usize },
    #[error("block {block} is invalid: {reason}")]
    InvalidBlock { block: usize, reason: String },
    #[error("backbone does not pass shape inference: {0}")]
    Shapes(String),
    #[error(transparent)]
    Select(#[from] SelectError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mutant {
    /// Carries a provisional id; the repository issues the real one.
    pub component: Component,
    pub group: usize,
    pub original: OpKind,
    pub operator: OpKind,
    /// Global edges rewritten, one per block of the group.
    pub edges: Vec<EdgeId>,
    pub attempts: usize,
    /// True when every attempt failed and the edge became Identity.
    pub fallback: bool,
}

/// Groups of block indices with equal structural hash, in order of first
/// appearance.
pub fn group_blocks(backbone: &Component) -> Result<Vec<(Digest, Vec<usize>)>, MutateError> {
    let mut groups: Vec<(Digest, Vec<usize>)> = Vec::new();
    for (b, edges) in backbone.blocks.iter().enumerate() {
        let (sub, _) = extract_subgraph(&backbone.graph, edges);
        let h = structural_hash(&sub).map_err(|e| MutateError::InvalidBlock {
            block: b,
            reason: e.to_string(),
        })?;
        match groups.iter_mut().find(|(d, _)| *d == h) {
            Some((_, members)) => members.push(b),
            None => groups.push((h, vec![b])),
        }
    }
    Ok(groups)
}

/// Global edge ids of `block` in canonical order, so position `k` names the
/// same edge in every block of a group.
fn canonical_edges(backbone: &Component, block: usize) -> Vec<EdgeId> {
    let edges = &backbone.blocks[block];
    let (sub, _) = extract_subgraph(&backbone.graph, edges);
    canonical_labeling(&sub)
        .0
        .into_iter()
        .map(|local| edges[local])
        .collect()
}

/// Draws vertex pairs of `sub` until one is joined by a single-input edge.
fn draw_unary_edge<R: Rng + ?Sized>(sub: &Graph, rng: &mut R) -> Option<usize> {
    let n = sub.vertices.len();
    for _ in 0..MAX_PAIR_DRAWS {
        let (i, j) = (rng.gen_range(0..n), rng.gen_range(0..n));
        if let Some(e) = sub
            .edges
            .iter()
            .position(|e| e.op.kind().is_unary() && e.inputs == [i] && e.output == j)
        {
            return Some(e);
        }
    }
    None
}

pub fn mutate_backbone<R: Rng + ?Sized>(
    backbone: &Component,
    ledger: &ContributionLedger,
    rng: &mut R,
    iteration: u64,
) -> Result<Vec<Mutant>, MutateError> {
    if backbone.kind != ComponentKind::Backbone {
        return Err(MutateError::NotBackbone(backbone.id.clone()));
    }
    if backbone.blocks.is_empty() {
        return Err(MutateError::NoBlocks(backbone.id.clone()));
    }
    let shapes =
        infer_shapes(&backbone.graph, &backbone.probe_shapes).map_err(|e| MutateError::Shapes(e.to_string()))?;
    let exit_shapes: Vec<&Vec<usize>> = backbone.graph.exits.iter().map(|p| &shapes[p.vertex]).collect();
    let catalog = unary_catalog();
    let groups = group_blocks(backbone)?;
    let mut out = Vec::with_capacity(groups.len());

    for (g, (_, members)) in groups.iter().enumerate() {
        let rep = members[0];
        let (rep_sub, _) = extract_subgraph(&backbone.graph, &backbone.blocks[rep]);
        let rep_order = canonical_labeling(&rep_sub).0;
        let instance_orders: Vec<Vec<EdgeId>> = members.iter().map(|&b| canonical_edges(backbone, b)).collect();
        if !rep_sub.edges.iter().any(|e| e.op.kind().is_unary()) {
            return Err(MutateError::NoMutableEdge { group: g });
        }

        let mut found = None;
        let mut attempts = 0;
        while attempts < MAX_ATTEMPTS {
            attempts += 1;
            let Some(local) = draw_unary_edge(&rep_sub, rng) else {
                break;
            };
            let position = rep_order
                .iter()
                .position(|&e| e == local)
                .expect("canonical order covers all edges");
            let original = rep_sub.edges[local].op.kind();
            let kind = select_operator(&catalog, ledger, rng, original)?;
            let targets: Vec<EdgeId> = instance_orders.iter().map(|o| o[position]).collect();
            let mut graph = backbone.graph.clone();
            for &t in &targets {
                let edge = &mut graph.edges[t];
                let op = operator_for(kind, shapes[edge.inputs[0]][0], shapes[edge.output][0]);
                edge.weights = random_weights(&op, rng);
                edge.op = op;
            }
            if accept(backbone, &graph, members, &exit_shapes) {
                found = Some((graph, original, kind, targets));
                break;
            }
        }

        let fallback = found.is_none();
        let (graph, original, kind, targets) = match found {
            Some(f) => f,
            None => identity_fallback(backbone, &shapes, &rep_sub, &rep_order, &instance_orders)
                .ok_or(MutateError::NoMutableEdge { group: g })?,
        };
        let mut component = backbone.clone();
        component.id = format!("{}~g{g}", backbone.id);
        component.graph = graph;
        component.origin = Origin::Mutated {
            parent: backbone.id.clone(),
            iteration,
        };
        out.push(Mutant {
            component,
            group: g,
            original,
            operator: kind,
            edges: targets,
            attempts,
            fallback,
        });
    }
    Ok(out)
}

/// Blocks stay valid and the backbone keeps its output shapes.
fn accept(backbone: &Component, graph: &Graph, members: &[usize], exit_shapes: &[&Vec<usize>]) -> bool {
    let blocks_ok = members
        .iter()
        .all(|&b| validate_structure(&extract_subgraph(graph, &backbone.blocks[b]).0).is_ok());
    if !blocks_ok {
        return false;
    }
    match infer_shapes(graph, &backbone.probe_shapes) {
        Ok(s) => graph
            .exits
            .iter()
            .zip(exit_shapes)
            .all(|(p, &want)| &s[p.vertex] == want),
        Err(_) => false,
    }
}

/// Turns the first shape-preserving single-input edge, in canonical order,
/// into Identity in every block of the group.
fn identity_fallback(
    backbone: &Component,
    shapes: &[Vec<usize>],
    rep_sub: &Graph,
    rep_order: &[EdgeId],
    instance_orders: &[Vec<EdgeId>],
) -> Option<(Graph, OpKind, OpKind, Vec<EdgeId>)> {
    for (position, &local) in rep_order.iter().enumerate() {
        let kind = rep_sub.edges[local].op.kind();
        if !kind.is_unary() || kind == OpKind::Identity {
            continue;
        }
        let targets: Vec<EdgeId> = instance_orders.iter().map(|o| o[position]).collect();
        let preserving = targets.iter().all(|&t| {
            let e = &backbone.graph.edges[t];
            shapes[e.inputs[0]] == shapes[e.output]
        });
        if !preserving {
            continue;
        }
        let mut graph = backbone.graph.clone();
        for &t in &targets {
            graph.edges[t].op = operator_for(OpKind::Identity, 0, 0);
            graph.edges[t].weights = Vec::new();
        }
        return Some((graph, kind, OpKind::Identity, targets));
    }
    None
}
