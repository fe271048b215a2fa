//! Conv + BatchNorm folding.

use super::kernels::batch_norm_affine;
use crate::graph::{Edge, Graph, VertexId};
use crate::ops::OpKind;

/// Folds every BatchNorm whose sole input is produced by a convolution with
/// no other consumer into that convolution's weights and bias:
/// `w' = w * s`, `b' = b * s + t` with `s = gamma / sqrt(var + eps)` and
/// `t = beta - mean * s`. The intermediate vertex disappears.
pub fn fold_conv_bn(graph: &Graph) -> Graph {
    let producers = graph.producers();
    let consumers = graph.consumers();
    let exits = graph.exit_vertices();
    let mut folded_into: Vec<Option<usize>> = vec![None; graph.edges.len()];
    let mut removed_edge = vec![false; graph.edges.len()];
    let mut removed_vertex = vec![false; graph.vertices.len()];

    for (bn_idx, bn) in graph.edges.iter().enumerate() {
        if bn.op.kind() != OpKind::BatchNorm {
            continue;
        }
        let mid = bn.inputs[0];
        let Some(conv_idx) = producers[mid] else { continue };
        let conv = &graph.edges[conv_idx];
        let foldable = matches!(conv.op.kind(), OpKind::Conv2D | OpKind::DepthwiseConv2D)
            && consumers[mid].len() == 1
            && !exits.contains(&mid)
            && folded_into[conv_idx].is_none();
        if foldable {
            folded_into[conv_idx] = Some(bn_idx);
            removed_edge[bn_idx] = true;
            removed_vertex[mid] = true;
        }
    }

    let mut remap: Vec<Option<VertexId>> = vec![None; graph.vertices.len()];
    let mut out = Graph::default();
    for (v, vertex) in graph.vertices.iter().enumerate() {
        if !removed_vertex[v] {
            remap[v] = Some(out.vertices.len());
            out.vertices.push(vertex.clone());
        }
    }
    let map = |v: VertexId| remap[v].expect("kept vertex");
    for (e, edge) in graph.edges.iter().enumerate() {
        if removed_edge[e] {
            continue;
        }
        let new_edge = match folded_into[e] {
            Some(bn_idx) => {
                let bn = &graph.edges[bn_idx];
                Edge {
                    op: edge.op.clone(),
                    inputs: edge.inputs.iter().map(|&v| map(v)).collect(),
                    output: map(bn.output),
                    weights: fold_weights(edge, bn),
                }
            }
            None => Edge {
                op: edge.op.clone(),
                inputs: edge.inputs.iter().map(|&v| map(v)).collect(),
                output: map(edge.output),
                weights: edge.weights.clone(),
            },
        };
        out.edges.push(new_edge);
    }
    out.entries = graph
        .entries
        .iter()
        .map(|p| crate::graph::Port {
            vertex: map(p.vertex),
            label: p.label.clone(),
        })
        .collect();
    out.exits = graph
        .exits
        .iter()
        .map(|p| crate::graph::Port {
            vertex: map(p.vertex),
            label: p.label.clone(),
        })
        .collect();
    out
}

fn fold_weights(conv: &Edge, bn: &Edge) -> Vec<Vec<f32>> {
    let (scale, shift) = batch_norm_affine(bn.op.float("eps"), &bn.weights);
    let (w, b) = (&conv.weights[0], &conv.weights[1]);
    let per_out = w.len() / b.len();
    let w2 = w.iter().enumerate().map(|(i, &x)| x * scale[i / per_out]).collect();
    let b2 = b
        .iter()
        .zip(scale.iter().zip(&shift))
        .map(|(&x, (&s, &t))| x * s + t)
        .collect();
    vec![w2, b2]
}
