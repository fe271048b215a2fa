//! Splicing selected components into a complete model along a sketch.

use crate::fixtures::input_shape;
use crate::graph::{infer_shapes, Graph, GraphBuilder, VertexId};
use crate::ops::{OpKind, Operator};
use crate::repo::{Component, ComponentKind};
use crate::sketch::{Endpoint, Modality, Sketch, SlotKind, Stage};
use crate::{attrs, fixtures};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rule {
    NeckToHead,
    BackboneToNeck,
    BackboneNeckCount,
    BackboneToHead,
    BackboneHeadCount,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Rule::NeckToHead => "rule 1 (with neck): neck output channels must match head input channels",
            Rule::BackboneToNeck => "rule 2 (with neck): backbone output channels must match neck input channels",
            Rule::BackboneNeckCount => "rule 3 (with neck): backbone output count must equal neck input count",
            Rule::BackboneToHead => "rule 1 (no neck): backbone output channels must match head input channels",
            Rule::BackboneHeadCount => "rule 2 (no neck): backbone output count must equal head input count",
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AssemblyError {
    #[error("slot mismatch: {0}")]
    SlotMismatch(String),
    #[error("{rule}: {upstream} outputs vs {downstream} inputs")]
    PortCountMismatch {
        rule: Rule,
        upstream: usize,
        downstream: usize,
    },
    #[error("{rule}: port {port} carries {upstream} channels, {downstream} expected")]
    ChannelMismatch {
        rule: Rule,
        port: usize,
        upstream: usize,
        downstream: usize,
    },
    #[error("assembled graph fails shape inference: {0}")]
    Shapes(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub sketch: Sketch,
    pub head: Component,
    pub neck: Option<Component>,
    pub backbone: Component,
    pub graph: Graph,
    pub output_labels: Vec<String>,
}

impl Model {
    /// Entry shapes in graph entry order.
    pub fn input_shapes(&self) -> Vec<Vec<usize>> {
        entry_shapes(&self.graph)
    }

    pub fn component_ids(&self) -> Vec<&str> {
        let mut ids = vec![self.head.id.as_str(), self.backbone.id.as_str()];
        if let Some(n) = &self.neck {
            ids.insert(1, n.id.as_str());
        }
        ids
    }
}

fn entry_shapes(graph: &Graph) -> Vec<Vec<usize>> {
    graph
        .entries
        .iter()
        .map(|p| match p.label.as_str() {
            "pointcloud" => input_shape(Modality::Pointcloud),
            _ => input_shape(Modality::Image),
        })
        .collect()
}

fn check_link(up: &[usize], down: &[usize], count: Rule, channels: Rule) -> Result<(), AssemblyError> {
    if up.len() != down.len() {
        return Err(AssemblyError::PortCountMismatch {
            rule: count,
            upstream: up.len(),
            downstream: down.len(),
        });
    }
    for (port, (&u, &d)) in up.iter().zip(down).enumerate() {
        if u != d {
            return Err(AssemblyError::ChannelMismatch {
                rule: channels,
                port,
                upstream: u,
                downstream: d,
            });
        }
    }
    Ok(())
}

/// Checks the interface rules for the sketch, then splices pre-stages,
/// backbone, neck, head and post-stages into one graph.
pub fn assemble(
    sketch: &Sketch,
    head: &Component,
    neck: Option<&Component>,
    backbone: &Component,
) -> Result<Model, AssemblyError> {
    let slot = |want: ComponentKind, c: &Component| {
        if c.kind == want {
            Ok(())
        } else {
            Err(AssemblyError::SlotMismatch(format!(
                "{} slot given {} `{}`",
                want, c.kind, c.id
            )))
        }
    };
    slot(ComponentKind::Head, head)?;
    slot(ComponentKind::Backbone, backbone)?;
    if let Some(n) = neck {
        slot(ComponentKind::Neck, n)?;
    }
    match (sketch.has_neck(), neck) {
        (true, None) => return Err(AssemblyError::SlotMismatch("sketch requires a neck".into())),
        (false, Some(n)) => {
            return Err(AssemblyError::SlotMismatch(format!(
                "sketch has no neck slot, got `{}`",
                n.id
            )))
        }
        _ => {}
    }
    if backbone.interface.inputs.len() != 1 {
        return Err(AssemblyError::SlotMismatch(format!(
            "backbone `{}` must take exactly one input",
            backbone.id
        )));
    }

    let bb_out = &backbone.interface.outputs;
    match neck {
        Some(n) => {
            check_link(
                bb_out,
                &n.interface.inputs,
                Rule::BackboneNeckCount,
                Rule::BackboneToNeck,
            )?;
            check_link(
                &n.interface.outputs,
                &head.interface.inputs,
                Rule::NeckToHead,
                Rule::NeckToHead,
            )?;
        }
        None => check_link(
            bb_out,
            &head.interface.inputs,
            Rule::BackboneHeadCount,
            Rule::BackboneToHead,
        )?,
    }

    let scenario = &sketch.scenario;
    let mut b = GraphBuilder::new();
    let mut inputs: Vec<(Modality, VertexId)> = Vec::new();
    for &m in &scenario.modalities {
        let channels = input_shape(m)[0];
        inputs.push((m, b.input(m.label(), Some(channels))));
    }
    let input_vertex = |m: Modality| inputs.iter().find(|(x, _)| *x == m).map(|&(_, v)| v);

    let mut outs: Vec<Vec<VertexId>> = Vec::new();
    for (idx, s) in sketch.slots.iter().enumerate() {
        let sources: Vec<VertexId> = sketch
            .sources(idx)
            .into_iter()
            .flat_map(|src| match src {
                Endpoint::Input(m) => vec![input_vertex(*m).expect("sketch inputs come from the scenario")],
                Endpoint::Slot(i) => outs[*i].clone(),
            })
            .collect();
        let produced = match s.kind {
            SlotKind::Preprocess(Stage::PillarEncoder) => vec![pillar_encoder(&mut b, sources[0])],
            SlotKind::Preprocess(Stage::MiddleEncoder) => vec![middle_encoder(&mut b, sources[0])],
            SlotKind::Backbone => b.splice(&backbone.graph, &sources),
            SlotKind::Neck => b.splice(&neck.expect("checked above").graph, &sources),
            SlotKind::Head => b.splice(&head.graph, &sources),
            SlotKind::Postprocess(Stage::BoxDecode) => sources
                .iter()
                .map(|&v| b.push(Operator::simple(OpKind::Identity), &[v], vec![]))
                .collect(),
            SlotKind::Postprocess(Stage::PointcloudFusion) => {
                let points = input_vertex(Modality::Pointcloud)
                    .ok_or_else(|| AssemblyError::SlotMismatch("fusion stage needs a point cloud input".into()))?;
                let heads: Vec<VertexId> = sources.into_iter().filter(|&v| v != points).collect();
                fuse_points(&mut b, &heads, points)?
            }
            SlotKind::Preprocess(other) | SlotKind::Postprocess(other) => {
                return Err(AssemblyError::SlotMismatch(format!(
                    "stage {other:?} is not valid here"
                )))
            }
        };
        outs.push(produced);
    }
    let feed = outs.pop().unwrap_or_default();

    let output_labels: Vec<String> = head.graph.exits.iter().map(|p| p.label.clone()).collect();
    for (&v, label) in feed.iter().zip(&output_labels) {
        b.output(v, label.clone());
    }
    let graph = b.finish();
    infer_shapes(&graph, &entry_shapes(&graph)).map_err(|e| AssemblyError::Shapes(e.to_string()))?;
    Ok(Model {
        sketch: sketch.clone(),
        head: head.clone(),
        neck: neck.cloned(),
        backbone: backbone.clone(),
        graph,
        output_labels,
    })
}

/// Per-pillar features to three channels: occupancy, planar position and a
/// height/intensity mix. Fixed weights.
fn pillar_encoder(b: &mut GraphBuilder, x: VertexId) -> VertexId {
    let op = Operator::new(
        OpKind::MatMul,
        attrs!["in_features" => fixtures::PILLAR_FEATURES, "out_features" => 3usize],
    )
    .expect("pillar encoder attributes");
    let w = vec![
        1.0, 0.0, 0.0, 0.0, 0.0, //
        0.0, 0.025, 0.025, 0.0, 0.0, //
        0.0, 0.0, 0.0, 0.125, 0.5,
    ];
    let m = b.push(op, &[x], vec![w, vec![0.0; 3]]);
    b.push(Operator::simple(OpKind::ReLU), &[m], vec![])
}

fn middle_encoder(b: &mut GraphBuilder, x: VertexId) -> VertexId {
    let scale = fixtures::IMAGE_TARGET.0 / fixtures::PILLAR_GRID.0;
    let op = Operator::new(OpKind::Upsample, attrs!["scale" => scale]).expect("upsample attributes");
    b.push(op, &[x], vec![])
}

/// Concatenates globally pooled pillar statistics, broadcast to each head
/// output's resolution, onto that output.
fn fuse_points(b: &mut GraphBuilder, heads: &[VertexId], points: VertexId) -> Result<Vec<VertexId>, AssemblyError> {
    let snapshot = std::mem::take(b).finish();
    let shapes = infer_shapes(&snapshot, &entry_shapes(&snapshot)).map_err(|e| AssemblyError::Shapes(e.to_string()))?;
    *b = GraphBuilder::from_graph(snapshot);
    let grid = shapes[points][1];
    let pool = Operator::new(
        OpKind::AvgPool2D,
        attrs!["kernel" => grid, "stride" => grid, "padding" => "valid"],
    )
    .expect("pool attributes");
    let pooled = b.push(pool, &[points], vec![]);
    let mut out = Vec::new();
    for &h in heads {
        let s = &shapes[h];
        if s.len() != 3 || s[1] != s[2] {
            return Err(AssemblyError::SlotMismatch(format!(
                "fusion stage needs square [c,h,w] head outputs, got {s:?}"
            )));
        }
        let up = Operator::new(OpKind::Upsample, attrs!["scale" => s[1]]).expect("upsample attributes");
        let broadcast = b.push(up, &[pooled], vec![]);
        out.push(b.push(
            Operator::new(OpKind::Concat, attrs!["axis" => 0usize]).unwrap(),
            &[h, broadcast],
            vec![],
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::execute_reference;
    use crate::fixtures::{generate_inputs, model_inputs};
    use crate::repo::Repository;
    use crate::seeds::seed_repository;
    use crate::sketch::{default_scenarios, generate_sketch};

    fn all_models(repo: &Repository) -> Vec<Result<Model, AssemblyError>> {
        let mut out = Vec::new();
        for sc in default_scenarios() {
            let sketch = generate_sketch(&sc).unwrap();
            let heads = repo.components_for_scenario(&sc.name, ComponentKind::Head);
            let necks = repo.components_for_scenario(&sc.name, ComponentKind::Neck);
            let backbones = repo.components_for_scenario(&sc.name, ComponentKind::Backbone);
            for h in &heads {
                for bb in &backbones {
                    if sketch.has_neck() {
                        for n in &necks {
                            out.push(assemble(&sketch, h, Some(n), bb));
                        }
                    } else {
                        out.push(assemble(&sketch, h, None, bb));
                    }
                }
            }
        }
        out
    }

    #[test]
    fn compatible_seed_models_execute() {
        let repo = seed_repository();
        let mut ok = 0;
        for model in all_models(&repo) {
            let Ok(model) = model else { continue };
            ok += 1;
            let sc = &model.sketch.scenario;
            let inputs = model_inputs(sc, &generate_inputs(sc, 1)).unwrap();
            let r = execute_reference(&model.graph, &inputs).unwrap();
            let outs = r.outputs().expect("seed models run");
            let labels: Vec<&String> = outs.keys().collect();
            let mut want: Vec<&String> = model.output_labels.iter().collect();
            want.sort();
            assert_eq!(labels, want);
        }
        assert!(ok >= 10, "{ok} seed models assembled");
    }

    #[test]
    fn fusion_postprocess_concatenates_point_features() {
        let repo = seed_repository();
        let sc = default_scenarios()
            .into_iter()
            .find(|s| s.name == "camera-lidar")
            .unwrap();
        let sketch = generate_sketch(&sc).unwrap();
        let m = assemble(
            &sketch,
            repo.get("det-head").unwrap(),
            repo.get("fpn-lite"),
            repo.get("resnet-lite").unwrap(),
        )
        .unwrap();
        let shapes = infer_shapes(&m.graph, &m.input_shapes()).unwrap();
        let cls = m.graph.exits.iter().find(|p| p.label == "cls").unwrap();
        assert_eq!(shapes[cls.vertex], vec![3 + 5, 16, 16]);
    }

    #[test]
    fn rule_violations_are_named() {
        let repo = seed_repository();
        let lidar = default_scenarios()
            .into_iter()
            .find(|s| s.name == "camera-lidar")
            .unwrap();
        let sketch = generate_sketch(&lidar).unwrap();
        let mut neck = repo.get("fpn-lite").unwrap().clone();
        neck.interface.inputs = vec![8, 8];
        let err = assemble(
            &sketch,
            repo.get("det-head").unwrap(),
            Some(&neck),
            repo.get("vgg-lite").unwrap(),
        )
        .unwrap_err();
        assert_eq!(
            err,
            AssemblyError::ChannelMismatch {
                rule: Rule::BackboneToNeck,
                port: 1,
                upstream: 16,
                downstream: 8
            }
        );
        assert!(err.to_string().contains("rule 2"));

        let camera = default_scenarios()
            .into_iter()
            .find(|s| s.name == "camera-only")
            .unwrap();
        let sketch = generate_sketch(&camera).unwrap();
        let err = assemble(
            &sketch,
            repo.get("det-head").unwrap(),
            None,
            repo.get("vgg-lite").unwrap(),
        )
        .unwrap_err();
        assert_eq!(
            err,
            AssemblyError::PortCountMismatch {
                rule: Rule::BackboneHeadCount,
                upstream: 2,
                downstream: 1
            }
        );
        assert!(matches!(
            assemble(
                &sketch,
                repo.get("det-head").unwrap(),
                repo.get("fpn-lite"),
                repo.get("darknet-lite").unwrap()
            ),
            Err(AssemblyError::SlotMismatch(_))
        ));
    }
}
