//! File formats shared with external tools.
//!
//! Graph-exchange: one JSON document per graph with the sections
//! `vertices`, `edges`, `entries`, `exits` and `attributes` (per-edge
//! operator attributes). Serialization is canonical: field order is fixed,
//! maps are sorted, and floats are written in shortest round-trip form, so
//! `write(read(write(g))) == write(g)` byte for byte.
//!
//! Tensor-exchange: plain text, one tensor per line:
//! `<label> <dtype> <d0,d1,...> <v0> <v1> ...`. Blank lines and lines
//! starting with `#` are ignored.

use crate::graph::{Edge, Graph, Port, Vertex};
use crate::ops::{AttrError, AttrValue, OpKind, Operator};
use crate::tensor::{DType, Tensor, TensorError};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

pub const GRAPH_FORMAT: &str = "graph-exchange/1";

#[derive(Debug, Error)]
pub enum ExchangeError {
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported format tag `{0}`")]
    Format(String),
    #[error("{0}")]
    Attr(#[from] AttrError),
    #[error("edge {0} has no attribute record")]
    MissingAttributes(usize),
    #[error("ids must be dense and ordered: {0}")]
    Ids(String),
    #[error("line {line}: {reason}")]
    Tensor { line: usize, reason: String },
    #[error("{0}")]
    TensorShape(#[from] TensorError),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct VertexDoc {
    pub id: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channels: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EdgeDoc {
    pub id: usize,
    pub op: OpKind,
    pub inputs: Vec<usize>,
    pub output: usize,
    #[serde(default)]
    pub weights: Vec<Vec<f32>>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PortDoc {
    pub vertex: usize,
    pub label: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AttrDoc {
    pub edge: usize,
    pub values: BTreeMap<String, AttrValue>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GraphDoc {
    pub format: String,
    pub vertices: Vec<VertexDoc>,
    pub edges: Vec<EdgeDoc>,
    pub entries: Vec<PortDoc>,
    pub exits: Vec<PortDoc>,
    pub attributes: Vec<AttrDoc>,
}

impl From<&Graph> for GraphDoc {
    fn from(g: &Graph) -> Self {
        let port = |p: &Port| PortDoc {
            vertex: p.vertex,
            label: p.label.clone(),
        };
        GraphDoc {
            format: GRAPH_FORMAT.to_string(),
            vertices: g
                .vertices
                .iter()
                .enumerate()
                .map(|(id, v)| VertexDoc {
                    id,
                    channels: v.channels,
                })
                .collect(),
            edges: g
                .edges
                .iter()
                .enumerate()
                .map(|(id, e)| EdgeDoc {
                    id,
                    op: e.op.kind(),
                    inputs: e.inputs.clone(),
                    output: e.output,
                    weights: e.weights.clone(),
                })
                .collect(),
            entries: g.entries.iter().map(port).collect(),
            exits: g.exits.iter().map(port).collect(),
            attributes: g
                .edges
                .iter()
                .enumerate()
                .filter(|(_, e)| !e.op.attrs().is_empty())
                .map(|(edge, e)| AttrDoc {
                    edge,
                    values: e.op.attrs().clone(),
                })
                .collect(),
        }
    }
}

impl TryFrom<GraphDoc> for Graph {
    type Error = ExchangeError;

    fn try_from(doc: GraphDoc) -> Result<Self, ExchangeError> {
        if doc.format != GRAPH_FORMAT {
            return Err(ExchangeError::Format(doc.format));
        }
        for (i, v) in doc.vertices.iter().enumerate() {
            if v.id != i {
                return Err(ExchangeError::Ids(format!("vertex #{i} has id {}", v.id)));
            }
        }
        let mut attrs: BTreeMap<usize, BTreeMap<String, AttrValue>> = BTreeMap::new();
        for a in doc.attributes {
            if attrs.insert(a.edge, a.values).is_some() {
                return Err(ExchangeError::Ids(format!("edge {} has two attribute records", a.edge)));
            }
        }
        let mut edges = Vec::with_capacity(doc.edges.len());
        for (i, e) in doc.edges.into_iter().enumerate() {
            if e.id != i {
                return Err(ExchangeError::Ids(format!("edge #{i} has id {}", e.id)));
            }
            let values = attrs.remove(&i).unwrap_or_default();
            let needs_attrs = e.op.schema().iter().any(|(_, d)| d.is_none());
            if values.is_empty() && needs_attrs {
                return Err(ExchangeError::MissingAttributes(i));
            }
            edges.push(Edge {
                op: Operator::new(e.op, values)?,
                inputs: e.inputs,
                output: e.output,
                weights: e.weights,
            });
        }
        if let Some((&edge, _)) = attrs.iter().next() {
            return Err(ExchangeError::Ids(format!("attributes for unknown edge {edge}")));
        }
        let port = |p: PortDoc| Port {
            vertex: p.vertex,
            label: p.label,
        };
        Ok(Graph {
            vertices: doc
                .vertices
                .into_iter()
                .map(|v| Vertex { channels: v.channels })
                .collect(),
            edges,
            entries: doc.entries.into_iter().map(port).collect(),
            exits: doc.exits.into_iter().map(port).collect(),
        })
    }
}

pub fn graph_to_json(graph: &Graph) -> String {
    let mut s = serde_json::to_string(&GraphDoc::from(graph)).expect("graph documents serialize");
    s.push('\n');
    s
}

pub fn graph_from_json(text: &str) -> Result<Graph, ExchangeError> {
    let doc: GraphDoc = serde_json::from_str(text)?;
    Graph::try_from(doc)
}

pub fn write_tensors<'a>(tensors: impl IntoIterator<Item = &'a Tensor>) -> String {
    let mut out = String::new();
    for t in tensors {
        let shape: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
        out.push_str(&format!("{} {} {}", t.label(), t.dtype(), shape.join(",")));
        for v in t.data() {
            out.push(' ');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    out
}

pub fn read_tensors(text: &str) -> Result<Vec<Tensor>, ExchangeError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |reason: String| ExchangeError::Tensor { line: i + 1, reason };
        let mut fields = line.split_whitespace();
        let label = fields.next().ok_or_else(|| bad("missing label".into()))?;
        let dtype = fields.next().ok_or_else(|| bad("missing dtype".into()))?;
        let dtype = DType::parse(dtype).ok_or_else(|| bad(format!("unknown dtype `{dtype}`")))?;
        let shape = fields.next().ok_or_else(|| bad("missing shape".into()))?;
        let shape: Vec<usize> = shape
            .split(',')
            .map(|d| d.parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|e| bad(format!("bad shape `{shape}`: {e}")))?;
        let data: Vec<f32> = fields
            .map(|v| v.parse::<f32>().map_err(|e| bad(format!("bad value `{v}`: {e}"))))
            .collect::<Result<_, _>>()?;
        let t = Tensor::with_dtype(label, dtype, shape, data).map_err(|e| bad(e.to_string()))?;
        if out.iter().any(|o: &Tensor| o.label() == t.label()) {
            return Err(bad(format!("duplicate label `{label}`")));
        }
        out.push(t);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attrs;
    use crate::graph::GraphBuilder;

    fn sample() -> Graph {
        let mut b = GraphBuilder::new();
        let x = b.input("image", Some(3));
        let c = b.push(
            Operator::new(
                OpKind::Conv2D,
                attrs!["in_channels" => 3usize, "out_channels" => 2usize, "kernel" => 1usize],
            )
            .unwrap(),
            &[x],
            vec![vec![0.1, -0.2, 0.3, 1e-7, 2.5, -0.0], vec![0.0, 1.0 / 3.0]],
        );
        let r = b.push(Operator::simple(OpKind::ReLU), &[c], vec![]);
        let s = b.push(Operator::simple(OpKind::Add), &[c, r], vec![]);
        b.output(s, "out");
        b.finish()
    }

    #[test]
    fn graph_round_trip_is_byte_stable() {
        let g = sample();
        let text = graph_to_json(&g);
        let back = graph_from_json(&text).unwrap();
        assert_eq!(back, g);
        assert_eq!(graph_to_json(&back), text);
        for section in [
            "\"vertices\"",
            "\"edges\"",
            "\"entries\"",
            "\"exits\"",
            "\"attributes\"",
        ] {
            assert!(text.contains(section));
        }
    }

    #[test]
    fn graph_rejects_bad_documents() {
        let text = graph_to_json(&sample());
        assert!(matches!(
            graph_from_json(&text.replace(GRAPH_FORMAT, "other/9")),
            Err(ExchangeError::Format(_))
        ));
        let mut doc: GraphDoc = serde_json::from_str(&text).unwrap();
        doc.attributes.clear();
        assert!(matches!(Graph::try_from(doc), Err(ExchangeError::MissingAttributes(0))));
        assert!(graph_from_json("{").is_err());
    }

    #[test]
    fn tensor_text_round_trip() {
        let a = Tensor::new("cls", vec![2, 2], vec![0.1, f32::NAN, -3.5e-8, f32::INFINITY]).unwrap();
        let b = Tensor::with_dtype("box", DType::F16, vec![1], vec![2.0]).unwrap();
        let text = write_tensors([&a, &b]);
        let back = read_tensors(&text).unwrap();
        assert_eq!(back.len(), 2);
        assert!(back[0].bitwise_eq(&a));
        assert!(back[1].bitwise_eq(&b));
    }

    #[test]
    fn tensor_text_errors() {
        assert!(read_tensors("x f32 2 1.0").is_err());
        assert!(read_tensors("x f64 1 1.0").is_err());
        assert!(read_tensors("x f32 1 abc").is_err());
        assert!(read_tensors("x f32 1 1\nx f32 1 2").is_err());
        assert_eq!(read_tensors("# comment\n\n").unwrap().len(), 0);
    }
}
