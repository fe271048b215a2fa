//! Model interpreters: a plain float32 reference and an optimizing variant
//! with conv/batch-norm folding, emulated half precision, buffer recycling
//! and fault injection. Kernel failures come back as crash results.

pub mod external;
pub mod fault;
pub mod fusion;
pub mod kernels;

use crate::graph::{infer_shapes, EdgeId, Graph, GraphError};
use crate::ops::OpKind;
use crate::tensor::{round_to_half_mantissa, DType, Tensor};
use fault::{FaultEffect, FaultSpec};
use kernels::{kernel_symbol, Input};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::{Duration, Instant};
use thiserror::Error;

pub use external::run_external;

pub type TensorMap = BTreeMap<String, Tensor>;

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Ok(TensorMap),
    Crash(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExecutionResult {
    pub outcome: Outcome,
    pub wall_time: Duration,
    /// Names of injected faults that triggered, in firing order.
    pub fired_faults: Vec<String>,
}

impl ExecutionResult {
    pub fn ok(outputs: TensorMap, wall_time: Duration) -> Self {
        Self {
            outcome: Outcome::Ok(outputs),
            wall_time,
            fired_faults: Vec::new(),
        }
    }

    pub fn crash(log: impl Into<String>, wall_time: Duration) -> Self {
        Self {
            outcome: Outcome::Crash(log.into()),
            wall_time,
            fired_faults: Vec::new(),
        }
    }

    fn with_fired(mut self, fired: Vec<String>) -> Self {
        self.fired_faults = fired;
        self
    }

    pub fn is_ok(&self) -> bool {
        matches!(self.outcome, Outcome::Ok(_))
    }

    pub fn outputs(&self) -> Option<&TensorMap> {
        match &self.outcome {
            Outcome::Ok(m) => Some(m),
            Outcome::Crash(_) => None,
        }
    }

    pub fn crash_log(&self) -> Option<&str> {
        match &self.outcome {
            Outcome::Crash(log) => Some(log),
            Outcome::Ok(_) => None,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExecError {
    #[error("no input tensor labelled `{0}`")]
    MissingInput(String),
    #[error("shape inference failed: {0}")]
    Shape(#[from] GraphError),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    #[serde(default)]
    pub fuse_conv_bn: bool,
    #[serde(default)]
    pub reduced_precision: bool,
    #[serde(default)]
    pub buffer_reuse: bool,
    #[serde(default)]
    pub fault_injections: Vec<FaultSpec>,
}

impl OptimizerConfig {
    /// Every optimization on, no faults.
    pub fn all() -> Self {
        Self {
            fuse_conv_bn: true,
            reduced_precision: true,
            buffer_reuse: true,
            fault_injections: Vec::new(),
        }
    }

    pub fn with_faults(mut self, faults: Vec<FaultSpec>) -> Self {
        self.fault_injections = faults;
        self
    }
}

/// Frames common to every crash log; the filter in the oracle looks for these.
pub const REFERENCE_API: &str = "refexec::session::execute";
pub const OPTIMIZED_API: &str = "optexec::session::execute";

/// API entry points that may appear in executor crash frames.
pub fn executor_api_names() -> Vec<String> {
    let mut names = vec![
        "refexec::session::execute".to_string(),
        "refexec::session::run_node".to_string(),
        "optexec::session::execute".to_string(),
        "optexec::session::run_node".to_string(),
    ];
    names.extend(OpKind::ALL.iter().map(|&k| kernel_symbol(k).to_string()));
    names
}

fn crash_log(backend: &str, headline: &str, kind: OpKind, edge: EdgeId, graph: &Graph) -> String {
    // Stable pseudo-addresses so logs vary like real traces but replay exactly.
    let salt = graph.edges.len() as u64 * 0x9E37 + graph.vertices.len() as u64 * 0x79B9;
    let addr = |base: u64| base + ((salt + edge as u64 * 0x35) & 0xfff);
    let mut log = String::new();
    let _ = writeln!(log, "[{backend}] {headline}");
    let _ = writeln!(
        log,
        "  at {backend}::kernels::{}+0x{:x}",
        kernel_symbol(kind),
        addr(0x140)
    );
    let _ = writeln!(log, "  at {backend}::session::run_node+0x{:x}", addr(0x2a0));
    let _ = writeln!(log, "  at {backend}::session::execute+0x{:x}", addr(0x5c8));
    let _ = writeln!(log, "  at dlfuzz_core::campaign::run_model+0x{:x}", addr(0x91));
    log
}

fn entry_data<'a>(graph: &Graph, inputs: &'a TensorMap) -> Result<Vec<&'a Tensor>, ExecError> {
    graph
        .entries
        .iter()
        .map(|p| {
            inputs
                .get(&p.label)
                .ok_or_else(|| ExecError::MissingInput(p.label.clone()))
        })
        .collect()
}

fn collect_outputs(graph: &Graph, shapes: &[Vec<usize>], values: &[Option<Vec<f32>>], dtype: DType) -> TensorMap {
    graph
        .exits
        .iter()
        .map(|p| {
            let data = values[p.vertex].clone().expect("exit evaluated");
            let t = Tensor::with_dtype(p.label.clone(), dtype, shapes[p.vertex].clone(), data)
                .expect("inferred shape matches kernel output");
            (p.label.clone(), t)
        })
        .collect()
}

/// Evaluates `graph` in topological order with float32 kernels.
pub fn execute_reference(graph: &Graph, inputs: &TensorMap) -> Result<ExecutionResult, ExecError> {
    let start = Instant::now();
    let entries = entry_data(graph, inputs)?;
    let entry_shapes: Vec<Vec<usize>> = entries.iter().map(|t| t.shape().to_vec()).collect();
    let shapes = infer_shapes(graph, &entry_shapes)?;
    let mut values: Vec<Option<Vec<f32>>> = vec![None; graph.vertices.len()];
    for (p, t) in graph.entries.iter().zip(&entries) {
        values[p.vertex] = Some(t.data().to_vec());
    }
    for e in graph.topo_order() {
        let edge = &graph.edges[e];
        let ins: Vec<Input<'_>> = edge
            .inputs
            .iter()
            .map(|&v| Input {
                data: values[v].as_deref().expect("inputs ready"),
                shape: &shapes[v],
            })
            .collect();
        let mut out = Vec::new();
        if let Err(err) = kernels::run(&edge.op, &edge.weights, &ins, &shapes[edge.output], &mut out) {
            let headline = format!("DomainError: {} in {}", err.0, edge.op.kind());
            return Ok(ExecutionResult::crash(
                crash_log("refexec", &headline, edge.op.kind(), e, graph),
                start.elapsed(),
            ));
        }
        values[edge.output] = Some(out);
    }
    Ok(ExecutionResult::ok(
        collect_outputs(graph, &shapes, &values, DType::F32),
        start.elapsed(),
    ))
}

/// Evaluates `graph` after applying the optimizations enabled in `cfg`.
pub fn execute_optimized(
    graph: &Graph,
    inputs: &TensorMap,
    cfg: &OptimizerConfig,
) -> Result<ExecutionResult, ExecError> {
    let start = Instant::now();
    let entries = entry_data(graph, inputs)?;
    let entry_shapes: Vec<Vec<usize>> = entries.iter().map(|t| t.shape().to_vec()).collect();
    infer_shapes(graph, &entry_shapes)?;

    let fused;
    let graph = if cfg.fuse_conv_bn {
        fused = fusion::fold_conv_bn(graph);
        &fused
    } else {
        graph
    };
    let shapes = infer_shapes(graph, &entry_shapes)?;
    let order = graph.topo_order();

    // Position in `order` of the last read of each vertex; exits live forever.
    let mut last_use = vec![None::<usize>; graph.vertices.len()];
    for (pos, &e) in order.iter().enumerate() {
        for &v in &graph.edges[e].inputs {
            last_use[v] = Some(pos);
        }
    }
    let mut pinned = vec![false; graph.vertices.len()];
    for p in graph.exits.iter().chain(&graph.entries) {
        pinned[p.vertex] = true;
    }

    let mut values: Vec<Option<Vec<f32>>> = vec![None; graph.vertices.len()];
    for (p, t) in graph.entries.iter().zip(&entries) {
        let mut data = t.data().to_vec();
        if cfg.reduced_precision {
            data.iter_mut().for_each(|x| *x = round_to_half_mantissa(*x));
        }
        values[p.vertex] = Some(data);
    }
    let mut pool: Vec<Vec<f32>> = Vec::new();
    let mut fired: Vec<String> = Vec::new();

    for (pos, &e) in order.iter().enumerate() {
        let edge = &graph.edges[e];
        let kind = edge.op.kind();
        let first_shape = &shapes[edge.inputs[0]];
        let mut corrupt = 0.0f32;
        let mut nan = false;
        for f in cfg
            .fault_injections
            .iter()
            .filter(|f| f.trigger.matches(kind, first_shape))
        {
            if !fired.contains(&f.name) {
                fired.push(f.name.clone());
            }
            match &f.effect {
                FaultEffect::RaiseCrash { message } => {
                    let headline = FaultSpec::render_message(message, kind, first_shape, e);
                    return Ok(ExecutionResult::crash(
                        crash_log("optexec", &headline, kind, e, graph),
                        start.elapsed(),
                    )
                    .with_fired(fired));
                }
                FaultEffect::CorruptOutput { magnitude } => corrupt += magnitude,
                FaultEffect::EmitNan => nan = true,
            }
        }

        let mut out = if cfg.buffer_reuse {
            pool.pop().unwrap_or_default()
        } else {
            Vec::new()
        };
        {
            let ins: Vec<Input<'_>> = edge
                .inputs
                .iter()
                .map(|&v| Input {
                    data: values[v].as_deref().expect("inputs ready"),
                    shape: &shapes[v],
                })
                .collect();
            if let Err(err) = kernels::run(&edge.op, &edge.weights, &ins, &shapes[edge.output], &mut out) {
                let headline = format!("DomainError: {} in {}", err.0, kind);
                return Ok(
                    ExecutionResult::crash(crash_log("optexec", &headline, kind, e, graph), start.elapsed())
                        .with_fired(fired),
                );
            }
        }
        if corrupt != 0.0 {
            out.iter_mut().for_each(|x| *x += corrupt);
        }
        if nan {
            out.iter_mut().for_each(|x| *x = f32::NAN);
        }
        if cfg.reduced_precision {
            out.iter_mut().for_each(|x| *x = round_to_half_mantissa(*x));
        }
        values[edge.output] = Some(out);

        if cfg.buffer_reuse {
            for &v in &edge.inputs {
                if !pinned[v] && last_use[v] == Some(pos) {
                    if let Some(buf) = values[v].take() {
                        pool.push(buf);
                    }
                }
            }
        }
    }
    let dtype = if cfg.reduced_precision { DType::F16 } else { DType::F32 };
    Ok(ExecutionResult::ok(collect_outputs(graph, &shapes, &values, dtype), start.elapsed()).with_fired(fired))
}
