//! Component-assembling differential fuzzer for neural-network inference
//! engines.
//!
//! Models are built from heads, necks and backbones held in a repository,
//! following a per-scenario sketch. Backbones are mutated block by block,
//! assembled into complete graphs, and run on a plain reference interpreter
//! and an optimizing interpreter; crashes, NaN asymmetries and output
//! inconsistencies are reported and fed back into weighted selection.

pub mod campaign;
pub mod exchange;
pub mod exec;
pub mod fixtures;
pub mod generator;
pub mod graph;
pub mod heuristics;
pub mod ops;
pub mod oracle;
pub mod repo;
pub mod seeds;
pub mod sketch;
pub mod tensor;

pub use graph::{Block, ComponentGraph, Graph};
pub use ops::{OpKind, Operator};
pub use tensor::{DType, Tensor};
