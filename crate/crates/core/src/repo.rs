//! The component repository: heads, necks and backbones with scenario
//! mapping, persisted as a JSON manifest plus one graph-exchange file per
//! component.

use crate::exchange::{graph_from_json, graph_to_json};
use crate::generator::ledger::ContributionLedger;
use crate::graph::{
    extract_subgraph, graph_digest, infer_shapes, validate_component, validate_structure, Digest, EdgeId, Graph,
};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;
use thiserror::Error;

pub const MANIFEST: &str = "manifest.json";
pub const MANIFEST_FORMAT: &str = "component-repo/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ComponentKind {
    Head,
    Neck,
    Backbone,
}

impl ComponentKind {
    pub const ALL: [ComponentKind; 3] = [ComponentKind::Head, ComponentKind::Neck, ComponentKind::Backbone];

    pub fn name(self) -> &'static str {
        match self {
            ComponentKind::Head => "head",
            ComponentKind::Neck => "neck",
            ComponentKind::Backbone => "backbone",
        }
    }
}

impl fmt::Display for ComponentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Channel dimension of every input and output port, in port order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Interface {
    pub inputs: Vec<usize>,
    pub outputs: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Origin {
    Seed,
    Mutated { parent: String, iteration: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub id: String,
    pub kind: ComponentKind,
    pub graph: Graph,
    pub scenarios: BTreeSet<String>,
    pub interface: Interface,
    /// Entry shapes used to check the graph end to end.
    pub probe_shapes: Vec<Vec<usize>>,
    /// Edge sets of the repeated blocks, in graph order. Backbones only.
    pub blocks: Vec<Vec<EdgeId>>,
    pub origin: Origin,
}

impl Component {
    /// Every problem found, empty when the component is usable.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if let Err(v) = validate_component(&self.graph) {
            out.push(format!("graph: {v:?}"));
            return out;
        }
        if let Err(e) = self.graph.check_weights() {
            out.push(e.to_string());
        }
        let (ins, outs) = (self.interface.inputs.len(), self.interface.outputs.len());
        if ins == 0 || outs == 0 {
            out.push("interface needs at least one input and one output".into());
        }
        if ins != self.graph.entries.len() || outs != self.graph.exits.len() {
            out.push(format!(
                "interface declares {ins} inputs and {outs} outputs, graph has {} and {}",
                self.graph.entries.len(),
                self.graph.exits.len()
            ));
            return out;
        }
        if self.probe_shapes.len() != ins {
            out.push(format!("{} probe shapes for {ins} inputs", self.probe_shapes.len()));
            return out;
        }
        for (i, (s, &c)) in self.probe_shapes.iter().zip(&self.interface.inputs).enumerate() {
            if s.first() != Some(&c) {
                out.push(format!("input {i}: probe shape {s:?} does not carry {c} channels"));
            }
        }
        match infer_shapes(&self.graph, &self.probe_shapes) {
            Err(e) => out.push(format!("shape inference: {e}")),
            Ok(shapes) => {
                for (i, (p, &c)) in self.graph.exits.iter().zip(&self.interface.outputs).enumerate() {
                    if shapes[p.vertex].first() != Some(&c) {
                        out.push(format!(
                            "output {i}: shape {:?} does not carry {c} channels",
                            shapes[p.vertex]
                        ));
                    }
                }
            }
        }
        if self.kind == ComponentKind::Backbone {
            if self.blocks.is_empty() {
                out.push("backbone declares no blocks".into());
            }
            let mut seen = BTreeSet::new();
            for (b, edges) in self.blocks.iter().enumerate() {
                if edges.is_empty() || edges.iter().any(|&e| e >= self.graph.edges.len() || !seen.insert(e)) {
                    out.push(format!("block {b}: bad edge list"));
                    continue;
                }
                if let Err(v) = validate_structure(&extract_subgraph(&self.graph, edges).0) {
                    out.push(format!("block {b}: {v:?}"));
                }
            }
        } else if !self.blocks.is_empty() {
            out.push("only backbones declare blocks".into());
        }
        out
    }

    /// Identity for duplicate detection: weights never count.
    pub fn structure_key(&self) -> (ComponentKind, Interface, Digest) {
        (self.kind, self.interface.clone(), graph_digest(&self.graph))
    }
}

#[derive(Debug, Error)]
pub enum RepoError {
    #[error("no manifest at {0}")]
    ManifestMissing(String),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("component `{id}` is invalid: {}", violations.join("; "))]
    ComponentInvalid { id: String, violations: Vec<String> },
    #[error("same structure as existing component `{existing}`")]
    DuplicateStructure { existing: String },
    #[error("component id `{0}` already taken")]
    IdTaken(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Repository {
    components: BTreeMap<String, Component>,
    index: BTreeMap<String, BTreeMap<ComponentKind, Vec<String>>>,
    /// Every id ever issued, so removed or rejected ids stay retired.
    retired: BTreeSet<String>,
    /// Structure key of every component, for duplicate detection.
    structures: BTreeMap<(ComponentKind, Interface, Digest), String>,
    next_serial: u64,
    pub ledger: ContributionLedger,
    /// Most recent eff recorded for each component's model.
    pub last_eff: BTreeMap<String, f64>,
}

impl Repository {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Component> {
        self.components.get(id)
    }

    pub fn components(&self) -> impl Iterator<Item = &Component> {
        self.components.values()
    }

    pub fn ids(&self) -> impl Iterator<Item = &String> {
        self.components.keys()
    }

    /// A fresh id for a derived component of `kind`.
    pub fn mint_id(&mut self, kind: ComponentKind) -> String {
        loop {
            self.next_serial += 1;
            let id = format!("{}-{:05}", kind.name(), self.next_serial);
            if !self.retired.contains(&id) {
                return id;
            }
        }
    }

    /// Inserts `component` under its own id. A component whose structure
    /// equals an existing one of the same kind and interface is refused
    /// with the existing id.
    pub fn add_component(&mut self, component: Component) -> Result<String, RepoError> {
        let violations = component.violations();
        if !violations.is_empty() {
            return Err(RepoError::ComponentInvalid {
                id: component.id,
                violations,
            });
        }
        let key = component.structure_key();
        if let Some(existing) = self.structures.get(&key) {
            return Err(RepoError::DuplicateStructure {
                existing: existing.clone(),
            });
        }
        if self.retired.contains(&component.id) {
            return Err(RepoError::IdTaken(component.id));
        }
        let id = component.id.clone();
        for s in &component.scenarios {
            let ids = self
                .index
                .entry(s.clone())
                .or_default()
                .entry(component.kind)
                .or_default();
            let at = ids.binary_search(&id).unwrap_err();
            ids.insert(at, id.clone());
        }
        self.retired.insert(id.clone());
        self.structures.insert(key, id.clone());
        self.ledger.register_component(&id);
        self.components.insert(id.clone(), component);
        Ok(id)
    }

    /// Components of `kind` mapped to `scenario`, ordered by id.
    pub fn components_for_scenario(&self, scenario: &str, kind: ComponentKind) -> Vec<&Component> {
        self.index
            .get(scenario)
            .and_then(|m| m.get(&kind))
            .map(|ids| ids.iter().map(|id| &self.components[id]).collect())
            .unwrap_or_default()
    }

    /// True when the scenario index is exactly the inverse of the
    /// components' scenario sets.
    pub fn index_consistent(&self) -> bool {
        let mut rebuilt: BTreeMap<String, BTreeMap<ComponentKind, Vec<String>>> = BTreeMap::new();
        for c in self.components.values() {
            for s in &c.scenarios {
                rebuilt
                    .entry(s.clone())
                    .or_default()
                    .entry(c.kind)
                    .or_default()
                    .push(c.id.clone());
            }
        }
        rebuilt == self.index
    }

    pub fn save(&self, dir: &Path) -> Result<(), RepoError> {
        fs::create_dir_all(dir.join("graphs"))?;
        let mut entries = Vec::new();
        for c in self.components.values() {
            let file = format!("graphs/{}.json", c.id);
            fs::write(dir.join(&file), graph_to_json(&c.graph))?;
            entries.push(ManifestEntry {
                id: c.id.clone(),
                kind: c.kind,
                scenarios: c.scenarios.clone(),
                interface: c.interface.clone(),
                probe_shapes: c.probe_shapes.clone(),
                blocks: c.blocks.clone(),
                graph_file: file,
                origin: c.origin.clone(),
            });
        }
        let manifest = Manifest {
            format: MANIFEST_FORMAT.to_string(),
            next_serial: self.next_serial,
            retired: self
                .retired
                .iter()
                .filter(|id| !self.components.contains_key(*id))
                .cloned()
                .collect(),
            components: entries,
            ledger: self.ledger.clone(),
            last_eff: self.last_eff.clone(),
        };
        let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| RepoError::Manifest(e.to_string()))?;
        text.push('\n');
        fs::write(dir.join(MANIFEST), text)?;
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestEntry {
    id: String,
    kind: ComponentKind,
    scenarios: BTreeSet<String>,
    interface: Interface,
    probe_shapes: Vec<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    blocks: Vec<Vec<EdgeId>>,
    graph_file: String,
    origin: Origin,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: String,
    #[serde(default)]
    next_serial: u64,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    retired: BTreeSet<String>,
    #[serde(default)]
    components: Vec<ManifestEntry>,
    #[serde(default)]
    ledger: ContributionLedger,
    #[serde(default)]
    last_eff: BTreeMap<String, f64>,
}

/// Loads and validates every component listed in `dir/manifest.json`.
pub fn load_repository(dir: &Path) -> Result<Repository, RepoError> {
    let path = dir.join(MANIFEST);
    if !path.is_file() {
        return Err(RepoError::ManifestMissing(path.display().to_string()));
    }
    let text = fs::read_to_string(&path)?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| RepoError::Manifest(e.to_string()))?;
    if manifest.format != MANIFEST_FORMAT {
        return Err(RepoError::Manifest(format!("unsupported format `{}`", manifest.format)));
    }
    let mut repo = Repository {
        next_serial: manifest.next_serial,
        retired: manifest.retired,
        ..Repository::default()
    };
    for e in manifest.components {
        let invalid = |v: String| RepoError::ComponentInvalid {
            id: e.id.clone(),
            violations: vec![v],
        };
        let graph_text = fs::read_to_string(dir.join(&e.graph_file))
            .map_err(|err| invalid(format!("graph file {}: {err}", e.graph_file)))?;
        let graph =
            graph_from_json(&graph_text).map_err(|err| invalid(format!("graph file {}: {err}", e.graph_file)))?;
        let component = Component {
            id: e.id.clone(),
            kind: e.kind,
            graph,
            scenarios: e.scenarios,
            interface: e.interface,
            probe_shapes: e.probe_shapes,
            blocks: e.blocks,
            origin: e.origin,
        };
        match repo.add_component(component) {
            Ok(_) => {}
            Err(RepoError::DuplicateStructure { existing }) => {
                return Err(invalid(format!("duplicates the structure of `{existing}`")))
            }
            Err(err) => return Err(err),
        }
    }
    // Stored scores replace the defaults registered while adding.
    for (id, score) in manifest.ledger.components {
        repo.ledger.components.insert(id, score);
    }
    repo.ledger.operators.extend(manifest.ledger.operators);
    repo.last_eff = manifest.last_eff;
    Ok(repo)
}
