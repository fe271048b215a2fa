//! Campaign driver: the fuzz loop, coverage accounting, bug log and replay.

use crate::exchange::{graph_from_json, graph_to_json};
use crate::exec::fault::{FaultEffect, FaultSpec};
use crate::exec::{execute_optimized, execute_reference, executor_api_names, ExecutionResult, OptimizerConfig};
use crate::fixtures::{generate_inputs, model_inputs, RawInput};
use crate::generator::{assemble, mutate_backbone, select_component, Mutant};
use crate::graph::{sha256_hex, Graph};
use crate::heuristics::{compute_eff, maybe_add_component, update_contribution, EffRecord, Growth, Target};
use crate::ops::OpKind;
use crate::oracle::{
    default_bug_patterns, filter_crash_log, judge, match_bug_pattern, parse_catalog, BugPattern, CrashClusters,
    Verdict, VerdictKind, DEFAULT_EPSILON, DEFAULT_SIMILARITY,
};
use crate::repo::{load_repository, Component, ComponentKind, Origin, RepoError, Repository};
use crate::seeds::seed_repository;
use crate::sketch::{default_scenarios, find_scenario, generate_sketch, Scenario, Sketch};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};
use thiserror::Error;

pub const BUG_LOG: &str = "bugs.jsonl";
pub const REPORT: &str = "report.json";
pub const COVERAGE: &str = "coverage.json";
pub const STATE: &str = "state.json";
pub const CONFIG: &str = "campaign.json";
pub const REPO_DIR: &str = "repo";
pub const MODELS_DIR: &str = "models";
pub const CRASH_DIR: &str = "crashes";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Budget {
    Iterations(u64),
    /// Checked between iterations only.
    Seconds(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignConfig {
    pub seed: u64,
    pub budget: Budget,
    /// Scenario names visited round-robin; empty means all.
    #[serde(default)]
    pub scenarios: Vec<String>,
    pub epsilon: f64,
    pub sim_threshold: f64,
    pub optimizer: OptimizerConfig,
    /// Fault list appended to `optimizer.fault_injections` at start.
    #[serde(default)]
    pub faults_file: Option<PathBuf>,
    #[serde(default)]
    pub bug_patterns_file: Option<PathBuf>,
    /// Repository directory; the built-in seeds when absent.
    #[serde(default)]
    pub repo: Option<PathBuf>,
    pub out_dir: PathBuf,
}

impl CampaignConfig {
    pub fn new(seed: u64, iterations: u64, out_dir: impl Into<PathBuf>) -> Self {
        Self {
            seed,
            budget: Budget::Iterations(iterations),
            scenarios: Vec::new(),
            epsilon: DEFAULT_EPSILON,
            sim_threshold: DEFAULT_SIMILARITY,
            optimizer: OptimizerConfig::all(),
            faults_file: None,
            bug_patterns_file: None,
            repo: None,
            out_dir: out_dir.into(),
        }
    }

    pub fn validate(&self) -> Result<(), CampaignError> {
        let bad = |m: &str| Err(CampaignError::Config(m.to_string()));
        match self.budget {
            Budget::Iterations(0) => return bad("iteration budget must be positive"),
            Budget::Seconds(s) if !(s > 0.0 && s.is_finite()) => return bad("duration must be positive"),
            _ => {}
        }
        if self.epsilon.is_nan() || self.epsilon < 0.0 {
            return bad("epsilon must be non-negative");
        }
        if !(-1.0..=1.0).contains(&self.sim_threshold) {
            return bad("similarity threshold must lie in [-1, 1]");
        }
        let known = default_scenarios();
        for s in &self.scenarios {
            find_scenario(&known, s).map_err(|e| CampaignError::Config(e.to_string()))?;
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum CampaignError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Repo(#[from] RepoError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BugRecord {
    pub iteration: u64,
    pub scenario: String,
    pub input_seed: u64,
    pub model_id: String,
    /// Relative to the campaign output directory.
    pub model_file: String,
    pub kind: VerdictKind,
    pub eff: f64,
    pub max_inconsistency: Option<f64>,
    pub cluster: Option<usize>,
    pub label: Option<String>,
    /// Head, neck (if any) and the backbone that was mutated.
    pub components: Vec<String>,
    pub operator: OpKind,
    pub dedup_key: String,
    /// Injected faults that fired in the optimized run.
    #[serde(default)]
    pub fired_faults: Vec<String>,
}

/// Operator kinds and component ids seen in valid models.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CoverageState {
    pub operators: BTreeSet<OpKind>,
    pub components: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub operator_coverage: f64,
    /// Used components over the live repository size.
    pub component_coverage: f64,
    /// Used seed components over the seed components present.
    pub seed_component_coverage: f64,
    pub operators_covered: Vec<OpKind>,
    pub operators_missing: Vec<OpKind>,
    pub components_used: usize,
    pub repository_size: usize,
}

pub fn coverage_metrics(state: &CoverageState, repo: &Repository) -> CoverageReport {
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let used = repo.ids().filter(|id| state.components.contains(*id)).count();
    let seeds: Vec<&Component> = repo.components().filter(|c| c.origin == Origin::Seed).collect();
    let seeds_used = seeds.iter().filter(|c| state.components.contains(&c.id)).count();
    CoverageReport {
        operator_coverage: ratio(state.operators.len(), OpKind::ALL.len()),
        component_coverage: ratio(used, repo.len()),
        seed_component_coverage: ratio(seeds_used, seeds.len()),
        operators_covered: state.operators.iter().copied().collect(),
        operators_missing: OpKind::ALL
            .iter()
            .copied()
            .filter(|k| !state.operators.contains(k))
            .collect(),
        components_used: used,
        repository_size: repo.len(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignReport {
    pub iterations: u64,
    pub sketches: u64,
    pub models_assembled: u64,
    /// Models whose reference execution succeeded.
    pub valid_models: u64,
    pub valid_model_rate: f64,
    pub verdicts: BTreeMap<VerdictKind, u64>,
    /// Crash verdicts dropped because no stack frame named an executor API.
    pub filtered_crashes: u64,
    pub bugs: usize,
    pub crash_clusters: usize,
    pub components_added: u64,
    /// Mutants kept by the growth rule but structurally already present.
    pub duplicate_mutants: u64,
    pub repository_size: usize,
    pub failures: BTreeMap<String, u64>,
    /// Injected faults that were the only fired fault able to explain some
    /// verdict of their kind.
    pub faults_detected: Vec<String>,
    pub coverage: CoverageReport,
}

impl CampaignReport {
    pub fn found_bugs(&self) -> bool {
        self.bugs > 0
    }
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn input_seed(campaign_seed: u64, iteration: u64) -> u64 {
    splitmix(campaign_seed ^ splitmix(iteration))
}

pub fn model_id(graph: &Graph) -> String {
    sha256_hex(graph_to_json(graph).as_bytes())[..16].to_string()
}

pub fn load_faults(path: &Path) -> Result<Vec<FaultSpec>, CampaignError> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| CampaignError::Config(format!("{}: {e}", path.display())))
}

pub fn load_bug_records(path: &Path) -> Result<Vec<BugRecord>, CampaignError> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(CampaignError::from))
        .collect()
}

fn fits(up: &Component, down: &Component) -> bool {
    up.interface.outputs == down.interface.inputs
}

/// Head, then neck, then backbone, each drawn among candidates that still
/// admit a complete chain.
fn select_chain<'r, R: Rng + ?Sized>(
    repo: &'r Repository,
    scenario: &str,
    sketch: &Sketch,
    rng: &mut R,
) -> Option<(&'r Component, Option<&'r Component>, &'r Component)> {
    let heads = repo.components_for_scenario(scenario, ComponentKind::Head);
    let backbones = repo.components_for_scenario(scenario, ComponentKind::Backbone);
    let fed = |down: &Component| backbones.iter().any(|b| fits(b, down));
    if sketch.has_neck() {
        let necks: Vec<&Component> = repo
            .components_for_scenario(scenario, ComponentKind::Neck)
            .into_iter()
            .filter(|n| fed(n))
            .collect();
        let heads: Vec<&Component> = heads.into_iter().filter(|h| necks.iter().any(|n| fits(n, h))).collect();
        let head = select_component(&heads, &repo.ledger, rng).ok()?;
        let necks: Vec<&Component> = necks.into_iter().filter(|n| fits(n, head)).collect();
        let neck = select_component(&necks, &repo.ledger, rng).ok()?;
        let backbones: Vec<&Component> = backbones.iter().copied().filter(|b| fits(b, neck)).collect();
        let backbone = select_component(&backbones, &repo.ledger, rng).ok()?;
        Some((head, Some(neck), backbone))
    } else {
        let heads: Vec<&Component> = heads.into_iter().filter(|h| fed(h)).collect();
        let head = select_component(&heads, &repo.ledger, rng).ok()?;
        let backbones: Vec<&Component> = backbones.iter().copied().filter(|b| fits(b, head)).collect();
        let backbone = select_component(&backbones, &repo.ledger, rng).ok()?;
        Some((head, None, backbone))
    }
}

fn run_both(
    graph: &Graph,
    inputs: &crate::exec::TensorMap,
    cfg: &OptimizerConfig,
) -> Option<(ExecutionResult, ExecutionResult)> {
    let (r, o) = std::thread::scope(|s| {
        let opt = s.spawn(|| execute_optimized(graph, inputs, cfg));
        let reference = execute_reference(graph, inputs);
        (reference, opt.join().expect("optimized executor thread"))
    });
    Some((r.ok()?, o.ok()?))
}

/// Turns raw backend results into a final verdict: crashes whose logs name
/// no executor API are dropped, others get a cluster and a pattern label.
fn classify(
    reference: &ExecutionResult,
    optimized: &ExecutionResult,
    epsilon: f64,
    apis: &[String],
    clusters: &mut CrashClusters,
    patterns: &[BugPattern],
) -> (Verdict, bool, bool) {
    let mut verdict = judge(reference, optimized, epsilon);
    let (mut filtered, mut new_cluster) = (false, false);
    if verdict.kind == VerdictKind::Crash {
        let log = verdict.evidence.crash_log.clone().unwrap_or_default();
        if filter_crash_log(&log, apis) {
            let (id, fresh) = clusters.assign(&log);
            verdict.crash_cluster = Some(id);
            verdict.pattern_label = Some(match_bug_pattern(&log, patterns));
            new_cluster = fresh;
        } else {
            filtered = true;
            verdict = Verdict::of(VerdictKind::None);
        }
    }
    (verdict, filtered, new_cluster)
}

fn fault_matches_kind(effect: &FaultEffect, kind: VerdictKind) -> bool {
    matches!(
        (effect, kind),
        (FaultEffect::RaiseCrash { .. }, VerdictKind::Crash)
            | (FaultEffect::EmitNan, VerdictKind::Nan)
            | (FaultEffect::CorruptOutput { .. }, VerdictKind::Inconsistency)
    )
}

/// Everything shared by the mutants of one iteration.
#[derive(Clone, Copy)]
struct Round<'a> {
    it: u64,
    scenario: &'a Scenario,
    sketch: &'a Sketch,
    head: &'a Component,
    neck: Option<&'a Component>,
    parent: &'a Component,
    seed: u64,
    inputs: &'a crate::exec::TensorMap,
    eff_old: f64,
}

struct Campaign {
    cfg: CampaignConfig,
    optimizer: OptimizerConfig,
    patterns: Vec<BugPattern>,
    scenarios: Vec<Scenario>,
    repo: Repository,
    rng: ChaCha8Rng,
    apis: Vec<String>,
    clusters: CrashClusters,
    coverage: CoverageState,
    dedup: BTreeSet<(VerdictKind, String)>,
    bug_log: fs::File,
    report: CampaignReport,
    detected: BTreeSet<String>,
}

impl Campaign {
    fn fail(&mut self, what: &str) {
        *self.report.failures.entry(what.to_string()).or_default() += 1;
    }

    fn iteration(&mut self, it: u64) -> Result<(), CampaignError> {
        let scenario = self.scenarios[(it % self.scenarios.len() as u64) as usize].clone();
        let sketch = match generate_sketch(&scenario) {
            Ok(s) => s,
            Err(_) => {
                self.fail("sketch");
                return Ok(());
            }
        };
        self.report.sketches += 1;
        let Some((head, neck, backbone)) = select_chain(&self.repo, &scenario.name, &sketch, &mut self.rng) else {
            self.fail("selection");
            return Ok(());
        };
        let (head, neck, backbone) = (head.clone(), neck.cloned(), backbone.clone());
        let mutants = match mutate_backbone(&backbone, &self.repo.ledger, &mut self.rng, it) {
            Ok(m) => m,
            Err(_) => {
                self.fail("mutation");
                return Ok(());
            }
        };
        let seed = input_seed(self.cfg.seed, it);
        let raw = generate_inputs(&scenario, seed);
        let Ok(inputs) = model_inputs(&scenario, &raw) else {
            self.fail("inputs");
            return Ok(());
        };
        let round = Round {
            it,
            scenario: &scenario,
            sketch: &sketch,
            head: &head,
            neck: neck.as_ref(),
            parent: &backbone,
            seed,
            inputs: &inputs,
            eff_old: self.repo.last_eff.get(&backbone.id).copied().unwrap_or(0.0),
        };
        let mut best: Option<f64> = None;
        for mutant in mutants {
            if let Some(eff) = self.judge_mutant(&round, mutant)? {
                best = Some(best.map_or(eff, |b: f64| b.max(eff)));
            }
        }
        // This round is the parent's most recent evaluation.
        if let Some(eff) = best {
            self.repo.last_eff.insert(backbone.id.clone(), eff);
        }
        Ok(())
    }

    /// Assembles, runs and judges one mutant; its eff when it was judged.
    fn judge_mutant(&mut self, round: &Round<'_>, mutant: Mutant) -> Result<Option<f64>, CampaignError> {
        let Round {
            it,
            scenario,
            sketch,
            head,
            neck,
            parent,
            seed,
            inputs,
            eff_old,
        } = *round;
        let model = match assemble(sketch, head, neck, &mutant.component) {
            Ok(m) => m,
            Err(_) => {
                self.fail("assembly");
                return Ok(None);
            }
        };
        self.report.models_assembled += 1;
        let Some((reference, optimized)) = run_both(&model.graph, inputs, &self.optimizer) else {
            self.fail("execution");
            return Ok(None);
        };
        if !reference.is_ok() {
            return Ok(None);
        }
        self.report.valid_models += 1;
        self.coverage.operators.extend(model.graph.op_kinds());
        let mut selected = vec![head.id.clone()];
        selected.extend(neck.map(|n| n.id.clone()));
        selected.push(parent.id.clone());
        self.coverage.components.extend(selected.iter().cloned());

        let (verdict, filtered, new_cluster) = classify(
            &reference,
            &optimized,
            self.cfg.epsilon,
            &self.apis,
            &mut self.clusters,
            &self.patterns,
        );
        self.report.filtered_crashes += filtered as u64;
        *self.report.verdicts.entry(verdict.kind).or_default() += 1;

        let id = model_id(&model.graph);
        let eff = compute_eff(&verdict, inputs);
        let record = EffRecord::new(id.clone(), eff, eff_old);
        for c in &selected {
            update_contribution(&mut self.repo.ledger, Target::Component(c), record.delta)
                .expect("selected components are registered");
        }
        update_contribution(&mut self.repo.ledger, Target::Operator(mutant.operator), record.delta)
            .expect("every operator kind is scored");

        match maybe_add_component(&mut self.repo, mutant.component.clone(), &verdict, record.delta) {
            Ok(Growth::Added(new_id)) => {
                self.report.components_added += 1;
                self.repo.last_eff.insert(new_id.clone(), eff);
                self.coverage.components.insert(new_id);
            }
            Ok(Growth::Skipped) => {}
            Err(RepoError::DuplicateStructure { .. }) => self.report.duplicate_mutants += 1,
            Err(e) => return Err(e.into()),
        }

        if verdict.kind == VerdictKind::None {
            return Ok(Some(eff));
        }
        if let Some(c) = verdict.crash_cluster.filter(|_| new_cluster) {
            let log = verdict.evidence.crash_log.as_deref().unwrap_or_default();
            fs::write(
                self.cfg.out_dir.join(CRASH_DIR).join(format!("cluster-{c:03}.log")),
                log,
            )?;
        }
        let dedup_key = match verdict.crash_cluster {
            Some(c) => format!("cluster-{c}"),
            None => id.clone(),
        };
        let culprits: Vec<&FaultSpec> = self
            .optimizer
            .fault_injections
            .iter()
            .filter(|f| optimized.fired_faults.contains(&f.name) && fault_matches_kind(&f.effect, verdict.kind))
            .collect();
        if let [only] = culprits[..] {
            self.detected.insert(only.name.clone());
        }
        if !self.dedup.insert((verdict.kind, dedup_key.clone())) {
            return Ok(Some(eff));
        }
        let model_file = format!("{MODELS_DIR}/{id}.json");
        fs::write(self.cfg.out_dir.join(&model_file), graph_to_json(&model.graph))?;
        let bug = BugRecord {
            iteration: it,
            scenario: scenario.name.clone(),
            input_seed: seed,
            model_id: id,
            model_file,
            kind: verdict.kind,
            eff,
            max_inconsistency: verdict.max_inconsistency,
            cluster: verdict.crash_cluster,
            label: verdict.pattern_label.clone(),
            components: selected,
            operator: mutant.operator,
            dedup_key,
            fired_faults: optimized.fired_faults.clone(),
        };
        writeln!(self.bug_log, "{}", serde_json::to_string(&bug)?)?;
        self.report.bugs += 1;
        Ok(Some(eff))
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CampaignError> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

/// Runs a whole campaign and writes its artifacts under `cfg.out_dir`.
/// Only configuration and repository problems are fatal.
pub fn fuzz_loop(cfg: &CampaignConfig) -> Result<CampaignReport, CampaignError> {
    cfg.validate()?;
    let mut optimizer = cfg.optimizer.clone();
    if let Some(path) = &cfg.faults_file {
        optimizer.fault_injections.extend(load_faults(path)?);
    }
    let patterns = match &cfg.bug_patterns_file {
        Some(p) => parse_catalog(&fs::read_to_string(p)?).map_err(|e| CampaignError::Config(e.to_string()))?,
        None => default_bug_patterns(),
    };
    let repo = match &cfg.repo {
        Some(dir) => load_repository(dir)?,
        None => seed_repository(),
    };
    let all = default_scenarios();
    let scenarios: Vec<Scenario> = if cfg.scenarios.is_empty() {
        all
    } else {
        all.into_iter().filter(|s| cfg.scenarios.contains(&s.name)).collect()
    };

    let out = &cfg.out_dir;
    fs::create_dir_all(out.join(MODELS_DIR))?;
    fs::create_dir_all(out.join(CRASH_DIR))?;
    let mut recorded = cfg.clone();
    recorded.optimizer = optimizer.clone();
    recorded.faults_file = None;
    write_json(&out.join(CONFIG), &recorded)?;

    let mut c = Campaign {
        cfg: cfg.clone(),
        optimizer,
        patterns,
        scenarios,
        repo,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        apis: executor_api_names(),
        clusters: CrashClusters::new(cfg.sim_threshold),
        coverage: CoverageState::default(),
        dedup: BTreeSet::new(),
        bug_log: fs::File::create(out.join(BUG_LOG))?,
        report: CampaignReport {
            iterations: 0,
            sketches: 0,
            models_assembled: 0,
            valid_models: 0,
            valid_model_rate: 0.0,
            verdicts: BTreeMap::new(),
            filtered_crashes: 0,
            bugs: 0,
            crash_clusters: 0,
            components_added: 0,
            duplicate_mutants: 0,
            repository_size: 0,
            failures: BTreeMap::new(),
            faults_detected: Vec::new(),
            coverage: coverage_metrics(&CoverageState::default(), &Repository::new()),
        },
        detected: BTreeSet::new(),
    };

    let start = Instant::now();
    let mut it = 0u64;
    loop {
        let more = match cfg.budget {
            Budget::Iterations(n) => it < n,
            Budget::Seconds(s) => start.elapsed() < Duration::from_secs_f64(s),
        };
        if !more {
            break;
        }
        c.iteration(it)?;
        it += 1;
    }
    c.bug_log.flush()?;

    let mut report = c.report;
    report.iterations = it;
    report.valid_model_rate = if report.models_assembled == 0 {
        0.0
    } else {
        report.valid_models as f64 / report.models_assembled as f64
    };
    report.crash_clusters = c.clusters.len();
    report.repository_size = c.repo.len();
    report.faults_detected = c.detected.into_iter().collect();
    report.coverage = coverage_metrics(&c.coverage, &c.repo);

    c.repo.save(&out.join(REPO_DIR))?;
    write_json(&out.join(STATE), &c.coverage)?;
    write_json(&out.join(COVERAGE), &report.coverage)?;
    write_json(&out.join(REPORT), &report)?;
    Ok(report)
}

/// Coverage of a finished campaign, recomputed from its saved state and
/// repository.
pub fn coverage_of(out_dir: &Path) -> Result<CoverageReport, CampaignError> {
    let state: CoverageState = serde_json::from_str(&fs::read_to_string(out_dir.join(STATE))?)?;
    let repo = load_repository(&out_dir.join(REPO_DIR))?;
    Ok(coverage_metrics(&state, &repo))
}

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("missing artifact {0}")]
    MissingArtifact(PathBuf),
    #[error("corrupt artifact {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },
    #[error("model no longer executes: {0}")]
    Execution(String),
}

fn read_artifact(path: PathBuf) -> Result<String, ReplayError> {
    fs::read_to_string(&path).map_err(|_| ReplayError::MissingArtifact(path))
}

/// Re-executes a recorded model on its recorded inputs with the campaign's
/// configuration.
pub fn replay(record: &BugRecord, out_dir: &Path) -> Result<Verdict, ReplayError> {
    replay_with(record, out_dir, None)
}

/// As [`replay`], but on the given raw inputs instead of the ones
/// regenerated from the record's seed.
pub fn replay_with(
    record: &BugRecord,
    out_dir: &Path,
    raw: Option<&BTreeMap<String, RawInput>>,
) -> Result<Verdict, ReplayError> {
    let corrupt = |path: PathBuf, e: &dyn std::fmt::Display| ReplayError::Corrupt {
        path,
        reason: e.to_string(),
    };
    let cfg_path = out_dir.join(CONFIG);
    let cfg: CampaignConfig =
        serde_json::from_str(&read_artifact(cfg_path.clone())?).map_err(|e| corrupt(cfg_path, &e))?;
    let model_path = out_dir.join(&record.model_file);
    let graph = graph_from_json(&read_artifact(model_path.clone())?).map_err(|e| corrupt(model_path, &e))?;
    let scenarios = default_scenarios();
    let scenario = find_scenario(&scenarios, &record.scenario).map_err(|e| ReplayError::Execution(e.to_string()))?;
    let generated;
    let raw = match raw {
        Some(r) => r,
        None => {
            generated = generate_inputs(scenario, record.input_seed);
            &generated
        }
    };
    let inputs = model_inputs(scenario, raw).map_err(|e| ReplayError::Execution(e.to_string()))?;
    let (reference, optimized) = run_both(&graph, &inputs, &cfg.optimizer)
        .ok_or_else(|| ReplayError::Execution("precondition failed".into()))?;
    if !reference.is_ok() {
        return Err(ReplayError::Execution("reference run crashed".into()));
    }

    let mut clusters = CrashClusters::new(cfg.sim_threshold);
    let mut reps: Vec<PathBuf> = fs::read_dir(out_dir.join(CRASH_DIR))
        .map(|d| d.filter_map(|e| e.ok().map(|e| e.path())).collect())
        .unwrap_or_default();
    reps.sort();
    for p in reps {
        clusters.assign(&read_artifact(p)?);
    }
    let patterns = match &cfg.bug_patterns_file {
        Some(p) => parse_catalog(&read_artifact(p.clone())?).map_err(|e| corrupt(p.clone(), &e))?,
        None => default_bug_patterns(),
    };
    let (mut verdict, _, _) = classify(
        &reference,
        &optimized,
        cfg.epsilon,
        &executor_api_names(),
        &mut clusters,
        &patterns,
    );
    verdict.evidence.model_id = Some(record.model_id.clone());
    verdict.evidence.seed = Some(record.input_seed);
    Ok(verdict)
}
