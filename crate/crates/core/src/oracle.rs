//! Differential verdicts and crash-log analysis.

use crate::exec::{ExecutionResult, TensorMap};
use regex::Regex;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::sync::OnceLock;
use thiserror::Error;

pub const DEFAULT_EPSILON: f64 = 0.1;
pub const DEFAULT_SIMILARITY: f64 = 0.9;
pub const UNCLASSIFIED: &str = "unclassified";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("output label sets differ")]
    LabelSetMismatch,
    #[error("label `{0}` has different shapes")]
    ShapeMismatch(String),
    #[error("log has no tokens")]
    EmptyLog,
    #[error("bug pattern catalog: {0}")]
    Catalog(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VerdictKind {
    None,
    Crash,
    Nan,
    Inconsistency,
}

impl VerdictKind {
    pub fn name(self) -> &'static str {
        match self {
            VerdictKind::None => "none",
            VerdictKind::Crash => "crash",
            VerdictKind::Nan => "nan",
            VerdictKind::Inconsistency => "inconsistency",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub model_id: Option<String>,
    pub seed: Option<u64>,
    pub crash_log: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub kind: VerdictKind,
    /// Largest per-label output difference when both runs produced outputs.
    pub max_inconsistency: Option<f64>,
    pub crash_cluster: Option<usize>,
    pub pattern_label: Option<String>,
    pub evidence: Evidence,
}

impl Verdict {
    pub fn of(kind: VerdictKind) -> Self {
        Self {
            kind,
            max_inconsistency: None,
            crash_cluster: None,
            pattern_label: None,
            evidence: Evidence::default(),
        }
    }
}

/// Largest absolute elementwise difference over all labels. Positions where
/// either side is NaN do not count; infinities do.
pub fn max_inconsistency(a: &TensorMap, b: &TensorMap) -> Result<f64, OracleError> {
    if !a.keys().eq(b.keys()) {
        return Err(OracleError::LabelSetMismatch);
    }
    let mut worst = 0.0f64;
    for (label, ta) in a {
        let tb = &b[label];
        if ta.shape() != tb.shape() {
            return Err(OracleError::ShapeMismatch(label.clone()));
        }
        for (&x, &y) in ta.data().iter().zip(tb.data()) {
            let d = (x as f64 - y as f64).abs();
            if d > worst {
                worst = d;
            }
        }
    }
    Ok(worst)
}

fn nan_asymmetric(a: &TensorMap, b: &TensorMap) -> bool {
    a.iter()
        .any(|(label, t)| b.get(label).is_some_and(|u| t.has_nan() != u.has_nan()))
}

/// Crash, then NaN asymmetry, then inconsistency above `epsilon`. The
/// reference run must have succeeded.
pub fn judge(reference: &ExecutionResult, optimized: &ExecutionResult, epsilon: f64) -> Verdict {
    let Some(ref_out) = reference.outputs() else {
        return Verdict::of(VerdictKind::None);
    };
    let Some(opt_out) = optimized.outputs() else {
        let mut v = Verdict::of(VerdictKind::Crash);
        v.evidence.crash_log = optimized.crash_log().map(str::to_string);
        return v;
    };
    let diff = max_inconsistency(ref_out, opt_out).unwrap_or(f64::INFINITY);
    let kind = if nan_asymmetric(ref_out, opt_out) {
        VerdictKind::Nan
    } else if diff > epsilon {
        VerdictKind::Inconsistency
    } else {
        VerdictKind::None
    };
    Verdict {
        max_inconsistency: Some(diff),
        ..Verdict::of(kind)
    }
}

/// True when some stack frame line (`at ...`) names one of `api_names`.
pub fn filter_crash_log(log: &str, api_names: &[String]) -> bool {
    log.lines()
        .map(str::trim_start)
        .filter(|l| l.starts_with("at "))
        .any(|l| api_names.iter().any(|api| !api.is_empty() && l.contains(api.as_str())))
}

fn masks() -> &'static (Regex, Regex) {
    static MASKS: OnceLock<(Regex, Regex)> = OnceLock::new();
    MASKS.get_or_init(|| {
        (
            Regex::new(r"0x[0-9a-fA-F]+").unwrap(),
            Regex::new(r"\b\d+(\.\d+)?\b").unwrap(),
        )
    })
}

/// Whitespace tokens, lowercased, with hex addresses and decimal literals
/// replaced by placeholders.
pub fn tokenize(log: &str) -> Vec<String> {
    let (hex, num) = masks();
    log.split_whitespace()
        .map(|t| {
            let t = t.to_lowercase();
            let t = hex.replace_all(&t, "<hex>");
            num.replace_all(&t, "<num>").into_owned()
        })
        .collect()
}

pub type TermVector = BTreeMap<String, u32>;

pub fn term_vector(log: &str) -> TermVector {
    let mut v = TermVector::new();
    for t in tokenize(log) {
        *v.entry(t).or_default() += 1;
    }
    v
}

pub fn vector_cosine(a: &TermVector, b: &TermVector) -> f64 {
    let dot: f64 = a
        .iter()
        .filter_map(|(t, &x)| b.get(t).map(|&y| x as f64 * y as f64))
        .sum();
    let sq = |v: &TermVector| v.values().map(|&x| (x as f64).powi(2)).sum::<f64>();
    (dot / (sq(a) * sq(b)).sqrt()).clamp(-1.0, 1.0)
}

pub fn cosine_similarity(a: &str, b: &str) -> Result<f64, OracleError> {
    let (va, vb) = (term_vector(a), term_vector(b));
    if va.is_empty() || vb.is_empty() {
        return Err(OracleError::EmptyLog);
    }
    Ok(vector_cosine(&va, &vb))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cluster {
    /// Index of the first log of the cluster.
    pub representative: usize,
    pub members: Vec<usize>,
}

/// Single-linkage clustering: logs whose similarity exceeds `threshold` end
/// up together, transitively. Clusters are ordered by representative.
pub fn cluster_crashes(logs: &[&str], threshold: f64) -> Vec<Cluster> {
    let vectors: Vec<TermVector> = logs.iter().map(|l| term_vector(l)).collect();
    let mut parent: Vec<usize> = (0..logs.len()).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for i in 0..logs.len() {
        for j in 0..i {
            if vectors[i].is_empty() || vectors[j].is_empty() {
                continue;
            }
            if vector_cosine(&vectors[i], &vectors[j]) > threshold {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                // The smaller index stays root, so roots are first arrivals.
                let (lo, hi) = (ri.min(rj), ri.max(rj));
                parent[hi] = lo;
            }
        }
    }
    let mut clusters: Vec<Cluster> = Vec::new();
    for i in 0..logs.len() {
        let r = find(&mut parent, i);
        match clusters.iter_mut().find(|c| c.representative == r) {
            Some(c) => c.members.push(i),
            None => clusters.push(Cluster {
                representative: r,
                members: vec![i],
            }),
        }
    }
    clusters
}

/// Online variant used during a campaign: a new log joins the earliest
/// cluster holding a log similar enough to it, or starts a new cluster.
#[derive(Debug, Clone, Default)]
pub struct CrashClusters {
    threshold: f64,
    /// Per cluster: representative log and the distinct term vectors seen.
    clusters: Vec<(String, Vec<TermVector>)>,
}

impl CrashClusters {
    pub fn new(threshold: f64) -> Self {
        Self {
            threshold,
            clusters: Vec::new(),
        }
    }

    /// Cluster id of `log` and whether the cluster is new.
    pub fn assign(&mut self, log: &str) -> (usize, bool) {
        let v = term_vector(log);
        for (id, (_, members)) in self.clusters.iter_mut().enumerate() {
            if members
                .iter()
                .any(|m| !v.is_empty() && vector_cosine(m, &v) > self.threshold)
            {
                if !members.contains(&v) {
                    members.push(v);
                }
                return (id, false);
            }
        }
        self.clusters.push((log.to_string(), vec![v]));
        (self.clusters.len() - 1, true)
    }

    pub fn representatives(&self) -> impl Iterator<Item = &str> {
        self.clusters.iter().map(|(r, _)| r.as_str())
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BugPattern {
    pub keyword: String,
    pub label: String,
}

pub fn default_bug_patterns() -> Vec<BugPattern> {
    [
        ("CUDNN_STATUS_NOT_SUPPORTED", "accelerator-library error"),
        ("out of memory", "limited-memory"),
        ("Unimplemented", "unimplemented-function"),
        ("illegal memory access", "memory-access violation"),
    ]
    .iter()
    .map(|&(k, l)| BugPattern {
        keyword: k.to_string(),
        label: l.to_string(),
    })
    .collect()
}

/// Keywords must be nonempty and none may contain another.
pub fn check_catalog(catalog: &[BugPattern]) -> Result<(), OracleError> {
    for (i, a) in catalog.iter().enumerate() {
        if a.keyword.is_empty() {
            return Err(OracleError::Catalog(format!("entry {i} has an empty keyword")));
        }
        for (j, b) in catalog.iter().enumerate() {
            if i != j && b.keyword.contains(a.keyword.as_str()) {
                return Err(OracleError::Catalog(format!(
                    "keyword `{}` occurs inside `{}`",
                    a.keyword, b.keyword
                )));
            }
        }
    }
    Ok(())
}

pub fn parse_catalog(text: &str) -> Result<Vec<BugPattern>, OracleError> {
    let catalog: Vec<BugPattern> = serde_json::from_str(text).map_err(|e| OracleError::Catalog(e.to_string()))?;
    check_catalog(&catalog)?;
    Ok(catalog)
}

/// Label of the first catalog entry whose keyword occurs in `log`.
pub fn match_bug_pattern(log: &str, catalog: &[BugPattern]) -> String {
    catalog
        .iter()
        .find(|p| log.contains(p.keyword.as_str()))
        .map_or_else(|| UNCLASSIFIED.to_string(), |p| p.label.clone())
}
