//! Effectiveness of a judged model and the feedback it produces.

use crate::exec::TensorMap;
use crate::generator::ledger::{ContributionLedger, SCORE_FLOOR};
use crate::ops::OpKind;
use crate::oracle::{Verdict, VerdictKind};
use crate::repo::{Component, RepoError, Repository};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffRecord {
    pub model_id: String,
    pub eff: f64,
    pub eff_old: f64,
    pub delta: f64,
}

impl EffRecord {
    pub fn new(model_id: impl Into<String>, eff: f64, eff_old: f64) -> Self {
        Self {
            model_id: model_id.into(),
            eff,
            eff_old,
            delta: eff - eff_old,
        }
    }
}

/// 0 for a clean run, the mean input element for crashes and NaNs, the
/// largest output difference for inconsistencies.
pub fn compute_eff(verdict: &Verdict, inputs: &TensorMap) -> f64 {
    match verdict.kind {
        VerdictKind::None => 0.0,
        VerdictKind::Crash | VerdictKind::Nan => {
            let (sum, n) = inputs
                .values()
                .flat_map(|t| t.data())
                .fold((0.0f64, 0usize), |(s, n), &x| (s + x as f64, n + 1));
            if n == 0 {
                0.0
            } else {
                sum / n as f64
            }
        }
        VerdictKind::Inconsistency => verdict.max_inconsistency.unwrap_or(0.0),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target<'a> {
    Component(&'a str),
    Operator(OpKind),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("`{0}` has no contribution score")]
pub struct UnknownId(pub String);

/// Adds `delta` to the target's score, never letting it drop below the floor.
pub fn update_contribution(ledger: &mut ContributionLedger, target: Target<'_>, delta: f64) -> Result<f64, UnknownId> {
    let slot = match target {
        Target::Component(id) => ledger.components.get_mut(id).ok_or_else(|| UnknownId(id.to_string()))?,
        Target::Operator(kind) => ledger
            .operators
            .get_mut(&kind)
            .ok_or_else(|| UnknownId(kind.to_string()))?,
    };
    *slot = (*slot + delta).max(SCORE_FLOOR);
    Ok(*slot)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Growth {
    Added(String),
    Skipped,
}

/// Keeps a mutated backbone, under a freshly issued id, when its model
/// exposed a bug or improved on its parent.
pub fn maybe_add_component(
    repo: &mut Repository,
    mut mutant: Component,
    verdict: &Verdict,
    delta: f64,
) -> Result<Growth, RepoError> {
    if verdict.kind == VerdictKind::None && delta <= 0.0 {
        return Ok(Growth::Skipped);
    }
    mutant.id = repo.mint_id(mutant.kind);
    repo.add_component(mutant).map(Growth::Added)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds::seed_components;
    use crate::tensor::Tensor;

    fn inputs(d: Vec<f32>) -> TensorMap {
        let mut m = TensorMap::new();
        m.insert("x".into(), Tensor::new("x", vec![d.len()], d).unwrap());
        m
    }

    #[test]
    fn eff_examples() {
        let x = inputs(vec![0.0, 1.0, 2.0, 3.0]);
        assert_eq!(compute_eff(&Verdict::of(VerdictKind::None), &x), 0.0);
        assert_eq!(compute_eff(&Verdict::of(VerdictKind::Crash), &x), 1.5);
        assert_eq!(compute_eff(&Verdict::of(VerdictKind::Nan), &x), 1.5);
        let mut v = Verdict::of(VerdictKind::Inconsistency);
        v.max_inconsistency = Some(0.15);
        assert_eq!(compute_eff(&v, &x), 0.15);

        let mut two = x.clone();
        two.insert("y".into(), Tensor::new("y", vec![2], vec![10.0, 10.0]).unwrap());
        // concatenation [0,1,2,3,10,10]
        assert_eq!(compute_eff(&Verdict::of(VerdictKind::Crash), &two), 26.0 / 6.0);
    }

    #[test]
    fn contribution_examples() {
        let mut l = ContributionLedger::default();
        l.register_component("c");
        assert_eq!(update_contribution(&mut l, Target::Component("c"), 0.3).unwrap(), 1.3);
        assert_eq!(update_contribution(&mut l, Target::Component("c"), 0.0).unwrap(), 1.3);
        assert_eq!(
            update_contribution(&mut l, Target::Component("c"), -2.0).unwrap(),
            SCORE_FLOOR
        );
        assert_eq!(
            update_contribution(&mut l, Target::Operator(OpKind::ReLU), -5.0).unwrap(),
            SCORE_FLOOR
        );
        let w = [l.component("c"), 1.0];
        let total: f64 = w.iter().sum();
        assert!(w.iter().all(|x| *x > 0.0) && total.is_finite());
        assert_eq!(
            update_contribution(&mut l, Target::Component("ghost"), 1.0),
            Err(UnknownId("ghost".into()))
        );
    }

    #[test]
    fn growth_rule() {
        let seeds = seed_components();
        let backbone = seeds.iter().find(|c| c.id == "resnet-lite").unwrap().clone();
        let fresh = |id: &str| {
            let mut c = backbone.clone();
            c.id = id.into();
            c
        };
        let mut repo = Repository::new();
        assert_eq!(
            maybe_add_component(&mut repo, fresh("a"), &Verdict::of(VerdictKind::Crash), -0.5).unwrap(),
            Growth::Added("backbone-00001".into())
        );
        let mut repo = Repository::new();
        assert_eq!(
            maybe_add_component(&mut repo, fresh("b"), &Verdict::of(VerdictKind::None), 0.2).unwrap(),
            Growth::Added("backbone-00001".into())
        );
        let mut repo = Repository::new();
        assert_eq!(
            maybe_add_component(&mut repo, fresh("c"), &Verdict::of(VerdictKind::None), 0.0).unwrap(),
            Growth::Skipped
        );
        assert!(repo.is_empty());
    }
}
