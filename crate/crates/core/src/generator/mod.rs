//! Model generation: weighted component and operator selection, block-wise
//! backbone mutation and sketch-driven assembly.

pub mod assemble;
pub mod init;
pub mod ledger;
pub mod mutate;

use crate::ops::OpKind;
use crate::repo::Component;
use ledger::ContributionLedger;
use rand::Rng;
use thiserror::Error;

pub use assemble::{assemble, AssemblyError, Model};
pub use mutate::{mutate_backbone, Mutant, MutateError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SelectError {
    #[error("no candidates to select from")]
    EmptyCandidates,
    #[error("no operator other than {0} with the same arity")]
    NoCompatibleOperator(OpKind),
}

/// Index drawn with probability `weights[i] / sum(weights)`.
pub fn weighted_index<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let mut r = rng.gen::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        if r < w {
            return i;
        }
        r -= w;
    }
    // Rounding can leave r a hair above the last weight.
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

/// Draws a candidate with probability proportional to its contribution score.
pub fn select_component<'a, R: Rng + ?Sized>(
    candidates: &[&'a Component],
    ledger: &ContributionLedger,
    rng: &mut R,
) -> Result<&'a Component, SelectError> {
    if candidates.is_empty() {
        return Err(SelectError::EmptyCandidates);
    }
    let weights: Vec<f64> = candidates.iter().map(|c| ledger.component(&c.id)).collect();
    Ok(candidates[weighted_index(&weights, rng)])
}

/// Upper bound on redraws before falling back to a draw that excludes
/// `original` directly; both have the same distribution.
const MAX_REDRAWS: usize = 10_000;

/// Draws an operator kind of the same arity as `original`, weighted by
/// contribution score, drawing again while the result equals `original`.
pub fn select_operator<R: Rng + ?Sized>(
    catalog: &[OpKind],
    ledger: &ContributionLedger,
    rng: &mut R,
    original: OpKind,
) -> Result<OpKind, SelectError> {
    let arity = original.arity();
    let kinds: Vec<OpKind> = catalog.iter().copied().filter(|k| k.arity() == arity).collect();
    if !kinds.iter().any(|&k| k != original) {
        return Err(SelectError::NoCompatibleOperator(original));
    }
    let weights: Vec<f64> = kinds.iter().map(|&k| ledger.operator(k)).collect();
    for _ in 0..MAX_REDRAWS {
        let k = kinds[weighted_index(&weights, rng)];
        if k != original {
            return Ok(k);
        }
    }
    let (others, w): (Vec<OpKind>, Vec<f64>) = kinds
        .iter()
        .zip(&weights)
        .filter(|(&k, _)| k != original)
        .map(|(&k, &w)| (k, w))
        .unzip();
    Ok(others[weighted_index(&w, rng)])
}

/// Operator kinds that may replace a single-input edge.
pub fn unary_catalog() -> Vec<OpKind> {
    OpKind::ALL.iter().copied().filter(|k| k.is_unary()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;
    use crate::repo::{ComponentKind, Interface, Origin};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn stub(id: &str) -> Component {
        Component {
            id: id.into(),
            kind: ComponentKind::Head,
            graph: Graph::default(),
            scenarios: Default::default(),
            interface: Interface {
                inputs: vec![],
                outputs: vec![],
            },
            probe_shapes: vec![],
            blocks: vec![],
            origin: Origin::Seed,
        }
    }

    #[test]
    fn empty_and_single_candidates() {
        let ledger = ContributionLedger::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(
            select_component(&[], &ledger, &mut rng).unwrap_err(),
            SelectError::EmptyCandidates
        );
        let a = stub("a");
        for _ in 0..50 {
            assert_eq!(select_component(&[&a], &ledger, &mut rng).unwrap().id, "a");
        }
    }

    #[test]
    fn uniform_at_initial_scores() {
        let ledger = ContributionLedger::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (a, b, c) = (stub("a"), stub("b"), stub("c"));
        let mut counts = [0usize; 3];
        let n = 30_000;
        for _ in 0..n {
            let pick = select_component(&[&a, &b, &c], &ledger, &mut rng).unwrap();
            counts[(pick.id.as_bytes()[0] - b'a') as usize] += 1;
        }
        for c in counts {
            assert!((c as f64 / n as f64 - 1.0 / 3.0).abs() < 0.01);
        }
    }

    #[test]
    fn operator_redraw_probabilities() {
        let mut ledger = ContributionLedger::default();
        ledger.operators.insert(OpKind::Tanh, 2.0);
        let catalog = [OpKind::ReLU, OpKind::Sigmoid, OpKind::Tanh];
        // Enumerate the redraw process: the first non-ReLU draw happens at
        // round k with probability p_relu^k, so P(x) = p_x * sum_k p_relu^k.
        let total = 4.0;
        let (p_relu, p_sig, p_tanh) = (1.0 / total, 1.0 / total, 2.0 / total);
        let geometric: f64 = (0..200).map(|k| f64::powi(p_relu, k)).sum();
        let (want_sig, want_tanh) = (p_sig * geometric, p_tanh * geometric);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 60_000;
        let mut sig = 0usize;
        for _ in 0..n {
            match select_operator(&catalog, &ledger, &mut rng, OpKind::ReLU).unwrap() {
                OpKind::Sigmoid => sig += 1,
                OpKind::Tanh => {}
                other => panic!("drew {other}"),
            }
        }
        assert!((want_sig - 1.0 / 3.0).abs() < 1e-12 && (want_tanh - 2.0 / 3.0).abs() < 1e-12);
        assert!((sig as f64 / n as f64 - want_sig).abs() < 0.01);
    }

    #[test]
    fn operator_pair_and_errors() {
        let ledger = ContributionLedger::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            assert_eq!(
                select_operator(&[OpKind::ReLU, OpKind::Tanh], &ledger, &mut rng, OpKind::ReLU).unwrap(),
                OpKind::Tanh
            );
        }
        assert_eq!(
            select_operator(&[OpKind::ReLU, OpKind::Add], &ledger, &mut rng, OpKind::ReLU),
            Err(SelectError::NoCompatibleOperator(OpKind::ReLU))
        );
        assert_eq!(unary_catalog().len(), 13);
    }

    #[test]
    fn equal_scores_are_uniform_over_the_rest() {
        let ledger = ContributionLedger::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let catalog = unary_catalog();
        let mut counts = std::collections::BTreeMap::new();
        let n = 48_000;
        for _ in 0..n {
            *counts
                .entry(select_operator(&catalog, &ledger, &mut rng, OpKind::ReLU).unwrap())
                .or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 12);
        for (_, c) in counts {
            assert!((c as f64 / n as f64 - 1.0 / 12.0).abs() < 0.01);
        }
    }
}
