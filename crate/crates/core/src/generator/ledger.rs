//! Accumulated bug-finding credit per component and per operator kind.

use crate::ops::OpKind;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

pub const INITIAL_SCORE: f64 = 1.0;
/// Lower clamp keeping every score a valid selection weight.
pub const SCORE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContributionLedger {
    pub components: BTreeMap<String, f64>,
    pub operators: BTreeMap<OpKind, f64>,
}

impl Default for ContributionLedger {
    fn default() -> Self {
        Self {
            components: BTreeMap::new(),
            operators: OpKind::ALL.iter().map(|&k| (k, INITIAL_SCORE)).collect(),
        }
    }
}

impl ContributionLedger {
    pub fn register_component(&mut self, id: &str) {
        self.components.entry(id.to_string()).or_insert(INITIAL_SCORE);
    }

    pub fn component(&self, id: &str) -> f64 {
        self.components.get(id).copied().unwrap_or(INITIAL_SCORE)
    }

    pub fn operator(&self, kind: OpKind) -> f64 {
        self.operators.get(&kind).copied().unwrap_or(INITIAL_SCORE)
    }
}
