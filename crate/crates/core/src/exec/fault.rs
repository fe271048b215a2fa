//! Fault injection for the optimizing interpreter.

use crate::ops::OpKind;
use crate::tensor::numel;
use serde::{Deserialize, Serialize};

/// Fires when an operator of `kind` runs on a first input whose shape
/// satisfies every given constraint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Trigger {
    pub kind: OpKind,
    /// Leading (channel) dimension of the first input.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channels: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_elements: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_elements: Option<usize>,
    /// Spatial height of a `[C,H,W]` input.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<usize>,
}

impl Trigger {
    pub fn on(kind: OpKind) -> Self {
        Self {
            kind,
            channels: None,
            min_elements: None,
            max_elements: None,
            height: None,
        }
    }

    pub fn matches(&self, kind: OpKind, input_shape: &[usize]) -> bool {
        let n = numel(input_shape);
        kind == self.kind
            && self.channels.is_none_or(|c| input_shape.first() == Some(&c))
            && self.min_elements.is_none_or(|m| n >= m)
            && self.max_elements.is_none_or(|m| n <= m)
            && self
                .height
                .is_none_or(|h| input_shape.len() == 3 && input_shape[1] == h)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum FaultEffect {
    /// Abort the run; `message` may use `{op}`, `{shape}` and `{edge}`.
    RaiseCrash { message: String },
    /// Add `magnitude` to every element of the operator output.
    CorruptOutput { magnitude: f32 },
    /// Replace the operator output with NaN.
    EmitNan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultSpec {
    pub name: String,
    pub trigger: Trigger,
    pub effect: FaultEffect,
}

impl FaultSpec {
    pub fn render_message(template: &str, kind: OpKind, shape: &[usize], edge: usize) -> String {
        let dims: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
        template
            .replace("{op}", kind.name())
            .replace("{shape}", &format!("[{}]", dims.join(",")))
            .replace("{edge}", &edge.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trigger_predicates() {
        let mut t = Trigger::on(OpKind::Softmax);
        assert!(t.matches(OpKind::Softmax, &[2, 4, 4]));
        assert!(!t.matches(OpKind::ReLU, &[2, 4, 4]));
        t.channels = Some(2);
        t.min_elements = Some(32);
        assert!(t.matches(OpKind::Softmax, &[2, 4, 4]));
        assert!(!t.matches(OpKind::Softmax, &[2, 2, 2]));
        assert!(!t.matches(OpKind::Softmax, &[3, 4, 4]));
        t.height = Some(8);
        assert!(!t.matches(OpKind::Softmax, &[2, 4, 4]));
    }

    #[test]
    fn fault_file_schema() {
        let json = r#"[
            {"name": "a", "trigger": {"kind": "Softmax"}, "effect": {"type": "emit_nan"}},
            {"name": "b", "trigger": {"kind": "Conv2D", "channels": 8},
             "effect": {"type": "raise_crash", "message": "boom in {op} at {shape}"}},
            {"name": "c", "trigger": {"kind": "Sigmoid"}, "effect": {"type": "corrupt_output", "magnitude": 0.5}}
        ]"#;
        let specs: Vec<FaultSpec> = serde_json::from_str(json).unwrap();
        assert_eq!(specs.len(), 3);
        assert_eq!(specs[1].trigger.channels, Some(8));
        assert_eq!(
            FaultSpec::render_message("boom in {op} at {shape}", OpKind::Conv2D, &[8, 4, 4], 3),
            "boom in Conv2D at [8,4,4]"
        );
    }
}
