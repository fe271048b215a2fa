//! Operator catalog: kinds, attribute schemas, weight layouts and shape rules.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OpKind {
    Conv2D,
    DepthwiseConv2D,
    BatchNorm,
    ReLU,
    LeakyReLU,
    Sigmoid,
    Tanh,
    MaxPool2D,
    AvgPool2D,
    Add,
    Concat,
    MatMul,
    Softmax,
    Upsample,
    Identity,
}

impl OpKind {
    pub const ALL: [OpKind; 15] = [
        OpKind::Conv2D,
        OpKind::DepthwiseConv2D,
        OpKind::BatchNorm,
        OpKind::ReLU,
        OpKind::LeakyReLU,
        OpKind::Sigmoid,
        OpKind::Tanh,
        OpKind::MaxPool2D,
        OpKind::AvgPool2D,
        OpKind::Add,
        OpKind::Concat,
        OpKind::MatMul,
        OpKind::Softmax,
        OpKind::Upsample,
        OpKind::Identity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Conv2D => "Conv2D",
            OpKind::DepthwiseConv2D => "DepthwiseConv2D",
            OpKind::BatchNorm => "BatchNorm",
            OpKind::ReLU => "ReLU",
            OpKind::LeakyReLU => "LeakyReLU",
            OpKind::Sigmoid => "Sigmoid",
            OpKind::Tanh => "Tanh",
            OpKind::MaxPool2D => "MaxPool2D",
            OpKind::AvgPool2D => "AvgPool2D",
            OpKind::Add => "Add",
            OpKind::Concat => "Concat",
            OpKind::MatMul => "MatMul",
            OpKind::Softmax => "Softmax",
            OpKind::Upsample => "Upsample",
            OpKind::Identity => "Identity",
        }
    }

    pub fn from_name(name: &str) -> Option<OpKind> {
        OpKind::ALL.into_iter().find(|k| k.name() == name)
    }

    /// (inputs, outputs). Every kind has exactly one output.
    pub fn arity(self) -> (usize, usize) {
        match self {
            OpKind::Add | OpKind::Concat => (2, 1),
            _ => (1, 1),
        }
    }

    pub fn is_unary(self) -> bool {
        self.arity().0 == 1
    }

    /// Attribute names with their defaults; `None` marks a required attribute.
    pub fn schema(self) -> Vec<(&'static str, Option<AttrValue>)> {
        use AttrValue::{Float, Int, Str};
        let same = || Some(Str("same".into()));
        match self {
            OpKind::Conv2D => vec![
                ("in_channels", None),
                ("out_channels", None),
                ("kernel", Some(Int(3))),
                ("stride", Some(Int(1))),
                ("padding", same()),
            ],
            OpKind::DepthwiseConv2D => vec![
                ("channels", None),
                ("kernel", Some(Int(3))),
                ("stride", Some(Int(1))),
                ("padding", same()),
            ],
            OpKind::BatchNorm => vec![("channels", None), ("eps", Some(Float(1e-5)))],
            OpKind::LeakyReLU => vec![("alpha", Some(Float(0.01)))],
            OpKind::MaxPool2D | OpKind::AvgPool2D => {
                vec![("kernel", Some(Int(2))), ("stride", Some(Int(2))), ("padding", same())]
            }
            OpKind::Concat | OpKind::Softmax => vec![("axis", Some(Int(0)))],
            OpKind::MatMul => vec![("in_features", None), ("out_features", None)],
            OpKind::Upsample => vec![("scale", Some(Int(2)))],
            OpKind::ReLU | OpKind::Sigmoid | OpKind::Tanh | OpKind::Add | OpKind::Identity => {
                vec![]
            }
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AttrValue {
    Int(i64),
    Float(f64),
    Str(String),
}

impl AttrValue {
    fn same_type(&self, other: &AttrValue) -> bool {
        std::mem::discriminant(self) == std::mem::discriminant(other)
    }
}

impl fmt::Display for AttrValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttrValue::Int(v) => write!(f, "{v}"),
            AttrValue::Float(v) => write!(f, "{v:?}"),
            AttrValue::Str(v) => write!(f, "{v:?}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    Same,
    Valid,
}

#[derive(Debug, Error, PartialEq)]
pub enum AttrError {
    #[error("{kind}: unknown attribute `{name}`")]
    Unknown { kind: OpKind, name: String },
    #[error("{kind}: missing required attribute `{name}`")]
    Missing { kind: OpKind, name: &'static str },
    #[error("{kind}: attribute `{name}` has the wrong type or value {value}")]
    BadValue {
        kind: OpKind,
        name: String,
        value: AttrValue,
    },
}

/// An operator kind together with its fully normalized attributes.
#[derive(Debug, Clone, PartialEq)]
pub struct Operator {
    kind: OpKind,
    attrs: BTreeMap<String, AttrValue>,
}

impl Operator {
    /// Builds an operator, filling schema defaults and rejecting unknown,
    /// missing or ill-typed attributes.
    pub fn new<I, S>(kind: OpKind, attrs: I) -> Result<Self, AttrError>
    where
        I: IntoIterator<Item = (S, AttrValue)>,
        S: Into<String>,
    {
        let schema = kind.schema();
        let mut given: BTreeMap<String, AttrValue> = attrs.into_iter().map(|(k, v)| (k.into(), v)).collect();
        let mut out = BTreeMap::new();
        for (name, default) in &schema {
            let value = match (given.remove(*name), default) {
                (Some(v), Some(d)) => coerce(kind, name, v, d)?,
                (Some(v), None) => v,
                (None, Some(d)) => d.clone(),
                (None, None) => return Err(AttrError::Missing { kind, name }),
            };
            out.insert(name.to_string(), value);
        }
        if let Some((name, _)) = given.into_iter().next() {
            return Err(AttrError::Unknown { kind, name });
        }
        let op = Self { kind, attrs: out };
        op.check_values()?;
        Ok(op)
    }

    /// Operator with all-default attributes. Panics for kinds with required
    /// attributes.
    pub fn simple(kind: OpKind) -> Self {
        Self::new(kind, std::iter::empty::<(String, AttrValue)>()).expect("operator kind has no required attributes")
    }

    pub fn kind(&self) -> OpKind {
        self.kind
    }

    pub fn attrs(&self) -> &BTreeMap<String, AttrValue> {
        &self.attrs
    }

    pub fn int(&self, name: &str) -> usize {
        match self.attrs.get(name) {
            Some(AttrValue::Int(v)) => *v as usize,
            other => panic!("{}: integer attribute `{name}` missing: {other:?}", self.kind),
        }
    }

    pub fn float(&self, name: &str) -> f64 {
        match self.attrs.get(name) {
            Some(AttrValue::Float(v)) => *v,
            Some(AttrValue::Int(v)) => *v as f64,
            other => panic!("{}: float attribute `{name}` missing: {other:?}", self.kind),
        }
    }

    pub fn padding(&self) -> Padding {
        match self.attrs.get("padding") {
            Some(AttrValue::Str(s)) if s == "valid" => Padding::Valid,
            _ => Padding::Same,
        }
    }

    /// Deterministic text form of the attributes, used by hashing.
    pub fn attr_string(&self) -> String {
        let parts: Vec<String> = self.attrs.iter().map(|(k, v)| format!("{k}={v}")).collect();
        parts.join(",")
    }

    fn check_values(&self) -> Result<(), AttrError> {
        for (name, value) in &self.attrs {
            let ok = match (name.as_str(), value) {
                ("padding", AttrValue::Str(s)) => s == "same" || s == "valid",
                ("eps", AttrValue::Float(v)) => *v > 0.0,
                ("alpha", AttrValue::Float(v)) => v.is_finite(),
                ("axis", AttrValue::Int(v)) => *v >= 0,
                (_, AttrValue::Int(v)) => *v >= 1,
                _ => false,
            };
            if !ok {
                return Err(AttrError::BadValue {
                    kind: self.kind,
                    name: name.clone(),
                    value: value.clone(),
                });
            }
        }
        Ok(())
    }

    /// Expected shapes of the weight buffers, in storage order.
    pub fn weight_shapes(&self) -> Vec<Vec<usize>> {
        match self.kind {
            OpKind::Conv2D => {
                let (i, o, k) = (self.int("in_channels"), self.int("out_channels"), self.int("kernel"));
                vec![vec![o, i, k, k], vec![o]]
            }
            OpKind::DepthwiseConv2D => {
                let (c, k) = (self.int("channels"), self.int("kernel"));
                vec![vec![c, k, k], vec![c]]
            }
            OpKind::BatchNorm => {
                let c = self.int("channels");
                // gamma, beta, running mean, running variance
                vec![vec![c]; 4]
            }
            OpKind::MatMul => {
                let (i, o) = (self.int("in_features"), self.int("out_features"));
                vec![vec![o, i], vec![o]]
            }
            _ => vec![],
        }
    }

    /// Output shape for the given input shapes.
    pub fn infer(&self, inputs: &[&[usize]]) -> Result<Vec<usize>, String> {
        let (n_in, _) = self.kind.arity();
        if inputs.len() != n_in {
            return Err(format!("expects {n_in} inputs, got {}", inputs.len()));
        }
        let x = inputs[0];
        match self.kind {
            OpKind::Conv2D => {
                let [c, h, w] = rank3(x)?;
                let want = self.int("in_channels");
                if c != want {
                    return Err(format!("input has {c} channels, in_channels is {want}"));
                }
                let (oh, ow) = self.window_out(h, w)?;
                Ok(vec![self.int("out_channels"), oh, ow])
            }
            OpKind::DepthwiseConv2D => {
                let [c, h, w] = rank3(x)?;
                let want = self.int("channels");
                if c != want {
                    return Err(format!("input has {c} channels, channels is {want}"));
                }
                let (oh, ow) = self.window_out(h, w)?;
                Ok(vec![c, oh, ow])
            }
            OpKind::MaxPool2D | OpKind::AvgPool2D => {
                let [c, h, w] = rank3(x)?;
                let (oh, ow) = self.window_out(h, w)?;
                Ok(vec![c, oh, ow])
            }
            OpKind::BatchNorm => {
                let want = self.int("channels");
                if x.first() != Some(&want) {
                    return Err(format!("leading dim of {x:?} is not {want}"));
                }
                Ok(x.to_vec())
            }
            OpKind::MatMul => {
                let want = self.int("in_features");
                if x.first() != Some(&want) {
                    return Err(format!("leading dim of {x:?} is not {want}"));
                }
                let mut out = x.to_vec();
                out[0] = self.int("out_features");
                Ok(out)
            }
            OpKind::Softmax => {
                let axis = self.int("axis");
                if axis >= x.len() {
                    return Err(format!("axis {axis} out of range for {x:?}"));
                }
                Ok(x.to_vec())
            }
            OpKind::Upsample => {
                let [c, h, w] = rank3(x)?;
                let s = self.int("scale");
                Ok(vec![c, h * s, w * s])
            }
            OpKind::Add => {
                if inputs[0] != inputs[1] {
                    return Err(format!("operand shapes {:?} and {:?} differ", inputs[0], inputs[1]));
                }
                Ok(x.to_vec())
            }
            OpKind::Concat => {
                let axis = self.int("axis");
                let (a, b) = (inputs[0], inputs[1]);
                if axis >= a.len() || a.len() != b.len() {
                    return Err(format!("cannot concat {a:?} and {b:?} on axis {axis}"));
                }
                for d in 0..a.len() {
                    if d != axis && a[d] != b[d] {
                        return Err(format!("cannot concat {a:?} and {b:?} on axis {axis}"));
                    }
                }
                let mut out = a.to_vec();
                out[axis] += b[axis];
                Ok(out)
            }
            OpKind::ReLU | OpKind::LeakyReLU | OpKind::Sigmoid | OpKind::Tanh | OpKind::Identity => Ok(x.to_vec()),
        }
    }

    fn window_out(&self, h: usize, w: usize) -> Result<(usize, usize), String> {
        let (k, s, p) = (self.int("kernel"), self.int("stride"), self.padding());
        let oh = window(h, k, s, p).ok_or_else(|| format!("height {h} too small for kernel {k}"))?;
        let ow = window(w, k, s, p).ok_or_else(|| format!("width {w} too small for kernel {k}"))?;
        Ok((oh.0, ow.0))
    }
}

/// Output length and leading padding of a sliding window along one axis.
pub fn window(len: usize, kernel: usize, stride: usize, padding: Padding) -> Option<(usize, usize)> {
    match padding {
        Padding::Same => {
            let out = len.div_ceil(stride);
            let total = ((out - 1) * stride + kernel).saturating_sub(len);
            Some((out, total / 2))
        }
        Padding::Valid => (len >= kernel).then(|| ((len - kernel) / stride + 1, 0)),
    }
}

fn rank3(x: &[usize]) -> Result<[usize; 3], String> {
    match x {
        [c, h, w] => Ok([*c, *h, *w]),
        _ => Err(format!("expects a [C,H,W] tensor, got {x:?}")),
    }
}

fn coerce(kind: OpKind, name: &str, v: AttrValue, default: &AttrValue) -> Result<AttrValue, AttrError> {
    match (&v, default) {
        (AttrValue::Int(i), AttrValue::Float(_)) => Ok(AttrValue::Float(*i as f64)),
        _ if v.same_type(default) => Ok(v),
        _ => Err(AttrError::BadValue {
            kind,
            name: name.to_string(),
            value: v,
        }),
    }
}

/// Shorthand for building attribute lists.
#[macro_export]
macro_rules! attrs {
    ($($name:literal => $value:expr),* $(,)?) => {
        vec![$(($name, $crate::ops::AttrValue::from($value))),*]
    };
}

impl From<usize> for AttrValue {
    fn from(v: usize) -> Self {
        AttrValue::Int(v as i64)
    }
}

impl From<i64> for AttrValue {
    fn from(v: i64) -> Self {
        AttrValue::Int(v)
    }
}

impl From<f64> for AttrValue {
    fn from(v: f64) -> Self {
        AttrValue::Float(v)
    }
}

impl From<&str> for AttrValue {
    fn from(v: &str) -> Self {
        AttrValue::Str(v.to_string())
    }
}
