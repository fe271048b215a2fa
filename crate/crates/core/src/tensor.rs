//! Dense tensors and the emulated half-precision element type.

use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

/// Element type tag. Storage is always `f32`; `F16` marks values that have
/// been rounded to half-precision mantissa width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    F16,
}

impl DType {
    pub fn name(self) -> &'static str {
        match self {
            DType::F32 => "f32",
            DType::F16 => "f16",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "f32" | "float32" => Some(DType::F32),
            "f16" | "float16" => Some(DType::F16),
            _ => None,
        }
    }
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum TensorError {
    #[error("tensor `{label}`: shape {shape:?} holds {expected} elements but {found} were given")]
    LengthMismatch {
        label: String,
        shape: Vec<usize>,
        expected: usize,
        found: usize,
    },
    #[error("tensor `{label}`: zero-sized dimension in shape {shape:?}")]
    ZeroDim { label: String, shape: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    label: String,
    dtype: DType,
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(label: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) -> Result<Self, TensorError> {
        Self::with_dtype(label, DType::F32, shape, data)
    }

    pub fn with_dtype(
        label: impl Into<String>,
        dtype: DType,
        shape: Vec<usize>,
        data: Vec<f32>,
    ) -> Result<Self, TensorError> {
        let label = label.into();
        if shape.contains(&0) {
            return Err(TensorError::ZeroDim { label, shape });
        }
        let expected = numel(&shape);
        if expected != data.len() {
            return Err(TensorError::LengthMismatch {
                label,
                shape,
                expected,
                found: data.len(),
            });
        }
        Ok(Self {
            label,
            dtype,
            shape,
            data,
        })
    }

    pub fn filled(label: impl Into<String>, shape: Vec<usize>, value: f32) -> Self {
        let n = numel(&shape);
        Self::new(label, shape, vec![value; n]).expect("filled tensor is well formed")
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn relabel(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn has_nan(&self) -> bool {
        self.data.iter().any(|v| v.is_nan())
    }

    /// Equality on the raw bit patterns, so NaN payloads and signed zeros count.
    pub fn bitwise_eq(&self, other: &Tensor) -> bool {
        self.label == other.label
            && self.dtype == other.dtype
            && self.shape == other.shape
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Rounds an `f32` to 10 explicit mantissa bits with round-to-nearest-even,
/// keeping the `f32` exponent range.
pub fn round_to_half_mantissa(x: f32) -> f32 {
    if !x.is_finite() {
        return x;
    }
    const DROP: u32 = 23 - 10;
    let bits = x.to_bits();
    let lsb = (bits >> DROP) & 1;
    let bias = (1u32 << (DROP - 1)) - 1 + lsb;
    let rounded = bits.wrapping_add(bias) & !((1u32 << DROP) - 1);
    f32::from_bits(rounded)
}
