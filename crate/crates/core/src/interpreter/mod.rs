//! Reference execution in floating point and in bit-exact fixed point.

mod eval;
mod fixed;
mod float;

pub use eval::{
    argmax, evaluate, mean_squared_error, tensor_from_json, tensors_from_json, DataError, Dataset, Executable,
    Metrics,
};
pub use fixed::{run_fixed, run_instrumented, ExecutionTrace};
pub use float::{run_float, run_float_all, Real};

pub(crate) use float::eval_node as eval_float_node;

use crate::fxp::QFormat;
use crate::ir::{IrError, Shape};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum InterpError {
    #[error("input shape {found} does not match model input {expected}")]
    ShapeMismatch { expected: Shape, found: Shape },
    #[error("input format {found} does not match model input format {expected}")]
    FormatMismatch { expected: QFormat, found: QFormat },
    #[error("layer kind {0} cannot be executed")]
    Unsupported(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("sample {index}: label {label} outside [0, {classes})")]
    LabelOutOfRange {
        index: usize,
        label: usize,
        classes: usize,
    },
    #[error("reference set has {found} outputs, expected {expected}")]
    ReferenceLength { expected: usize, found: usize },
    #[error(transparent)]
    Ir(#[from] IrError),
}

/// Dense activation tensor, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T = f64> {
    pub shape: Shape,
    pub data: Vec<T>,
}

impl<T: Clone + Default> Tensor<T> {
    pub fn new(shape: Shape, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.len(), data.len());
        Self { shape, data }
    }

    pub fn zeros(shape: Shape) -> Self {
        Self {
            shape,
            data: vec![T::default(); shape.len()],
        }
    }
}

impl<T: Real> Tensor<T> {
    pub fn to_f64(&self) -> Tensor<f64> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|v| v.as_f64()).collect(),
        }
    }
}

impl Tensor<f64> {
    pub fn to_f32(&self) -> Tensor<f32> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| v as f32).collect(),
        }
    }
}
