use rayon::prelude::*;
use serde_json::Value;

use super::{run_fixed, run_float, InterpError, Tensor};
use crate::fxp::FixedTensor;
use crate::ir::{Graph, Shape};
use crate::quantizer::QuantizedModel;

/// Model paths that [`evaluate`] can execute.
#[derive(Debug, Clone, Copy)]
pub enum Executable<'a> {
    Float(&'a Graph),
    FakeQuant(&'a QuantizedModel),
    Fixed(&'a QuantizedModel),
}

impl Executable<'_> {
    /// Output of one sample as reals (fixed outputs are dequantized).
    pub fn run(&self, input: &Tensor<f64>) -> Result<Vec<f64>, InterpError> {
        match self {
            Executable::Float(g) => Ok(run_float(g, input)?.data),
            Executable::FakeQuant(qm) => Ok(qm.fake_forward(input)?.data),
            Executable::Fixed(qm) => {
                if input.shape != qm.graph.input_shape {
                    return Err(InterpError::ShapeMismatch {
                        expected: qm.graph.input_shape,
                        found: input.shape,
                    });
                }
                let x = FixedTensor::quantize(
                    qm.input_format(),
                    vec![input.shape.channels, input.shape.samples],
                    &input.data,
                );
                Ok(run_fixed(qm, &x)?.dequantize())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Vec<Tensor<f64>>,
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub accuracy: f64,
    pub predictions: Vec<usize>,
    pub outputs: Vec<Vec<f64>>,
    /// Mean squared difference against the reference outputs, when given.
    pub mse: Option<f64>,
}

/// Index of the largest element; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Mean over all samples and elements of the squared difference.
pub fn mean_squared_error(outputs: &[Vec<f64>], reference: &[Vec<f64>]) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (o, r) in outputs.iter().zip(reference) {
        for (a, b) in o.iter().zip(r) {
            sum += (a - b) * (a - b);
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Top-1 accuracy and optional MSE against `reference`. Samples run in parallel.
pub fn evaluate(
    model: Executable<'_>,
    dataset: &Dataset,
    reference: Option<&[Vec<f64>]>,
) -> Result<Metrics, InterpError> {
    if dataset.inputs.is_empty() {
        return Err(InterpError::EmptyDataset);
    }
    if let Some(r) = reference {
        if r.len() != dataset.inputs.len() {
            return Err(InterpError::ReferenceLength {
                expected: dataset.inputs.len(),
                found: r.len(),
            });
        }
    }
    let outputs = dataset
        .inputs
        .par_iter()
        .map(|x| model.run(x))
        .collect::<Result<Vec<_>, _>>()?;
    let predictions: Vec<usize> = outputs.iter().map(|o| argmax(o)).collect();
    let mut correct = 0usize;
    for (index, (&label, o)) in dataset.labels.iter().zip(&outputs).enumerate() {
        if label >= o.len() {
            return Err(InterpError::LabelOutOfRange {
                index,
                label,
                classes: o.len(),
            });
        }
        if predictions[index] == label {
            correct += 1;
        }
    }
    Ok(Metrics {
        accuracy: correct as f64 / dataset.labels.len().max(1) as f64,
        mse: reference.map(|r| mean_squared_error(&outputs, r)),
        predictions,
        outputs,
    })
}

/// Errors from reading tensors and datasets out of JSON.
#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}: {message}")]
    Format { path: String, message: String },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn format_err(path: &str, message: impl Into<String>) -> DataError {
    DataError::Format {
        path: path.to_string(),
        message: message.into(),
    }
}

/// Parse a `[channel][sample]` nested array (or a flat array when the shape
/// has one channel).
pub fn tensor_from_json(value: &Value, shape: Shape, path: &str) -> Result<Tensor<f64>, DataError> {
    let rows = value
        .as_array()
        .ok_or_else(|| format_err(path, "expected an array"))?;
    let flat_ok = shape.channels == 1 && rows.first().map_or(false, Value::is_number);
    let mut data = Vec::with_capacity(shape.len());
    if flat_ok {
        for (i, v) in rows.iter().enumerate() {
            data.push(v.as_f64().ok_or_else(|| format_err(&format!("{path}[{i}]"), "expected a number"))?);
        }
    } else {
        if rows.len() != shape.channels {
            return Err(format_err(
                path,
                format!("expected {} channels, found {}", shape.channels, rows.len()),
            ));
        }
        for (c, row) in rows.iter().enumerate() {
            let row_path = format!("{path}[{c}]");
            let row = row
                .as_array()
                .ok_or_else(|| format_err(&row_path, "expected an array"))?;
            for (i, v) in row.iter().enumerate() {
                data.push(
                    v.as_f64()
                        .ok_or_else(|| format_err(&format!("{row_path}[{i}]"), "expected a number"))?,
                );
            }
        }
    }
    if data.len() != shape.len() {
        return Err(format_err(
            path,
            format!("expected {} values for shape {shape}, found {}", shape.len(), data.len()),
        ));
    }
    Ok(Tensor::new(shape, data))
}

/// Parse a JSON array of input tensors.
pub fn tensors_from_json(text: &str, shape: Shape) -> Result<Vec<Tensor<f64>>, DataError> {
    let value: Value = serde_json::from_str(text)?;
    let items = value
        .as_array()
        .ok_or_else(|| format_err("$", "expected an array of tensors"))?;
    items
        .iter()
        .enumerate()
        .map(|(i, v)| tensor_from_json(v, shape, &format!("$[{i}]")))
        .collect()
}

impl Dataset {
    /// Parse `{"inputs": [tensor...], "labels": [int...]}`.
    pub fn from_json_str(text: &str, shape: Shape) -> Result<Self, DataError> {
        let value: Value = serde_json::from_str(text)?;
        let inputs = value
            .get("inputs")
            .and_then(Value::as_array)
            .ok_or_else(|| format_err("$.inputs", "expected an array"))?
            .iter()
            .enumerate()
            .map(|(i, v)| tensor_from_json(v, shape, &format!("$.inputs[{i}]")))
            .collect::<Result<Vec<_>, _>>()?;
        let labels = value
            .get("labels")
            .and_then(Value::as_array)
            .ok_or_else(|| format_err("$.labels", "expected an array"))?
            .iter()
            .enumerate()
            .map(|(i, v)| {
                v.as_u64()
                    .map(|l| l as usize)
                    .ok_or_else(|| format_err(&format!("$.labels[{i}]"), "expected a non-negative integer"))
            })
            .collect::<Result<Vec<_>, _>>()?;
        if labels.len() != inputs.len() {
            return Err(format_err(
                "$.labels",
                format!("{} labels for {} inputs", labels.len(), inputs.len()),
            ));
        }
        Ok(Self { inputs, labels })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{GraphBuilder, Layer};

    fn identity_model() -> Graph {
        let mut b = GraphBuilder::new("in", Shape::new(1, 2));
        b.simple("relu", "in", Layer::ReLU).unwrap();
        b.finish()
    }

    fn data(rows: &[[f64; 2]], labels: &[usize]) -> Dataset {
        Dataset {
            inputs: rows.iter().map(|r| Tensor::new(Shape::new(1, 2), r.to_vec())).collect(),
            labels: labels.to_vec(),
        }
    }

    #[test]
    fn accuracy() {
        let g = identity_model();
        let m = evaluate(Executable::Float(&g), &data(&[[1.0, 0.0], [2.0, 0.5]], &[0, 0]), None).unwrap();
        assert_eq!(m.accuracy, 1.0);
        let m = evaluate(Executable::Float(&g), &data(&[[1.0, 0.0], [0.0, 3.0]], &[0, 0]), None).unwrap();
        assert_eq!(m.accuracy, 0.5);
        assert_eq!(m.predictions, [0, 1]);
    }

    #[test]
    fn self_reference_mse_is_zero() {
        let g = identity_model();
        let d = data(&[[1.0, -2.0], [0.25, 3.0]], &[0, 1]);
        let first = evaluate(Executable::Float(&g), &d, None).unwrap();
        let m = evaluate(Executable::Float(&g), &d, Some(&first.outputs)).unwrap();
        assert_eq!(m.mse, Some(0.0));
    }

    #[test]
    fn ties_and_errors() {
        assert_eq!(argmax(&[1.0, 1.0, 0.5]), 0);
        assert_eq!(argmax(&[0.0, 2.0, 2.0]), 1);
        let g = identity_model();
        let empty = data(&[], &[]);
        assert!(matches!(
            evaluate(Executable::Float(&g), &empty, None),
            Err(InterpError::EmptyDataset)
        ));
        let bad = data(&[[0.0, 1.0]], &[5]);
        assert!(matches!(
            evaluate(Executable::Float(&g), &bad, None),
            Err(InterpError::LabelOutOfRange { label: 5, .. })
        ));
    }

    #[test]
    fn dataset_json() {
        let d = Dataset::from_json_str(r#"{"inputs": [[[1, 2]], [3, 4]], "labels": [1, 0]}"#, Shape::new(1, 2))
            .unwrap();
        assert_eq!(d.inputs[1].data, [3.0, 4.0]);
        let err = Dataset::from_json_str(r#"{"inputs": [[[1, 2, 3]]], "labels": [0]}"#, Shape::new(1, 2))
            .unwrap_err();
        assert!(err.to_string().starts_with("$.inputs[0]"), "{err}");
        let t = tensors_from_json("[[[1, 2], [3, 4]]]", Shape::new(2, 2)).unwrap();
        assert_eq!(t[0].data, [1.0, 2.0, 3.0, 4.0]);
    }
}
