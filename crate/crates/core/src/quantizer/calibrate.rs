use std::collections::BTreeMap;

use rayon::prelude::*;

use super::QuantError;
use crate::interpreter::{run_float_all, Tensor};
use crate::ir::{Graph, NodeId};

/// Largest absolute output element of every node over a calibration set.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CalibrationStats {
    pub max_abs: BTreeMap<NodeId, f64>,
}

impl CalibrationStats {
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, f64)>) -> Self {
        Self {
            max_abs: pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        }
    }

    fn merge(mut self, other: Self) -> Self {
        for (id, v) in other.max_abs {
            let e = self.max_abs.entry(id).or_insert(0.0);
            *e = e.max(v);
        }
        self
    }
}

/// Run the float interpreter over `samples` and record per-node maxima.
/// Samples are processed in parallel; maxima are combined order-independently.
pub fn calibrate(graph: &Graph, samples: &[Tensor<f64>]) -> Result<CalibrationStats, QuantError> {
    if samples.is_empty() {
        return Err(QuantError::EmptyCalibration);
    }
    samples
        .par_iter()
        .map(|x| {
            let outputs = run_float_all(graph, x)?;
            let max_abs = outputs
                .into_iter()
                .map(|(id, t)| (id, t.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))))
                .collect();
            Ok(CalibrationStats { max_abs })
        })
        .try_reduce(CalibrationStats::default, |a, b| Ok(a.merge(b)))
}
