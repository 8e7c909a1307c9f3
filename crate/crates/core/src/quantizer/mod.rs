//! Post-training quantization to power-of-two scaled fixed point.

mod archive;
mod calibrate;
mod fake;

pub use calibrate::{calibrate, CalibrationStats};
pub use fake::fake_quantize_forward;

use std::collections::BTreeMap;

use crate::fxp::{floor_log2, long_bits, quantize_bits, FixedTensor, QFormat, WidthError};
use crate::interpreter::InterpError;
use crate::ir::{infer_shapes, topo_order, Graph, IrError, Layer, NodeId, Shape, WeightArray};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum QuantError {
    #[error("cannot derive a scale factor from an empty array")]
    Empty,
    #[error("cannot derive a scale factor from an all-zero array")]
    AllZero,
    #[error("non-finite value in quantization input")]
    NonFinite,
    #[error("no calibration statistics for node `{0}`")]
    MissingStats(NodeId),
    #[error("manual activation formats do not cover node `{0}`")]
    MissingManualFormat(NodeId),
    #[error("node `{0}` is an unfolded BatchNorm; run the transform pipeline first")]
    UnfoldedBatchNorm(NodeId),
    #[error("node `{0}` of kind {1} cannot be quantized")]
    Unsupported(NodeId, String),
    #[error("calibration set is empty")]
    EmptyCalibration,
    #[error(transparent)]
    Width(#[from] WidthError),
    #[error(transparent)]
    Ir(#[from] IrError),
    #[error(transparent)]
    Interp(#[from] InterpError),
}

/// How weight fractional bits are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalePolicy {
    /// One `n` for every weight and activation in the network.
    PerNetworkFixed(i32),
    /// `n` derived per layer from the weight range and activation statistics.
    PerLayerDerived,
}

/// Where activation formats come from under [`ScalePolicy::PerLayerDerived`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ActivationSource {
    Calibration,
    /// Output fractional bits per node that owns a format (inputs, Conv1D,
    /// Dense, Affine, Add). Other nodes inherit their producer's format.
    Manual(BTreeMap<NodeId, i32>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantizationScheme {
    pub width: u32,
    pub policy: ScalePolicy,
    pub activation_source: ActivationSource,
}

impl QuantizationScheme {
    pub fn per_network(width: u32, frac: i32) -> Self {
        Self {
            width,
            policy: ScalePolicy::PerNetworkFixed(frac),
            activation_source: ActivationSource::Calibration,
        }
    }

    pub fn per_layer(width: u32) -> Self {
        Self {
            width,
            policy: ScalePolicy::PerLayerDerived,
            activation_source: ActivationSource::Calibration,
        }
    }

    fn needs_stats(&self) -> bool {
        self.policy == ScalePolicy::PerLayerDerived && self.activation_source == ActivationSource::Calibration
    }
}

/// Fractional bits of one node: input activation `n_x`, output `n_y`,
/// and for parameterised layers the weight `n_w` and bias `n_b = n_w + n_x`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerQuantInfo {
    pub n_x: i32,
    pub n_y: i32,
    pub n_w: Option<i32>,
    pub n_b: Option<i32>,
}

impl LayerQuantInfo {
    fn passthrough(n: i32) -> Self {
        Self {
            n_x: n,
            n_y: n,
            n_w: None,
            n_b: None,
        }
    }

    /// Fractional bits of the double-width accumulator.
    pub fn acc_frac(&self) -> i32 {
        self.n_b.unwrap_or(self.n_x)
    }
}

/// Integer parameters of one layer. Biases are held at `n_b` in the
/// double-width container and saturated to it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantizedParams {
    pub weights: FixedTensor,
    pub bias: Vec<i64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedModel {
    pub graph: Graph,
    pub width: u32,
    pub order: Vec<NodeId>,
    pub shapes: BTreeMap<NodeId, Shape>,
    pub info: BTreeMap<NodeId, LayerQuantInfo>,
    pub params: BTreeMap<NodeId, QuantizedParams>,
}

impl QuantizedModel {
    pub fn format_of(&self, id: &str) -> QFormat {
        QFormat::new(self.width, self.info[id].n_y).expect("width checked at construction")
    }

    pub fn input_id(&self) -> &NodeId {
        &self.order[0]
    }

    pub fn input_format(&self) -> QFormat {
        self.format_of(self.input_id())
    }

    pub fn output_format(&self) -> QFormat {
        self.format_of(&self.graph.output)
    }
}

/// `n = w - m - 1` with `m = 1 + floor(log2(max |x|))`.
pub fn frac_bits_for(values: &[f64], width: u32) -> Result<i32, QuantError> {
    if values.is_empty() {
        return Err(QuantError::Empty);
    }
    let mut max = 0.0f64;
    for &v in values {
        if !v.is_finite() {
            return Err(QuantError::NonFinite);
        }
        max = max.max(v.abs());
    }
    if max == 0.0 {
        return Err(QuantError::AllZero);
    }
    let m = 1 + floor_log2(max);
    Ok(width as i32 - m - 1)
}

/// [`frac_bits_for`], mapping all-zero input to the maximum fraction `w - 1`.
fn frac_bits_or_max(values: &[f64], width: u32) -> Result<i32, QuantError> {
    match frac_bits_for(values, width) {
        Err(QuantError::AllZero) => Ok(width as i32 - 1),
        other => other,
    }
}

fn quantize_params(
    kernel: &WeightArray,
    bias: &WeightArray,
    n_x: i32,
    scheme: &QuantizationScheme,
) -> Result<(LayerQuantInfo, QuantizedParams), QuantError> {
    let w = scheme.width;
    let n_w = match scheme.policy {
        ScalePolicy::PerNetworkFixed(n) => n,
        ScalePolicy::PerLayerDerived => frac_bits_or_max(&kernel.data, w)?,
    };
    let n_b = n_w + n_x;
    let weights = FixedTensor::quantize(QFormat::new(w, n_w)?, kernel.dims.clone(), &kernel.data);
    let bias = bias.data.iter().map(|&b| quantize_bits(b, n_b, long_bits(w))).collect();
    let info = LayerQuantInfo {
        n_x,
        n_y: 0,
        n_w: Some(n_w),
        n_b: Some(n_b),
    };
    Ok((info, QuantizedParams { weights, bias }))
}

/// Quantize a transformed graph. `stats` is required when activation
/// formats come from calibration.
pub fn quantize_model(
    graph: &Graph,
    scheme: &QuantizationScheme,
    stats: Option<&CalibrationStats>,
) -> Result<QuantizedModel, QuantError> {
    graph.ensure_valid()?;
    QFormat::new(scheme.width, 0)?;
    let order = topo_order(graph)?;
    let shapes = infer_shapes(graph)?;
    let w = scheme.width;

    let activation = |id: &NodeId| -> Result<i32, QuantError> {
        match (&scheme.policy, &scheme.activation_source) {
            (ScalePolicy::PerNetworkFixed(n), _) => Ok(*n),
            (ScalePolicy::PerLayerDerived, ActivationSource::Manual(map)) => map
                .get(id)
                .copied()
                .ok_or_else(|| QuantError::MissingManualFormat(id.clone())),
            (ScalePolicy::PerLayerDerived, ActivationSource::Calibration) => {
                let stats = stats.ok_or_else(|| QuantError::MissingStats(id.clone()))?;
                let max = stats
                    .max_abs
                    .get(id)
                    .copied()
                    .ok_or_else(|| QuantError::MissingStats(id.clone()))?;
                frac_bits_or_max(&[max], w)
            }
        }
    };
    if scheme.needs_stats() && stats.is_none() {
        return Err(QuantError::MissingStats(order[0].clone()));
    }

    let mut info: BTreeMap<NodeId, LayerQuantInfo> = BTreeMap::new();
    let mut params = BTreeMap::new();
    for id in &order {
        let node = &graph.nodes[id];
        let n_in = node.inputs.first().map(|i| info[i].n_y);
        let entry = match &node.layer {
            Layer::Input => LayerQuantInfo::passthrough(activation(id)?),
            Layer::Conv1D { kernel, bias, .. } | Layer::Dense { kernel, bias, .. } => {
                let (mut li, p) = quantize_params(kernel, bias, n_in.unwrap(), scheme)?;
                li.n_y = activation(id)?;
                params.insert(id.clone(), p);
                li
            }
            Layer::Affine { scale, offset } => {
                let (mut li, p) = quantize_params(scale, offset, n_in.unwrap(), scheme)?;
                li.n_y = activation(id)?;
                params.insert(id.clone(), p);
                li
            }
            Layer::Add { .. } => {
                let n_x = node.inputs.iter().map(|i| info[i].n_y).min().unwrap();
                LayerQuantInfo {
                    n_x,
                    n_y: activation(id)?,
                    n_w: None,
                    n_b: None,
                }
            }
            Layer::MaxPool1D(_) | Layer::AvgPool1D(_) | Layer::ReLU | Layer::ZeroPad1D { .. } | Layer::Flatten => {
                LayerQuantInfo::passthrough(n_in.unwrap())
            }
            Layer::BatchNorm { .. } => return Err(QuantError::UnfoldedBatchNorm(id.clone())),
            Layer::SoftMax => return Err(QuantError::Unsupported(id.clone(), "SoftMax".into())),
        };
        info.insert(id.clone(), entry);
    }
    Ok(QuantizedModel {
        graph: graph.clone(),
        width: w,
        order,
        shapes,
        info,
        params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{Conv1dAttrs, GraphBuilder};

    #[test]
    fn frac_bits_examples() {
        assert_eq!(frac_bits_for(&[0.75], 16), Ok(15));
        assert_eq!(frac_bits_for(&[1.0], 8), Ok(6));
        assert_eq!(frac_bits_for(&[-2.5, 0.3], 16), Ok(13));
        assert_eq!(frac_bits_for(&[0.0, -0.0], 8), Err(QuantError::AllZero));
        assert_eq!(frac_bits_for(&[], 8), Err(QuantError::Empty));
        assert_eq!(frac_bits_for(&[f64::NAN], 8), Err(QuantError::NonFinite));
        // large and tiny magnitudes give negative n and n >= w
        assert_eq!(frac_bits_for(&[300.0], 8), Ok(-2));
        assert_eq!(frac_bits_for(&[0.001], 8), Ok(16));
    }

    fn dense_model(weights: Vec<f64>) -> Graph {
        let mut b = GraphBuilder::new("in", Shape::new(1, weights.len()));
        b.dense("fc", "in", 1).unwrap();
        let mut g = b.finish();
        if let Layer::Dense { kernel, .. } = &mut g.nodes.get_mut("fc").unwrap().layer {
            kernel.data = weights;
        }
        g
    }

    #[test]
    fn per_network_fixed() {
        let g = crate::ir::build_resnet_v1_6(4, Shape::new(3, 32), 3).unwrap();
        let g = crate::transforms::run_pipeline(&g).unwrap();
        let qm = quantize_model(&g, &QuantizationScheme::per_network(16, 9), None).unwrap();
        for (id, li) in &qm.info {
            assert_eq!((li.n_x, li.n_y), (9, 9), "{id}");
            if let Some(n_w) = li.n_w {
                assert_eq!(n_w, 9);
                assert_eq!(li.n_b, Some(18));
            }
        }
    }

    #[test]
    fn derived_weight_formats() {
        let mut manual = BTreeMap::new();
        manual.insert("in".to_string(), 6);
        manual.insert("fc".to_string(), 6);
        let scheme = QuantizationScheme {
            width: 8,
            policy: ScalePolicy::PerLayerDerived,
            activation_source: ActivationSource::Manual(manual),
        };
        let qm = quantize_model(&dense_model(vec![1.0]), &scheme, None).unwrap();
        assert_eq!(qm.info["fc"].n_w, Some(6));
        assert_eq!(qm.params["fc"].weights.values(), [64]);

        let mut b = GraphBuilder::new("in", Shape::new(1, 4));
        b.conv1d("conv", "in", Conv1dAttrs::valid(1, 2)).unwrap();
        let mut g = b.finish();
        if let Layer::Conv1D { kernel, .. } = &mut g.nodes.get_mut("conv").unwrap().layer {
            kernel.data = vec![-2.5, 0.3];
        }
        let stats = CalibrationStats::from_pairs([("in", 1.0), ("conv", 2.0)]);
        let qm = quantize_model(&g, &QuantizationScheme::per_layer(16), Some(&stats)).unwrap();
        assert_eq!(qm.info["conv"].n_w, Some(13));
        assert_eq!(qm.params["conv"].weights.values(), [-20480, 2457]);
        assert_eq!(qm.info["conv"].n_x, 14);
        assert_eq!(qm.info["conv"].n_b, Some(27));
    }

    #[test]
    fn all_zero_weights_take_max_fraction() {
        let scheme = QuantizationScheme::per_layer(8);
        let stats = CalibrationStats::from_pairs([("in", 1.0), ("fc", 1.0)]);
        let qm = quantize_model(&dense_model(vec![0.0, 0.0]), &scheme, Some(&stats)).unwrap();
        assert_eq!(qm.info["fc"].n_w, Some(7));
        assert_eq!(qm.params["fc"].weights.values(), [0, 0]);
    }

    #[test]
    fn missing_inputs() {
        let g = dense_model(vec![1.0]);
        assert!(matches!(
            quantize_model(&g, &QuantizationScheme::per_layer(8), None),
            Err(QuantError::MissingStats(_))
        ));
        let stats = CalibrationStats::from_pairs([("in", 1.0)]);
        assert_eq!(
            quantize_model(&g, &QuantizationScheme::per_layer(8), Some(&stats)),
            Err(QuantError::MissingStats("fc".into()))
        );
        let mut b = GraphBuilder::new("in", Shape::new(1, 2));
        b.batch_norm("bn", "in", 1e-3).unwrap();
        assert_eq!(
            quantize_model(&b.finish(), &QuantizationScheme::per_network(16, 9), None),
            Err(QuantError::UnfoldedBatchNorm("bn".into()))
        );
    }
}
