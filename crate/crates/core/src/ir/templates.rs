//! Built-in model templates.
//!
//! All templates use ReLU activations, end in a `Dense` classifier and omit
//! SoftMax. Weights are initialised deterministically (seed 0); use
//! [`Graph::reinit_weights`] for other draws.

use super::{Conv1dAttrs, Graph, GraphBuilder, IrError, Layer, PoolAttrs, Shape};

fn same3(filters: usize, stride: usize) -> Conv1dAttrs {
    Conv1dAttrs {
        filters,
        kernel: 3,
        stride,
        pad_left: 0,
        pad_right: 0,
        fused_relu: false,
    }
}

fn padded_conv(
    b: &mut GraphBuilder,
    id: &str,
    input: &str,
    attrs: Conv1dAttrs,
) -> Result<(), IrError> {
    let pad = format!("{id}_pad");
    b.simple(
        &pad,
        input,
        Layer::ZeroPad1D {
            pad_left: 1,
            pad_right: 1,
        },
    )?;
    b.conv1d(id, &pad, attrs)?;
    Ok(())
}

/// One-dimensional ResNetv1-6.
///
/// ```text
/// input -> pad -> conv(f,3) -> relu -> maxpool(2)
///   block 1: pad -> conv(f,3) -> relu -> pad -> conv(f,3); add(identity) -> relu
///   block 2: pad -> conv(f,3,stride 2) -> relu -> pad -> conv(f,3);
///            add(conv(f,1,stride 2) shortcut) -> relu
/// global maxpool -> flatten -> dense(classes)
/// ```
///
/// Six weighted layers on the main path; parameter count is
/// `(3c + 1)f + 13f^2 + 5f + classes(f + 1)`, i.e. 3958 for f=16, c=9, 6 classes.
pub fn build_resnet_v1_6(filters: usize, input: Shape, classes: usize) -> Result<Graph, IrError> {
    if filters == 0 {
        return Err(IrError::InvalidConfig("filters must be >= 1".into()));
    }
    if classes < 2 {
        return Err(IrError::InvalidConfig("classes must be >= 2".into()));
    }
    let f = filters;
    let mut b = GraphBuilder::new("input", input);

    padded_conv(&mut b, "conv1", "input", same3(f, 1))?;
    b.simple("conv1_relu", "conv1", Layer::ReLU)?;
    b.simple("pool1", "conv1_relu", Layer::MaxPool1D(PoolAttrs::new(2)))?;

    padded_conv(&mut b, "block1_conv1", "pool1", same3(f, 1))?;
    b.simple("block1_relu1", "block1_conv1", Layer::ReLU)?;
    padded_conv(&mut b, "block1_conv2", "block1_relu1", same3(f, 1))?;
    b.add("block1_add", &["pool1", "block1_conv2"])?;
    b.simple("block1_relu2", "block1_add", Layer::ReLU)?;

    padded_conv(&mut b, "block2_conv1", "block1_relu2", same3(f, 2))?;
    b.simple("block2_relu1", "block2_conv1", Layer::ReLU)?;
    padded_conv(&mut b, "block2_conv2", "block2_relu1", same3(f, 1))?;
    b.conv1d(
        "block2_shortcut",
        "block1_relu2",
        Conv1dAttrs {
            filters: f,
            kernel: 1,
            stride: 2,
            pad_left: 0,
            pad_right: 0,
            fused_relu: false,
        },
    )?;
    b.add("block2_add", &["block2_shortcut", "block2_conv2"])?;
    b.simple("block2_relu2", "block2_add", Layer::ReLU)?;

    let remaining = b.shape_of("block2_relu2").samples;
    b.simple("pool2", "block2_relu2", Layer::MaxPool1D(PoolAttrs::new(remaining)))?;
    b.simple("flatten", "pool2", Layer::Flatten)?;
    b.dense("dense", "flatten", classes)?;

    let mut g = b.finish();
    g.reinit_weights(0);
    Ok(g)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CnnConfig {
    pub input: Shape,
    pub conv_layers: usize,
    pub filters: usize,
    pub kernel: usize,
    pub pool: usize,
    /// Hidden fully connected layers before the classifier.
    pub dense_layers: Vec<usize>,
    pub classes: usize,
}

/// Sequential CNN: `conv_layers` x (valid Conv1D + ReLU + MaxPool1D), then
/// Flatten, the hidden Dense + ReLU layers and a Dense classifier.
pub fn build_cnn(config: &CnnConfig) -> Result<Graph, IrError> {
    if config.conv_layers == 0 || config.filters == 0 || config.kernel == 0 || config.pool == 0 {
        return Err(IrError::InvalidConfig(
            "conv layers, filters, kernel and pool size must be >= 1".into(),
        ));
    }
    if config.classes == 0 || config.dense_layers.iter().any(|&n| n == 0) {
        return Err(IrError::InvalidConfig("neuron counts must be >= 1".into()));
    }
    let mut b = GraphBuilder::new("input", config.input);
    let mut prev = "input".to_string();
    for i in 1..=config.conv_layers {
        let conv = format!("conv{i}");
        b.conv1d(&conv, &prev, Conv1dAttrs::valid(config.filters, config.kernel))?;
        b.simple(&format!("conv{i}_relu"), &conv, Layer::ReLU)?;
        b.simple(
            &format!("pool{i}"),
            &format!("conv{i}_relu"),
            Layer::MaxPool1D(PoolAttrs::new(config.pool)),
        )?;
        prev = format!("pool{i}");
    }
    b.simple("flatten", &prev, Layer::Flatten)?;
    prev = "flatten".into();
    for (i, &units) in config.dense_layers.iter().enumerate() {
        let id = format!("fc{}", i + 1);
        b.dense(&id, &prev, units)?;
        b.simple(&format!("{id}_relu"), &id, Layer::ReLU)?;
        prev = format!("{id}_relu");
    }
    b.dense("classifier", &prev, config.classes)?;
    let mut g = b.finish();
    g.reinit_weights(0);
    Ok(g)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MlpConfig {
    pub input: Shape,
    /// Total number of Dense layers, the classifier included.
    pub layers: usize,
    pub neurons: usize,
    pub classes: usize,
}

/// Multi-layer perceptron: `layers - 1` hidden Dense(neurons) + ReLU layers
/// followed by a Dense(classes) classifier. Multi-channel inputs are
/// flattened first.
pub fn build_mlp(config: &MlpConfig) -> Result<Graph, IrError> {
    if config.layers == 0 || config.neurons == 0 || config.classes == 0 {
        return Err(IrError::InvalidConfig(
            "layers, neurons and classes must be >= 1".into(),
        ));
    }
    let mut b = GraphBuilder::new("input", config.input);
    let mut prev = "input".to_string();
    if config.input.channels > 1 {
        b.simple("flatten", &prev, Layer::Flatten)?;
        prev = "flatten".into();
    }
    for i in 1..config.layers {
        let id = format!("fc{i}");
        b.dense(&id, &prev, config.neurons)?;
        b.simple(&format!("{id}_relu"), &id, Layer::ReLU)?;
        prev = format!("{id}_relu");
    }
    b.dense("classifier", &prev, config.classes)?;
    let mut g = b.finish();
    g.reinit_weights(0);
    Ok(g)
}
