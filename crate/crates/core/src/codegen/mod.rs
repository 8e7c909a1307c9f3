//! C99 code generation.
//!
//! [`emit`] produces a self-contained library: `number.h` with the numeric
//! type and the saturating helpers, `model.h` with the `cnn()` entry point,
//! `model.c` with one static function per layer and file-scope pool buffers,
//! and one `weights/<layer>.h` per parameterised layer. Layer dimensions are
//! literals and there is no dynamic allocation or recursion.

mod harness;
mod layers;
mod templates;

pub use harness::{compile, harness_main, run_fixed_harness, run_float_harness, HarnessError};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use crate::allocator::AllocationPlan;
use crate::fxp::{long_bits, max_int, min_int, QFormat};
use crate::ir::{infer_shapes, topo_order, Graph, IrError, LayerKind, NodeId, Shape};
use crate::quantizer::QuantizedModel;
use templates::render;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum CodegenError {
    #[error("layer `{node}` of kind {kind} cannot be emitted")]
    UnsupportedLayer { node: NodeId, kind: LayerKind },
    #[error("allocation plan does not match the model: {0}")]
    PlanMismatch(String),
    #[error(transparent)]
    Ir(#[from] IrError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FloatType {
    F32,
    F64,
}

impl FloatType {
    pub(crate) fn c_name(self) -> &'static str {
        match self {
            FloatType::F32 => "float",
            FloatType::F64 => "double",
        }
    }

    pub fn bytes(self) -> usize {
        match self {
            FloatType::F32 => 4,
            FloatType::F64 => 8,
        }
    }
}

/// What to emit: a quantized model or a float graph.
#[derive(Debug, Clone, Copy)]
pub enum Model<'a> {
    Fixed(&'a QuantizedModel),
    Float(&'a Graph, FloatType),
}

impl<'a> Model<'a> {
    pub fn graph(&self) -> &'a Graph {
        match self {
            Model::Fixed(qm) => &qm.graph,
            Model::Float(g, _) => g,
        }
    }
}

/// Generated files keyed by relative path.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SourceBundle {
    pub files: BTreeMap<String, String>,
}

impl SourceBundle {
    pub fn get(&self, name: &str) -> Option<&str> {
        self.files.get(name).map(String::as_str)
    }

    /// Write every file under `dir`, creating subdirectories as needed.
    pub fn write_to(&self, dir: &Path) -> io::Result<Vec<PathBuf>> {
        let mut written = Vec::new();
        for (name, text) in &self.files {
            let path = dir.join(name);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent)?;
            }
            fs::write(&path, text)?;
            written.push(path);
        }
        Ok(written)
    }
}

/// C identifiers for node ids: invalid characters become `_`, a leading
/// digit gets an `n` prefix, and collisions get a numeric suffix.
pub(crate) fn c_identifiers(ids: impl IntoIterator<Item = NodeId>) -> BTreeMap<NodeId, String> {
    let mut used = BTreeSet::new();
    let mut names = BTreeMap::new();
    for id in ids {
        let mut base: String = id
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '_' { c } else { '_' })
            .collect();
        if base.is_empty() || base.starts_with(|c: char| c.is_ascii_digit()) {
            base.insert(0, 'n');
        }
        let mut name = base.clone();
        let mut k = 2;
        while !used.insert(name.clone()) {
            name = format!("{base}_{k}");
            k += 1;
        }
        names.insert(id, name);
    }
    names
}

/// Integer literal that is valid C for every value of a 32-bit type.
pub(crate) fn int_literal(v: i64) -> String {
    if v == i32::MIN as i64 {
        "(-2147483647 - 1)".into()
    } else {
        v.to_string()
    }
}

/// Input conversion from a real value to `number_t` at format `fmt`:
/// `clamp(floor(x * 2^n))`, with NaN mapped to zero.
pub fn emit_input_conversion_helper(fmt: QFormat) -> String {
    let n = fmt.frac();
    let scaled = if (0..=30).contains(&n) {
        "x * (double)(1L << INPUT_SCALE_FACTOR)".to_string()
    } else if (-30..0).contains(&n) {
        "x / (double)(1L << -INPUT_SCALE_FACTOR)".to_string()
    } else {
        format!("x * 0x1p{n}")
    };
    format!(
        r#"
#include <math.h>

/* Convert a real input value to number_t (floor, then saturate). */
static inline number_t float_to_number_t(double x) {{
    double v = floor({scaled});
    if (v != v) return 0;
    if (v > (double)NUMBER_MAX) return NUMBER_MAX;
    if (v < (double)NUMBER_MIN) return NUMBER_MIN;
    return (number_t)v;
}}
"#
    )
}

fn number_h(model: &Model<'_>) -> String {
    match model {
        Model::Fixed(qm) => {
            let w = qm.width;
            let long = long_bits(w);
            let (number_type, long_type, long_utype) = if w <= 8 {
                ("int8_t", "int16_t", "uint16_t")
            } else {
                ("int16_t", "int32_t", "uint32_t")
            };
            render(
                templates::NUMBER_H_FIXED,
                &[
                    ("width", w.to_string()),
                    ("min", min_int(w).to_string()),
                    ("max", max_int(w).to_string()),
                    ("long_bits", long.to_string()),
                    ("long_max", format!("{}", max_int(long))),
                    ("number_type", number_type.into()),
                    ("long_type", long_type.into()),
                    ("long_utype", long_utype.into()),
                ],
            )
        }
        Model::Float(_, ty) => render(templates::NUMBER_H_FLOAT, &[("float_type", ty.c_name().into())]),
    }
}

fn model_h(model: &Model<'_>, outputs: usize) -> String {
    let g = model.graph();
    let (scale_factors, helper) = match model {
        Model::Fixed(qm) => (
            format!(
                "#define INPUT_SCALE_FACTOR {}\n#define OUTPUT_SCALE_FACTOR {}\n",
                qm.input_format().frac(),
                qm.output_format().frac()
            ),
            emit_input_conversion_helper(qm.input_format()),
        ),
        Model::Float(..) => (String::new(), String::new()),
    };
    render(
        templates::MODEL_H,
        &[
            ("channels", g.input_shape.channels.to_string()),
            ("samples", g.input_shape.samples.to_string()),
            ("outputs", outputs.to_string()),
            ("scale_factors", scale_factors),
            ("helper", helper),
        ],
    )
}

fn check_plan(
    graph: &Graph,
    order: &[NodeId],
    shapes: &BTreeMap<NodeId, Shape>,
    plan: &AllocationPlan,
) -> Result<(), CodegenError> {
    for id in order {
        if graph.nodes[id].kind() == LayerKind::Input {
            continue;
        }
        let pool = plan
            .pool_of(id)
            .ok_or_else(|| CodegenError::PlanMismatch(format!("node `{id}` has no pool")))?;
        let size = plan
            .pool_sizes
            .get(pool)
            .ok_or_else(|| CodegenError::PlanMismatch(format!("node `{id}` uses missing pool {pool}")))?;
        if *size < shapes[id].len() {
            return Err(CodegenError::PlanMismatch(format!(
                "pool {pool} holds {size} elements, node `{id}` needs {}",
                shapes[id].len()
            )));
        }
    }
    Ok(())
}

/// Generate the C library for `model` using the buffer pools of `plan`.
pub fn emit(model: Model<'_>, plan: &AllocationPlan) -> Result<SourceBundle, CodegenError> {
    let graph = model.graph();
    let order = topo_order(graph)?;
    let shapes = infer_shapes(graph)?;
    for id in &order {
        let kind = graph.nodes[id].kind();
        if matches!(kind, LayerKind::SoftMax | LayerKind::BatchNorm) {
            return Err(CodegenError::UnsupportedLayer { node: id.clone(), kind });
        }
    }
    check_plan(graph, &order, &shapes, plan)?;
    let names = c_identifiers(order.iter().cloned());

    let mut files = BTreeMap::new();
    let mut includes = String::new();
    let mut functions = String::new();
    for id in &order {
        let node = &graph.nodes[id];
        if node.kind() == LayerKind::Input {
            continue;
        }
        let name = &names[id];
        if let Some(header) = layers::weights_header(&model, id, name) {
            let file = format!("weights/{name}.h");
            writeln!(includes, "#include \"{file}\"").unwrap();
            files.insert(file, header);
        }
        let inputs: Vec<Shape> = node.inputs.iter().map(|i| shapes[i]).collect();
        functions.push_str(&layers::layer_function(&model, id, name, &inputs, shapes[id]));
        functions.push('\n');
    }

    let out_len = shapes[&graph.output].len();
    let mut model_c = String::new();
    model_c.push_str("#include \"model.h\"\n\n");
    if !includes.is_empty() {
        model_c.push_str(&includes);
        model_c.push('\n');
    }
    for (p, size) in plan.pool_sizes.iter().enumerate() {
        writeln!(model_c, "static number_t pool{p}[{size}];").unwrap();
    }
    if !plan.pool_sizes.is_empty() {
        model_c.push('\n');
    }
    model_c.push_str(&functions);

    let buffer = |id: &NodeId| -> String {
        if graph.nodes[id].kind() == LayerKind::Input {
            "&input[0][0]".into()
        } else {
            format!("pool{}", plan.pool_of(id).unwrap())
        }
    };
    model_c.push_str(
        "void cnn(const number_t input[MODEL_INPUT_CHANNELS][MODEL_INPUT_SAMPLES], output_layer_type output) {\n",
    );
    model_c.push_str("    int i;\n");
    for id in &order {
        let node = &graph.nodes[id];
        if node.kind() == LayerKind::Input {
            continue;
        }
        let mut args: Vec<String> = node.inputs.iter().map(&buffer).collect();
        args.push(buffer(id));
        writeln!(model_c, "    layer_{}({});", names[id], args.join(", ")).unwrap();
    }
    let src = buffer(&graph.output);
    writeln!(
        model_c,
        "    for (i = 0; i < {out_len}; i++) {{\n        output[i] = ({src})[i];\n    }}\n}}"
    )
    .unwrap();

    files.insert("number.h".into(), number_h(&model));
    files.insert("model.h".into(), model_h(&model, out_len));
    files.insert("model.c".into(), model_c);
    Ok(SourceBundle { files })
}
