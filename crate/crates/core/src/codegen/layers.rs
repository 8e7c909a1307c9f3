//! Per-layer C functions and weight headers.

use std::fmt::Write as _;

use super::{int_literal, FloatType, Model};
use crate::ir::{Layer, Shape};

fn float_literal(v: f64, ty: FloatType) -> String {
    match ty {
        FloatType::F32 => format!("{:?}f", v as f32),
        FloatType::F64 => format!("{v:?}"),
    }
}

/// Nested brace initializer; the innermost dimension goes on one line.
fn initializer(values: &[String], dims: &[usize], depth: usize, out: &mut String) {
    let pad = "    ".repeat(depth);
    if dims.len() <= 1 {
        write!(out, "{pad}{{{}}}", values.join(", ")).unwrap();
        return;
    }
    let stride: usize = dims[1..].iter().product();
    writeln!(out, "{pad}{{").unwrap();
    for (i, chunk) in values.chunks(stride.max(1)).enumerate() {
        initializer(chunk, &dims[1..], depth + 1, out);
        out.push_str(if i + 1 < dims[0] { ",\n" } else { "\n" });
    }
    write!(out, "{pad}}}").unwrap();
}

fn array(ty: &str, name: &str, dims: &[usize], values: &[String]) -> String {
    let extents: String = dims.iter().map(|d| format!("[{d}]")).collect();
    let mut out = format!("static const {ty} {name}{extents} =\n");
    initializer(values, dims, 0, &mut out);
    out.push_str(";\n");
    out
}

/// Header holding the layer's parameters, or `None` for layers without any.
pub(crate) fn weights_header(model: &Model<'_>, id: &str, name: &str) -> Option<String> {
    let layer = &model.graph().nodes[id].layer;
    let (kernel, bias) = match layer {
        Layer::Conv1D { kernel, bias, .. } | Layer::Dense { kernel, bias, .. } => (kernel, bias),
        Layer::Affine { scale, offset } => (scale, offset),
        _ => return None,
    };
    let guard = format!("WEIGHTS_{}_H", name.to_ascii_uppercase());
    let mut out = format!("#ifndef {guard}\n#define {guard}\n\n#include \"../number.h\"\n\n");
    match model {
        Model::Fixed(qm) => {
            let info = &qm.info[id];
            let p = &qm.params[id];
            writeln!(
                out,
                "/* weights n = {}, bias n = {} */",
                info.n_w.unwrap(),
                info.n_b.unwrap()
            )
            .unwrap();
            let w: Vec<String> = p.weights.values().iter().map(|&v| v.to_string()).collect();
            let b: Vec<String> = p.bias.iter().map(|&v| int_literal(v)).collect();
            out.push_str(&array("number_t", &format!("{name}_kernel"), p.weights.dims(), &w));
            out.push('\n');
            out.push_str(&array("long_number_t", &format!("{name}_bias"), &[b.len()], &b));
        }
        Model::Float(_, ty) => {
            let w: Vec<String> = kernel.data.iter().map(|&v| float_literal(v, *ty)).collect();
            let b: Vec<String> = bias.data.iter().map(|&v| float_literal(v, *ty)).collect();
            out.push_str(&array("number_t", &format!("{name}_kernel"), &kernel.dims, &w));
            out.push('\n');
            out.push_str(&array("number_t", &format!("{name}_bias"), &[b.len()], &b));
        }
    }
    out.push_str("\n#endif\n");
    Some(out)
}

/// Statement sequences that differ between fixed and float arithmetic.
struct Arith {
    fixed: bool,
}

impl Arith {
    fn acc_decl(&self, init: &str) -> String {
        let ty = if self.fixed { "long_number_t" } else { "number_t" };
        format!("{ty} acc = {init};")
    }

    fn mac(&self, x: &str, w: &str) -> String {
        if self.fixed {
            format!("acc = mac_long(acc, {x}, {w});")
        } else {
            format!("acc = acc + {x} * {w};")
        }
    }

    /// Expression turning `acc` into the stored output value.
    fn finish(&self, shift: i32, relu: bool) -> String {
        let y = if self.fixed {
            format!("scale_number_t(acc, {})", shift.clamp(-64, 64))
        } else {
            "acc".to_string()
        };
        if relu {
            format!("relu_number_t({y})")
        } else {
            y
        }
    }
}

/// `static void layer_<name>(inputs..., number_t *output)`.
pub(crate) fn layer_function(model: &Model<'_>, id: &str, name: &str, inputs: &[Shape], out: Shape) -> String {
    let node = &model.graph().nodes[id];
    let arith = Arith {
        fixed: matches!(model, Model::Fixed(_)),
    };
    let (shift, info) = match model {
        Model::Fixed(qm) => {
            let info = qm.info[id];
            (info.acc_frac() - info.n_y, Some(info))
        }
        Model::Float(..) => (0, None),
    };
    let params: Vec<String> = if inputs.len() == 1 {
        vec!["const number_t *input".into()]
    } else {
        (0..inputs.len()).map(|k| format!("const number_t *in{k}")).collect()
    };
    let mut f = format!(
        "static void layer_{name}({}, number_t *output) {{\n",
        params.join(", ")
    );
    let x = inputs[0];
    let relu = node.layer.fused_relu();
    let mut body = String::new();
    let b = &mut body;
    match &node.layer {
        Layer::Conv1D { attrs, .. } => {
            let (c, s) = (x.channels, x.samples);
            writeln!(b, "    int f, j, c, t;").unwrap();
            writeln!(b, "    for (f = 0; f < {}; f++) {{", attrs.filters).unwrap();
            writeln!(b, "        for (j = 0; j < {}; j++) {{", out.samples).unwrap();
            writeln!(b, "            {}", arith.acc_decl(&format!("{name}_bias[f]"))).unwrap();
            writeln!(b, "            for (c = 0; c < {c}; c++) {{").unwrap();
            writeln!(b, "                for (t = 0; t < {}; t++) {{", attrs.kernel).unwrap();
            writeln!(
                b,
                "                    int pos = j * {} + t - {};",
                attrs.stride, attrs.pad_left
            )
            .unwrap();
            if attrs.pad_left > 0 || attrs.pad_right > 0 {
                writeln!(b, "                    if (pos < 0 || pos >= {s}) continue;").unwrap();
            }
            writeln!(
                b,
                "                    {}",
                arith.mac(&format!("input[c * {s} + pos]"), &format!("{name}_kernel[f][c][t]"))
            )
            .unwrap();
            writeln!(b, "                }}\n            }}").unwrap();
            writeln!(
                b,
                "            output[f * {} + j] = {};",
                out.samples,
                arith.finish(shift, relu)
            )
            .unwrap();
            writeln!(b, "        }}\n    }}").unwrap();
        }
        Layer::Dense { units, .. } => {
            writeln!(b, "    int u, i;").unwrap();
            writeln!(b, "    for (u = 0; u < {units}; u++) {{").unwrap();
            writeln!(b, "        {}", arith.acc_decl(&format!("{name}_bias[u]"))).unwrap();
            writeln!(b, "        for (i = 0; i < {}; i++) {{", x.len()).unwrap();
            writeln!(b, "            {}", arith.mac("input[i]", &format!("{name}_kernel[u][i]"))).unwrap();
            writeln!(b, "        }}").unwrap();
            writeln!(b, "        output[u] = {};", arith.finish(shift, relu)).unwrap();
            writeln!(b, "    }}").unwrap();
        }
        Layer::Affine { .. } => {
            writeln!(b, "    int c, j;").unwrap();
            writeln!(b, "    for (c = 0; c < {}; c++) {{", x.channels).unwrap();
            writeln!(b, "        for (j = 0; j < {}; j++) {{", x.samples).unwrap();
            writeln!(b, "            {}", arith.acc_decl(&format!("{name}_bias[c]"))).unwrap();
            writeln!(
                b,
                "            {}",
                arith.mac(&format!("input[c * {} + j]", x.samples), &format!("{name}_kernel[c]"))
            )
            .unwrap();
            writeln!(
                b,
                "            output[c * {} + j] = {};",
                x.samples,
                arith.finish(shift, false)
            )
            .unwrap();
            writeln!(b, "        }}\n    }}").unwrap();
        }
        Layer::Add { .. } => {
            writeln!(b, "    int e;").unwrap();
            writeln!(b, "    for (e = 0; e < {}; e++) {{", out.len()).unwrap();
            match (model, info) {
                (Model::Fixed(qm), Some(info)) => {
                    for (k, producer) in node.inputs.iter().enumerate() {
                        let sh = (qm.info[producer].n_y - info.n_x).clamp(0, 64);
                        let term = format!("shift_right_floor((long_number_t)in{k}[e], {sh})");
                        if k == 0 {
                            writeln!(b, "        long_number_t acc = {term};").unwrap();
                        } else {
                            writeln!(b, "        acc = add_long(acc, {term});").unwrap();
                        }
                    }
                    let finish = arith.finish(info.n_x - info.n_y, relu);
                    writeln!(b, "        output[e] = {finish};").unwrap();
                }
                _ => {
                    writeln!(b, "        number_t acc = in0[e];").unwrap();
                    for k in 1..inputs.len() {
                        writeln!(b, "        acc = acc + in{k}[e];").unwrap();
                    }
                    writeln!(b, "        output[e] = {};", arith.finish(0, relu)).unwrap();
                }
            }
            writeln!(b, "    }}").unwrap();
        }
        Layer::MaxPool1D(p) => {
            writeln!(b, "    int c, j, t;").unwrap();
            writeln!(b, "    for (c = 0; c < {}; c++) {{", x.channels).unwrap();
            writeln!(b, "        for (j = 0; j < {}; j++) {{", out.samples).unwrap();
            writeln!(
                b,
                "            const number_t *w = input + c * {} + j * {};",
                x.samples, p.stride
            )
            .unwrap();
            writeln!(b, "            number_t m = w[0];").unwrap();
            writeln!(b, "            for (t = 1; t < {}; t++) {{", p.size).unwrap();
            writeln!(b, "                if (w[t] > m) m = w[t];").unwrap();
            writeln!(b, "            }}").unwrap();
            let m = if p.fused_relu { "relu_number_t(m)" } else { "m" };
            writeln!(b, "            output[c * {} + j] = {m};", out.samples).unwrap();
            writeln!(b, "        }}\n    }}").unwrap();
        }
        Layer::AvgPool1D(p) => {
            writeln!(b, "    int c, j, t;").unwrap();
            writeln!(b, "    for (c = 0; c < {}; c++) {{", x.channels).unwrap();
            writeln!(b, "        for (j = 0; j < {}; j++) {{", out.samples).unwrap();
            writeln!(
                b,
                "            const number_t *w = input + c * {} + j * {};",
                x.samples, p.stride
            )
            .unwrap();
            writeln!(b, "            {}", arith.acc_decl("0")).unwrap();
            writeln!(b, "            for (t = 0; t < {}; t++) {{", p.size).unwrap();
            let avg = if arith.fixed {
                writeln!(b, "                acc = add_long(acc, w[t]);").unwrap();
                format!("clamp_to_number_t(floor_div_long(acc, {}))", p.size)
            } else {
                writeln!(b, "                acc = acc + w[t];").unwrap();
                format!("acc / (number_t){}", p.size)
            };
            writeln!(b, "            }}").unwrap();
            let avg = if p.fused_relu { format!("relu_number_t({avg})") } else { avg };
            writeln!(b, "            output[c * {} + j] = {avg};", out.samples).unwrap();
            writeln!(b, "        }}\n    }}").unwrap();
        }
        Layer::ReLU => {
            writeln!(b, "    int i;").unwrap();
            writeln!(b, "    for (i = 0; i < {}; i++) {{", out.len()).unwrap();
            writeln!(b, "        output[i] = relu_number_t(input[i]);").unwrap();
            writeln!(b, "    }}").unwrap();
        }
        Layer::ZeroPad1D { pad_left, .. } => {
            writeln!(b, "    int c, j;").unwrap();
            writeln!(b, "    for (c = 0; c < {}; c++) {{", x.channels).unwrap();
            writeln!(b, "        for (j = 0; j < {}; j++) {{", out.samples).unwrap();
            writeln!(b, "            int pos = j - {pad_left};").unwrap();
            writeln!(
                b,
                "            output[c * {} + j] = (pos < 0 || pos >= {}) ? 0 : input[c * {} + pos];",
                out.samples, x.samples, x.samples
            )
            .unwrap();
            writeln!(b, "        }}\n    }}").unwrap();
        }
        Layer::Flatten => {
            writeln!(b, "    int i;").unwrap();
            writeln!(b, "    for (i = 0; i < {}; i++) {{", out.len()).unwrap();
            writeln!(b, "        output[i] = input[i];").unwrap();
            writeln!(b, "    }}").unwrap();
        }
        Layer::Input | Layer::BatchNorm { .. } | Layer::SoftMax => unreachable!("rejected by emit"),
    }
    f.push_str(&body);
    f.push_str("}\n");
    f
}
