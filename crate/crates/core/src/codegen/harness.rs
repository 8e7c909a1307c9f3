//! Test harness around the generated library: a `main.c` that streams
//! samples through `cnn()`, plus helpers to build and drive it.

use std::io::{self, Write as _};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::thread;

use super::templates::{render, HARNESS_MAIN_C};
use super::{FloatType, Model, SourceBundle};
use crate::fxp::FixedTensor;
use crate::interpreter::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("C compiler `{compiler}` failed:\n{stderr}")]
    Compile { compiler: String, stderr: String },
    #[error("harness exited with {status}:\n{stderr}")]
    Run { status: String, stderr: String },
    #[error("unparseable harness output `{0}`")]
    Parse(String),
    #[error("harness printed {lines} values for {samples} samples")]
    OutputCount { lines: usize, samples: usize },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// `main.c` for `model`: reads little-endian input elements from stdin and
/// prints one output value per line.
pub fn harness_main(model: &Model<'_>) -> String {
    let (bytes, decode, print) = match model {
        Model::Fixed(qm) if qm.width <= 8 => (
            1,
            "    return (number_t)(b[0] >= 128 ? (int)b[0] - 256 : (int)b[0]);",
            r#""%ld\n", (long)output[i]"#,
        ),
        Model::Fixed(_) => (
            2,
            "    long v = (long)b[0] | ((long)b[1] << 8);\n    if (v >= 32768L) v -= 65536L;\n    return (number_t)v;",
            r#""%ld\n", (long)output[i]"#,
        ),
        Model::Float(_, FloatType::F32) => (
            4,
            "    float v;\n    memcpy(&v, b, sizeof v);\n    return v;",
            r#""%.9g\n", (double)output[i]"#,
        ),
        Model::Float(_, FloatType::F64) => (
            8,
            "    double v;\n    memcpy(&v, b, sizeof v);\n    return v;",
            r#""%.17g\n", output[i]"#,
        ),
    };
    render(
        HARNESS_MAIN_C,
        &[
            ("element_bytes", bytes.to_string()),
            ("decode", decode.into()),
            ("print", print.into()),
        ],
    )
}

fn compiler() -> String {
    std::env::var("CC").unwrap_or_else(|_| "cc".into())
}

/// Write `bundle` to `dir` and link every `.c` file in it into `dir/harness`.
/// The bundle must contain a `main`, usually from [`harness_main`].
pub fn compile(bundle: &SourceBundle, dir: &Path) -> Result<PathBuf, HarnessError> {
    bundle.write_to(dir)?;
    let exe = dir.join("harness");
    let cc = compiler();
    let sources: Vec<PathBuf> = bundle
        .files
        .keys()
        .filter(|f| f.ends_with(".c"))
        .map(|f| dir.join(f))
        .collect();
    let out = Command::new(&cc)
        .args(["-std=c99", "-O2", "-ffp-contract=off", "-Wall", "-Wextra", "-pedantic"])
        .args(&sources)
        .arg("-o")
        .arg(&exe)
        .arg("-lm")
        .output()?;
    if !out.status.success() {
        return Err(HarnessError::Compile {
            compiler: cc,
            stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
        });
    }
    Ok(exe)
}

fn run(exe: &Path, stdin: Vec<u8>) -> Result<Vec<String>, HarnessError> {
    let mut child = Command::new(exe)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()?;
    let mut pipe = child.stdin.take().expect("stdin is piped");
    let writer = thread::spawn(move || pipe.write_all(&stdin));
    let out = child.wait_with_output()?;
    writer.join().expect("writer thread panicked")?;
    if !out.status.success() {
        return Err(HarnessError::Run {
            status: out.status.to_string(),
            stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
        });
    }
    Ok(String::from_utf8_lossy(&out.stdout)
        .lines()
        .map(str::to_owned)
        .collect())
}

fn split<T>(values: Vec<T>, samples: usize) -> Result<Vec<Vec<T>>, HarnessError> {
    if samples == 0 {
        return Ok(Vec::new());
    }
    if values.len() % samples != 0 {
        return Err(HarnessError::OutputCount {
            lines: values.len(),
            samples,
        });
    }
    let per = values.len() / samples;
    let mut rows = Vec::with_capacity(samples);
    let mut it = values.into_iter();
    for _ in 0..samples {
        rows.push(it.by_ref().take(per).collect());
    }
    Ok(rows)
}

/// Feed fixed-point inputs through a fixed harness; one integer row per input.
pub fn run_fixed_harness(exe: &Path, inputs: &[FixedTensor]) -> Result<Vec<Vec<i64>>, HarnessError> {
    let stdin: Vec<u8> = inputs.iter().flat_map(|t| t.data().to_le_bytes()).collect();
    let values = run(exe, stdin)?
        .iter()
        .map(|l| l.trim().parse::<i64>().map_err(|_| HarnessError::Parse(l.clone())))
        .collect::<Result<Vec<_>, _>>()?;
    split(values, inputs.len())
}

/// Feed float inputs through a float harness built for `ty`. Inputs are cast
/// to `ty` before being sent.
pub fn run_float_harness(exe: &Path, ty: FloatType, inputs: &[Tensor<f64>]) -> Result<Vec<Vec<f64>>, HarnessError> {
    let stdin: Vec<u8> = inputs
        .iter()
        .flat_map(|t| t.data.iter())
        .flat_map(|&v| match ty {
            FloatType::F32 => (v as f32).to_le_bytes().to_vec(),
            FloatType::F64 => v.to_le_bytes().to_vec(),
        })
        .collect();
    let values = run(exe, stdin)?
        .iter()
        .map(|l| {
            let v = match ty {
                FloatType::F32 => l.trim().parse::<f32>().map(f64::from),
                FloatType::F64 => l.trim().parse::<f64>(),
            };
            v.map_err(|_| HarnessError::Parse(l.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    split(values, inputs.len())
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};

    use super::*;
    use crate::allocator::plan_buffers;
    use crate::codegen::emit;
    use crate::interpreter::{run_fixed, run_float};
    use crate::ir::{build_resnet_v1_6, infer_shapes, Graph, Shape};
    use crate::quantizer::{calibrate, quantize_model, QuantizationScheme};
    use crate::transforms::run_pipeline;

    fn resnet() -> Graph {
        let mut g = build_resnet_v1_6(4, Shape::new(2, 32), 3).unwrap();
        g.reinit_weights(7);
        run_pipeline(&g).unwrap()
    }

    fn inputs(shape: Shape, count: usize) -> Vec<Tensor<f64>> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        (0..count)
            .map(|_| Tensor::new(shape, (0..shape.len()).map(|_| rng.gen_range(-2.0..2.0)).collect()))
            .collect()
    }

    #[test]
    fn fixed_harness_matches_interpreter() {
        let g = resnet();
        let xs = inputs(g.input_shape, 20);
        let stats = calibrate(&g, &xs).unwrap();
        let plan = plan_buffers(&g, &infer_shapes(&g).unwrap()).unwrap();
        for width in [8, 9, 16] {
            let qm = quantize_model(&g, &QuantizationScheme::per_layer(width), Some(&stats)).unwrap();
            let model = Model::Fixed(&qm);
            let mut bundle = emit(model, &plan).unwrap();
            bundle.files.insert("main.c".into(), harness_main(&model));
            let dir = tempfile::tempdir().unwrap();
            let exe = compile(&bundle, dir.path()).unwrap();
            let fx: Vec<FixedTensor> = xs
                .iter()
                .map(|x| FixedTensor::quantize(qm.input_format(), vec![x.shape.channels, x.shape.samples], &x.data))
                .collect();
            let got = run_fixed_harness(&exe, &fx).unwrap();
            for (x, row) in fx.iter().zip(&got) {
                assert_eq!(&run_fixed(&qm, x).unwrap().values(), row, "width {width}");
            }
        }
    }

    #[test]
    fn float_harness_matches_interpreter() {
        let g = resnet();
        let xs = inputs(g.input_shape, 10);
        let plan = plan_buffers(&g, &infer_shapes(&g).unwrap()).unwrap();
        for ty in [FloatType::F32, FloatType::F64] {
            let model = Model::Float(&g, ty);
            let mut bundle = emit(model, &plan).unwrap();
            bundle.files.insert("main.c".into(), harness_main(&model));
            let dir = tempfile::tempdir().unwrap();
            let exe = compile(&bundle, dir.path()).unwrap();
            let got = run_float_harness(&exe, ty, &xs).unwrap();
            for (x, row) in xs.iter().zip(&got) {
                let want: Vec<f64> = match ty {
                    FloatType::F32 => run_float(&g, &x.to_f32()).unwrap().to_f64().data,
                    FloatType::F64 => run_float(&g, x).unwrap().data,
                };
                assert_eq!(&want, row, "{ty:?}");
            }
        }
    }

    #[test]
    fn split_rejects_ragged_output() {
        assert!(matches!(split(vec![1, 2, 3], 2), Err(HarnessError::OutputCount { .. })));
        assert_eq!(split(vec![1, 2, 3, 4], 2).unwrap(), [vec![1, 2], vec![3, 4]]);
    }
}
