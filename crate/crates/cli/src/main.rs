//! `nnc`: command-line driver for the model compiler.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use nnc_core::allocator::plan_buffers;
use nnc_core::codegen::{emit, harness_main, FloatType, Model};
use nnc_core::costmodel::{cost_report, Precision};
use nnc_core::fxp::{long_bits, FixedTensor};
use nnc_core::interpreter::{evaluate, run_instrumented, tensors_from_json, Dataset, Executable, Tensor};
use nnc_core::ir::{infer_shapes, load_model_file, save_model_string, topo_order, validate, Graph};
use nnc_core::quantizer::{calibrate, quantize_model, QuantizedModel};
use nnc_core::transforms::run_pipeline;

use config::{require, ConfigError, ExperimentConfig};

#[derive(Parser)]
#[command(name = "nnc", version, about = "Quantize 1D CNNs and generate fixed-point C")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print nodes, shapes and parameter counts of a model JSON or config.
    Inspect { path: PathBuf },
    /// Run the graph passes and write `<output_dir>/model.json`.
    Transform { config: PathBuf },
    /// Quantize and write the integer archive to `<output_dir>`.
    Quantize { config: PathBuf },
    /// Accuracy and MSE of the float, fake-quantized and fixed paths.
    Evaluate { config: PathBuf },
    /// Write the C library to `<output_dir>/c`.
    Codegen {
        config: PathBuf,
        /// Emit floating-point C instead of fixed point.
        #[arg(long, value_enum)]
        float: Option<FloatArg>,
        /// Also write a stdin/stdout `main.c` test harness.
        #[arg(long)]
        harness: bool,
    },
    /// Print operation counts, cycles, ROM and RAM.
    Estimate {
        config: PathBuf,
        /// Report float32 storage instead of the configured width.
        #[arg(long)]
        float: bool,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FloatArg {
    F32,
    F64,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Module(String),
}

impl CliError {
    fn module(e: impl std::fmt::Display) -> Self {
        CliError::Module(e.to_string())
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Module(_) => 1,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let (cfg, warnings) = ExperimentConfig::load(path)?;
    for w in warnings {
        eprintln!("warning: {w}");
    }
    require(&cfg.model, "model")?;
    Ok(cfg)
}

fn load_graph(path: &Path) -> Result<Graph> {
    load_model_file(path).map_err(CliError::module)
}

fn transformed(cfg: &ExperimentConfig) -> Result<Graph> {
    run_pipeline(&load_graph(&cfg.model)?).map_err(CliError::module)
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::Module(format!("{}: {e}", path.display())))
}

fn dataset(cfg: &ExperimentConfig, graph: &Graph) -> Result<Option<Dataset>> {
    let Some(path) = &cfg.dataset else { return Ok(None) };
    require(path, "dataset")?;
    let mut data = Dataset::from_json_str(&read(path)?, graph.input_shape).map_err(CliError::module)?;
    if let Some(limit) = cfg.iterations {
        data.inputs.truncate(limit);
        data.labels.truncate(limit);
    }
    Ok(Some(data))
}

fn calibration_samples(cfg: &ExperimentConfig, graph: &Graph) -> Result<Vec<Tensor<f64>>> {
    if let Some(path) = &cfg.calibration {
        require(path, "calibration")?;
        return tensors_from_json(&read(path)?, graph.input_shape).map_err(CliError::module);
    }
    match dataset(cfg, graph)? {
        Some(d) => Ok(d.inputs),
        None => Err(ConfigError::Invalid("the per-layer policy needs `calibration` or `dataset`".into()).into()),
    }
}

fn quantized(cfg: &ExperimentConfig, graph: &Graph) -> Result<QuantizedModel> {
    let stats = if cfg.needs_calibration() {
        Some(calibrate(graph, &calibration_samples(cfg, graph)?).map_err(CliError::module)?)
    } else {
        None
    };
    quantize_model(graph, &cfg.quantization_scheme(), stats.as_ref()).map_err(CliError::module)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::Module(format!("{}: {e}", dir.display())))
}

fn inspect(path: &Path) -> Result<()> {
    let model_path = if path.extension().is_some_and(|e| e == "toml") {
        load_config(path)?.model
    } else {
        path.to_path_buf()
    };
    let graph = load_graph(&model_path)?;
    let report = validate(&graph);
    for v in &report.violations {
        eprintln!("violation: {v}");
    }
    let order = topo_order(&graph).map_err(CliError::module)?;
    let shapes = infer_shapes(&graph).map_err(CliError::module)?;
    println!("{:<24} {:<10} {:>10} {:>8}  inputs", "node", "kind", "shape", "params");
    for id in &order {
        let node = &graph.nodes[id];
        let s = shapes[id];
        println!(
            "{:<24} {:<10} {:>10} {:>8}  {}",
            id,
            node.kind().name(),
            format!("{}x{}", s.channels, s.samples),
            node.layer.parameter_count(),
            node.inputs.join(", ")
        );
    }
    println!("output: {}", graph.output);
    println!("parameters: {}", graph.parameter_count());
    Ok(())
}

fn transform(cfg: &ExperimentConfig) -> Result<()> {
    let graph = transformed(cfg)?;
    create_dir(&cfg.output_dir)?;
    let path = cfg.output_dir.join("model.json");
    fs::write(&path, save_model_string(&graph)).map_err(CliError::module)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn quantize(cfg: &ExperimentConfig) -> Result<()> {
    let qm = quantized(cfg, &transformed(cfg)?)?;
    create_dir(&cfg.output_dir)?;
    let files = qm.write_archive(&cfg.output_dir).map_err(CliError::module)?;
    println!("{:<24} {:>5} {:>5} {:>5} {:>5}", "node", "n_x", "n_y", "n_w", "n_b");
    let opt = |v: Option<i32>| v.map_or("-".to_string(), |n| n.to_string());
    for id in &qm.order {
        let i = qm.info[id];
        println!("{:<24} {:>5} {:>5} {:>5} {:>5}", id, i.n_x, i.n_y, opt(i.n_w), opt(i.n_b));
    }
    println!("wrote {} files to {}", files.len(), cfg.output_dir.display());
    Ok(())
}

fn evaluate_cmd(cfg: &ExperimentConfig) -> Result<()> {
    let graph = transformed(cfg)?;
    let data = dataset(cfg, &graph)?
        .ok_or_else(|| ConfigError::Invalid("evaluate needs `dataset`".into()))?;
    let qm = quantized(cfg, &graph)?;
    let float = evaluate(Executable::Float(&graph), &data, None).map_err(CliError::module)?;
    println!("samples: {}", data.inputs.len());
    println!("{:<12} accuracy {:.4}", "float", float.accuracy);
    for (label, exe) in [
        ("fake-quant", Executable::FakeQuant(&qm)),
        ("fixed", Executable::Fixed(&qm)),
    ] {
        let m = evaluate(exe, &data, Some(&float.outputs)).map_err(CliError::module)?;
        println!(
            "{:<12} accuracy {:.4}  mse {:.6e}",
            label,
            m.accuracy,
            m.mse.unwrap_or(0.0)
        );
    }
    let mut wrapped = 0;
    for x in &data.inputs {
        let fx = FixedTensor::quantize(qm.input_format(), vec![x.shape.channels, x.shape.samples], &x.data);
        wrapped += (run_instrumented(&qm, &fx).map_err(CliError::module)?.total_wraps() > 0) as usize;
    }
    if wrapped > 0 {
        eprintln!(
            "warning: the {}-bit accumulator wrapped on {wrapped} of {} samples",
            long_bits(qm.width),
            data.inputs.len()
        );
    }
    Ok(())
}

fn codegen(cfg: &ExperimentConfig, float: Option<FloatArg>, harness: bool) -> Result<()> {
    let graph = transformed(cfg)?;
    let shapes = infer_shapes(&graph).map_err(CliError::module)?;
    let plan = plan_buffers(&graph, &shapes).map_err(CliError::module)?;
    let qm;
    let model = match float {
        Some(FloatArg::F32) => Model::Float(&graph, FloatType::F32),
        Some(FloatArg::F64) => Model::Float(&graph, FloatType::F64),
        None => {
            qm = quantized(cfg, &graph)?;
            Model::Fixed(&qm)
        }
    };
    let mut bundle = emit(model, &plan).map_err(CliError::module)?;
    if harness {
        bundle.files.insert("main.c".into(), harness_main(&model));
    }
    let dir = cfg.output_dir.join("c");
    let written = bundle.write_to(&dir).map_err(CliError::module)?;
    println!("wrote {} files to {}", written.len(), dir.display());
    Ok(())
}

fn estimate(cfg: &ExperimentConfig, float: bool, json: bool) -> Result<()> {
    let graph = transformed(cfg)?;
    let precision = if float {
        Precision::Float32
    } else {
        Precision::Fixed(cfg.scheme.width)
    };
    let report = cost_report(&graph, precision).map_err(CliError::module)?;
    if json {
        println!("{}", serde_json::to_string_pretty(&report.to_json()).map_err(CliError::module)?);
    } else {
        println!("{report}");
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Inspect { path } => inspect(&path),
        Command::Transform { config } => transform(&load_config(&config)?),
        Command::Quantize { config } => quantize(&load_config(&config)?),
        Command::Evaluate { config } => evaluate_cmd(&load_config(&config)?),
        Command::Codegen {
            config,
            float,
            harness,
        } => codegen(&load_config(&config)?, float, harness),
        Command::Estimate { config, float, json } => estimate(&load_config(&config)?, float, json),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
