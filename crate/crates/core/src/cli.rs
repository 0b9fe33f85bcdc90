//! Command-line driver: `loomc compile` and `loomc run`.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::exec::ExecOptions;
use crate::graph::reference_eval;
use crate::import::{import_model_file, read_payload_file, write_payload_file};
use crate::passes::{PassId, PassPipeline};
use crate::pipeline::{compile_file, load_program, max_abs, max_abs_diff, run_program, CompileOptions, Emit, TileSpec};
use crate::tensor::TensorValue;

pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "loomc",
    version,
    about = "Compile and run ONNX-style models through graph, loop and affine levels"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print the model at one level of the pipeline.
    Compile {
        model: PathBuf,
        /// graph, graph-opt, loop, affine or plan
        #[arg(long, default_value = "affine")]
        emit: Emit,
        /// Write to a file instead of stdout.
        #[arg(short = 'o', long)]
        output: Option<PathBuf>,
        #[command(flatten)]
        flags: PipelineFlags,
    },
    /// Compile a model (or load a plan) and run it on payload inputs.
    Run {
        model: PathBuf,
        inputs: Vec<PathBuf>,
        /// Also evaluate the graph directly and report the largest difference.
        #[arg(long)]
        verify: bool,
        /// Directory for `output_<i>.tensor` files.
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        #[command(flatten)]
        flags: PipelineFlags,
    },
}

#[derive(Debug, Args)]
struct PipelineFlags {
    #[arg(long)]
    no_decompose: bool,
    #[arg(long)]
    no_rewrite: bool,
    #[arg(long)]
    no_constprop: bool,
    /// Block the loops of every nest of an op kind, e.g. `MatMul:2`. Repeatable.
    #[arg(long = "tile", value_name = "OP:SIZE")]
    tiles: Vec<TileSpec>,
}

impl PipelineFlags {
    fn options(&self) -> CompileOptions {
        let mut passes = PassPipeline::default();
        for (off, id) in [
            (self.no_decompose, PassId::Decompose),
            (self.no_rewrite, PassId::Rewrite),
            (self.no_constprop, PassId::ConstProp),
        ] {
            if off {
                passes = passes.disable(id);
            }
        }
        CompileOptions {
            passes,
            tiles: self.tiles.clone(),
        }
    }
}

/// Relative tolerance used by `run --verify`.
pub const VERIFY_TOLERANCE: f64 = 1e-5;

fn compile_cmd(
    model: &Path,
    emit: Emit,
    output: Option<&Path>,
    flags: &PipelineFlags,
    out: &mut dyn Write,
) -> Result<(), String> {
    let c = compile_file(model, &flags.options()).map_err(|e| e.to_string())?;
    let text = c.emit(emit);
    match output {
        Some(p) => std::fs::write(p, text).map_err(|e| format!("{}: {e}", p.display())),
        None => out.write_all(text.as_bytes()).map_err(|e| e.to_string()),
    }
}

fn run_cmd(
    model: &Path,
    inputs: &[PathBuf],
    verify: bool,
    out_dir: &Path,
    flags: &PipelineFlags,
    out: &mut dyn Write,
) -> Result<(), String> {
    let inputs: Vec<TensorValue> = inputs
        .iter()
        .map(|p| read_payload_file(p).map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    let start = std::time::Instant::now();
    let (program, _) = load_program(model, &flags.options()).map_err(|e| e.to_string())?;
    let compile_time = start.elapsed();
    let (outputs, run_time) = run_program(&program, &inputs, &ExecOptions::from_env()).map_err(|e| e.to_string())?;
    let w = |r: std::io::Result<()>| r.map_err(|e| e.to_string());
    w(writeln!(out, "compile: {:.3} ms", compile_time.as_secs_f64() * 1e3))?;
    w(writeln!(out, "run: {:.3} ms", run_time.as_secs_f64() * 1e3))?;
    for (i, t) in outputs.iter().enumerate() {
        let path = out_dir.join(format!("output_{i}.tensor"));
        write_payload_file(&path, t).map_err(|e| e.to_string())?;
        w(writeln!(
            out,
            "output {i}: {} -> {}",
            crate::graph::print_tensor_type(&t.tensor_type()),
            path.display()
        ))?;
    }
    if verify {
        let module = import_model_file(model).map_err(|e| format!("--verify needs a model file: {e}"))?;
        let reference = reference_eval(&module, &inputs).map_err(|e| e.to_string())?;
        let diff = max_abs_diff(&outputs, &reference).ok_or("outputs and reference differ in shape")?;
        let bound = VERIFY_TOLERANCE * (1.0 + max_abs(&reference));
        w(writeln!(out, "verify: max abs diff {diff:e} (bound {bound:e})"))?;
        if diff > bound {
            return Err(format!("verification failed: max abs diff {diff:e} exceeds {bound:e}"));
        }
    }
    Ok(())
}

/// Parses `args` (including the program name) and runs one command.
/// Returns the process exit code.
pub fn run_cli<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                err.write_all(text.as_bytes())
            } else {
                out.write_all(text.as_bytes())
            };
            return code;
        }
    };
    let result = match &cli.command {
        Command::Compile {
            model,
            emit,
            output,
            flags,
        } => compile_cmd(model, *emit, output.as_deref(), flags, out),
        Command::Run {
            model,
            inputs,
            verify,
            out_dir,
            flags,
        } => run_cmd(model, inputs, *verify, out_dir, flags, out),
    };
    match result {
        Ok(()) => 0,
        Err(msg) => {
            let _ = writeln!(err, "error: {msg}");
            EXIT_FAILURE
        }
    }
}
