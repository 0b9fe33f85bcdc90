//! End-to-end driver: import → graph passes → loop level → affine level →
//! interpretation.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::{Duration, Instant};

use crate::exec::{interpret, ExecOptions};
use crate::graph::{lookup_op, print_graph, GraphModule};
use crate::import::import_model_file;
use crate::loops::{print_loop_module, verify_loop_module, LoopModule};
use crate::lower::{lower_graph_to_loops, lower_loops_to_affine, print_affine, AffineProgram};
use crate::passes::{PassPipeline, PipelineReport};
use crate::tensor::TensorValue;
use crate::Error;

/// `--tile=<Op>:<size>`: block every loop of each nest emitted for `op`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TileSpec {
    pub op: String,
    pub size: i64,
}

impl FromStr for TileSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (op, size) = s
            .split_once(':')
            .ok_or_else(|| format!("expected <Op>:<size>, got `{s}`"))?;
        let kind = lookup_op(op).ok_or_else(|| format!("unknown op `{op}`"))?;
        let size: i64 = size
            .parse()
            .map_err(|_| format!("tile size `{size}` is not an integer"))?;
        if size < 1 {
            return Err(format!("tile size must be at least 1, got {size}"));
        }
        Ok(TileSpec {
            op: kind.name().to_string(),
            size,
        })
    }
}

impl fmt::Display for TileSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.op, self.size)
    }
}

#[derive(Debug, Clone, Default)]
pub struct CompileOptions {
    pub passes: PassPipeline,
    pub tiles: Vec<TileSpec>,
}

/// Every intermediate form of one compilation.
#[derive(Debug, Clone)]
pub struct Compiled {
    pub imported: GraphModule,
    pub optimized: GraphModule,
    pub report: PipelineReport,
    pub loops: LoopModule,
    pub program: AffineProgram,
}

/// Which level `compile` prints.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Emit {
    Graph,
    GraphOpt,
    Loop,
    Affine,
    Plan,
}

impl FromStr for Emit {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "graph" => Emit::Graph,
            "graph-opt" => Emit::GraphOpt,
            "loop" => Emit::Loop,
            "affine" => Emit::Affine,
            "plan" => Emit::Plan,
            _ => return Err(format!("unknown level `{s}` (graph, graph-opt, loop, affine, plan)")),
        })
    }
}

/// Runs the graph passes and both lowerings, applying `opts.tiles` at the loop level.
pub fn compile_module(imported: GraphModule, opts: &CompileOptions) -> Result<Compiled, Error> {
    let mut optimized = imported.clone();
    let report = opts.passes.run(&mut optimized)?;
    let mut loops = lower_graph_to_loops(&optimized)?;
    for t in &opts.tiles {
        loops.tile_iterates(&t.op, t.size)?;
    }
    let diags = verify_loop_module(&loops);
    if !diags.is_empty() {
        return Err(Error::InvalidLoopModule(diags));
    }
    let program = lower_loops_to_affine(&loops)?;
    Ok(Compiled {
        imported,
        optimized,
        report,
        loops,
        program,
    })
}

pub fn compile_file(path: &Path, opts: &CompileOptions) -> Result<Compiled, Error> {
    compile_module(import_model_file(path)?, opts)
}

impl Compiled {
    pub fn emit(&self, level: Emit) -> String {
        match level {
            Emit::Graph => print_graph(&self.imported),
            Emit::GraphOpt => print_graph(&self.optimized),
            Emit::Loop => print_loop_module(&self.loops),
            Emit::Affine => print_affine(&self.program),
            Emit::Plan => plan_to_json(&self.program),
        }
    }
}

pub fn plan_to_json(p: &AffineProgram) -> String {
    let mut s = serde_json::to_string_pretty(p).expect("affine programs always serialize");
    s.push('\n');
    s
}

pub fn plan_from_json(text: &str) -> Result<AffineProgram, Error> {
    Ok(serde_json::from_str(text)?)
}

/// Outputs of one run, with wall-clock timings.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub outputs: Vec<TensorValue>,
    pub compile_time: Duration,
    pub run_time: Duration,
}

/// Loads `path` as a serialized plan if it is one, else compiles it as a model.
pub fn load_program(path: &Path, opts: &CompileOptions) -> Result<(AffineProgram, Option<Compiled>), Error> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let json: serde_json::Value = serde_json::from_str(&text)?;
    if json.get("body").is_some() && json.get("buffers").is_some() {
        return Ok((serde_json::from_value(json)?, None));
    }
    let c = compile_file(path, opts)?;
    Ok((c.program.clone(), Some(c)))
}

pub fn run_program(
    p: &AffineProgram,
    inputs: &[TensorValue],
    exec: &ExecOptions,
) -> Result<(Vec<TensorValue>, Duration), Error> {
    let start = Instant::now();
    let outputs = interpret(p, inputs, exec)?;
    Ok((outputs, start.elapsed()))
}

/// Compiles `path` (model or plan) and runs it on `inputs`.
pub fn run_file(
    path: &Path,
    inputs: &[TensorValue],
    opts: &CompileOptions,
    exec: &ExecOptions,
) -> Result<RunResult, Error> {
    let start = Instant::now();
    let (program, _) = load_program(path, opts)?;
    let compile_time = start.elapsed();
    let (outputs, run_time) = run_program(&program, inputs, exec)?;
    Ok(RunResult {
        outputs,
        compile_time,
        run_time,
    })
}

/// Largest elementwise `|a - b|` over matching outputs; `None` if shapes differ.
pub fn max_abs_diff(a: &[TensorValue], b: &[TensorValue]) -> Option<f64> {
    if a.len() != b.len() {
        return None;
    }
    let mut m = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        if x.dims() != y.dims() || x.dtype() != y.dtype() {
            return None;
        }
        match (x.as_f32(), y.as_f32(), x.as_i64(), y.as_i64()) {
            (Some(p), Some(q), _, _) => {
                for (u, v) in p.iter().zip(q) {
                    let d = if u.to_bits() == v.to_bits() {
                        0.0
                    } else {
                        (*u as f64 - *v as f64).abs()
                    };
                    m = m.max(if d.is_nan() { f64::INFINITY } else { d });
                }
            }
            (_, _, Some(p), Some(q)) => {
                for (u, v) in p.iter().zip(q) {
                    m = m.max((*u as f64 - *v as f64).abs());
                }
            }
            _ => return None,
        }
    }
    Some(m)
}

/// Largest `|x|` over all f32 elements.
pub fn max_abs(ts: &[TensorValue]) -> f64 {
    ts.iter()
        .filter_map(|t| t.as_f32())
        .flatten()
        .fold(0.0f64, |m, v| m.max((*v as f64).abs()))
}
