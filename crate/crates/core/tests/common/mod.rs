//! Builders shared by the integration tests and the acceptance harness.
#![allow(dead_code)]

use std::path::Path;

use itertools::Itertools;
use loomc::exec::{interpret, ExecOptions};
use loomc::graph::{AttributeValue, Attributes, GraphFunction, GraphModule, OpKind, MAIN_GRAPH};
use loomc::import::{export_model, import_model_file, MANIFEST_FILE};
use loomc::loops::schedule::enumerate_originals;
use loomc::loops::{expand_iterate, permute, verify_loop_module, LoopError, LoopModule};
use loomc::pipeline::{compile_module, CompileOptions};
use loomc::tensor::{TensorType, TensorValue};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_f32(rng: &mut ChaCha8Rng, dims: &[usize]) -> TensorValue {
    let n: usize = dims.iter().product();
    let data = (0..n).map(|_| rng.random_range(-4.0f32..4.0)).collect();
    TensorValue::from_f32(dims, data).unwrap()
}

fn random_dims(rng: &mut ChaCha8Rng, min_rank: usize, max_rank: usize) -> Vec<usize> {
    let rank = rng.random_range(min_rank..=max_rank);
    (0..rank).map(|_| rng.random_range(1..=8)).collect()
}

pub fn attrs(items: Vec<(&str, AttributeValue)>) -> Attributes {
    items.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

/// One op applied to graph inputs (plus constant operands where the op needs them).
pub struct Instance {
    pub module: GraphModule,
    pub inputs: Vec<TensorValue>,
}

struct Builder {
    f: GraphFunction,
    inputs: Vec<TensorValue>,
}

impl Builder {
    fn new() -> Self {
        Builder {
            f: GraphFunction::new(MAIN_GRAPH),
            inputs: Vec::new(),
        }
    }

    fn input(&mut self, t: TensorValue) -> loomc::graph::ValueId {
        let v = self.f.add_input(TensorType::of_static(t.dtype(), t.dims()));
        self.inputs.push(t);
        v
    }

    fn finish(mut self, kind: OpKind, operands: Vec<loomc::graph::ValueId>, a: Attributes) -> Instance {
        let r = self.f.push_op(kind, operands, a);
        self.f.results.push(r);
        Instance {
            module: GraphModule::from_function(self.f),
            inputs: self.inputs,
        }
    }
}

/// A dims list `b` that broadcasts onto `out`: a suffix with some dims set to 1.
fn broadcast_operand(rng: &mut ChaCha8Rng, out: &[usize]) -> Vec<usize> {
    let keep = rng.random_range(0..=out.len());
    out[out.len() - keep..]
        .iter()
        .map(|&d| if rng.random_bool(0.3) { 1 } else { d })
        .collect()
}

/// Window geometry (kernel, stride, pad) with a non-empty output along one axis.
fn window_axis(rng: &mut ChaCha8Rng, extent: usize) -> (usize, usize, usize, usize) {
    let pad_lo = rng.random_range(0..=2);
    let pad_hi = rng.random_range(0..=2);
    let kernel = rng.random_range(1..=(extent + pad_lo + pad_hi).min(5));
    let stride = rng.random_range(1..=3);
    (kernel, stride, pad_lo, pad_hi)
}

/// A random well-formed single-op instance with static dims of at most 8.
pub fn random_instance(kind: OpKind, rng: &mut ChaCha8Rng) -> Instance {
    let mut b = Builder::new();
    match kind {
        OpKind::Add | OpKind::Mul | OpKind::Sub => {
            let out = random_dims(rng, 0, 4);
            let other = broadcast_operand(rng, &out);
            let (x, y) = if rng.random_bool(0.5) {
                (out, other)
            } else {
                (other, out)
            };
            let x = b.input(random_f32(rng, &x));
            let y = b.input(random_f32(rng, &y));
            b.finish(kind, vec![x, y], Attributes::new())
        }
        OpKind::Abs | OpKind::Exp | OpKind::Relu | OpKind::Identity => {
            let d = random_dims(rng, 0, 4);
            let x = b.input(random_f32(rng, &d));
            b.finish(kind, vec![x], Attributes::new())
        }
        OpKind::LeakyRelu => {
            let d = random_dims(rng, 0, 4);
            let x = b.input(random_f32(rng, &d));
            let alpha = rng.random_range(0.0f32..1.0);
            b.finish(kind, vec![x], attrs(vec![("alpha", AttributeValue::Float(alpha))]))
        }
        OpKind::MatMul | OpKind::Gemm => {
            let (m, k, n) = (
                rng.random_range(1..=8),
                rng.random_range(1..=8),
                rng.random_range(1..=8),
            );
            let x = b.input(random_f32(rng, &[m, k]));
            let y = b.input(random_f32(rng, &[k, n]));
            if kind == OpKind::MatMul {
                return b.finish(kind, vec![x, y], Attributes::new());
            }
            let mut ops = vec![x, y];
            if rng.random_bool(0.8) {
                let cd = broadcast_operand(rng, &[m, n]);
                ops.push(b.input(random_f32(rng, &cd)));
            }
            let a = attrs(vec![
                ("alpha", AttributeValue::Float(rng.random_range(-2.0f32..2.0))),
                ("beta", AttributeValue::Float(rng.random_range(-2.0f32..2.0))),
            ]);
            b.finish(kind, ops, a)
        }
        OpKind::Conv | OpKind::MaxPool => {
            let n = rng.random_range(1..=2);
            let c = rng.random_range(1..=4);
            let (h, w) = (rng.random_range(1..=8), rng.random_range(1..=8));
            let (kh, sh, pt, pb) = window_axis(rng, h);
            let (kw, sw, pl, pr) = window_axis(rng, w);
            let x = b.input(random_f32(rng, &[n, c, h, w]));
            let mut a = attrs(vec![
                ("strides", AttributeValue::Ints(vec![sh as i64, sw as i64])),
                (
                    "pads",
                    AttributeValue::Ints(vec![pt as i64, pl as i64, pb as i64, pr as i64]),
                ),
            ]);
            if kind == OpKind::MaxPool {
                // A window entirely inside the padding would read nothing.
                let (kh, kw) = (kh.max(pt + 1).max(pb + 1), kw.max(pl + 1).max(pr + 1));
                a.insert("kernel_shape".into(), AttributeValue::Ints(vec![kh as i64, kw as i64]));
                return b.finish(kind, vec![x], a);
            }
            let co = rng.random_range(1..=4);
            let wt = b.input(random_f32(rng, &[co, c, kh, kw]));
            let mut ops = vec![x, wt];
            if rng.random_bool(0.5) {
                ops.push(b.input(random_f32(rng, &[co])));
            }
            b.finish(kind, ops, a)
        }
        OpKind::ReduceSum | OpKind::ReduceL1 => {
            let d = random_dims(rng, 1, 4);
            let x = b.input(random_f32(rng, &d));
            let mut a = attrs(vec![("keepdims", AttributeValue::Int(rng.random_range(0..=1)))]);
            if rng.random_bool(0.7) {
                let r = d.len() as i64;
                let mut axes: Vec<i64> = (0..r).filter(|_| rng.random_bool(0.5)).collect();
                if axes.is_empty() {
                    axes.push(rng.random_range(0..r));
                }
                // Mix in negative spellings.
                for ax in &mut axes {
                    if rng.random_bool(0.3) {
                        *ax -= r;
                    }
                }
                a.insert("axes".into(), AttributeValue::Ints(axes));
            }
            b.finish(kind, vec![x], a)
        }
        OpKind::Reshape => {
            let d = random_dims(rng, 1, 4);
            let total: usize = d.iter().product();
            let mut target = Vec::new();
            let mut rest = total;
            while rest > 1 && target.len() < 3 {
                let divs: Vec<usize> = (2..=rest).filter(|k| rest.is_multiple_of(*k)).collect();
                let k = divs[rng.random_range(0..divs.len())];
                target.push(k as i64);
                rest /= k;
            }
            target.push(rest as i64);
            if rng.random_bool(0.3) {
                let i = rng.random_range(0..target.len());
                target[i] = -1;
            }
            let x = b.input(random_f32(rng, &d));
            let shape = TensorValue::from_i64(&[target.len()], target).unwrap();
            let s = b.f.push_constant(shape);
            b.finish(kind, vec![x, s], Attributes::new())
        }
        OpKind::Constant => panic!("Constant has no operands to randomize"),
    }
}

/// The fifteen ops that take operands.
pub fn operand_ops() -> Vec<OpKind> {
    loomc::graph::registry::all_ops()
        .filter(|k| *k != OpKind::Constant)
        .collect()
}

/// Writes `module` as a model directory and imports it back.
pub fn through_files(module: &GraphModule, dir: &Path) -> GraphModule {
    export_model(module, dir).unwrap();
    import_model_file(&dir.join(MANIFEST_FILE)).unwrap()
}

/// Default pipeline plus interpretation with uninitialized-read checking.
pub fn compile_and_run(module: GraphModule, inputs: &[TensorValue], opts: &CompileOptions) -> Vec<TensorValue> {
    let c = compile_module(module, opts).unwrap();
    interpret(&c.program, inputs, &ExecOptions { debug: true }).unwrap()
}

/// `|a - b| <= rel * max(1, |b|)` elementwise with equal shapes.
pub fn close(a: &TensorValue, b: &TensorValue, rel: f32) -> bool {
    if a.dims() != b.dims() || a.dtype() != b.dtype() {
        return false;
    }
    match (a.as_f32(), b.as_f32()) {
        (Some(x), Some(y)) => x
            .iter()
            .zip(y)
            .all(|(u, v)| u.to_bits() == v.to_bits() || (u - v).abs() <= rel * v.abs().max(1.0)),
        _ => a == b,
    }
}

/// `x + y` over `n×m` inputs.
pub fn add_nest(n: usize, m: usize) -> GraphModule {
    let mut f = GraphFunction::new(MAIN_GRAPH);
    let x = f.add_input(TensorType::of_static(loomc::tensor::DType::F32, &[n, m]));
    let y = f.add_input(TensorType::of_static(loomc::tensor::DType::F32, &[n, m]));
    let r = f.push_op(OpKind::Add, vec![x, y], Attributes::new());
    f.results.push(r);
    GraphModule::from_function(f)
}

/// One schedule step applied to the scheduled-loop list of an iterate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SchedOp {
    /// Replace the loop at `pos` by its tile loop followed by its intra-tile loop.
    Block { pos: usize, tile: i64 },
    /// Reorder the list: new `k` is old `perm[k]`.
    Permute(Vec<usize>),
    /// Replace the loop at `pos` by its skew along original loop `along`.
    Skew { pos: usize, along: usize },
}

/// Applies `ops` to iterate `it` of `lm`. Errors only for handle-level
/// misuse; ill-ordered schedules are left for verification to reject.
pub fn apply_schedule(lm: &mut LoopModule, it: usize, ops: &[SchedOp]) -> Result<(), LoopError> {
    let original = lm.iterates[it].original.clone();
    let mut sched = lm.iterates[it].scheduled.clone();
    for op in ops {
        match op {
            SchedOp::Block { pos, tile } => {
                let (o, i) = lm.block(sched[*pos], *tile)?;
                sched.splice(*pos..=*pos, [o, i]);
            }
            SchedOp::Permute(perm) => sched = permute(&sched, perm)?,
            SchedOp::Skew { pos, along } => sched[*pos] = lm.skew(sched[*pos], original[*along], 1)?,
        }
    }
    lm.iterates[it].scheduled = sched;
    Ok(())
}

/// Every step from {block 2, block 3, permute, skew 1} that applies to a
/// list of `len` scheduled loops over `originals` original loops.
pub fn schedule_steps(len: usize, originals: usize) -> Vec<SchedOp> {
    let mut out = Vec::new();
    for pos in 0..len {
        for tile in [2, 3] {
            out.push(SchedOp::Block { pos, tile });
        }
        for along in 0..originals {
            out.push(SchedOp::Skew { pos, along });
        }
    }
    for perm in (0..len).permutations(len) {
        if perm.iter().enumerate().any(|(k, p)| k != *p) {
            out.push(SchedOp::Permute(perm));
        }
    }
    out
}

/// All step sequences of length `1..=depth` starting from `len` loops.
pub fn schedule_compositions(len: usize, originals: usize, depth: usize) -> Vec<Vec<SchedOp>> {
    let mut all = Vec::new();
    let mut frontier: Vec<(Vec<SchedOp>, usize)> = vec![(Vec::new(), len)];
    for _ in 0..depth {
        let mut next = Vec::new();
        for (ops, n) in &frontier {
            for step in schedule_steps(*n, originals) {
                let grown = n + matches!(step, SchedOp::Block { .. }) as usize;
                let mut ops = ops.clone();
                ops.push(step);
                all.push(ops.clone());
                next.push((ops, grown));
            }
        }
        frontier = next;
    }
    all
}

/// Original index tuples the scheduled nest of iterate `it` visits, sorted,
/// or the verification failure that rejects the schedule.
pub fn visited_tuples(lm: &LoopModule, it: usize) -> Result<Vec<Vec<i64>>, String> {
    let diags = verify_loop_module(lm);
    if !diags.is_empty() {
        return Err(diags.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; "));
    }
    let ex = expand_iterate(lm, &lm.iterates[it]).map_err(|e| e.to_string())?;
    let mut t = enumerate_originals(&ex);
    t.sort();
    Ok(t)
}

/// Every tuple of the `n×m` rectangle, sorted.
pub fn rectangle(n: i64, m: i64) -> Vec<Vec<i64>> {
    (0..n).flat_map(|i| (0..m).map(move |j| vec![i, j])).collect()
}
