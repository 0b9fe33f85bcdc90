//! Interpreter for affine programs.
//!
//! The program is first compiled to a flat form: buffers resolve to storage
//! slots (views share their base's slot), scalars to register slots and index
//! expressions to linear forms over an induction-variable array.

use std::fmt;

use thiserror::Error;

use crate::loops::{AffineExpr, BinaryOp, BufferKind, Scalar, Stmt, UnaryOp};
use crate::lower::{AffIv, AffineProgram, AffineStmt};
use crate::tensor::{strides, DType, TensorData, TensorValue};

/// Set to `1` to turn reads of never-written elements into errors.
pub const DEBUG_ENV: &str = "LOOMC_DEBUG";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ExecOptions {
    /// Track element initialization; release mode reads zeros instead.
    pub debug: bool,
}

impl ExecOptions {
    pub fn from_env() -> Self {
        ExecOptions {
            debug: std::env::var(DEBUG_ENV).is_ok_and(|v| v == "1"),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ExecError {
    #[error("expected {expected} inputs, got {actual}")]
    ArityMismatch { expected: usize, actual: usize },
    #[error("input {index}: expected {expected}, got {actual}")]
    TypeMismatch {
        index: usize,
        expected: String,
        actual: String,
    },
    #[error("read of uninitialized element {index:?} of buffer {buffer}")]
    UninitializedRead { buffer: u32, index: Vec<i64> },
    #[error("index {index:?} out of bounds for buffer {buffer} of shape {dims:?}")]
    OutOfBounds {
        buffer: u32,
        index: Vec<i64>,
        dims: Vec<usize>,
    },
    #[error("scalar type error: {0}")]
    ScalarType(String),
    #[error("malformed program: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Val {
    F(f32),
    I(i64),
    B(bool),
}

impl Val {
    fn ty(self) -> &'static str {
        match self {
            Val::F(_) => "f32",
            Val::I(_) => "i64",
            Val::B(_) => "i1",
        }
    }
}

/// `c + Σ k·iv`, over the interpreter's induction-variable array.
#[derive(Debug, Clone)]
struct Lin {
    c: i64,
    terms: Vec<(usize, i64)>,
}

impl Lin {
    fn new(e: &AffineExpr<AffIv>) -> Self {
        Lin {
            c: e.constant,
            terms: e.terms.iter().map(|(v, k)| (v.0 as usize, *k)).collect(),
        }
    }

    #[inline]
    fn eval(&self, ivs: &[i64]) -> i64 {
        self.terms.iter().fold(self.c, |acc, (v, k)| acc + k * ivs[*v])
    }
}

#[derive(Debug)]
struct Access {
    buffer: u32,
    slot: usize,
    dims: Vec<usize>,
    strides: Vec<usize>,
    index: Vec<Lin>,
}

#[derive(Debug)]
enum Instr {
    Load {
        dst: usize,
        at: Access,
    },
    Store {
        src: usize,
        at: Access,
    },
    Const {
        dst: usize,
        val: Val,
    },
    Unary {
        dst: usize,
        op: UnaryOp,
        x: usize,
    },
    Binary {
        dst: usize,
        op: BinaryOp,
        a: usize,
        b: usize,
    },
    Select {
        dst: usize,
        c: usize,
        t: usize,
        f: usize,
    },
    For {
        iv: usize,
        lower: Vec<Lin>,
        upper: Vec<Lin>,
        step: i64,
        body: Vec<Instr>,
    },
}

struct Slot {
    data: TensorData,
    init: Option<Vec<bool>>,
}

struct Machine {
    slots: Vec<Slot>,
    ivs: Vec<i64>,
    regs: Vec<Val>,
}

fn slot_of(p: &AffineProgram, mut b: usize) -> usize {
    while let BufferKind::View(base) = &p.buffers[b].kind {
        b = base.index();
    }
    b
}

fn compile(p: &AffineProgram, stmts: &[AffineStmt]) -> Result<Vec<Instr>, ExecError> {
    let access = |buffer: crate::loops::BufferId, index: &[AffineExpr<AffIv>]| -> Result<Access, ExecError> {
        let decl = p
            .buffers
            .get(buffer.index())
            .ok_or_else(|| ExecError::Malformed(format!("unknown buffer {}", buffer.0)))?;
        if decl.dims.len() != index.len() {
            return Err(ExecError::Malformed(format!(
                "{} indices for rank-{} buffer {}",
                index.len(),
                decl.dims.len(),
                buffer.0
            )));
        }
        Ok(Access {
            buffer: buffer.0,
            slot: slot_of(p, buffer.index()),
            dims: decl.dims.clone(),
            strides: strides(&decl.dims),
            index: index.iter().map(Lin::new).collect(),
        })
    };
    let r = |s: crate::loops::ScalarId| s.0 as usize;
    stmts
        .iter()
        .map(|s| {
            Ok(match s {
                Stmt::Load { result, buffer, index } => Instr::Load {
                    dst: r(*result),
                    at: access(*buffer, index)?,
                },
                Stmt::Store { value, buffer, index } => Instr::Store {
                    src: r(*value),
                    at: access(*buffer, index)?,
                },
                Stmt::Const { result, value } => Instr::Const {
                    dst: r(*result),
                    val: match value {
                        Scalar::F32Bits(b) => Val::F(f32::from_bits(*b)),
                        Scalar::I64(v) => Val::I(*v),
                    },
                },
                Stmt::Unary { result, op, operand } => Instr::Unary {
                    dst: r(*result),
                    op: *op,
                    x: r(*operand),
                },
                Stmt::Binary { result, op, lhs, rhs } => Instr::Binary {
                    dst: r(*result),
                    op: *op,
                    a: r(*lhs),
                    b: r(*rhs),
                },
                Stmt::Select {
                    result,
                    cond,
                    on_true,
                    on_false,
                } => Instr::Select {
                    dst: r(*result),
                    c: r(*cond),
                    t: r(*on_true),
                    f: r(*on_false),
                },
                Stmt::For(l) => {
                    if l.lower.is_empty() || l.upper.is_empty() || l.step < 1 {
                        return Err(ExecError::Malformed(
                            "loop without bounds or with a non-positive step".into(),
                        ));
                    }
                    Instr::For {
                        iv: l.iv.0 as usize,
                        lower: l.lower.iter().map(Lin::new).collect(),
                        upper: l.upper.iter().map(Lin::new).collect(),
                        step: l.step,
                        body: compile(p, &l.body)?,
                    }
                }
            })
        })
        .collect()
}

fn loop_range(lower: &[Lin], upper: &[Lin], ivs: &[i64]) -> (i64, i64) {
    let lo = lower.iter().map(|l| l.eval(ivs)).max().unwrap_or(0);
    let hi = upper.iter().map(|u| u.eval(ivs)).min().unwrap_or(0);
    (lo, hi)
}

impl Machine {
    fn offset(&self, at: &Access) -> Result<usize, ExecError> {
        let mut off = 0usize;
        for (k, e) in at.index.iter().enumerate() {
            let i = e.eval(&self.ivs);
            if i < 0 || i as usize >= at.dims[k] {
                return Err(ExecError::OutOfBounds {
                    buffer: at.buffer,
                    index: at.index.iter().map(|e| e.eval(&self.ivs)).collect(),
                    dims: at.dims.clone(),
                });
            }
            off += i as usize * at.strides[k];
        }
        Ok(off)
    }

    fn run(&mut self, code: &[Instr]) -> Result<(), ExecError> {
        for ins in code {
            match ins {
                Instr::Load { dst, at } => {
                    let off = self.offset(at)?;
                    let slot = &self.slots[at.slot];
                    if let Some(init) = &slot.init {
                        if !init[off] {
                            return Err(ExecError::UninitializedRead {
                                buffer: at.buffer,
                                index: at.index.iter().map(|e| e.eval(&self.ivs)).collect(),
                            });
                        }
                    }
                    self.regs[*dst] = match &slot.data {
                        TensorData::F32(v) => Val::F(v[off]),
                        TensorData::I64(v) => Val::I(v[off]),
                    };
                }
                Instr::Store { src, at } => {
                    let off = self.offset(at)?;
                    let val = self.regs[*src];
                    let slot = &mut self.slots[at.slot];
                    match (&mut slot.data, val) {
                        (TensorData::F32(v), Val::F(x)) => v[off] = x,
                        (TensorData::I64(v), Val::I(x)) => v[off] = x,
                        (d, v) => {
                            return Err(ExecError::ScalarType(format!(
                                "cannot store {} into a {} buffer",
                                v.ty(),
                                d.dtype()
                            )))
                        }
                    }
                    if let Some(init) = &mut slot.init {
                        init[off] = true;
                    }
                }
                Instr::Const { dst, val } => self.regs[*dst] = *val,
                Instr::Unary { dst, op, x } => {
                    self.regs[*dst] = match (op, self.regs[*x]) {
                        (UnaryOp::Abs, Val::F(v)) => Val::F(v.abs()),
                        (UnaryOp::Exp, Val::F(v)) => Val::F(v.exp()),
                        (UnaryOp::Abs, Val::I(v)) => Val::I(v.wrapping_abs()),
                        (op, v) => return Err(ExecError::ScalarType(format!("{op:?} of {}", v.ty()))),
                    }
                }
                Instr::Binary { dst, op, a, b } => {
                    self.regs[*dst] = match (self.regs[*a], self.regs[*b]) {
                        (Val::F(x), Val::F(y)) => match op {
                            BinaryOp::Add => Val::F(x + y),
                            BinaryOp::Sub => Val::F(x - y),
                            BinaryOp::Mul => Val::F(x * y),
                            BinaryOp::Div => Val::F(x / y),
                            BinaryOp::Max => Val::F(x.max(y)),
                            BinaryOp::CmpGe => Val::B(x >= y),
                        },
                        (Val::I(x), Val::I(y)) => match op {
                            BinaryOp::Add => Val::I(x.wrapping_add(y)),
                            BinaryOp::Sub => Val::I(x.wrapping_sub(y)),
                            BinaryOp::Mul => Val::I(x.wrapping_mul(y)),
                            BinaryOp::Div => Val::I(
                                x.checked_div(y)
                                    .ok_or_else(|| ExecError::ScalarType("integer division by zero".into()))?,
                            ),
                            BinaryOp::Max => Val::I(x.max(y)),
                            BinaryOp::CmpGe => Val::B(x >= y),
                        },
                        (x, y) => return Err(ExecError::ScalarType(format!("{op:?} of {} and {}", x.ty(), y.ty()))),
                    }
                }
                Instr::Select { dst, c, t, f } => {
                    let Val::B(cond) = self.regs[*c] else {
                        return Err(ExecError::ScalarType("select condition is not i1".into()));
                    };
                    self.regs[*dst] = if cond { self.regs[*t] } else { self.regs[*f] };
                }
                Instr::For {
                    iv,
                    lower,
                    upper,
                    step,
                    body,
                } => {
                    let (lo, hi) = loop_range(lower, upper, &self.ivs);
                    let mut v = lo;
                    while v < hi {
                        self.ivs[*iv] = v;
                        self.run(body)?;
                        v += step;
                    }
                }
            }
        }
        Ok(())
    }
}

fn describe(dtype: DType, dims: &[usize]) -> String {
    let mut s = String::from("tensor<");
    for d in dims {
        s.push_str(&format!("{d}x"));
    }
    s.push_str(dtype.mnemonic());
    s.push('>');
    s
}

/// Runs the program's entry function on `inputs`.
pub fn interpret(p: &AffineProgram, inputs: &[TensorValue], opts: &ExecOptions) -> Result<Vec<TensorValue>, ExecError> {
    if inputs.len() != p.inputs.len() {
        return Err(ExecError::ArityMismatch {
            expected: p.inputs.len(),
            actual: inputs.len(),
        });
    }
    let mut slots: Vec<Slot> = p
        .buffers
        .iter()
        .map(|decl| {
            let n = decl.elem_count();
            match &decl.kind {
                BufferKind::Constant(v) => Slot {
                    data: v.data().clone(),
                    init: opts.debug.then(|| vec![true; n]),
                },
                // Views never own storage.
                BufferKind::View(_) => Slot {
                    data: TensorData::zeros(decl.dtype, 0),
                    init: None,
                },
                _ => Slot {
                    data: TensorData::zeros(decl.dtype, n),
                    init: opts.debug.then(|| vec![false; n]),
                },
            }
        })
        .collect();
    for (i, (b, t)) in p.inputs.iter().zip(inputs).enumerate() {
        let decl = &p.buffers[b.index()];
        if decl.dtype != t.dtype() || decl.dims != t.dims() {
            return Err(ExecError::TypeMismatch {
                index: i,
                expected: describe(decl.dtype, &decl.dims),
                actual: describe(t.dtype(), t.dims()),
            });
        }
        let slot = &mut slots[b.index()];
        slot.data = t.data().clone();
        if let Some(init) = &mut slot.init {
            init.fill(true);
        }
    }
    let code = compile(p, &p.body)?;
    let mut m = Machine {
        slots,
        ivs: vec![0; p.num_ivs as usize],
        regs: vec![Val::F(0.0); p.num_scalars as usize],
    };
    m.run(&code)?;
    p.results
        .iter()
        .map(|b| {
            let decl = &p.buffers[b.index()];
            let slot = &m.slots[slot_of(p, b.index())];
            if let Some(init) = &slot.init {
                if let Some(off) = init.iter().position(|x| !x) {
                    return Err(ExecError::UninitializedRead {
                        buffer: b.0,
                        index: crate::tensor::unravel_index(&decl.dims, off)
                            .into_iter()
                            .map(|i| i as i64)
                            .collect(),
                    });
                }
            }
            Ok(TensorValue::new(decl.dims.clone(), slot.data.clone()).expect("buffer length matches its dims"))
        })
        .collect()
}

/// How often one loop ran.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TripCount {
    pub iv: AffIv,
    pub depth: usize,
    /// Times the loop was entered.
    pub entries: u64,
    /// Iterations summed over all entries.
    pub total: u64,
    pub min_per_entry: u64,
    pub max_per_entry: u64,
    /// No loop nested inside.
    pub innermost: bool,
}

impl fmt::Display for TripCount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:indent$}loop {}: entered {}, {} iterations",
            "",
            self.iv.0,
            self.entries,
            self.total,
            indent = 2 * self.depth
        )?;
        if self.entries > 0 && self.min_per_entry == self.max_per_entry {
            write!(f, " ({} per entry)", self.min_per_entry)
        } else {
            write!(f, " ({}..{} per entry)", self.min_per_entry, self.max_per_entry)
        }
    }
}

/// Trip counts for every loop of `p`, in program order, found by walking the
/// loop bounds without executing any statement.
pub fn trip_count_report(p: &AffineProgram) -> Vec<TripCount> {
    struct Walk {
        ivs: Vec<i64>,
        out: Vec<TripCount>,
    }
    fn loops(stmts: &[AffineStmt]) -> Vec<&crate::loops::ForLoop<AffIv>> {
        stmts
            .iter()
            .filter_map(|s| match s {
                Stmt::For(l) => Some(l),
                _ => None,
            })
            .collect()
    }
    fn register(stmts: &[AffineStmt], depth: usize, w: &mut Walk) {
        for l in loops(stmts) {
            w.out.push(TripCount {
                iv: l.iv,
                depth,
                entries: 0,
                total: 0,
                min_per_entry: u64::MAX,
                max_per_entry: 0,
                innermost: loops(&l.body).is_empty(),
            });
            register(&l.body, depth + 1, w);
        }
    }
    fn walk(stmts: &[AffineStmt], w: &mut Walk) {
        for l in loops(stmts) {
            let lower: Vec<Lin> = l.lower.iter().map(Lin::new).collect();
            let upper: Vec<Lin> = l.upper.iter().map(Lin::new).collect();
            let (lo, hi) = loop_range(&lower, &upper, &w.ivs);
            let n = if hi > lo {
                ((hi - lo + l.step - 1) / l.step) as u64
            } else {
                0
            };
            let t = w.out.iter_mut().find(|t| t.iv == l.iv).expect("registered");
            t.entries += 1;
            t.total += n;
            t.min_per_entry = t.min_per_entry.min(n);
            t.max_per_entry = t.max_per_entry.max(n);
            let mut v = lo;
            while v < hi {
                w.ivs[l.iv.0 as usize] = v;
                walk(&l.body, w);
                v += l.step;
            }
        }
    }
    let mut w = Walk {
        ivs: vec![0; p.num_ivs as usize],
        out: Vec::new(),
    };
    register(&p.body, 0, &mut w);
    walk(&p.body, &mut w);
    for t in &mut w.out {
        if t.entries == 0 {
            t.min_per_entry = 0;
        }
    }
    w.out
}
