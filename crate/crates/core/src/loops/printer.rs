//! MLIR-flavoured text for the loop level (`krnl.iterate`) and, through the
//! shared [`Printer`], for the affine level (`affine.for`).

use std::collections::HashMap;
use std::fmt::Write;
use std::hash::Hash;

use crate::graph::print_tensor_type;
use crate::graph::{print_dense, EntryPoint};
use crate::tensor::DType;

use super::{AffineExpr, BinaryOp, BufferDecl, BufferId, BufferKind, ForLoop, Iv, LoopId, LoopModule, LoopOrigin};
use super::{Scalar, ScalarId, Stmt, UnaryOp};

#[derive(Clone, Copy, PartialEq, Eq)]
enum ScalarTy {
    F32,
    I64,
    I1,
}

impl ScalarTy {
    fn of(d: DType) -> Self {
        match d {
            DType::F32 => ScalarTy::F32,
            DType::I64 => ScalarTy::I64,
        }
    }

    fn name(self) -> &'static str {
        match self {
            ScalarTy::F32 => "f32",
            ScalarTy::I64 => "i64",
            ScalarTy::I1 => "i1",
        }
    }
}

/// Statement printer with SSA naming and hoisted affine maps.
pub(crate) struct Printer<'a, V> {
    buffers: &'a [BufferDecl],
    buffer_names: Vec<String>,
    ivs: HashMap<V, String>,
    scalars: HashMap<ScalarId, (String, ScalarTy)>,
    next_ssa: usize,
    next_arg: usize,
    maps: Vec<String>,
    pub out: String,
}

fn f32_literal(v: f32) -> String {
    if v.is_finite() {
        format!("{v:?}")
    } else {
        format!("0x{:08X}", v.to_bits())
    }
}

impl<'a, V: Copy + Eq + Hash> Printer<'a, V> {
    pub fn new(buffers: &'a [BufferDecl], num_inputs: usize) -> Self {
        Printer {
            buffers,
            buffer_names: vec![String::new(); buffers.len()],
            ivs: HashMap::new(),
            scalars: HashMap::new(),
            next_ssa: 0,
            next_arg: num_inputs,
            maps: Vec::new(),
            out: String::new(),
        }
    }

    pub fn fresh_ssa(&mut self) -> String {
        self.next_ssa += 1;
        format!("%{}", self.next_ssa - 1)
    }

    pub fn bind_iv(&mut self, v: V) -> String {
        let name = format!("%arg{}", self.next_arg);
        self.next_arg += 1;
        self.ivs.insert(v, name.clone());
        name
    }

    pub fn line(&mut self, indent: usize, text: &str) {
        for _ in 0..indent {
            self.out.push_str("  ");
        }
        self.out.push_str(text);
        self.out.push('\n');
    }

    fn memref(&self, b: BufferId) -> String {
        self.buffers[b.index()].memref_type()
    }

    /// Argument names for inputs, then one line per non-input buffer.
    pub fn declare_buffers(&mut self, inputs: &[BufferId], indent: usize) {
        for (i, b) in inputs.iter().enumerate() {
            self.buffer_names[b.index()] = format!("%arg{i}");
        }
        for (i, decl) in self.buffers.iter().enumerate() {
            let line = match &decl.kind {
                BufferKind::Input(_) => continue,
                BufferKind::Alloc => {
                    self.buffer_names[i] = self.fresh_ssa();
                    format!("{} = alloc() : {}", self.buffer_names[i], decl.memref_type())
                }
                BufferKind::Constant(v) => {
                    self.buffer_names[i] = self.fresh_ssa();
                    format!(
                        "{} = \"krnl.global\"() {{value = {} : {}}} : () -> {}",
                        self.buffer_names[i],
                        print_dense(v),
                        print_tensor_type(&v.tensor_type()),
                        decl.memref_type()
                    )
                }
                BufferKind::View(base) => {
                    self.buffer_names[i] = self.fresh_ssa();
                    format!(
                        "{} = memref_reshape {} : {} to {}",
                        self.buffer_names[i],
                        self.buffer_names[base.index()],
                        self.memref(*base),
                        decl.memref_type()
                    )
                }
            };
            self.line(indent, &line);
        }
    }

    pub fn signature(&self, name: &str, inputs: &[BufferId], results: &[BufferId]) -> String {
        let args: Vec<String> = inputs
            .iter()
            .enumerate()
            .map(|(i, b)| format!("%arg{i}: {}", self.memref(*b)))
            .collect();
        let rets: Vec<String> = results.iter().map(|b| self.memref(*b)).collect();
        let rets = if rets.len() == 1 {
            rets[0].clone()
        } else {
            format!("({})", rets.join(", "))
        };
        format!("func @{name}({}) -> {rets} {{", args.join(", "))
    }

    pub fn return_line(&self, results: &[BufferId]) -> String {
        let names: Vec<&str> = results.iter().map(|b| self.buffer_names[b.index()].as_str()).collect();
        let tys: Vec<String> = results.iter().map(|b| self.memref(*b)).collect();
        format!("std.return {} : {}", names.join(", "), tys.join(", "))
    }

    fn iv_name(&self, v: V) -> String {
        self.ivs.get(&v).cloned().unwrap_or_else(|| "%<unbound>".into())
    }

    fn index(&self, index: &[AffineExpr<V>]) -> String {
        let items: Vec<String> = index.iter().map(|e| e.format_with(|v| self.iv_name(v))).collect();
        format!("[{}]", items.join(", "))
    }

    /// `0`, or `#mapK(%a, ...)` with `min`/`max` for several expressions.
    pub fn bound(&mut self, exprs: &[AffineExpr<V>], combine: &str) -> String {
        if let [e] = exprs {
            if let Some(c) = e.as_constant() {
                return c.to_string();
            }
        }
        let mut dims: Vec<V> = Vec::new();
        for e in exprs {
            for v in e.vars() {
                if !dims.contains(&v) {
                    dims.push(v);
                }
            }
        }
        let results: Vec<String> = exprs
            .iter()
            .map(|e| e.format_with(|v| format!("d{}", dims.iter().position(|d| *d == v).unwrap())))
            .collect();
        let params: Vec<String> = (0..dims.len()).map(|i| format!("d{i}")).collect();
        let map = format!("affine_map<({}) -> ({})>", params.join(", "), results.join(", "));
        let id = match self.maps.iter().position(|m| *m == map) {
            Some(i) => i,
            None => {
                self.maps.push(map);
                self.maps.len() - 1
            }
        };
        let operands: Vec<String> = dims.iter().map(|v| self.iv_name(*v)).collect();
        let prefix = if exprs.len() > 1 {
            format!("{combine} ")
        } else {
            String::new()
        };
        format!("{prefix}#map{id}({})", operands.join(", "))
    }

    fn scalar(&self, s: ScalarId) -> &str {
        self.scalars.get(&s).map(|(n, _)| n.as_str()).unwrap_or("%<undef>")
    }

    fn ty(&self, s: ScalarId) -> ScalarTy {
        self.scalars.get(&s).map(|(_, t)| *t).unwrap_or(ScalarTy::F32)
    }

    fn define(&mut self, s: ScalarId, ty: ScalarTy) -> String {
        let n = self.fresh_ssa();
        self.scalars.insert(s, (n.clone(), ty));
        n
    }

    pub fn for_loop(&mut self, l: &ForLoop<V>, indent: usize) {
        let lower = self.bound(&l.lower, "max");
        let upper = self.bound(&l.upper, "min");
        let iv = self.bind_iv(l.iv);
        let step = if l.step == 1 {
            String::new()
        } else {
            format!(" step {}", l.step)
        };
        self.line(indent, &format!("affine.for {iv} = {lower} to {upper}{step} {{"));
        self.stmts(&l.body, indent + 1);
        self.line(indent, "}");
    }

    pub fn stmts(&mut self, stmts: &[Stmt<V>], indent: usize) {
        for s in stmts {
            let text = match s {
                Stmt::Load { result, buffer, index } => {
                    let ty = ScalarTy::of(self.buffers[buffer.index()].dtype);
                    let r = self.define(*result, ty);
                    format!(
                        "{r} = affine.load {}{} : {}",
                        self.buffer_names[buffer.index()],
                        self.index(index),
                        self.memref(*buffer)
                    )
                }
                Stmt::Store { value, buffer, index } => format!(
                    "affine.store {}, {}{} : {}",
                    self.scalar(*value),
                    self.buffer_names[buffer.index()],
                    self.index(index),
                    self.memref(*buffer)
                ),
                Stmt::Const { result, value } => match *value {
                    Scalar::F32Bits(bits) => {
                        let r = self.define(*result, ScalarTy::F32);
                        format!("{r} = constant {} : f32", f32_literal(f32::from_bits(bits)))
                    }
                    Scalar::I64(v) => {
                        let r = self.define(*result, ScalarTy::I64);
                        format!("{r} = constant {v} : i64")
                    }
                },
                Stmt::Unary { result, op, operand } => {
                    let ty = self.ty(*operand);
                    let x = self.scalar(*operand).to_string();
                    let r = self.define(*result, ty);
                    let m = match op {
                        UnaryOp::Abs => "absf",
                        UnaryOp::Exp => "exp",
                    };
                    format!("{r} = {m} {x} : {}", ty.name())
                }
                Stmt::Binary { result, op, lhs, rhs } => {
                    let ty = self.ty(*lhs);
                    let (a, b) = (self.scalar(*lhs).to_string(), self.scalar(*rhs).to_string());
                    if *op == BinaryOp::CmpGe {
                        let r = self.define(*result, ScalarTy::I1);
                        let pred = if ty == ScalarTy::F32 {
                            "cmpf \"oge\""
                        } else {
                            "cmpi \"sge\""
                        };
                        format!("{r} = {pred}, {a}, {b} : {}", ty.name())
                    } else {
                        let r = self.define(*result, ty);
                        let float = ty == ScalarTy::F32;
                        let m = match (op, float) {
                            (BinaryOp::Add, true) => "addf",
                            (BinaryOp::Sub, true) => "subf",
                            (BinaryOp::Mul, true) => "mulf",
                            (BinaryOp::Div, true) => "divf",
                            (BinaryOp::Max, true) => "maxf",
                            (BinaryOp::Add, false) => "addi",
                            (BinaryOp::Sub, false) => "subi",
                            (BinaryOp::Mul, false) => "muli",
                            (BinaryOp::Div, false) => "divi_signed",
                            (BinaryOp::Max, false) => "maxi_signed",
                            (BinaryOp::CmpGe, _) => unreachable!(),
                        };
                        format!("{r} = {m} {a}, {b} : {}", ty.name())
                    }
                }
                Stmt::Select {
                    result,
                    cond,
                    on_true,
                    on_false,
                } => {
                    let ty = self.ty(*on_true);
                    let (c, t, f) = (
                        self.scalar(*cond).to_string(),
                        self.scalar(*on_true).to_string(),
                        self.scalar(*on_false).to_string(),
                    );
                    let r = self.define(*result, ty);
                    format!("{r} = select {c}, {t}, {f} : {}", ty.name())
                }
                Stmt::For(l) => {
                    self.for_loop(l, indent);
                    continue;
                }
            };
            self.line(indent, &text);
        }
    }

    /// Wraps the function text in a module, with maps hoisted above it.
    pub fn finish_module(self, func_text: &str, entry: &EntryPoint) -> String {
        let mut out = String::new();
        for (i, m) in self.maps.iter().enumerate() {
            writeln!(out, "#map{i} = {m}").unwrap();
        }
        out.push_str("module {\n");
        out.push_str(func_text);
        writeln!(
            out,
            "  \"krnl.entry_point\"() {{func = @{}, numInputs = {} : i32, numOutputs = {} : i32}} : () -> ()",
            entry.func, entry.num_inputs, entry.num_outputs
        )
        .unwrap();
        out.push_str("}\n");
        out
    }
}

fn handle_names(m: &LoopModule, p: &mut Printer<'_, Iv>, it: &super::IterateOp) -> HashMap<LoopId, String> {
    let mut names = HashMap::new();
    // Originals of one iterate come from one define_loops call.
    let group = p.fresh_ssa();
    let n = it.original.len();
    p.line(2, &format!("{group}:{n} = krnl.define_loops {n}"));
    for (k, l) in it.original.iter().enumerate() {
        names.insert(*l, format!("{group}#{k}"));
    }
    let mut derived: Vec<LoopId> = (0..m.num_handles() as u32)
        .map(LoopId)
        .filter(|l| !names.contains_key(l) && m.root_of(*l).is_some_and(|r| it.original.contains(&r)))
        .collect();
    derived.sort();
    for l in derived {
        if names.contains_key(&l) {
            continue;
        }
        match m.handle(l) {
            Some(LoopOrigin::BlockOuter { parent, tile }) => {
                let g = p.fresh_ssa();
                let pn = names[&parent].clone();
                p.line(
                    2,
                    &format!("{g}:2 = krnl.block {pn} {tile} : (!krnl.loop) -> (!krnl.loop, !krnl.loop)"),
                );
                names.insert(l, format!("{g}#0"));
                names.insert(LoopId(l.0 + 1), format!("{g}#1"));
            }
            Some(LoopOrigin::Skewed { parent, along, factor }) => {
                let g = p.fresh_ssa();
                let (pn, an) = (names[&parent].clone(), names[&along].clone());
                p.line(
                    2,
                    &format!("{g} = krnl.skew {pn}, {an} {factor} : (!krnl.loop, !krnl.loop) -> !krnl.loop"),
                );
                names.insert(l, g);
            }
            _ => {}
        }
    }
    names
}

/// Loop-level text: allocations, then per iterate its loop definitions,
/// schedule ops and `krnl.iterate` with the body.
pub fn print_loop_module(m: &LoopModule) -> String {
    let mut p: Printer<'_, Iv> = Printer::new(&m.buffers, m.inputs.len());
    p.declare_buffers(&m.inputs, 2);
    for it in &m.iterates {
        let names = handle_names(m, &mut p, it);
        let sched: Vec<String> = it.scheduled.iter().map(|l| names[l].clone()).collect();
        let mut with = Vec::new();
        for l in &it.original {
            let iv = p.bind_iv(Iv::Loop(*l));
            if let Some(LoopOrigin::Original { lb, ub }) = m.handle(*l) {
                with.push(format!("{} -> {iv} = {lb} to {ub}", names[l]));
            }
        }
        p.line(
            2,
            &format!("krnl.iterate({}) with ({}) {{", sched.join(", "), with.join(", ")),
        );
        p.stmts(&it.body, 3);
        p.line(2, "}");
    }
    let body = std::mem::take(&mut p.out);
    let mut func = String::new();
    writeln!(func, "  {}", p.signature(&m.name, &m.inputs, &m.results)).unwrap();
    func.push_str(&body);
    writeln!(func, "    {}", p.return_line(&m.results)).unwrap();
    func.push_str("  }\n");
    p.finish_module(&func, &m.entry_point)
}
