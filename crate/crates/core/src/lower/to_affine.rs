//! Loop level → affine level: schedules are expanded into explicit loops and
//! body indices are rewritten in terms of the generated induction variables.

use std::collections::HashMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::graph::EntryPoint;
use crate::loops::{
    expand_iterate, map_stmts, AffineExpr, BufferDecl, BufferId, ForLoop, Iv, IvMap, LoopModule, Printer, Stmt,
};

use super::LowerError;

/// Induction variable of an affine program, numbered in nesting order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AffIv(pub u32);

pub type AffineStmt = Stmt<AffIv>;

/// A fully materialized loop program, ready to interpret or serialize.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineProgram {
    pub name: String,
    pub buffers: Vec<BufferDecl>,
    pub inputs: Vec<BufferId>,
    pub results: Vec<BufferId>,
    pub body: Vec<AffineStmt>,
    pub num_ivs: u32,
    pub num_scalars: u32,
    pub entry_point: EntryPoint,
}

struct Subst<'a> {
    originals: HashMap<Iv, AffineExpr<AffIv>>,
    next_iv: &'a mut u32,
}

impl IvMap<Iv, AffIv> for Subst<'_> {
    fn value(&mut self, v: Iv) -> AffineExpr<AffIv> {
        self.originals[&v].clone()
    }

    fn bind(&mut self, v: Iv) -> AffIv {
        let iv = AffIv(*self.next_iv);
        *self.next_iv += 1;
        self.originals.insert(v, AffineExpr::var(iv));
        iv
    }
}

/// Expands every iterate's schedule into a perfect `for` nest around its body.
pub fn lower_loops_to_affine(m: &LoopModule) -> Result<AffineProgram, LowerError> {
    let mut next_iv = 0u32;
    let mut body = Vec::with_capacity(m.iterates.len());
    for (i, it) in m.iterates.iter().enumerate() {
        let ex = expand_iterate(m, it).map_err(|source| LowerError::ScheduleExpansion { iterate: i, source })?;
        let ivs: Vec<AffIv> = (0..ex.loops.len() as u32).map(|k| AffIv(next_iv + k)).collect();
        next_iv += ivs.len() as u32;
        let pos = |e: &AffineExpr<usize>| e.substitute(|p| AffineExpr::var(ivs[p]));
        let mut subst = Subst {
            originals: ex.originals.iter().map(|(l, e)| (Iv::Loop(*l), pos(e))).collect(),
            next_iv: &mut next_iv,
        };
        let mut nest = map_stmts(&it.body, &mut subst);
        for (k, l) in ex.loops.iter().enumerate().rev() {
            nest = vec![Stmt::For(ForLoop {
                iv: ivs[k],
                lower: l.lower.iter().map(pos).collect(),
                upper: l.upper.iter().map(pos).collect(),
                step: l.step,
                body: nest,
            })];
        }
        body.extend(nest);
    }
    Ok(AffineProgram {
        name: m.name.clone(),
        buffers: m.buffers.clone(),
        inputs: m.inputs.clone(),
        results: m.results.clone(),
        body,
        num_ivs: next_iv,
        num_scalars: m.num_scalars(),
        entry_point: m.entry_point.clone(),
    })
}

/// Affine-level text with bound maps hoisted above the module.
pub fn print_affine(p: &AffineProgram) -> String {
    let mut pr: Printer<'_, AffIv> = Printer::new(&p.buffers, p.inputs.len());
    pr.declare_buffers(&p.inputs, 2);
    pr.stmts(&p.body, 2);
    let body = std::mem::take(&mut pr.out);
    let mut func = String::new();
    writeln!(func, "  {}", pr.signature(&p.name, &p.inputs, &p.results)).unwrap();
    func.push_str(&body);
    writeln!(func, "    {}", pr.return_line(&p.results)).unwrap();
    func.push_str("  }\n");
    pr.finish_module(&func, &p.entry_point)
}
