use std::collections::HashSet;
use std::fmt;

use super::schedule::{expand_iterate, ScheduleError};
use super::{BufferKind, Iv, LoopModule, LoopOrigin, LoopStmt, ScalarId, Stmt};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoopDiagnosticKind {
    InvalidBounds,
    ScheduleCoverage,
    InvalidSkew,
    IllegalIVUse,
    IndexRank,
    UndefinedScalar,
    UnknownBuffer,
    ReadOnlyStore,
    EntryPointMismatch,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoopDiagnostic {
    pub kind: LoopDiagnosticKind,
    /// Index of the offending iterate, if any.
    pub iterate: Option<usize>,
    pub message: String,
}

impl fmt::Display for LoopDiagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.iterate {
            Some(i) => write!(f, "{:?} in iterate #{i}: {}", self.kind, self.message),
            None => write!(f, "{:?}: {}", self.kind, self.message),
        }
    }
}

struct Checker<'a> {
    m: &'a LoopModule,
    iterate: Option<usize>,
    out: Vec<LoopDiagnostic>,
}

impl Checker<'_> {
    fn report(&mut self, kind: LoopDiagnosticKind, message: impl Into<String>) {
        self.out.push(LoopDiagnostic {
            kind,
            iterate: self.iterate,
            message: message.into(),
        });
    }

    fn ivs(&mut self, index: &[super::AffineExpr<Iv>], scope: &HashSet<Iv>) {
        for e in index {
            for v in e.vars() {
                if !scope.contains(&v) {
                    self.report(
                        LoopDiagnosticKind::IllegalIVUse,
                        format!("{v:?} is not an original or enclosing loop"),
                    );
                }
            }
        }
    }

    fn access(&mut self, buffer: super::BufferId, index: &[super::AffineExpr<Iv>], scope: &HashSet<Iv>) -> bool {
        let Some(decl) = self.m.buffers.get(buffer.index()) else {
            self.report(
                LoopDiagnosticKind::UnknownBuffer,
                format!("buffer {} is not declared", buffer.0),
            );
            return false;
        };
        if decl.dims.len() != index.len() {
            self.report(
                LoopDiagnosticKind::IndexRank,
                format!(
                    "{} indices for rank-{} buffer {}",
                    index.len(),
                    decl.dims.len(),
                    buffer.0
                ),
            );
        }
        self.ivs(index, scope);
        true
    }

    fn body(&mut self, stmts: &[LoopStmt], scope: &mut HashSet<Iv>, defined: &mut HashSet<ScalarId>) {
        for s in stmts {
            for op in s.scalar_operands() {
                if !defined.contains(&op) {
                    self.report(
                        LoopDiagnosticKind::UndefinedScalar,
                        format!("scalar %{} used before definition", op.0),
                    );
                }
            }
            match s {
                Stmt::Load { buffer, index, .. } => {
                    self.access(*buffer, index, scope);
                }
                Stmt::Store { buffer, index, .. } => {
                    if self.access(*buffer, index, scope) {
                        let mut b = *buffer;
                        while let BufferKind::View(base) = &self.m.buffer(b).kind {
                            b = *base;
                        }
                        if matches!(self.m.buffer(b).kind, BufferKind::Input(_) | BufferKind::Constant(_)) {
                            self.report(
                                LoopDiagnosticKind::ReadOnlyStore,
                                format!("store into read-only buffer {}", buffer.0),
                            );
                        }
                    }
                }
                Stmt::For(l) => {
                    self.ivs(&l.lower, scope);
                    self.ivs(&l.upper, scope);
                    if l.lower.is_empty() || l.upper.is_empty() || l.step < 1 {
                        self.report(
                            LoopDiagnosticKind::InvalidBounds,
                            "inner loop needs bounds and a positive step",
                        );
                    }
                    scope.insert(l.iv);
                    self.body(&l.body, scope, defined);
                    scope.remove(&l.iv);
                }
                _ => {}
            }
            if let Some(r) = s.result() {
                defined.insert(r);
            }
        }
    }
}

/// Structural checks for a loop-level module; an empty result means valid.
pub fn verify_loop_module(m: &LoopModule) -> Vec<LoopDiagnostic> {
    use LoopDiagnosticKind::*;
    let mut c = Checker {
        m,
        iterate: None,
        out: Vec::new(),
    };
    for h in 0..m.num_handles() {
        match m.handle(super::LoopId(h as u32)) {
            Some(LoopOrigin::Original { lb, ub }) if lb >= ub => {
                c.report(InvalidBounds, format!("loop {h} has empty range [{lb}, {ub})"))
            }
            Some(LoopOrigin::BlockOuter { tile, .. } | LoopOrigin::BlockInner { tile, .. }) if tile < 1 => {
                c.report(InvalidBounds, format!("loop {h} has tile size {tile}"))
            }
            _ => {}
        }
    }
    if m.entry_point.num_inputs != m.inputs.len() || m.entry_point.num_outputs != m.results.len() {
        c.report(
            EntryPointMismatch,
            format!(
                "entry point declares {} inputs and {} outputs, function has {} and {}",
                m.entry_point.num_inputs,
                m.entry_point.num_outputs,
                m.inputs.len(),
                m.results.len()
            ),
        );
    }
    for &b in m.inputs.iter().chain(&m.results) {
        if b.index() >= m.buffers.len() {
            c.report(UnknownBuffer, format!("buffer {} is not declared", b.0));
        }
    }
    for (i, it) in m.iterates.iter().enumerate() {
        c.iterate = Some(i);
        match expand_iterate(m, it) {
            Ok(_) => {}
            Err(e @ ScheduleError::InvalidSkew { .. }) => c.report(InvalidSkew, e.to_string()),
            Err(e) => c.report(ScheduleCoverage, e.to_string()),
        }
        let mut scope: HashSet<Iv> = it.original.iter().map(|&l| Iv::Loop(l)).collect();
        let mut defined = HashSet::new();
        c.body(&it.body, &mut scope, &mut defined);
    }
    c.out
}

#[cfg(test)]
mod tests {
    use super::super::testutil::add_2d;
    use super::super::{AffineExpr, Index};
    use super::*;

    fn kinds(m: &LoopModule) -> Vec<LoopDiagnosticKind> {
        verify_loop_module(m).into_iter().map(|d| d.kind).collect()
    }

    #[test]
    fn add_nest_is_valid() {
        let (m, _) = add_2d(3, 4);
        assert_eq!(kinds(&m), vec![]);
    }

    #[test]
    fn omitted_loop_is_coverage_error() {
        let (mut m, it) = add_2d(3, 4);
        m.iterates[it].scheduled.pop();
        assert_eq!(kinds(&m), vec![LoopDiagnosticKind::ScheduleCoverage]);
    }

    #[test]
    fn scheduled_iv_in_body_is_illegal() {
        let (mut m, it) = add_2d(4, 4);
        let i = m.iterates[it].original[0];
        let (o, inner) = m.block(i, 2).unwrap();
        let j = m.iterates[it].original[1];
        m.iterates[it].scheduled = vec![o, inner, j];
        if let Stmt::Load { index, .. } = &mut m.iterates[it].body[0] {
            index[0] = Index::var(Iv::Loop(o));
        }
        assert_eq!(kinds(&m), vec![LoopDiagnosticKind::IllegalIVUse]);
    }

    #[test]
    fn store_into_input_and_bad_rank() {
        let (mut m, it) = add_2d(2, 2);
        let body = &mut m.iterates[it].body;
        if let Stmt::Store { buffer, index, .. } = &mut body[3] {
            *buffer = super::super::BufferId(0);
            index.push(AffineExpr::constant(0));
        }
        assert_eq!(
            kinds(&m),
            vec![LoopDiagnosticKind::IndexRank, LoopDiagnosticKind::ReadOnlyStore]
        );
    }

    #[test]
    fn skew_outside_along_is_flagged() {
        let (mut m, it) = add_2d(3, 3);
        let [i, j] = m.iterates[it].original[..] else { panic!() };
        let s = m.skew(j, i, 1).unwrap();
        m.iterates[it].scheduled = vec![s, i];
        assert_eq!(kinds(&m), vec![LoopDiagnosticKind::InvalidSkew]);
    }
}
