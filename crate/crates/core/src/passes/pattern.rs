//! Declarative op-tree rewriting.
//!
//! A [`RewritePattern`] is a source tree of ops and capture variables, a list
//! of constraints over the captures, and a target tree built from them. The
//! driver walks ops in list order (operands before users) and applies the
//! first pattern that matches at each op.

use std::collections::HashMap;

use crate::graph::{eval_op, Attributes, GraphFunction, GraphOp, OpKind, ValueId};
use crate::tensor::TensorType;

use super::PassError;

/// Source tree.
#[derive(Debug, Clone)]
pub enum Pat {
    /// Any value.
    Capture(&'static str),
    /// A value produced by a `Constant` op.
    Const(&'static str),
    /// A value not produced by a `Constant` op.
    NonConst(&'static str),
    /// A value produced by an op of `kind` whose operands match in order.
    /// `bind` names both the op and its result.
    Op {
        kind: OpKind,
        bind: &'static str,
        operands: Vec<Pat>,
    },
}

pub fn op(kind: OpKind, bind: &'static str, operands: Vec<Pat>) -> Pat {
    Pat::Op { kind, bind, operands }
}

#[derive(Debug, Clone, Copy)]
pub enum Constraint {
    /// The named value has exactly one use (function results count).
    HasOneUse(&'static str),
    Custom {
        name: &'static str,
        check: fn(&GraphFunction, &Match) -> bool,
    },
}

/// Target tree.
#[derive(Debug, Clone)]
pub enum Build {
    /// Reuse a captured value.
    Use(&'static str),
    Op {
        kind: OpKind,
        operands: Vec<Build>,
        attrs: AttrsFrom,
    },
    /// Evaluate now; every operand must be constant.
    Fold { kind: OpKind, operands: Vec<Build> },
}

pub fn build(kind: OpKind, operands: Vec<Build>) -> Build {
    Build::Op {
        kind,
        operands,
        attrs: AttrsFrom::Empty,
    }
}

#[derive(Debug, Clone, Copy)]
pub enum AttrsFrom {
    Empty,
    /// Copy the attributes of a matched op.
    Op(&'static str),
}

#[derive(Debug, Clone)]
pub struct RewritePattern {
    pub name: &'static str,
    pub source: Pat,
    pub constraints: Vec<Constraint>,
    pub target: Build,
}

#[derive(Debug, Clone, Default)]
pub struct Match {
    pub values: HashMap<&'static str, ValueId>,
    pub ops: HashMap<&'static str, usize>,
    root: usize,
}

impl Match {
    pub fn value(&self, name: &str) -> ValueId {
        self.values[name]
    }

    fn bind(&mut self, name: &'static str, v: ValueId) -> bool {
        *self.values.entry(name).or_insert(v) == v
    }
}

fn match_value(f: &GraphFunction, pat: &Pat, v: ValueId, m: &mut Match) -> bool {
    match pat {
        Pat::Capture(n) => m.bind(n, v),
        Pat::Const(n) => f.constant_value(v).is_some() && m.bind(n, v),
        Pat::NonConst(n) => f.constant_value(v).is_none() && m.bind(n, v),
        Pat::Op { .. } => match f.defining_op(v) {
            Some(i) => match_op(f, pat, i, m),
            None => false,
        },
    }
}

fn match_op(f: &GraphFunction, pat: &Pat, i: usize, m: &mut Match) -> bool {
    let Pat::Op { kind, bind, operands } = pat else {
        unreachable!("root pattern must be an op");
    };
    let op = &f.ops[i];
    if op.kind != *kind || op.operands.len() != operands.len() || !m.bind(bind, op.result()) {
        return false;
    }
    m.ops.insert(bind, i);
    operands.iter().zip(&op.operands).all(|(p, v)| match_value(f, p, *v, m))
}

impl RewritePattern {
    pub fn matches_at(&self, f: &GraphFunction, i: usize) -> Option<Match> {
        let mut m = Match {
            root: i,
            ..Match::default()
        };
        if !match_op(f, &self.source, i, &mut m) {
            return None;
        }
        let ok = self.constraints.iter().all(|c| match c {
            Constraint::HasOneUse(n) => f.use_count(m.value(n)) == 1,
            Constraint::Custom { check, .. } => check(f, &m),
        });
        ok.then_some(m)
    }
}

/// Builds target subtrees, inserting new ops at `*pos` (just before the root).
struct Builder<'a> {
    f: &'a mut GraphFunction,
    m: &'a Match,
    pos: usize,
}

impl Builder<'_> {
    fn attrs(&self, from: AttrsFrom) -> Attributes {
        match from {
            AttrsFrom::Empty => Attributes::new(),
            AttrsFrom::Op(n) => self.f.ops[self.m.ops[n]].attrs.clone(),
        }
    }

    /// Materializes `b` as a value, returning it.
    fn value(&mut self, b: &Build) -> Result<ValueId, PassError> {
        let (kind, operands, attrs) = self.op_parts(b)?;
        let Some(kind) = kind else {
            return Ok(operands[0]);
        };
        let ty = self.f.infer_result_type(kind, &operands, &attrs);
        let v = self.f.new_value(ty);
        self.f.ops.insert(
            self.pos,
            GraphOp {
                kind,
                operands,
                results: vec![v],
                attrs,
            },
        );
        self.pos += 1;
        Ok(v)
    }

    /// `(None, [v], _)` for a reused value, otherwise the op to create.
    fn op_parts(&mut self, b: &Build) -> Result<(Option<OpKind>, Vec<ValueId>, Attributes), PassError> {
        match b {
            Build::Use(n) => Ok((None, vec![self.m.value(n)], Attributes::new())),
            Build::Op { kind, operands, attrs } => {
                // Read attributes before inserting anything: insertion shifts the root.
                let attrs = self.attrs(*attrs);
                let vs = operands.iter().map(|o| self.value(o)).collect::<Result<_, _>>()?;
                Ok((Some(*kind), vs, attrs))
            }
            Build::Fold { kind, operands } => {
                let vs: Vec<ValueId> = operands.iter().map(|o| self.value(o)).collect::<Result<_, _>>()?;
                let consts: Vec<_> = vs
                    .iter()
                    .map(|v| self.f.constant_value(*v).expect("fold operands must be constant"))
                    .collect();
                let value = eval_op(*kind, &Attributes::new(), &consts).map_err(|e| PassError::Fold {
                    op: *kind,
                    message: e.to_string(),
                })?;
                let mut attrs = Attributes::new();
                attrs.insert("value".into(), crate::graph::AttributeValue::Tensor(value));
                Ok((Some(OpKind::Constant), Vec::new(), attrs))
            }
        }
    }
}

/// Rewrites the matched root in place and returns the index to resume scanning from.
fn apply(f: &mut GraphFunction, pattern: &RewritePattern, m: &Match) -> Result<usize, PassError> {
    let root_val = f.ops[m.root].result();
    let mut b = Builder { f, m, pos: m.root };
    let (kind, operands, attrs) = b.op_parts(&pattern.target)?;
    let mut root = b.pos;
    match kind {
        None => f.replace_all_uses(root_val, operands[0]),
        Some(kind) => {
            let inferred = f.infer_result_type(kind, &operands, &attrs);
            let ty = refine(f.value_type(root_val), &inferred);
            f.set_value_type(root_val, ty);
            f.ops[root] = GraphOp {
                kind,
                operands,
                results: vec![root_val],
                attrs,
            };
        }
    }
    // Interior ops of the match sit before the root; drop the ones left dead,
    // users first so chains unravel.
    let mut interior: Vec<usize> = m.ops.values().copied().filter(|i| *i != m.root).collect();
    if kind.is_none() {
        interior.push(root);
    }
    interior.sort_unstable();
    interior.dedup();
    for i in interior.into_iter().rev() {
        if f.use_count(f.ops[i].result()) == 0 {
            f.ops.remove(i);
            if i < root {
                root -= 1;
            }
        }
    }
    Ok(if kind.is_none() { root } else { root + 1 })
}

fn refine(old: &TensorType, new: &TensorType) -> TensorType {
    if old.dtype == new.dtype {
        if let Some(s) = old.shape.refine(&new.shape) {
            return TensorType::new(old.dtype, s);
        }
    }
    old.clone()
}

pub const MAX_SWEEPS: usize = 64;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RewriteStats {
    /// Sweeps that changed something. A final confirming sweep is not counted.
    pub sweeps: usize,
    /// Applications per pattern name, in first-application order.
    pub applied: Vec<(&'static str, usize)>,
}

impl RewriteStats {
    pub fn total(&self) -> usize {
        self.applied.iter().map(|(_, n)| n).sum()
    }

    pub fn count(&self, name: &str) -> usize {
        self.applied.iter().find(|(n, _)| *n == name).map_or(0, |(_, n)| *n)
    }

    fn record(&mut self, name: &'static str) {
        match self.applied.iter_mut().find(|(n, _)| *n == name) {
            Some((_, c)) => *c += 1,
            None => self.applied.push((name, 1)),
        }
    }
}

/// Greedy post-order application until a sweep finds nothing to rewrite.
///
/// Each sweep applies every match it meets, then carries on past the
/// rewritten op; ops created in front of it are revisited on the next sweep.
pub fn apply_patterns(
    f: &mut GraphFunction,
    patterns: &[RewritePattern],
    pass: &'static str,
) -> Result<RewriteStats, PassError> {
    let mut stats = RewriteStats::default();
    loop {
        let mut changed = false;
        let mut i = 0;
        while i < f.ops.len() {
            let hit = patterns.iter().find_map(|p| p.matches_at(f, i).map(|m| (p, m)));
            match hit {
                Some((p, m)) => {
                    i = apply(f, p, &m)?;
                    stats.record(p.name);
                    changed = true;
                }
                None => i += 1,
            }
        }
        if !changed {
            return Ok(stats);
        }
        stats.sweeps += 1;
        if stats.sweeps >= MAX_SWEEPS {
            return Err(PassError::FixpointOverflow {
                pass,
                sweeps: stats.sweeps,
            });
        }
    }
}
