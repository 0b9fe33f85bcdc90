//! Loop-level IR in the style of MLIR's `krnl` dialect.
//!
//! Program semantics and schedules are kept apart. An [`IterateOp`] names its
//! *original* loops, whose induction variables its body reads. It separately
//! lists the *scheduled* loops to generate, which are handles derived from the
//! originals by [`LoopModule::block`] and [`LoopModule::skew`], in any order
//! ([`permute`]). Adding a schedule never touches the body.

mod expr;
mod printer;
pub mod schedule;
mod stmt;
mod verify;

use thiserror::Error;

use crate::graph::EntryPoint;
use crate::tensor::{DType, TensorValue};

pub use expr::AffineExpr;
pub use printer::print_loop_module;
pub(crate) use printer::Printer;
pub use schedule::{expand_iterate, ExpandedLoop, Expansion, ScheduleError};
pub use stmt::{
    map_stmts, BinaryOp, BufferDecl, BufferId, BufferKind, ForLoop, IvMap, Scalar, ScalarId, Stmt, UnaryOp,
};
pub use verify::{verify_loop_module, LoopDiagnostic, LoopDiagnosticKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LoopId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoopOrigin {
    Original {
        lb: i64,
        ub: i64,
    },
    /// Iterates the parent's range with the parent's step times `tile`.
    BlockOuter {
        parent: LoopId,
        tile: i64,
    },
    /// Iterates one tile: from the outer iv to the outer iv plus the tile extent.
    BlockInner {
        parent: LoopId,
        tile: i64,
        outer: LoopId,
    },
    /// Iterates `j + factor * i` where `j` is the parent and `i` is `along`.
    Skewed {
        parent: LoopId,
        along: LoopId,
        factor: i64,
    },
}

/// Index variable inside a loop-level body.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Iv {
    /// Induction variable of an original loop of the enclosing iterate.
    Loop(LoopId),
    /// Induction variable of a reduction loop nested in the body.
    Red(u32),
}

pub type LoopStmt = Stmt<Iv>;

#[derive(Debug, Clone, PartialEq)]
pub struct IterateOp {
    /// The graph op this nest implements, e.g. `Conv`.
    pub tag: String,
    pub original: Vec<LoopId>,
    pub scheduled: Vec<LoopId>,
    pub body: Vec<LoopStmt>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LoopError {
    #[error("invalid loop bounds [{lb}, {ub})")]
    InvalidBounds { lb: i64, ub: i64 },
    #[error("tile size must be at least 1, got {0}")]
    InvalidTile(i64),
    #[error("invalid permutation {perm:?} of {len} loops")]
    InvalidPermutation { perm: Vec<usize>, len: usize },
    #[error("cannot skew along loop {along:?}: {reason}")]
    InvalidSkew { along: LoopId, reason: String },
    #[error("unknown loop handle {0:?}")]
    UnknownLoop(LoopId),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopModule {
    pub name: String,
    pub buffers: Vec<BufferDecl>,
    pub inputs: Vec<BufferId>,
    pub results: Vec<BufferId>,
    pub iterates: Vec<IterateOp>,
    pub entry_point: EntryPoint,
    handles: Vec<LoopOrigin>,
    next_scalar: u32,
    next_red: u32,
}

impl LoopModule {
    pub fn new(name: impl Into<String>, entry_point: EntryPoint) -> Self {
        LoopModule {
            name: name.into(),
            buffers: Vec::new(),
            inputs: Vec::new(),
            results: Vec::new(),
            iterates: Vec::new(),
            entry_point,
            handles: Vec::new(),
            next_scalar: 0,
            next_red: 0,
        }
    }

    pub fn add_buffer(&mut self, dtype: DType, dims: &[usize], kind: BufferKind) -> BufferId {
        let id = BufferId(self.buffers.len() as u32);
        self.buffers.push(BufferDecl {
            dtype,
            dims: dims.to_vec(),
            kind,
        });
        id
    }

    pub fn add_input(&mut self, dtype: DType, dims: &[usize]) -> BufferId {
        let b = self.add_buffer(dtype, dims, BufferKind::Input(self.inputs.len()));
        self.inputs.push(b);
        b
    }

    pub fn alloc(&mut self, dtype: DType, dims: &[usize]) -> BufferId {
        self.add_buffer(dtype, dims, BufferKind::Alloc)
    }

    pub fn constant(&mut self, value: TensorValue) -> BufferId {
        let (dtype, dims) = (value.dtype(), value.dims().to_vec());
        self.add_buffer(dtype, &dims, BufferKind::Constant(value))
    }

    /// A row-major reinterpretation of `base` with the same element count.
    pub fn view(&mut self, base: BufferId, dims: &[usize]) -> BufferId {
        let dtype = self.buffer(base).dtype;
        debug_assert_eq!(dims.iter().product::<usize>(), self.buffer(base).elem_count());
        self.add_buffer(dtype, dims, BufferKind::View(base))
    }

    pub fn buffer(&self, b: BufferId) -> &BufferDecl {
        &self.buffers[b.index()]
    }

    pub fn handle(&self, l: LoopId) -> Option<LoopOrigin> {
        self.handles.get(l.0 as usize).copied()
    }

    pub fn num_handles(&self) -> usize {
        self.handles.len()
    }

    fn new_handle(&mut self, o: LoopOrigin) -> LoopId {
        self.handles.push(o);
        LoopId(self.handles.len() as u32 - 1)
    }

    /// The original loop a handle derives from.
    pub fn root_of(&self, mut l: LoopId) -> Option<LoopId> {
        loop {
            match self.handle(l)? {
                LoopOrigin::Original { .. } => return Some(l),
                LoopOrigin::BlockOuter { parent, .. }
                | LoopOrigin::BlockInner { parent, .. }
                | LoopOrigin::Skewed { parent, .. } => l = parent,
            }
        }
    }

    /// Fresh original loops with the given `[lb, ub)` bounds.
    pub fn define_loops(&mut self, bounds: &[(i64, i64)]) -> Result<Vec<LoopId>, LoopError> {
        if let Some(&(lb, ub)) = bounds.iter().find(|(lb, ub)| lb >= ub) {
            return Err(LoopError::InvalidBounds { lb, ub });
        }
        Ok(bounds
            .iter()
            .map(|&(lb, ub)| self.new_handle(LoopOrigin::Original { lb, ub }))
            .collect())
    }

    pub fn block(&mut self, l: LoopId, tile: i64) -> Result<(LoopId, LoopId), LoopError> {
        self.handle(l).ok_or(LoopError::UnknownLoop(l))?;
        if tile < 1 {
            return Err(LoopError::InvalidTile(tile));
        }
        let outer = self.new_handle(LoopOrigin::BlockOuter { parent: l, tile });
        let inner = self.new_handle(LoopOrigin::BlockInner { parent: l, tile, outer });
        Ok((outer, inner))
    }

    /// Skews `l` by `factor` times the value of the original loop `along`.
    pub fn skew(&mut self, l: LoopId, along: LoopId, factor: i64) -> Result<LoopId, LoopError> {
        self.handle(l).ok_or(LoopError::UnknownLoop(l))?;
        match self.handle(along) {
            Some(LoopOrigin::Original { .. }) => {}
            Some(_) => {
                return Err(LoopError::InvalidSkew {
                    along,
                    reason: "not an original loop".into(),
                })
            }
            None => return Err(LoopError::UnknownLoop(along)),
        }
        if self.root_of(l) == Some(along) {
            return Err(LoopError::InvalidSkew {
                along,
                reason: "a loop cannot be skewed along itself".into(),
            });
        }
        Ok(self.new_handle(LoopOrigin::Skewed {
            parent: l,
            along,
            factor,
        }))
    }

    /// Appends an iterate whose schedule is initially its original loops.
    pub fn push_iterate(&mut self, tag: impl Into<String>, original: Vec<LoopId>, body: Vec<LoopStmt>) -> usize {
        self.iterates.push(IterateOp {
            tag: tag.into(),
            scheduled: original.clone(),
            original,
            body,
        });
        self.iterates.len() - 1
    }

    pub fn body_builder(&mut self) -> BodyBuilder<'_> {
        BodyBuilder {
            next_scalar: &mut self.next_scalar,
            next_red: &mut self.next_red,
            stmts: Vec::new(),
        }
    }

    pub fn num_scalars(&self) -> u32 {
        self.next_scalar
    }

    /// Blocks every loop of each iterate tagged `tag` by `tile` and orders
    /// all tile loops before all intra-tile loops. Returns how many iterates
    /// were rescheduled.
    pub fn tile_iterates(&mut self, tag: &str, tile: i64) -> Result<usize, LoopError> {
        let mut n = 0;
        for i in 0..self.iterates.len() {
            if self.iterates[i].tag != tag {
                continue;
            }
            let scheduled = self.iterates[i].scheduled.clone();
            let (mut outers, mut inners) = (Vec::new(), Vec::new());
            for l in scheduled {
                let (o, inner) = self.block(l, tile)?;
                outers.push(o);
                inners.push(inner);
            }
            outers.extend(inners);
            self.iterates[i].scheduled = outers;
            n += 1;
        }
        Ok(n)
    }
}

/// Reorders a schedule: result `k` is `list[perm[k]]`.
pub fn permute(list: &[LoopId], perm: &[usize]) -> Result<Vec<LoopId>, LoopError> {
    let mut seen = vec![false; list.len()];
    let valid = perm.len() == list.len()
        && perm
            .iter()
            .all(|&p| p < list.len() && !std::mem::replace(&mut seen[p], true));
    if !valid {
        return Err(LoopError::InvalidPermutation {
            perm: perm.to_vec(),
            len: list.len(),
        });
    }
    Ok(perm.iter().map(|&p| list[p]).collect())
}

/// Emits scalar statements for an iterate body, with nested reduction loops.
pub struct BodyBuilder<'a> {
    next_scalar: &'a mut u32,
    next_red: &'a mut u32,
    stmts: Vec<LoopStmt>,
}

pub type Index = AffineExpr<Iv>;

impl BodyBuilder<'_> {
    fn fresh(&mut self) -> ScalarId {
        *self.next_scalar += 1;
        ScalarId(*self.next_scalar - 1)
    }

    fn emit(&mut self, s: LoopStmt) -> Option<ScalarId> {
        let r = s.result();
        self.stmts.push(s);
        r
    }

    pub fn load(&mut self, buffer: BufferId, index: Vec<Index>) -> ScalarId {
        let result = self.fresh();
        self.emit(Stmt::Load { result, buffer, index });
        result
    }

    pub fn store(&mut self, value: ScalarId, buffer: BufferId, index: Vec<Index>) {
        self.emit(Stmt::Store { value, buffer, index });
    }

    pub fn constant(&mut self, value: Scalar) -> ScalarId {
        let result = self.fresh();
        self.emit(Stmt::Const { result, value });
        result
    }

    pub fn constf(&mut self, v: f32) -> ScalarId {
        self.constant(Scalar::f32(v))
    }

    pub fn unary(&mut self, op: UnaryOp, operand: ScalarId) -> ScalarId {
        let result = self.fresh();
        self.emit(Stmt::Unary { result, op, operand });
        result
    }

    pub fn binary(&mut self, op: BinaryOp, lhs: ScalarId, rhs: ScalarId) -> ScalarId {
        let result = self.fresh();
        self.emit(Stmt::Binary { result, op, lhs, rhs });
        result
    }

    pub fn select(&mut self, cond: ScalarId, on_true: ScalarId, on_false: ScalarId) -> ScalarId {
        let result = self.fresh();
        self.emit(Stmt::Select {
            result,
            cond,
            on_true,
            on_false,
        });
        result
    }

    /// `for iv = max(lower) to min(upper)`, with the body built by `f`.
    pub fn for_loop(&mut self, lower: Vec<Index>, upper: Vec<Index>, f: impl FnOnce(&mut Self, Iv)) {
        *self.next_red += 1;
        let iv = Iv::Red(*self.next_red - 1);
        let outer = std::mem::take(&mut self.stmts);
        f(self, iv);
        let body = std::mem::replace(&mut self.stmts, outer);
        self.stmts.push(Stmt::For(ForLoop {
            iv,
            lower,
            upper,
            step: 1,
            body,
        }));
    }

    pub fn finish(self) -> Vec<LoopStmt> {
        self.stmts
    }
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn define_loops_rejects_empty_range() {
        let (mut m, _) = testutil::add_2d(2, 2);
        assert_eq!(
            m.define_loops(&[(0, 0)]),
            Err(LoopError::InvalidBounds { lb: 0, ub: 0 })
        );
        assert_eq!(m.define_loops(&[(0, 1)]).unwrap().len(), 1);
    }

    #[test]
    fn permute_validates() {
        let l = [LoopId(0), LoopId(1), LoopId(2)];
        assert_eq!(permute(&l, &[2, 0, 1]).unwrap(), vec![LoopId(2), LoopId(0), LoopId(1)]);
        assert_eq!(permute(&l, &[0, 1, 2]).unwrap(), l.to_vec());
        assert!(permute(&l, &[0, 0, 1]).is_err());
        assert!(permute(&l, &[0, 1]).is_err());
    }

    #[test]
    fn block_and_skew_handles() {
        let (mut m, it) = testutil::add_2d(4, 4);
        let [i, j] = m.iterates[it].original[..] else { panic!() };
        assert_eq!(m.block(i, 0), Err(LoopError::InvalidTile(0)));
        let (o, inner) = m.block(i, 2).unwrap();
        assert_eq!(m.root_of(inner), Some(i));
        assert_eq!(m.root_of(o), Some(i));
        let s = m.skew(j, i, 1).unwrap();
        assert_eq!(m.root_of(s), Some(j));
        assert!(matches!(m.skew(j, o, 1), Err(LoopError::InvalidSkew { .. })));
        assert!(matches!(m.skew(s, j, 1), Err(LoopError::InvalidSkew { .. })));
    }
}
