//! Buffers and scalar statements, shared by the loop and affine levels. The
//! two levels differ only in what an index variable is (`V`).

use serde::{Deserialize, Serialize};

use crate::tensor::{DType, TensorValue};

use super::AffineExpr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BufferId(pub u32);

impl BufferId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BufferKind {
    /// The entry function's `i`-th argument.
    Input(usize),
    Alloc,
    Constant(TensorValue),
    /// Same storage as another buffer, read with different (row-major) dims.
    View(BufferId),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BufferDecl {
    pub dtype: DType,
    pub dims: Vec<usize>,
    pub kind: BufferKind,
}

impl BufferDecl {
    pub fn elem_count(&self) -> usize {
        self.dims.iter().product()
    }

    /// `memref<3x4x5xf32>`, `memref<f32>`.
    pub fn memref_type(&self) -> String {
        let mut s = String::from("memref<");
        for d in &self.dims {
            s.push_str(&format!("{d}x"));
        }
        s.push_str(self.dtype.mnemonic());
        s.push('>');
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ScalarId(pub u32);

/// An immediate. f32 is kept as raw bits so serialized plans preserve
/// infinities and NaN payloads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scalar {
    F32Bits(u32),
    I64(i64),
}

impl Scalar {
    pub fn f32(v: f32) -> Self {
        Scalar::F32Bits(v.to_bits())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum UnaryOp {
    Abs,
    Exp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    /// `f32::max(lhs, rhs)`: NaN operands are ignored.
    Max,
    /// `lhs >= rhs`, yielding a boolean.
    CmpGe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Stmt<V> {
    Load {
        result: ScalarId,
        buffer: BufferId,
        index: Vec<AffineExpr<V>>,
    },
    Store {
        value: ScalarId,
        buffer: BufferId,
        index: Vec<AffineExpr<V>>,
    },
    Const {
        result: ScalarId,
        value: Scalar,
    },
    Unary {
        result: ScalarId,
        op: UnaryOp,
        operand: ScalarId,
    },
    Binary {
        result: ScalarId,
        op: BinaryOp,
        lhs: ScalarId,
        rhs: ScalarId,
    },
    Select {
        result: ScalarId,
        cond: ScalarId,
        on_true: ScalarId,
        on_false: ScalarId,
    },
    For(ForLoop<V>),
}

/// `for iv = max(lower) to min(upper) step step`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForLoop<V> {
    pub iv: V,
    pub lower: Vec<AffineExpr<V>>,
    pub upper: Vec<AffineExpr<V>>,
    pub step: i64,
    pub body: Vec<Stmt<V>>,
}

impl<V> Stmt<V> {
    pub fn result(&self) -> Option<ScalarId> {
        match self {
            Stmt::Load { result, .. }
            | Stmt::Const { result, .. }
            | Stmt::Unary { result, .. }
            | Stmt::Binary { result, .. }
            | Stmt::Select { result, .. } => Some(*result),
            Stmt::Store { .. } | Stmt::For(_) => None,
        }
    }

    pub fn scalar_operands(&self) -> Vec<ScalarId> {
        match self {
            Stmt::Store { value, .. } => vec![*value],
            Stmt::Unary { operand, .. } => vec![*operand],
            Stmt::Binary { lhs, rhs, .. } => vec![*lhs, *rhs],
            Stmt::Select {
                cond,
                on_true,
                on_false,
                ..
            } => vec![*cond, *on_true, *on_false],
            _ => Vec::new(),
        }
    }
}

/// Translation of index variables from one level to another.
pub trait IvMap<V, W> {
    /// Expression for a variable already in scope.
    fn value(&mut self, v: V) -> AffineExpr<W>;
    /// Introduces the induction variable of a nested loop.
    fn bind(&mut self, v: V) -> W;
}

/// Rewrites index variables throughout a statement list.
pub fn map_stmts<V: Copy + Eq, W: Copy + Eq>(stmts: &[Stmt<V>], m: &mut impl IvMap<V, W>) -> Vec<Stmt<W>> {
    fn idx<V: Copy + Eq, W: Copy + Eq>(index: &[AffineExpr<V>], m: &mut impl IvMap<V, W>) -> Vec<AffineExpr<W>> {
        index.iter().map(|e| e.substitute(|v| m.value(v))).collect()
    }
    stmts
        .iter()
        .map(|s| match s {
            Stmt::Load { result, buffer, index } => Stmt::Load {
                result: *result,
                buffer: *buffer,
                index: idx(index, m),
            },
            Stmt::Store { value, buffer, index } => Stmt::Store {
                value: *value,
                buffer: *buffer,
                index: idx(index, m),
            },
            Stmt::Const { result, value } => Stmt::Const {
                result: *result,
                value: *value,
            },
            Stmt::Unary { result, op, operand } => Stmt::Unary {
                result: *result,
                op: *op,
                operand: *operand,
            },
            Stmt::Binary { result, op, lhs, rhs } => Stmt::Binary {
                result: *result,
                op: *op,
                lhs: *lhs,
                rhs: *rhs,
            },
            Stmt::Select {
                result,
                cond,
                on_true,
                on_false,
            } => Stmt::Select {
                result: *result,
                cond: *cond,
                on_true: *on_true,
                on_false: *on_false,
            },
            Stmt::For(l) => {
                let lower = idx(&l.lower, m);
                let upper = idx(&l.upper, m);
                let iv = m.bind(l.iv);
                Stmt::For(ForLoop {
                    iv,
                    lower,
                    upper,
                    step: l.step,
                    body: map_stmts(&l.body, m),
                })
            }
        })
        .collect()
}
