//! Static op registry: one record per supported operator, declaring arity,
//! attribute schema with defaults, and whether the op is elementwise.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::shape_rules::{self as rules, ShapeRule};
use super::{AttributeValue, Attributes};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OpKind {
    Add,
    Mul,
    Sub,
    Abs,
    Exp,
    Relu,
    LeakyRelu,
    MatMul,
    Gemm,
    Conv,
    MaxPool,
    ReduceSum,
    ReduceL1,
    Reshape,
    Identity,
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttrKind {
    Float,
    Int,
    Ints,
    Tensor,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AttrDefault {
    Required,
    /// Optional with no stored default; the op's semantics define the meaning of absence.
    Optional,
    Float(f32),
    Int(i64),
    Ints(&'static [i64]),
}

#[derive(Debug, Clone, Copy)]
pub struct AttrSchema {
    pub name: &'static str,
    pub kind: AttrKind,
    pub default: AttrDefault,
    /// When set, the only value this artifact accepts (e.g. `group = 1`).
    pub only: Option<Fixed>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Fixed {
    Int(i64),
    AllInts(i64),
}

pub struct OpSchema {
    pub kind: OpKind,
    pub name: &'static str,
    pub min_operands: usize,
    pub max_operands: usize,
    pub num_results: usize,
    pub attrs: &'static [AttrSchema],
    pub elementwise: bool,
    pub infer: ShapeRule,
}

impl OpSchema {
    pub fn attr(&self, name: &str) -> Option<&AttrSchema> {
        self.attrs.iter().find(|a| a.name == name)
    }
}

const fn attr(name: &'static str, kind: AttrKind, default: AttrDefault) -> AttrSchema {
    AttrSchema {
        name,
        kind,
        default,
        only: None,
    }
}

const fn fixed(name: &'static str, kind: AttrKind, only: Fixed) -> AttrSchema {
    AttrSchema {
        name,
        kind,
        default: AttrDefault::Optional,
        only: Some(only),
    }
}

const fn op(
    kind: OpKind,
    name: &'static str,
    operands: (usize, usize),
    attrs: &'static [AttrSchema],
    elementwise: bool,
    infer: ShapeRule,
) -> OpSchema {
    OpSchema {
        kind,
        name,
        min_operands: operands.0,
        max_operands: operands.1,
        num_results: 1,
        attrs,
        elementwise,
        infer,
    }
}

use AttrDefault as D;
use AttrKind as K;

const REDUCE_ATTRS: &[AttrSchema] = &[attr("axes", K::Ints, D::Optional), attr("keepdims", K::Int, D::Int(1))];

static REGISTRY: [OpSchema; 16] = [
    op(OpKind::Add, "Add", (2, 2), &[], true, rules::elementwise),
    op(OpKind::Mul, "Mul", (2, 2), &[], true, rules::elementwise),
    op(OpKind::Sub, "Sub", (2, 2), &[], true, rules::elementwise),
    op(OpKind::Abs, "Abs", (1, 1), &[], true, rules::elementwise),
    op(OpKind::Exp, "Exp", (1, 1), &[], true, rules::elementwise),
    op(OpKind::Relu, "Relu", (1, 1), &[], true, rules::elementwise),
    op(
        OpKind::LeakyRelu,
        "LeakyRelu",
        (1, 1),
        &[attr("alpha", K::Float, D::Float(0.01))],
        true,
        rules::elementwise,
    ),
    op(OpKind::MatMul, "MatMul", (2, 2), &[], false, rules::matmul),
    op(
        OpKind::Gemm,
        "Gemm",
        (2, 3),
        &[
            attr("alpha", K::Float, D::Float(1.0)),
            attr("beta", K::Float, D::Float(1.0)),
            fixed("transA", K::Int, Fixed::Int(0)),
            fixed("transB", K::Int, Fixed::Int(0)),
        ],
        false,
        rules::gemm,
    ),
    op(
        OpKind::Conv,
        "Conv",
        (2, 3),
        &[
            attr("strides", K::Ints, D::Ints(&[1, 1])),
            attr("pads", K::Ints, D::Ints(&[0, 0, 0, 0])),
            attr("kernel_shape", K::Ints, D::Optional),
            fixed("dilations", K::Ints, Fixed::AllInts(1)),
            fixed("group", K::Int, Fixed::Int(1)),
        ],
        false,
        rules::conv,
    ),
    op(
        OpKind::MaxPool,
        "MaxPool",
        (1, 1),
        &[
            attr("kernel_shape", K::Ints, D::Required),
            attr("strides", K::Ints, D::Ints(&[1, 1])),
            attr("pads", K::Ints, D::Ints(&[0, 0, 0, 0])),
            fixed("dilations", K::Ints, Fixed::AllInts(1)),
            fixed("ceil_mode", K::Int, Fixed::Int(0)),
        ],
        false,
        rules::max_pool,
    ),
    op(
        OpKind::ReduceSum,
        "ReduceSum",
        (1, 1),
        REDUCE_ATTRS,
        false,
        rules::reduce,
    ),
    op(OpKind::ReduceL1, "ReduceL1", (1, 1), REDUCE_ATTRS, false, rules::reduce),
    op(OpKind::Reshape, "Reshape", (2, 2), &[], false, rules::reshape),
    op(OpKind::Identity, "Identity", (1, 1), &[], true, rules::identity),
    op(
        OpKind::Constant,
        "Constant",
        (0, 0),
        &[attr("value", K::Tensor, D::Required)],
        false,
        rules::constant,
    ),
];

pub fn schema(kind: OpKind) -> &'static OpSchema {
    let s = &REGISTRY[kind as usize];
    debug_assert_eq!(s.kind, kind);
    s
}

/// Resolves an ONNX `op_type` name.
pub fn lookup_op(name: &str) -> Option<OpKind> {
    REGISTRY.iter().find(|s| s.name == name).map(|s| s.kind)
}

pub fn all_ops() -> impl Iterator<Item = OpKind> {
    REGISTRY.iter().map(|s| s.kind)
}

impl OpKind {
    pub fn name(self) -> &'static str {
        schema(self).name
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

// Typed attribute accessors that fall back to the registry default. They
// assume the op verified, so a wrong kind reads as the default.

pub fn float_attr(kind: OpKind, attrs: &Attributes, name: &str) -> f32 {
    match attrs.get(name) {
        Some(AttributeValue::Float(v)) => *v,
        _ => match schema(kind).attr(name).map(|a| a.default) {
            Some(AttrDefault::Float(v)) => v,
            _ => 0.0,
        },
    }
}

pub fn int_attr(kind: OpKind, attrs: &Attributes, name: &str) -> i64 {
    match attrs.get(name) {
        Some(AttributeValue::Int(v)) => *v,
        _ => match schema(kind).attr(name).map(|a| a.default) {
            Some(AttrDefault::Int(v)) => v,
            _ => 0,
        },
    }
}

pub fn ints_attr(kind: OpKind, attrs: &Attributes, name: &str) -> Option<Vec<i64>> {
    match attrs.get(name) {
        Some(AttributeValue::Ints(v)) => Some(v.clone()),
        _ => match schema(kind).attr(name).map(|a| a.default) {
            Some(AttrDefault::Ints(v)) => Some(v.to_vec()),
            _ => None,
        },
    }
}

/// 2-D window geometry shared by Conv and MaxPool.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub kernel: [usize; 2],
    pub strides: [usize; 2],
    /// top, left, bottom, right
    pub pads: [usize; 4],
}

impl Window {
    /// Output extent along spatial axis `axis` (0 = H, 1 = W) for an input of `extent`.
    pub fn out_extent(&self, axis: usize, extent: usize) -> Option<usize> {
        let padded = extent + self.pads[axis] + self.pads[axis + 2];
        if padded < self.kernel[axis] || self.strides[axis] == 0 {
            return None;
        }
        Some((padded - self.kernel[axis]) / self.strides[axis] + 1)
    }

    /// Reads the window attributes of a Conv (kernel from the weight dims) or MaxPool.
    pub fn from_attrs(kind: OpKind, attrs: &Attributes, kernel: Option<[usize; 2]>) -> Result<Self, String> {
        let two = |name: &str| -> Result<[usize; 2], String> {
            let v = ints_attr(kind, attrs, name).ok_or_else(|| format!("missing `{name}`"))?;
            match v.as_slice() {
                [a, b] if *a >= 0 && *b >= 0 => Ok([*a as usize, *b as usize]),
                _ => Err(format!("`{name}` must hold two non-negative values, got {v:?}")),
            }
        };
        let kernel = match kernel {
            Some(k) => {
                if let Some(ks) = ints_attr(kind, attrs, "kernel_shape") {
                    if ks != [k[0] as i64, k[1] as i64] {
                        return Err(format!("kernel_shape {ks:?} disagrees with weights {k:?}"));
                    }
                }
                k
            }
            None => two("kernel_shape")?,
        };
        let strides = two("strides")?;
        if strides.contains(&0) {
            return Err("strides must be positive".into());
        }
        let pads = ints_attr(kind, attrs, "pads").unwrap_or_default();
        let pads = match pads.as_slice() {
            [t, l, b, r] if [t, l, b, r].iter().all(|p| **p >= 0) => {
                [*t as usize, *l as usize, *b as usize, *r as usize]
            }
            _ => return Err(format!("`pads` must hold four non-negative values, got {pads:?}")),
        };
        Ok(Window { kernel, strides, pads })
    }
}

/// Normalized, sorted, de-duplicated reduction axes for an input of `rank`.
pub fn reduce_axes(kind: OpKind, attrs: &Attributes, rank: usize) -> Result<Vec<usize>, String> {
    let axes = match ints_attr(kind, attrs, "axes") {
        None => return Ok((0..rank).collect()),
        Some(a) => a,
    };
    let mut out = Vec::with_capacity(axes.len());
    for a in axes {
        let r = rank as i64;
        if a < -r || a >= r {
            return Err(format!("axis {a} out of range for rank {rank}"));
        }
        out.push(if a < 0 { (a + r) as usize } else { a as usize });
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_order_matches_kind_discriminants() {
        for k in all_ops() {
            assert_eq!(schema(k).kind, k);
            assert_eq!(lookup_op(k.name()), Some(k));
        }
        assert_eq!(all_ops().count(), 16);
        assert_eq!(lookup_op("LSTM"), None);
    }

    #[test]
    fn defaults() {
        let none = Attributes::new();
        assert_eq!(float_attr(OpKind::LeakyRelu, &none, "alpha"), 0.01);
        assert_eq!(float_attr(OpKind::Gemm, &none, "beta"), 1.0);
        assert_eq!(int_attr(OpKind::ReduceSum, &none, "keepdims"), 1);
        assert_eq!(ints_attr(OpKind::ReduceSum, &none, "axes"), None);
        assert_eq!(ints_attr(OpKind::Conv, &none, "pads"), Some(vec![0, 0, 0, 0]));
    }

    #[test]
    fn window_floor_formula() {
        let mut attrs = Attributes::new();
        attrs.insert("pads".into(), AttributeValue::Ints(vec![1, 1, 1, 1]));
        let w = Window::from_attrs(OpKind::Conv, &attrs, Some([3, 3])).unwrap();
        assert_eq!(w.out_extent(0, 28), Some(28));
        let mut attrs = Attributes::new();
        attrs.insert("kernel_shape".into(), AttributeValue::Ints(vec![2, 2]));
        attrs.insert("strides".into(), AttributeValue::Ints(vec![2, 2]));
        let w = Window::from_attrs(OpKind::MaxPool, &attrs, None).unwrap();
        assert_eq!(w.out_extent(1, 28), Some(14));
        assert_eq!(w.out_extent(1, 5), Some(2));
    }

    #[test]
    fn reduce_axes_normalizes() {
        let mut attrs = Attributes::new();
        attrs.insert("axes".into(), AttributeValue::Ints(vec![-1, 0, 0]));
        assert_eq!(reduce_axes(OpKind::ReduceSum, &attrs, 3).unwrap(), vec![0, 2]);
        attrs.insert("axes".into(), AttributeValue::Ints(vec![3]));
        assert!(reduce_axes(OpKind::ReduceSum, &attrs, 3).is_err());
    }
}
