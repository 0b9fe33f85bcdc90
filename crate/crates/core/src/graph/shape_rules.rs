//! Per-op result type rules. Each rule works on partially-known types: unknown
//! dims stay unknown, but rank and any dims fixed by the other operands or by
//! attributes are recovered.

use crate::tensor::{DType, Dim, Shape, TensorType, TensorValue};

use super::registry::{self, reduce_axes, OpKind, Window};
use super::Attributes;

/// Operand types, the op's attributes, and the payload of each operand that is
/// a compile-time constant.
pub type ShapeRule = fn(OpKind, &[&TensorType], &Attributes, &[Option<&TensorValue>]) -> Result<TensorType, String>;

pub fn infer(
    kind: OpKind,
    operands: &[&TensorType],
    attrs: &Attributes,
    consts: &[Option<&TensorValue>],
) -> Result<Vec<TensorType>, String> {
    let s = registry::schema(kind);
    if operands.len() < s.min_operands || operands.len() > s.max_operands {
        return Err(format!(
            "{kind} expects {}..={} operands, got {}",
            s.min_operands,
            s.max_operands,
            operands.len()
        ));
    }
    (s.infer)(kind, operands, attrs, consts).map(|t| vec![t])
}

fn require_f32(kind: OpKind, operands: &[&TensorType]) -> Result<(), String> {
    match operands.iter().find(|t| t.dtype != DType::F32) {
        Some(t) => Err(format!("{kind} requires f32 operands, got {}", t.dtype)),
        None => Ok(()),
    }
}

/// Broadcast over partially-known shapes.
pub fn broadcast_partial(a: &Shape, b: &Shape) -> Result<Shape, String> {
    let (Some(ra), Some(rb)) = (a.rank(), b.rank()) else {
        return Ok(Shape::unranked());
    };
    let rank = ra.max(rb);
    let (da, db) = (a.dims(), b.dims());
    let mut out = vec![Dim::Unknown; rank];
    for i in 0..rank {
        let x = if i < ra { da[ra - 1 - i] } else { Dim::Known(1) };
        let y = if i < rb { db[rb - 1 - i] } else { Dim::Known(1) };
        out[rank - 1 - i] = match (x, y) {
            (Dim::Known(p), Dim::Known(q)) if p == q => Dim::Known(p),
            (Dim::Known(1), other) | (other, Dim::Known(1)) => other,
            (Dim::Known(p), Dim::Known(q)) => return Err(format!("cannot broadcast {a} with {b} (dims {p} and {q})")),
            (Dim::Known(p), Dim::Unknown) | (Dim::Unknown, Dim::Known(p)) => Dim::Known(p),
            (Dim::Unknown, Dim::Unknown) => Dim::Unknown,
        };
    }
    Ok(Shape::ranked(out))
}

pub fn elementwise(
    kind: OpKind,
    operands: &[&TensorType],
    _attrs: &Attributes,
    _consts: &[Option<&TensorValue>],
) -> Result<TensorType, String> {
    require_f32(kind, operands)?;
    let mut shape = operands[0].shape.clone();
    for t in &operands[1..] {
        shape = broadcast_partial(&shape, &t.shape)?;
    }
    Ok(TensorType::new(DType::F32, shape))
}

pub fn identity(
    _kind: OpKind,
    operands: &[&TensorType],
    _attrs: &Attributes,
    _consts: &[Option<&TensorValue>],
) -> Result<TensorType, String> {
    Ok(operands[0].clone())
}

pub fn constant(
    _kind: OpKind,
    _operands: &[&TensorType],
    attrs: &Attributes,
    _consts: &[Option<&TensorValue>],
) -> Result<TensorType, String> {
    match attrs.get("value") {
        Some(super::AttributeValue::Tensor(t)) => Ok(t.tensor_type()),
        _ => Err("Constant requires a tensor `value`".into()),
    }
}

/// Dims of a rank-`rank` operand, or all-unknown when unranked.
fn dims_of(t: &TensorType, rank: usize, what: &str) -> Result<Vec<Dim>, String> {
    match t.shape.rank() {
        None => Ok(vec![Dim::Unknown; rank]),
        Some(r) if r == rank => Ok(t.shape.dims().to_vec()),
        Some(r) => Err(format!("{what} must have rank {rank}, got {}", t.shape)
            + &if r == 0 { " (scalar)".to_string() } else { String::new() }),
    }
}

fn agree(a: Dim, b: Dim, what: &str) -> Result<Dim, String> {
    match (a, b) {
        (Dim::Known(p), Dim::Known(q)) if p != q => Err(format!("{what}: {p} vs {q}")),
        (Dim::Known(p), _) | (_, Dim::Known(p)) => Ok(Dim::Known(p)),
        _ => Ok(Dim::Unknown),
    }
}

fn matmul_dims(a: &TensorType, b: &TensorType) -> Result<[Dim; 2], String> {
    let da = dims_of(a, 2, "MatMul lhs")?;
    let db = dims_of(b, 2, "MatMul rhs")?;
    agree(da[1], db[0], "MatMul inner dimensions differ")?;
    Ok([da[0], db[1]])
}

pub fn matmul(
    kind: OpKind,
    operands: &[&TensorType],
    _attrs: &Attributes,
    _consts: &[Option<&TensorValue>],
) -> Result<TensorType, String> {
    require_f32(kind, operands)?;
    let [m, n] = matmul_dims(operands[0], operands[1])?;
    Ok(TensorType::new(DType::F32, Shape::ranked(vec![m, n])))
}

/// Whether static `c` provably broadcasts one-way onto static `target`.
pub fn broadcasts_onto(c: &Shape, target: &Shape) -> bool {
    match (c.static_dims(), target.static_dims()) {
        (Some(c), Some(t)) => c.len() <= t.len() && c.iter().rev().zip(t.iter().rev()).all(|(x, y)| *x == 1 || x == y),
        _ => false,
    }
}

pub fn gemm(
    kind: OpKind,
    operands: &[&TensorType],
    _attrs: &Attributes,
    _consts: &[Option<&TensorValue>],
) -> Result<TensorType, String> {
    require_f32(kind, operands)?;
    let [m, n] = matmul_dims(operands[0], operands[1])?;
    let out = Shape::ranked(vec![m, n]);
    if let Some(c) = operands.get(2) {
        let joined = broadcast_partial(&c.shape, &out)?;
        // C may only stretch onto the product, never widen it.
        if let (Some(r), Some(cr)) = (joined.rank(), c.shape.rank()) {
            if r != 2 || cr > 2 {
                return Err(format!("Gemm C of shape {} is not broadcastable to {out}", c.shape));
            }
        }
        if joined.rank().is_some() {
            for (j, o) in joined.dims().iter().zip(out.dims()) {
                if let (Dim::Known(p), Dim::Known(q)) = (j, o) {
                    if p != q {
                        return Err(format!("Gemm C of shape {} is not broadcastable to {out}", c.shape));
                    }
                }
            }
            return Ok(TensorType::new(DType::F32, joined));
        }
    }
    Ok(TensorType::new(DType::F32, out))
}

fn window_out(w: Option<&Window>, axis: usize, extent: Dim) -> Result<Dim, String> {
    match (w, extent) {
        (Some(w), Dim::Known(e)) => w
            .out_extent(axis, e)
            .map(Dim::Known)
            .ok_or_else(|| format!("window {:?} larger than padded extent {e}", w.kernel)),
        _ => Ok(Dim::Unknown),
    }
}

pub fn conv(
    kind: OpKind,
    operands: &[&TensorType],
    attrs: &Attributes,
    _consts: &[Option<&TensorValue>],
) -> Result<TensorType, String> {
    require_f32(kind, operands)?;
    let x = dims_of(operands[0], 4, "Conv input")?;
    let w = dims_of(operands[1], 4, "Conv weights")?;
    agree(x[1], w[1], "Conv input channels differ from weight channels")?;
    let mut co = w[0];
    if let Some(b) = operands.get(2) {
        let bd = dims_of(b, 1, "Conv bias")?;
        co = agree(co, bd[0], "Conv bias length differs from output channels")?;
    }
    let kernel = match (w[2], w[3]) {
        (Dim::Known(kh), Dim::Known(kw)) => Some([kh, kw]),
        _ => None,
    };
    let window = match kernel {
        Some(k) => Some(Window::from_attrs(kind, attrs, Some(k))?),
        None => None,
    };
    let h = window_out(window.as_ref(), 0, x[2])?;
    let wd = window_out(window.as_ref(), 1, x[3])?;
    Ok(TensorType::new(DType::F32, Shape::ranked(vec![x[0], co, h, wd])))
}

pub fn max_pool(
    kind: OpKind,
    operands: &[&TensorType],
    attrs: &Attributes,
    _consts: &[Option<&TensorValue>],
) -> Result<TensorType, String> {
    require_f32(kind, operands)?;
    let x = dims_of(operands[0], 4, "MaxPool input")?;
    let window = Window::from_attrs(kind, attrs, None)?;
    let h = window_out(Some(&window), 0, x[2])?;
    let w = window_out(Some(&window), 1, x[3])?;
    Ok(TensorType::new(DType::F32, Shape::ranked(vec![x[0], x[1], h, w])))
}

pub fn reduce(
    kind: OpKind,
    operands: &[&TensorType],
    attrs: &Attributes,
    _consts: &[Option<&TensorValue>],
) -> Result<TensorType, String> {
    require_f32(kind, operands)?;
    let x = &operands[0].shape;
    let Some(rank) = x.rank() else {
        return Ok(TensorType::unranked(DType::F32));
    };
    let axes = reduce_axes(kind, attrs, rank)?;
    let keep = registry::int_attr(kind, attrs, "keepdims") != 0;
    let dims = x
        .dims()
        .iter()
        .enumerate()
        .filter_map(|(i, d)| match (axes.contains(&i), keep) {
            (false, _) => Some(*d),
            (true, true) => Some(Dim::Known(1)),
            (true, false) => None,
        })
        .collect();
    Ok(TensorType::new(DType::F32, Shape::ranked(dims)))
}

/// Resolves a Reshape target (with ONNX `0` = copy and `-1` = infer) against
/// the input shape.
pub fn resolve_reshape(input: &Shape, target: &[i64]) -> Result<Shape, String> {
    if target.iter().filter(|d| **d == -1).count() > 1 {
        return Err(format!("Reshape target {target:?} has more than one -1"));
    }
    let mut dims = Vec::with_capacity(target.len());
    for (i, &t) in target.iter().enumerate() {
        dims.push(match t {
            -1 => Dim::Unknown,
            0 => match input.rank() {
                Some(r) if i < r => input.dims()[i],
                Some(_) => return Err(format!("Reshape target {target:?} copies a missing input dim {i}")),
                None => Dim::Unknown,
            },
            t if t > 0 => Dim::Known(t as usize),
            t => return Err(format!("Reshape target has invalid dim {t}")),
        });
    }
    let known: usize = dims.iter().filter_map(|d| d.known()).product();
    if let Some(total) = input.elem_count() {
        let unknowns = dims.iter().filter(|d| d.known().is_none()).count();
        if unknowns == 0 && known != total {
            return Err(format!("cannot reshape {input} ({total} elements) to {target:?}"));
        }
        if unknowns == 1 {
            if known == 0 || total % known != 0 {
                return Err(format!("cannot reshape {input} ({total} elements) to {target:?}"));
            }
            for d in &mut dims {
                if *d == Dim::Unknown {
                    *d = Dim::Known(total / known);
                }
            }
        }
    }
    Ok(Shape::ranked(dims))
}

pub fn reshape(
    _kind: OpKind,
    operands: &[&TensorType],
    _attrs: &Attributes,
    consts: &[Option<&TensorValue>],
) -> Result<TensorType, String> {
    let dtype = operands[0].dtype;
    if operands[1].dtype != DType::I64 {
        return Err(format!("Reshape shape operand must be i64, got {}", operands[1].dtype));
    }
    if let Some(Some(target)) = consts.get(1) {
        let target = target.as_i64().ok_or("Reshape shape operand must be i64")?;
        return resolve_reshape(&operands[0].shape, target).map(|s| TensorType::new(dtype, s));
    }
    match operands[1].shape.static_dims().as_deref() {
        Some([k]) => Ok(TensorType::new(dtype, Shape::ranked(vec![Dim::Unknown; *k]))),
        _ => Ok(TensorType::unranked(dtype)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::AttributeValue;

    fn f32t(d: &[usize]) -> TensorType {
        TensorType::of_static(DType::F32, d)
    }

    fn run(kind: OpKind, ops: &[&TensorType], attrs: &Attributes) -> Result<TensorType, String> {
        let consts = vec![None; ops.len()];
        infer(kind, ops, attrs, &consts).map(|mut v| v.remove(0))
    }

    #[test]
    fn matmul_shapes() {
        let a = f32t(&[1, 256]);
        let b = f32t(&[256, 10]);
        assert_eq!(
            run(OpKind::MatMul, &[&a, &b], &Attributes::new()).unwrap(),
            f32t(&[1, 10])
        );
        let bad = f32t(&[255, 10]);
        let err = run(OpKind::MatMul, &[&a, &bad], &Attributes::new()).unwrap_err();
        assert!(err.contains("inner"), "{err}");
    }

    #[test]
    fn conv_shape_from_floor_formula() {
        let x = f32t(&[1, 1, 28, 28]);
        let w = f32t(&[2, 1, 3, 3]);
        let mut attrs = Attributes::new();
        attrs.insert("pads".into(), AttributeValue::Ints(vec![1, 1, 1, 1]));
        attrs.insert("strides".into(), AttributeValue::Ints(vec![1, 1]));
        assert_eq!(run(OpKind::Conv, &[&x, &w], &attrs).unwrap(), f32t(&[1, 2, 28, 28]));
    }

    #[test]
    fn partial_broadcast_keeps_rank() {
        let a = TensorType::new(DType::F32, Shape::ranked(vec![Dim::Unknown, Dim::Known(4)]));
        let b = f32t(&[3, 1]);
        let out = run(OpKind::Add, &[&a, &b], &Attributes::new()).unwrap();
        assert_eq!(out.shape, Shape::ranked(vec![Dim::Known(3), Dim::Known(4)]));
        let u = TensorType::unranked(DType::F32);
        assert_eq!(
            run(OpKind::Add, &[&u, &b], &Attributes::new()).unwrap().shape,
            Shape::unranked()
        );
    }

    #[test]
    fn reduce_keepdims() {
        let x = f32t(&[2, 3, 4]);
        let mut attrs = Attributes::new();
        attrs.insert("axes".into(), AttributeValue::Ints(vec![1]));
        assert_eq!(run(OpKind::ReduceSum, &[&x], &attrs).unwrap(), f32t(&[2, 1, 4]));
        attrs.insert("keepdims".into(), AttributeValue::Int(0));
        assert_eq!(run(OpKind::ReduceSum, &[&x], &attrs).unwrap(), f32t(&[2, 4]));
        assert_eq!(
            run(OpKind::ReduceL1, &[&x], &Attributes::new()).unwrap(),
            f32t(&[1, 1, 1])
        );
    }

    #[test]
    fn reshape_resolution() {
        let s = Shape::from_static(&[3, 4, 5]);
        assert_eq!(resolve_reshape(&s, &[-1]).unwrap(), Shape::from_static(&[60]));
        assert_eq!(resolve_reshape(&s, &[0, -1]).unwrap(), Shape::from_static(&[3, 20]));
        assert!(resolve_reshape(&s, &[-1, -1]).is_err());
        assert!(resolve_reshape(&s, &[7, -1]).is_err());
        assert!(resolve_reshape(&s, &[2, 30]).is_ok());
    }

    #[test]
    fn gemm_c_must_not_widen() {
        let a = f32t(&[2, 3]);
        let b = f32t(&[3, 4]);
        let ok = f32t(&[4]);
        assert_eq!(
            run(OpKind::Gemm, &[&a, &b, &ok], &Attributes::new()).unwrap(),
            f32t(&[2, 4])
        );
        let wide = f32t(&[5, 2, 4]);
        assert!(run(OpKind::Gemm, &[&a, &b, &wide], &Attributes::new()).is_err());
    }
}
