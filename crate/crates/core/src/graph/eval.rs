//! Direct per-op evaluation with ONNX semantics. This is the oracle the
//! lowered pipeline is checked against, and the arithmetic constant folding uses.

use thiserror::Error;

use crate::tensor::{broadcast_dims, broadcast_source_index, linear_index, strides, unravel_index, TensorValue};

use super::registry::{float_attr, int_attr, reduce_axes, Window};
use super::shape_rules::resolve_reshape;
use super::{constant_payload, Attributes, GraphModule, OpKind, ValueId};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("unsupported op {0}")]
    UnsupportedOp(OpKind),
    #[error("expected {expected} inputs, got {actual}")]
    ArityMismatch { expected: usize, actual: usize },
    #[error("input {index}: expected {expected}, got {actual}")]
    InputMismatch {
        index: usize,
        expected: String,
        actual: String,
    },
    #[error("{op}: {message}")]
    Op { op: OpKind, message: String },
    #[error("value %{0} read before it was computed")]
    Undefined(u32),
}

fn op_err(op: OpKind, message: impl Into<String>) -> EvalError {
    EvalError::Op {
        op,
        message: message.into(),
    }
}

fn f32s(op: OpKind, t: &TensorValue) -> Result<&[f32], EvalError> {
    t.as_f32()
        .ok_or_else(|| op_err(op, format!("expected f32 operand, got {}", t.dtype())))
}

fn unary(op: OpKind, x: &TensorValue, f: impl Fn(f32) -> f32) -> Result<TensorValue, EvalError> {
    let data = f32s(op, x)?.iter().map(|v| f(*v)).collect();
    Ok(TensorValue::from_f32(x.dims(), data).unwrap())
}

fn binary(op: OpKind, a: &TensorValue, b: &TensorValue, f: impl Fn(f32, f32) -> f32) -> Result<TensorValue, EvalError> {
    let (xa, xb) = (f32s(op, a)?, f32s(op, b)?);
    let out = broadcast_dims(a.dims(), b.dims())
        .ok_or_else(|| op_err(op, format!("cannot broadcast {} with {}", a.shape(), b.shape())))?;
    let n: usize = out.iter().product();
    let mut data = Vec::with_capacity(n);
    for off in 0..n {
        let idx = unravel_index(&out, off);
        let ia = linear_index(&a.shape(), &broadcast_source_index(a.dims(), &idx)).unwrap();
        let ib = linear_index(&b.shape(), &broadcast_source_index(b.dims(), &idx)).unwrap();
        data.push(f(xa[ia], xb[ib]));
    }
    Ok(TensorValue::from_f32(&out, data).unwrap())
}

fn matrix_dims(op: OpKind, t: &TensorValue) -> Result<(usize, usize), EvalError> {
    match t.dims() {
        [r, c] => Ok((*r, *c)),
        _ => Err(op_err(op, format!("expected a 2-D operand, got {}", t.shape()))),
    }
}

/// `acc = 0; for k: acc = acc + a[i,k] * b[k,j]`, in that order.
fn matmul(op: OpKind, a: &TensorValue, b: &TensorValue) -> Result<(Vec<f32>, usize, usize), EvalError> {
    let (m, k) = matrix_dims(op, a)?;
    let (k2, n) = matrix_dims(op, b)?;
    if k != k2 {
        return Err(op_err(op, format!("inner dimensions differ: {k} vs {k2}")));
    }
    let (xa, xb) = (f32s(op, a)?, f32s(op, b)?);
    let mut out = vec![0.0f32; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0f32;
            for p in 0..k {
                acc += xa[i * k + p] * xb[p * n + j];
            }
            out[i * n + j] = acc;
        }
    }
    Ok((out, m, n))
}

fn gemm(attrs: &Attributes, inputs: &[&TensorValue]) -> Result<TensorValue, EvalError> {
    let op = OpKind::Gemm;
    let (prod, m, n) = matmul(op, inputs[0], inputs[1])?;
    let alpha = float_attr(op, attrs, "alpha");
    let beta = float_attr(op, attrs, "beta");
    let out = [m, n];
    let data = match inputs.get(2) {
        None => prod.iter().map(|p| alpha * p).collect(),
        Some(c) => {
            let xc = f32s(op, c)?;
            if broadcast_dims(c.dims(), &out).as_deref() != Some(&out[..]) {
                return Err(op_err(
                    op,
                    format!("C of shape {} does not broadcast to {m}x{n}", c.shape()),
                ));
            }
            (0..m * n)
                .map(|off| {
                    let idx = [off / n, off % n];
                    let ic = linear_index(&c.shape(), &broadcast_source_index(c.dims(), &idx)).unwrap();
                    alpha * prod[off] + beta * xc[ic]
                })
                .collect()
        }
    };
    Ok(TensorValue::from_f32(&out, data).unwrap())
}

fn dims4(op: OpKind, t: &TensorValue) -> Result<[usize; 4], EvalError> {
    t.dims()
        .try_into()
        .map_err(|_| op_err(op, format!("expected a 4-D operand, got {}", t.shape())))
}

/// Input row/column touched by output position `o` and kernel offset `k`, if inside the image.
fn source_coord(o: usize, k: usize, stride: usize, pad: usize, extent: usize) -> Option<usize> {
    let pos = (o * stride + k) as isize - pad as isize;
    (pos >= 0 && (pos as usize) < extent).then_some(pos as usize)
}

fn conv(attrs: &Attributes, inputs: &[&TensorValue]) -> Result<TensorValue, EvalError> {
    let op = OpKind::Conv;
    let [n, c, h, w] = dims4(op, inputs[0])?;
    let [co, ci, kh, kw] = dims4(op, inputs[1])?;
    if ci != c {
        return Err(op_err(op, format!("input has {c} channels, weights expect {ci}")));
    }
    let win = Window::from_attrs(op, attrs, Some([kh, kw])).map_err(|e| op_err(op, e))?;
    let ho = win
        .out_extent(0, h)
        .ok_or_else(|| op_err(op, "kernel larger than padded input"))?;
    let wo = win
        .out_extent(1, w)
        .ok_or_else(|| op_err(op, "kernel larger than padded input"))?;
    let x = f32s(op, inputs[0])?;
    let wt = f32s(op, inputs[1])?;
    let bias = match inputs.get(2) {
        Some(b) if b.dims() == [co] => Some(f32s(op, b)?),
        Some(b) => {
            return Err(op_err(
                op,
                format!("bias of shape {} for {co} output channels", b.shape()),
            ))
        }
        None => None,
    };
    let mut out = Vec::with_capacity(n * co * ho * wo);
    for b in 0..n {
        for oc in 0..co {
            for oh in 0..ho {
                for ow in 0..wo {
                    let mut acc = 0.0f32;
                    for ic in 0..c {
                        for i in 0..kh {
                            let Some(ih) = source_coord(oh, i, win.strides[0], win.pads[0], h) else {
                                continue;
                            };
                            for j in 0..kw {
                                let Some(iw) = source_coord(ow, j, win.strides[1], win.pads[1], w) else {
                                    continue;
                                };
                                acc += x[((b * c + ic) * h + ih) * w + iw] * wt[((oc * ci + ic) * kh + i) * kw + j];
                            }
                        }
                    }
                    if let Some(bias) = bias {
                        acc += bias[oc];
                    }
                    out.push(acc);
                }
            }
        }
    }
    Ok(TensorValue::from_f32(&[n, co, ho, wo], out).unwrap())
}

fn max_pool(attrs: &Attributes, x_t: &TensorValue) -> Result<TensorValue, EvalError> {
    let op = OpKind::MaxPool;
    let [n, c, h, w] = dims4(op, x_t)?;
    let win = Window::from_attrs(op, attrs, None).map_err(|e| op_err(op, e))?;
    let ho = win
        .out_extent(0, h)
        .ok_or_else(|| op_err(op, "window larger than padded input"))?;
    let wo = win
        .out_extent(1, w)
        .ok_or_else(|| op_err(op, "window larger than padded input"))?;
    let x = f32s(op, x_t)?;
    let mut out = Vec::with_capacity(n * c * ho * wo);
    for b in 0..n {
        for ch in 0..c {
            for oh in 0..ho {
                for ow in 0..wo {
                    let mut acc = f32::NEG_INFINITY;
                    for i in 0..win.kernel[0] {
                        let Some(ih) = source_coord(oh, i, win.strides[0], win.pads[0], h) else {
                            continue;
                        };
                        for j in 0..win.kernel[1] {
                            let Some(iw) = source_coord(ow, j, win.strides[1], win.pads[1], w) else {
                                continue;
                            };
                            acc = acc.max(x[((b * c + ch) * h + ih) * w + iw]);
                        }
                    }
                    out.push(acc);
                }
            }
        }
    }
    Ok(TensorValue::from_f32(&[n, c, ho, wo], out).unwrap())
}

/// Sums (of `f(x)`) over the reduced axes, visiting reduced elements in row-major order.
fn reduce(
    kind: OpKind,
    attrs: &Attributes,
    x_t: &TensorValue,
    f: impl Fn(f32) -> f32,
) -> Result<TensorValue, EvalError> {
    let x = f32s(kind, x_t)?;
    let dims = x_t.dims();
    let axes = reduce_axes(kind, attrs, dims.len()).map_err(|e| op_err(kind, e))?;
    let keep = int_attr(kind, attrs, "keepdims") != 0;
    let kept: Vec<usize> = (0..dims.len()).filter(|a| !axes.contains(a)).collect();
    let kept_dims: Vec<usize> = kept.iter().map(|a| dims[*a]).collect();
    let red_dims: Vec<usize> = axes.iter().map(|a| dims[*a]).collect();
    let st = strides(dims);
    let n_out: usize = kept_dims.iter().product();
    let n_red: usize = red_dims.iter().product();
    let mut out = Vec::with_capacity(n_out);
    for o in 0..n_out {
        let oi = unravel_index(&kept_dims, o);
        let base: usize = kept.iter().zip(&oi).map(|(a, i)| st[*a] * i).sum();
        let mut acc = 0.0f32;
        for r in 0..n_red {
            let ri = unravel_index(&red_dims, r);
            let off: usize = base + axes.iter().zip(&ri).map(|(a, i)| st[*a] * i).sum::<usize>();
            acc += f(x[off]);
        }
        out.push(acc);
    }
    let out_dims: Vec<usize> = if keep {
        (0..dims.len())
            .map(|a| if axes.contains(&a) { 1 } else { dims[a] })
            .collect()
    } else {
        kept_dims
    };
    Ok(TensorValue::from_f32(&out_dims, out).unwrap())
}

fn reshape(x: &TensorValue, target: &TensorValue) -> Result<TensorValue, EvalError> {
    let op = OpKind::Reshape;
    let t = target.as_i64().ok_or_else(|| op_err(op, "shape operand must be i64"))?;
    let shape = resolve_reshape(&x.shape(), t).map_err(|e| op_err(op, e))?;
    let dims = shape
        .static_dims()
        .ok_or_else(|| op_err(op, "target shape is not static"))?;
    x.reshaped(&dims).map_err(|e| op_err(op, e.to_string()))
}

/// Evaluates one op on concrete inputs.
pub fn eval_op(kind: OpKind, attrs: &Attributes, inputs: &[&TensorValue]) -> Result<TensorValue, EvalError> {
    let s = super::schema(kind);
    if inputs.len() < s.min_operands || inputs.len() > s.max_operands {
        return Err(EvalError::ArityMismatch {
            expected: s.min_operands,
            actual: inputs.len(),
        });
    }
    match kind {
        OpKind::Add => binary(kind, inputs[0], inputs[1], |a, b| a + b),
        OpKind::Mul => binary(kind, inputs[0], inputs[1], |a, b| a * b),
        OpKind::Sub => binary(kind, inputs[0], inputs[1], |a, b| a - b),
        OpKind::Abs => unary(kind, inputs[0], f32::abs),
        OpKind::Exp => unary(kind, inputs[0], f32::exp),
        OpKind::Relu => unary(kind, inputs[0], |x| x.max(0.0)),
        OpKind::LeakyRelu => {
            let alpha = float_attr(kind, attrs, "alpha");
            unary(kind, inputs[0], |x| if x >= 0.0 { x } else { alpha * x })
        }
        OpKind::MatMul => {
            let (data, m, n) = matmul(kind, inputs[0], inputs[1])?;
            Ok(TensorValue::from_f32(&[m, n], data).unwrap())
        }
        OpKind::Gemm => gemm(attrs, inputs),
        OpKind::Conv => conv(attrs, inputs),
        OpKind::MaxPool => max_pool(attrs, inputs[0]),
        OpKind::ReduceSum => reduce(kind, attrs, inputs[0], |x| x),
        OpKind::ReduceL1 => reduce(kind, attrs, inputs[0], f32::abs),
        OpKind::Reshape => reshape(inputs[0], inputs[1]),
        OpKind::Identity => Ok(inputs[0].clone()),
        OpKind::Constant => match attrs.get("value") {
            Some(super::AttributeValue::Tensor(t)) => Ok(t.clone()),
            _ => Err(op_err(kind, "missing `value`")),
        },
    }
}

fn check_input(index: usize, expected: &crate::tensor::TensorType, actual: &TensorValue) -> Result<(), EvalError> {
    let compatible = expected.dtype == actual.dtype() && expected.shape.refine(&actual.shape()).is_some();
    if compatible {
        Ok(())
    } else {
        Err(EvalError::InputMismatch {
            index,
            expected: super::print_tensor_type(expected),
            actual: super::print_tensor_type(&actual.tensor_type()),
        })
    }
}

/// Runs the entry function op by op in list order.
pub fn reference_eval(module: &GraphModule, inputs: &[TensorValue]) -> Result<Vec<TensorValue>, EvalError> {
    let f = module.main();
    if inputs.len() != f.inputs.len() {
        return Err(EvalError::ArityMismatch {
            expected: f.inputs.len(),
            actual: inputs.len(),
        });
    }
    let mut env: Vec<Option<TensorValue>> = vec![None; f.num_values()];
    for (i, (v, t)) in f.inputs.iter().zip(inputs).enumerate() {
        check_input(i, f.value_type(*v), t)?;
        env[v.index()] = Some(t.clone());
    }
    let get = |env: &Vec<Option<TensorValue>>, v: ValueId| -> Result<TensorValue, EvalError> {
        env[v.index()].clone().ok_or(EvalError::Undefined(v.0))
    };
    for op in &f.ops {
        let value = if let Some(c) = constant_payload(op) {
            c.clone()
        } else {
            let args = op
                .operands
                .iter()
                .map(|v| get(&env, *v))
                .collect::<Result<Vec<_>, _>>()?;
            let refs: Vec<&TensorValue> = args.iter().collect();
            eval_op(op.kind, &op.attrs, &refs)?
        };
        env[op.result().index()] = Some(value);
    }
    f.results.iter().map(|v| get(&env, *v)).collect()
}
