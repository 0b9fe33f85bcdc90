//! Graph → loop level. Every op result gets one buffer and one iterate whose
//! body computes a single output element.

use std::collections::HashMap;

use crate::graph::registry::{float_attr, int_attr, reduce_axes, Window};
use crate::graph::{GraphFunction, GraphModule, GraphOp, OpKind, ValueId};
use crate::loops::{BinaryOp, BodyBuilder, BufferId, Index, Iv, LoopModule, UnaryOp};
use crate::tensor::DType;

use super::LowerError;

struct Lowering<'a> {
    f: &'a GraphFunction,
    lm: LoopModule,
    buffers: HashMap<ValueId, BufferId>,
}

fn value_label(f: &GraphFunction, v: ValueId) -> String {
    match f.value_name(v) {
        Some(n) => format!("%{} ({n})", v.0),
        None => format!("%{}", v.0),
    }
}

/// Operand index for an output index under multidirectional broadcast:
/// dims are right-aligned and size-1 operand dims read element 0.
fn broadcast_index(out: &[Index], operand_dims: &[usize]) -> Vec<Index> {
    let skip = out.len() - operand_dims.len();
    operand_dims
        .iter()
        .enumerate()
        .map(|(k, &d)| {
            if d == 1 {
                Index::constant(0)
            } else {
                out[skip + k].clone()
            }
        })
        .collect()
}

/// Nested reduction loops over `extents` (outermost first); `leaf` gets their ivs.
fn reduction_nest(
    b: &mut BodyBuilder<'_>,
    extents: &[usize],
    ivs: &mut Vec<Iv>,
    leaf: &mut dyn FnMut(&mut BodyBuilder<'_>, &[Iv]),
) {
    match extents.split_first() {
        None => leaf(b, ivs),
        Some((&n, rest)) => b.for_loop(vec![Index::constant(0)], vec![Index::constant(n as i64)], |b, iv| {
            ivs.push(iv);
            reduction_nest(b, rest, ivs, leaf);
            ivs.pop();
        }),
    }
}

/// `acc[0] = acc[0] + x`.
fn accumulate(b: &mut BodyBuilder<'_>, acc: BufferId, op: BinaryOp, x: crate::loops::ScalarId) {
    let zero = vec![Index::constant(0)];
    let a = b.load(acc, zero.clone());
    let s = b.binary(op, a, x);
    b.store(s, acc, zero);
}

impl Lowering<'_> {
    fn dims(&self, v: ValueId) -> Result<Vec<usize>, LowerError> {
        let ty = self.f.value_type(v);
        let dims = ty
            .shape
            .static_dims()
            .ok_or_else(|| LowerError::DynamicShapeUnsupported {
                value: value_label(self.f, v),
                ty: crate::graph::print_tensor_type(ty),
            })?;
        if dims.contains(&0) {
            return Err(LowerError::EmptyTensor {
                value: value_label(self.f, v),
            });
        }
        Ok(dims)
    }

    fn buffer(&mut self, v: ValueId) -> Result<BufferId, LowerError> {
        if let Some(b) = self.buffers.get(&v) {
            return Ok(*b);
        }
        // Only constants are materialized on first use.
        let t = self.f.constant_value(v).ok_or_else(|| LowerError::Unsupported {
            op: "value".into(),
            message: format!("{} is used before it is defined", value_label(self.f, v)),
        })?;
        self.dims(v)?;
        let b = self.lm.constant(t.clone());
        self.buffers.insert(v, b);
        Ok(b)
    }

    fn require_f32(&self, op: &GraphOp) -> Result<(), LowerError> {
        for &v in &op.operands {
            if self.f.value_type(v).dtype != DType::F32 {
                return Err(LowerError::Unsupported {
                    op: op.kind.name().into(),
                    message: format!("arithmetic on {} operands", self.f.value_type(v).dtype),
                });
            }
        }
        Ok(())
    }

    /// One iterate over `dims` (a single-trip loop for rank 0).
    fn nest(&mut self, tag: OpKind, dims: &[usize], f: impl FnOnce(&mut BodyBuilder<'_>, &[Index])) {
        let bounds: Vec<(i64, i64)> = if dims.is_empty() {
            vec![(0, 1)]
        } else {
            dims.iter().map(|&d| (0, d as i64)).collect()
        };
        let loops = self.lm.define_loops(&bounds).expect("static non-empty bounds");
        let idx: Vec<Index> = if dims.is_empty() {
            Vec::new()
        } else {
            loops.iter().map(|l| Index::var(Iv::Loop(*l))).collect()
        };
        let mut b = self.lm.body_builder();
        f(&mut b, &idx);
        let body = b.finish();
        self.lm.push_iterate(tag.name(), loops, body);
    }

    fn op(&mut self, op: &GraphOp) -> Result<(), LowerError> {
        let out_v = op.result();
        let out_dims = self.dims(out_v)?;
        let operand_dims = op
            .operands
            .iter()
            .map(|v| self.dims(*v))
            .collect::<Result<Vec<_>, _>>()?;
        let out = self.lm.alloc(self.f.value_type(out_v).dtype, &out_dims);
        self.buffers.insert(out_v, out);
        let kind = op.kind;
        match kind {
            OpKind::Constant => unreachable!("constants are materialized on use"),
            OpKind::Add | OpKind::Mul | OpKind::Sub => {
                self.require_f32(op)?;
                let (a, b) = (self.buffer(op.operands[0])?, self.buffer(op.operands[1])?);
                let bin = match kind {
                    OpKind::Add => BinaryOp::Add,
                    OpKind::Mul => BinaryOp::Mul,
                    _ => BinaryOp::Sub,
                };
                self.nest(kind, &out_dims, |bb, idx| {
                    let x = bb.load(a, broadcast_index(idx, &operand_dims[0]));
                    let y = bb.load(b, broadcast_index(idx, &operand_dims[1]));
                    let r = bb.binary(bin, x, y);
                    bb.store(r, out, idx.to_vec());
                });
            }
            OpKind::Abs | OpKind::Exp | OpKind::Relu | OpKind::LeakyRelu => {
                self.require_f32(op)?;
                let a = self.buffer(op.operands[0])?;
                let alpha = float_attr(kind, &op.attrs, "alpha");
                self.nest(kind, &out_dims, |bb, idx| {
                    let x = bb.load(a, idx.to_vec());
                    let r = match kind {
                        OpKind::Abs => bb.unary(UnaryOp::Abs, x),
                        OpKind::Exp => bb.unary(UnaryOp::Exp, x),
                        OpKind::Relu => {
                            let zero = bb.constf(0.0);
                            bb.binary(BinaryOp::Max, x, zero)
                        }
                        _ => {
                            let zero = bb.constf(0.0);
                            let c = bb.binary(BinaryOp::CmpGe, x, zero);
                            let al = bb.constf(alpha);
                            let scaled = bb.binary(BinaryOp::Mul, al, x);
                            bb.select(c, x, scaled)
                        }
                    };
                    bb.store(r, out, idx.to_vec());
                });
            }
            OpKind::Identity => {
                let a = self.buffer(op.operands[0])?;
                self.nest(kind, &out_dims, |bb, idx| {
                    let x = bb.load(a, idx.to_vec());
                    bb.store(x, out, idx.to_vec());
                });
            }
            OpKind::Reshape => {
                let a = self.buffer(op.operands[0])?;
                let n: usize = out_dims.iter().product();
                let src = self.lm.view(a, &[n]);
                let dst = self.lm.view(out, &[n]);
                self.nest(kind, &[n], |bb, idx| {
                    let x = bb.load(src, idx.to_vec());
                    bb.store(x, dst, idx.to_vec());
                });
            }
            OpKind::MatMul | OpKind::Gemm => {
                self.require_f32(op)?;
                let (a, b) = (self.buffer(op.operands[0])?, self.buffer(op.operands[1])?);
                let c = op.operands.get(2).map(|v| self.buffer(*v)).transpose()?;
                let k = operand_dims[0][1];
                let acc = self.lm.alloc(DType::F32, &[1]);
                let gemm = (kind == OpKind::Gemm).then(|| {
                    (
                        float_attr(kind, &op.attrs, "alpha"),
                        float_attr(kind, &op.attrs, "beta"),
                    )
                });
                let c_dims = operand_dims.get(2).cloned();
                self.nest(kind, &out_dims, |bb, idx| {
                    let zero = vec![Index::constant(0)];
                    let z = bb.constf(0.0);
                    bb.store(z, acc, zero.clone());
                    reduction_nest(bb, &[k], &mut Vec::new(), &mut |bb, r| {
                        let kk = Index::var(r[0]);
                        let x = bb.load(a, vec![idx[0].clone(), kk.clone()]);
                        let y = bb.load(b, vec![kk, idx[1].clone()]);
                        let p = bb.binary(BinaryOp::Mul, x, y);
                        accumulate(bb, acc, BinaryOp::Add, p);
                    });
                    let mut r = bb.load(acc, zero);
                    if let Some((alpha, beta)) = gemm {
                        let al = bb.constf(alpha);
                        r = bb.binary(BinaryOp::Mul, al, r);
                        if let (Some(c), Some(cd)) = (c, &c_dims) {
                            let cv = bb.load(c, broadcast_index(idx, cd));
                            let be = bb.constf(beta);
                            let t = bb.binary(BinaryOp::Mul, be, cv);
                            r = bb.binary(BinaryOp::Add, r, t);
                        }
                    }
                    bb.store(r, out, idx.to_vec());
                });
            }
            OpKind::Conv | OpKind::MaxPool => {
                self.require_f32(op)?;
                let x = self.buffer(op.operands[0])?;
                let [_, c, h, w] = operand_dims[0][..] else {
                    unreachable!("verified 4-D input")
                };
                let weights = match kind {
                    OpKind::Conv => {
                        let wd = &operand_dims[1];
                        Some((self.buffer(op.operands[1])?, [wd[2], wd[3]]))
                    }
                    _ => None,
                };
                let bias = op.operands.get(2).map(|v| self.buffer(*v)).transpose()?;
                let win = Window::from_attrs(kind, &op.attrs, weights.map(|(_, k)| k)).map_err(|message| {
                    LowerError::Unsupported {
                        op: kind.name().into(),
                        message,
                    }
                })?;
                let acc = self.lm.alloc(DType::F32, &[1]);
                let (ho, wo) = (out_dims[2], out_dims[3]);
                self.nest(kind, &out_dims, |bb, idx| {
                    let zero = vec![Index::constant(0)];
                    let init = bb.constf(if weights.is_some() { 0.0 } else { f32::NEG_INFINITY });
                    bb.store(init, acc, zero.clone());
                    // Kernel offsets that land inside the image, per spatial axis.
                    let window_bounds = |axis: usize, o: &Index, extent: usize, out_extent: usize| {
                        let (s, p, k) = (win.strides[axis] as i64, win.pads[axis] as i64, win.kernel[axis] as i64);
                        let mut lower = vec![Index::constant(0)];
                        if p > 0 {
                            lower.push(o.scaled(-s).offset(p));
                        }
                        let mut upper = vec![Index::constant(k)];
                        if extent as i64 + p - s * (out_extent as i64 - 1) < k {
                            upper.push(o.scaled(-s).offset(extent as i64 + p));
                        }
                        (lower, upper)
                    };
                    let (lh, uh) = window_bounds(0, &idx[2], h, ho);
                    let (lw, uw) = window_bounds(1, &idx[3], w, wo);
                    let src = |o: &Index, kv: Iv, axis: usize| {
                        o.scaled(win.strides[axis] as i64)
                            .plus(&Index::var(kv))
                            .offset(-(win.pads[axis] as i64))
                    };
                    let window = |bb: &mut BodyBuilder<'_>, ch: Index| {
                        bb.for_loop(lh.clone(), uh.clone(), |bb, i| {
                            bb.for_loop(lw.clone(), uw.clone(), |bb, j| {
                                let xi = vec![idx[0].clone(), ch.clone(), src(&idx[2], i, 0), src(&idx[3], j, 1)];
                                let xv = bb.load(x, xi);
                                match weights {
                                    Some((wb, _)) => {
                                        let wi = vec![idx[1].clone(), ch.clone(), Index::var(i), Index::var(j)];
                                        let wv = bb.load(wb, wi);
                                        let p = bb.binary(BinaryOp::Mul, xv, wv);
                                        accumulate(bb, acc, BinaryOp::Add, p);
                                    }
                                    None => accumulate(bb, acc, BinaryOp::Max, xv),
                                }
                            })
                        })
                    };
                    if weights.is_some() {
                        reduction_nest(bb, &[c], &mut Vec::new(), &mut |bb, ci| window(bb, Index::var(ci[0])));
                    } else {
                        window(bb, idx[1].clone());
                    }
                    let mut r = bb.load(acc, zero);
                    if let Some(bias) = bias {
                        let bv = bb.load(bias, vec![idx[1].clone()]);
                        r = bb.binary(BinaryOp::Add, r, bv);
                    }
                    bb.store(r, out, idx.to_vec());
                });
            }
            OpKind::ReduceSum | OpKind::ReduceL1 => {
                self.require_f32(op)?;
                let x = self.buffer(op.operands[0])?;
                let in_dims = &operand_dims[0];
                let rank = in_dims.len();
                let axes = reduce_axes(kind, &op.attrs, rank).map_err(|message| LowerError::Unsupported {
                    op: kind.name().into(),
                    message,
                })?;
                let keep = int_attr(kind, &op.attrs, "keepdims") != 0;
                let kept: Vec<usize> = (0..rank).filter(|a| !axes.contains(a)).collect();
                let kept_dims: Vec<usize> = kept.iter().map(|&a| in_dims[a]).collect();
                let red_dims: Vec<usize> = axes.iter().map(|&a| in_dims[a]).collect();
                let acc = self.lm.alloc(DType::F32, &[1]);
                let l1 = kind == OpKind::ReduceL1;
                self.nest(kind, &kept_dims, |bb, idx| {
                    let zero = vec![Index::constant(0)];
                    let z = bb.constf(0.0);
                    bb.store(z, acc, zero.clone());
                    reduction_nest(bb, &red_dims, &mut Vec::new(), &mut |bb, r| {
                        let xi: Vec<Index> = (0..rank)
                            .map(|a| match kept.iter().position(|k| *k == a) {
                                Some(p) => idx[p].clone(),
                                None => Index::var(r[axes.iter().position(|k| *k == a).unwrap()]),
                            })
                            .collect();
                        let mut v = bb.load(x, xi);
                        if l1 {
                            v = bb.unary(UnaryOp::Abs, v);
                        }
                        accumulate(bb, acc, BinaryOp::Add, v);
                    });
                    let res = bb.load(acc, zero);
                    let oi: Vec<Index> = if keep {
                        (0..rank)
                            .map(|a| match kept.iter().position(|k| *k == a) {
                                Some(p) => idx[p].clone(),
                                None => Index::constant(0),
                            })
                            .collect()
                    } else {
                        idx.to_vec()
                    };
                    bb.store(res, out, oi);
                });
            }
        }
        Ok(())
    }
}

/// Lowers a shape-inferred module with static shapes to the loop level.
pub fn lower_graph_to_loops(module: &GraphModule) -> Result<LoopModule, LowerError> {
    let f = module.main();
    let mut l = Lowering {
        f,
        lm: LoopModule::new(f.name.clone(), module.entry_point.clone()),
        buffers: HashMap::new(),
    };
    for &v in &f.inputs {
        let dims = l.dims(v)?;
        let b = l.lm.add_input(f.value_type(v).dtype, &dims);
        l.buffers.insert(v, b);
    }
    for op in &f.ops {
        if op.kind != OpKind::Constant {
            l.op(op)?;
        }
    }
    for &v in &f.results {
        let b = l.buffer(v)?;
        l.lm.results.push(b);
    }
    Ok(l.lm)
}
