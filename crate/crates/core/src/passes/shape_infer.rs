use crate::graph::{shape_rules, GraphModule};
use crate::tensor::TensorType;

use super::PassError;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ShapeInferenceStats {
    /// Sweeps that refined at least one type; the final confirming sweep is not counted.
    pub iterations: usize,
    /// Number of individual type refinements.
    pub refinements: usize,
}

/// Refines every op result type from its operands until nothing changes.
pub fn pass_shape_inference(module: &mut GraphModule) -> Result<ShapeInferenceStats, PassError> {
    let f = module.main_mut();
    let mut stats = ShapeInferenceStats::default();
    // Ops are in topological order, so one sweep normally settles everything;
    // refinements are monotone, which bounds the loop regardless.
    let budget = f.ops.len() + 1;
    loop {
        let mut changed = false;
        for i in 0..f.ops.len() {
            let op = &f.ops[i];
            let tys: Vec<&TensorType> = op.operands.iter().map(|v| f.value_type(*v)).collect();
            let consts: Vec<_> = op.operands.iter().map(|v| f.constant_value(*v)).collect();
            let inferred =
                shape_rules::infer(op.kind, &tys, &op.attrs, &consts).map_err(|message| PassError::ShapeMismatch {
                    op: i,
                    kind: op.kind,
                    message,
                })?;
            let results = op.results.clone();
            let kind = op.kind;
            for (r, new) in results.into_iter().zip(inferred) {
                let old = f.value_type(r);
                let shape = (old.dtype == new.dtype)
                    .then(|| old.shape.refine(&new.shape))
                    .flatten()
                    .ok_or_else(|| PassError::ShapeMismatch {
                        op: i,
                        kind,
                        message: format!(
                            "result declared {} but operands imply {}",
                            crate::graph::print_tensor_type(old),
                            crate::graph::print_tensor_type(&new)
                        ),
                    })?;
                if shape != old.shape {
                    let dtype = old.dtype;
                    f.set_value_type(r, TensorType::new(dtype, shape));
                    stats.refinements += 1;
                    changed = true;
                }
            }
        }
        if !changed {
            return Ok(stats);
        }
        stats.iterations += 1;
        if stats.iterations > budget {
            return Err(PassError::FixpointOverflow {
                pass: "shape-inference",
                sweeps: stats.iterations,
            });
        }
    }
}
