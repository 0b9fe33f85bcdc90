use crate::graph::{GraphModule, OpKind};

use super::pattern::{apply_patterns, op, AttrsFrom, Build, Pat, RewritePattern, RewriteStats};
use super::PassError;

/// `ReduceL1(x) = ReduceSum(Abs(x))`, keeping axes and keepdims.
pub fn decompose_patterns() -> Vec<RewritePattern> {
    vec![RewritePattern {
        name: "ReduceL1Pattern",
        source: op(OpKind::ReduceL1, "root", vec![Pat::Capture("x")]),
        constraints: vec![],
        target: Build::Op {
            kind: OpKind::ReduceSum,
            operands: vec![Build::Op {
                kind: OpKind::Abs,
                operands: vec![Build::Use("x")],
                attrs: AttrsFrom::Empty,
            }],
            attrs: AttrsFrom::Op("root"),
        },
    }]
}

pub fn pass_decompose(module: &mut GraphModule) -> Result<RewriteStats, PassError> {
    apply_patterns(module.main_mut(), &decompose_patterns(), "decompose")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{AttributeValue, Attributes, GraphFunction, MAIN_GRAPH};
    use crate::passes::testutil::assert_same_outputs;
    use crate::tensor::{DType, TensorType};

    fn reduce_l1_module() -> GraphModule {
        let mut f = GraphFunction::new(MAIN_GRAPH);
        let x = f.add_input(TensorType::of_static(DType::F32, &[2, 3]));
        let mut attrs = Attributes::new();
        attrs.insert("axes".into(), AttributeValue::Ints(vec![1]));
        attrs.insert("keepdims".into(), AttributeValue::Int(1));
        let r = f.push_op(OpKind::ReduceL1, vec![x], attrs);
        f.results.push(r);
        GraphModule::from_function(f)
    }

    #[test]
    fn reduce_l1_becomes_sum_of_abs() {
        let before = reduce_l1_module();
        let mut after = before.clone();
        let stats = pass_decompose(&mut after).unwrap();
        assert_eq!(stats.count("ReduceL1Pattern"), 1);
        let f = after.main();
        let kinds: Vec<OpKind> = f.ops.iter().map(|o| o.kind).collect();
        assert_eq!(kinds, vec![OpKind::Abs, OpKind::ReduceSum]);
        assert_eq!(f.ops[1].attrs, before.main().ops[0].attrs);
        assert_eq!(
            f.value_type(f.results[0]),
            before.main().value_type(before.main().results[0])
        );
        assert_same_outputs(&before, &after);
    }

    #[test]
    fn no_reduce_l1_is_unchanged() {
        let m = crate::graph::testutil::add_module();
        let mut after = m.clone();
        pass_decompose(&mut after).unwrap();
        assert_eq!(after, m);
    }
}
