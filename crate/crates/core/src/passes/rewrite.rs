use crate::graph::shape_rules::broadcasts_onto;
use crate::graph::{GraphFunction, GraphModule, OpKind};

use super::pattern::{apply_patterns, build, op, Build, Constraint, Match, Pat, RewritePattern, RewriteStats};
use super::PassError;

/// Both factors are matrices and the addend stretches onto their product.
fn gemm_shapes(f: &GraphFunction, m: &Match) -> bool {
    let rank2 = |n: &str| f.value_type(m.value(n)).shape.rank() == Some(2);
    rank2("m1")
        && rank2("m2")
        && broadcasts_onto(&f.value_type(m.value("m3")).shape, &f.value_type(m.value("res")).shape)
}

/// `(AddOp (MatMulOp:$res $m1, $m2), $m3) -> (GemmOp $m1, $m2, $m3)` when `$res`
/// has one use, and `Identity(x) -> x`.
pub fn rewrite_patterns() -> Vec<RewritePattern> {
    vec![
        RewritePattern {
            name: "MulAddToGemm",
            source: op(
                OpKind::Add,
                "root",
                vec![
                    op(OpKind::MatMul, "res", vec![Pat::Capture("m1"), Pat::Capture("m2")]),
                    Pat::Capture("m3"),
                ],
            ),
            constraints: vec![
                Constraint::HasOneUse("res"),
                Constraint::Custom {
                    name: "GemmShapes",
                    check: gemm_shapes,
                },
            ],
            target: build(OpKind::Gemm, vec![Build::Use("m1"), Build::Use("m2"), Build::Use("m3")]),
        },
        RewritePattern {
            name: "IdentityElimination",
            source: op(OpKind::Identity, "root", vec![Pat::Capture("x")]),
            constraints: vec![],
            target: Build::Use("x"),
        },
    ]
}

pub fn pass_graph_rewrite(module: &mut GraphModule) -> Result<RewriteStats, PassError> {
    apply_patterns(module.main_mut(), &rewrite_patterns(), "rewrite")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Attributes, MAIN_GRAPH};
    use crate::passes::testutil::assert_same_outputs;
    use crate::tensor::{DType, TensorType};

    fn mm_add(extra_use: bool) -> GraphModule {
        let mut f = GraphFunction::new(MAIN_GRAPH);
        let a = f.add_input(TensorType::of_static(DType::F32, &[2, 3]));
        let b = f.add_input(TensorType::of_static(DType::F32, &[3, 4]));
        let c = f.add_input(TensorType::of_static(DType::F32, &[4]));
        let mm = f.push_op(OpKind::MatMul, vec![a, b], Attributes::new());
        let s = f.push_op(OpKind::Add, vec![mm, c], Attributes::new());
        f.results.push(s);
        if extra_use {
            let r = f.push_op(OpKind::Relu, vec![mm], Attributes::new());
            f.results.push(r);
        }
        GraphModule::from_function(f)
    }

    fn kinds(m: &GraphModule) -> Vec<OpKind> {
        m.main().ops.iter().map(|o| o.kind).collect()
    }

    #[test]
    fn single_use_matmul_fuses() {
        let before = mm_add(false);
        let mut m = before.clone();
        let stats = pass_graph_rewrite(&mut m).unwrap();
        assert_eq!(kinds(&m), vec![OpKind::Gemm]);
        assert_eq!(stats.count("MulAddToGemm"), 1);
        let f = m.main();
        assert_eq!(f.ops[0].operands, f.inputs);
        assert!(f.ops[0].attrs.is_empty());
        // alpha = beta = 1 makes Gemm's epilogue exact, so fusion is bit-preserving.
        assert_same_outputs(&before, &m);
    }

    #[test]
    fn shared_matmul_does_not_fuse() {
        let mut m = mm_add(true);
        let stats = pass_graph_rewrite(&mut m).unwrap();
        assert_eq!(stats.total(), 0);
        assert_eq!(kinds(&m), vec![OpKind::MatMul, OpKind::Add, OpKind::Relu]);
    }

    #[test]
    fn identity_chains_vanish() {
        for len in 1..=5 {
            let mut f = GraphFunction::new(MAIN_GRAPH);
            let x = f.add_input(TensorType::of_static(DType::F32, &[3]));
            let mut v = x;
            for _ in 0..len {
                v = f.push_op(OpKind::Identity, vec![v], Attributes::new());
            }
            f.results.push(v);
            let before = GraphModule::from_function(f);
            let mut m = before.clone();
            pass_graph_rewrite(&mut m).unwrap();
            assert!(m.main().ops.is_empty());
            assert_eq!(m.main().results, vec![x]);
            assert_same_outputs(&before, &m);
        }
    }

    #[test]
    fn right_hand_matmul_is_left_alone() {
        let mut f = GraphFunction::new(MAIN_GRAPH);
        let a = f.add_input(TensorType::of_static(DType::F32, &[2, 2]));
        let mm = f.push_op(OpKind::MatMul, vec![a, a], Attributes::new());
        let s = f.push_op(OpKind::Add, vec![a, mm], Attributes::new());
        f.results.push(s);
        let mut m = GraphModule::from_function(f);
        assert_eq!(pass_graph_rewrite(&mut m).unwrap().total(), 0);
    }

    #[test]
    fn addend_that_widens_is_not_fused() {
        let mut f = GraphFunction::new(MAIN_GRAPH);
        let a = f.add_input(TensorType::of_static(DType::F32, &[2, 2]));
        let c = f.add_input(TensorType::of_static(DType::F32, &[3, 2, 2]));
        let mm = f.push_op(OpKind::MatMul, vec![a, a], Attributes::new());
        let s = f.push_op(OpKind::Add, vec![mm, c], Attributes::new());
        f.results.push(s);
        let mut m = GraphModule::from_function(f);
        assert_eq!(pass_graph_rewrite(&mut m).unwrap().total(), 0);
    }
}
