//! Constant propagation: Add normalization that moves constants rightwards and
//! merges them, then folding of ops whose operands are all constant.
//!
//! Rules (2) to (5) reassociate f32 addition, which can change rounding for
//! general values. They are applied anyway, as in the original design; tests
//! use small integers, where the reassociation is exact.

use crate::graph::{eval_op, AttributeValue, Attributes, GraphModule, GraphOp, OpKind};

use super::pattern::{apply_patterns, build, op, Build, Constraint, Pat, RewritePattern, MAX_SWEEPS};
use super::PassError;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConstPropStats {
    pub normalized: usize,
    pub folded: usize,
    pub removed_constants: usize,
}

fn add(a: Build, b: Build) -> Build {
    build(OpKind::Add, vec![a, b])
}

fn fold_add(a: &'static str, b: &'static str) -> Build {
    Build::Fold {
        kind: OpKind::Add,
        operands: vec![Build::Use(a), Build::Use(b)],
    }
}

fn x_plus_c(bind: &'static str, x: &'static str, c: &'static str) -> Pat {
    op(OpKind::Add, bind, vec![Pat::NonConst(x), Pat::Const(c)])
}

/// The five Add normalizations, most specific first. Inner Adds that get
/// restructured must have a single use, so nothing is duplicated.
pub fn normalization_patterns() -> Vec<RewritePattern> {
    use Build::Use;
    vec![
        // (5) (x + c1) + (y + c2) => (x + y) + (c1 + c2)
        RewritePattern {
            name: "AddConstBoth",
            source: op(
                OpKind::Add,
                "root",
                vec![x_plus_c("l", "x", "c1"), x_plus_c("r", "y", "c2")],
            ),
            constraints: vec![Constraint::HasOneUse("l"), Constraint::HasOneUse("r")],
            target: add(add(Use("x"), Use("y")), fold_add("c1", "c2")),
        },
        // (2) (x + c1) + c2 => x + (c1 + c2)
        RewritePattern {
            name: "AddConstMerge",
            source: op(OpKind::Add, "root", vec![x_plus_c("l", "x", "c1"), Pat::Const("c2")]),
            constraints: vec![Constraint::HasOneUse("l")],
            target: add(Use("x"), fold_add("c1", "c2")),
        },
        // (3) (x + c) + y => (x + y) + c
        RewritePattern {
            name: "AddConstLeft",
            source: op(OpKind::Add, "root", vec![x_plus_c("l", "x", "c"), Pat::NonConst("y")]),
            constraints: vec![Constraint::HasOneUse("l")],
            target: add(add(Use("x"), Use("y")), Use("c")),
        },
        // (4) x + (y + c) => (x + y) + c
        RewritePattern {
            name: "AddConstRight",
            source: op(OpKind::Add, "root", vec![Pat::NonConst("x"), x_plus_c("r", "y", "c")]),
            constraints: vec![Constraint::HasOneUse("r")],
            target: add(add(Use("x"), Use("y")), Use("c")),
        },
        // (1) c + x => x + c
        RewritePattern {
            name: "AddConstCommute",
            source: op(OpKind::Add, "root", vec![Pat::Const("c"), Pat::NonConst("x")]),
            constraints: vec![],
            target: add(Use("x"), Use("c")),
        },
    ]
}

/// Replaces every non-Constant op whose operands are all constant by its value.
fn fold_all(module: &mut GraphModule) -> Result<usize, PassError> {
    let f = module.main_mut();
    let mut folded = 0;
    for i in 0..f.ops.len() {
        let op = &f.ops[i];
        if op.kind == OpKind::Constant {
            continue;
        }
        let Some(consts) = op
            .operands
            .iter()
            .map(|v| f.constant_value(*v))
            .collect::<Option<Vec<_>>>()
        else {
            continue;
        };
        let value = eval_op(op.kind, &op.attrs, &consts).map_err(|e| PassError::Fold {
            op: op.kind,
            message: e.to_string(),
        })?;
        let result = op.result();
        let mut attrs = Attributes::new();
        attrs.insert("value".into(), AttributeValue::Tensor(value));
        f.ops[i] = GraphOp {
            kind: OpKind::Constant,
            operands: Vec::new(),
            results: vec![result],
            attrs,
        };
        folded += 1;
    }
    Ok(folded)
}

pub fn pass_constprop(module: &mut GraphModule) -> Result<ConstPropStats, PassError> {
    let patterns = normalization_patterns();
    let mut stats = ConstPropStats::default();
    for _ in 0..MAX_SWEEPS {
        let normalized = apply_patterns(module.main_mut(), &patterns, "constprop")?.total();
        let folded = fold_all(module)?;
        stats.normalized += normalized;
        stats.folded += folded;
        if normalized == 0 && folded == 0 {
            let f = module.main_mut();
            let before = f.ops.len();
            let dead: Vec<bool> = f
                .ops
                .iter()
                .map(|op| op.kind == OpKind::Constant && f.use_count(op.result()) == 0)
                .collect();
            let mut k = 0;
            f.ops.retain(|_| {
                k += 1;
                !dead[k - 1]
            });
            stats.removed_constants = before - f.ops.len();
            return Ok(stats);
        }
    }
    Err(PassError::FixpointOverflow {
        pass: "constprop",
        sweeps: MAX_SWEEPS,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{print_graph, GraphFunction, ValueId, MAIN_GRAPH};
    use crate::passes::testutil::assert_same_outputs;
    use crate::tensor::{DType, TensorType, TensorValue};

    struct G {
        f: GraphFunction,
    }

    impl G {
        fn new() -> Self {
            G {
                f: GraphFunction::new(MAIN_GRAPH),
            }
        }
        fn input(&mut self) -> ValueId {
            self.f.add_input(TensorType::of_static(DType::F32, &[2, 2]))
        }
        fn c(&mut self, v: f32) -> ValueId {
            self.f.push_constant(TensorValue::filled_f32(&[2, 2], v))
        }
        fn add(&mut self, a: ValueId, b: ValueId) -> ValueId {
            self.f.push_op(OpKind::Add, vec![a, b], Attributes::new())
        }
        fn finish(mut self, r: ValueId) -> GraphModule {
            self.f.results.push(r);
            GraphModule::from_function(self.f)
        }
    }

    /// Structure of the returned value as a string: `x0`, `c3`, `(a+b)`.
    fn shape_of(m: &GraphModule) -> String {
        fn go(f: &GraphFunction, v: ValueId) -> String {
            if let Some(k) = f.inputs.iter().position(|i| *i == v) {
                return format!("x{k}");
            }
            if let Some(c) = f.constant_value(v) {
                return format!("c{}", c.as_f32().unwrap()[0]);
            }
            let op = &f.ops[f.defining_op(v).unwrap()];
            assert_eq!(op.kind, OpKind::Add);
            format!("({}+{})", go(f, op.operands[0]), go(f, op.operands[1]))
        }
        go(m.main(), m.main().results[0])
    }

    fn run(m: &GraphModule) -> GraphModule {
        let mut out = m.clone();
        pass_constprop(&mut out).unwrap();
        assert!(crate::graph::verify(&out).is_empty(), "{}", print_graph(&out));
        assert_same_outputs(m, &out);
        out
    }

    #[test]
    fn rule1_commutes_constant_right() {
        let mut g = G::new();
        let x = g.input();
        let c = g.c(2.0);
        let r = g.add(c, x);
        assert_eq!(shape_of(&run(&g.finish(r))), "(x0+c2)");
    }

    #[test]
    fn rule2_merges_constants() {
        let mut g = G::new();
        let x = g.input();
        let c1 = g.c(1.0);
        let a = g.add(x, c1);
        let c2 = g.c(2.0);
        let r = g.add(a, c2);
        let out = run(&g.finish(r));
        assert_eq!(shape_of(&out), "(x0+c3)");
        assert_eq!(out.main().ops.len(), 2);
    }

    #[test]
    fn rule3_moves_left_constant_out() {
        let mut g = G::new();
        let x = g.input();
        let y = g.input();
        let c = g.c(4.0);
        let a = g.add(x, c);
        let r = g.add(a, y);
        assert_eq!(shape_of(&run(&g.finish(r))), "((x0+x1)+c4)");
    }

    #[test]
    fn rule4_moves_right_constant_out() {
        let mut g = G::new();
        let x = g.input();
        let y = g.input();
        let c = g.c(4.0);
        let a = g.add(y, c);
        let r = g.add(x, a);
        assert_eq!(shape_of(&run(&g.finish(r))), "((x0+x1)+c4)");
    }

    #[test]
    fn rule5_merges_both_sides() {
        let mut g = G::new();
        let x = g.input();
        let y = g.input();
        let c1 = g.c(1.0);
        let c2 = g.c(5.0);
        let l = g.add(x, c1);
        let r = g.add(y, c2);
        let s = g.add(l, r);
        let out = run(&g.finish(s));
        assert_eq!(shape_of(&out), "((x0+x1)+c6)");
        assert_eq!(out.main().ops.len(), 3);
    }

    #[test]
    fn all_constant_graph_folds_to_one_constant() {
        let mut g = G::new();
        let a = g.c(1.5);
        let b = g.c(2.25);
        let s = g.add(a, b);
        let out = run(&g.finish(s));
        let f = out.main();
        assert_eq!(f.ops.len(), 1);
        assert_eq!(f.ops[0].kind, OpKind::Constant);
        assert_eq!(f.constant_value(f.results[0]).unwrap().as_f32().unwrap(), &[3.75; 4]);
    }

    #[test]
    fn shared_inner_add_is_not_restructured() {
        let mut g = G::new();
        let x = g.input();
        let c1 = g.c(1.0);
        let a = g.add(x, c1);
        let c2 = g.c(2.0);
        let r = g.add(a, c2);
        let mut m = g.finish(r);
        m.main_mut().results.push(a);
        m.entry_point.num_outputs = 2;
        let out = run(&m);
        assert_eq!(shape_of(&out), "((x0+c1)+c2)");
    }

    #[test]
    fn no_all_constant_ops_remain() {
        let mut g = G::new();
        let x = g.input();
        let c1 = g.c(1.0);
        let c2 = g.c(3.0);
        let m = g.f.push_op(OpKind::Mul, vec![c1, c2], Attributes::new());
        let e = g.f.push_op(OpKind::Relu, vec![m], Attributes::new());
        let r = g.add(e, x);
        let out = run(&g.finish(r));
        let f = out.main();
        for op in &f.ops {
            assert!(op.kind == OpKind::Constant || op.operands.iter().any(|v| f.constant_value(*v).is_none()));
        }
        assert_eq!(shape_of(&out), "(x0+c3)");
    }
}
