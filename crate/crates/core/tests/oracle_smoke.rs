mod common;

use common::*;
use loomc::graph::reference_eval;
use loomc::pipeline::CompileOptions;

#[test]
fn every_op_matches_reference_on_a_few_instances() {
    let mut r = rng(7);
    for kind in operand_ops() {
        for _ in 0..10 {
            let inst = random_instance(kind, &mut r);
            let expected = reference_eval(&inst.module, &inst.inputs).unwrap();
            let got = compile_and_run(inst.module.clone(), &inst.inputs, &CompileOptions::default());
            assert_eq!(got.len(), expected.len());
            for (g, e) in got.iter().zip(&expected) {
                assert!(
                    g.bit_eq(e),
                    "{kind}: {g:?} vs {e:?}\n{}",
                    loomc::graph::print_graph(&inst.module)
                );
            }
        }
    }
}
