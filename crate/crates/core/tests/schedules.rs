//! Schedules never change which iterations run or what they compute.

mod common;

use common::*;
use loomc::exec::{interpret, ExecOptions};
use loomc::lower::{lower_graph_to_loops, lower_loops_to_affine};
use loomc::models::sample_inputs;
use loomc::pipeline::{compile_module, CompileOptions};
use proptest::prelude::*;

fn step() -> impl Strategy<Value = (u8, usize, usize)> {
    (0u8..4, 0usize..8, 0usize..120)
}

/// Turns raw draws into a step valid for a list of `len` loops.
fn decode(raw: (u8, usize, usize), len: usize) -> SchedOp {
    let (kind, a, b) = raw;
    match kind {
        0 => SchedOp::Block { pos: a % len, tile: 2 },
        1 => SchedOp::Block { pos: a % len, tile: 3 },
        2 => {
            let mut rest: Vec<usize> = (0..len).collect();
            let mut perm = Vec::new();
            let mut k = b;
            while !rest.is_empty() {
                perm.push(rest.remove(k % rest.len()));
                k /= perm.len();
            }
            SchedOp::Permute(perm)
        }
        _ => SchedOp::Skew {
            pos: a % len,
            along: b % 2,
        },
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn accepted_schedules_visit_each_tuple_once(
        n in 1usize..=12,
        m in 1usize..=12,
        raw in proptest::collection::vec(step(), 0..=4),
    ) {
        let module = add_nest(n, m);
        let mut lm = lower_graph_to_loops(&module).unwrap();
        let mut ops = Vec::new();
        let mut len = 2;
        for r in raw {
            let op = decode(r, len);
            len += matches!(op, SchedOp::Block { .. }) as usize;
            ops.push(op);
        }
        if apply_schedule(&mut lm, 0, &ops).is_err() {
            // A loop skewed along its own root; nothing to run.
            return Ok(());
        }
        let Ok(tuples) = visited_tuples(&lm, 0) else {
            return Ok(());
        };
        prop_assert_eq!(tuples, rectangle(n as i64, m as i64));

        let inputs = sample_inputs(&module, 5);
        let scheduled = lower_loops_to_affine(&lm).unwrap();
        let plain = compile_module(module, &CompileOptions::default()).unwrap();
        let dbg = ExecOptions { debug: true };
        prop_assert_eq!(
            interpret(&scheduled, &inputs, &dbg).unwrap(),
            interpret(&plain.program, &inputs, &dbg).unwrap()
        );
    }

    #[test]
    fn blocking_any_range_covers_it(lb in -5i64..5, len in 1i64..20, tile in 1i64..7) {
        use loomc::graph::{EntryPoint, MAIN_GRAPH};
        use loomc::loops::LoopModule;
        let mut lm = LoopModule::new(MAIN_GRAPH, EntryPoint { func: MAIN_GRAPH.into(), num_inputs: 0, num_outputs: 0 });
        let l = lm.define_loops(&[(lb, lb + len)]).unwrap();
        let it = lm.push_iterate("Range", l.clone(), Vec::new());
        let (o, i) = lm.block(l[0], tile).unwrap();
        lm.iterates[it].scheduled = vec![o, i];
        let t = visited_tuples(&lm, it).unwrap();
        let want: Vec<Vec<i64>> = (lb..lb + len).map(|v| vec![v]).collect();
        prop_assert_eq!(t, want);
    }
}

#[test]
fn every_depth_two_composition_is_neutral_or_rejected() {
    let (mut accepted, mut rejected) = (0, 0);
    for ops in schedule_compositions(2, 2, 2) {
        let mut lm = lower_graph_to_loops(&add_nest(6, 5)).unwrap();
        if apply_schedule(&mut lm, 0, &ops).is_err() {
            rejected += 1;
            continue;
        }
        match visited_tuples(&lm, 0) {
            Ok(t) => {
                assert_eq!(t, rectangle(6, 5), "{ops:?}");
                accepted += 1;
            }
            Err(_) => rejected += 1,
        }
    }
    assert!(
        accepted > 50 && rejected > 0,
        "{accepted} accepted, {rejected} rejected"
    );
}

#[test]
fn skew_outside_its_along_loop_is_rejected() {
    let mut lm = lower_graph_to_loops(&add_nest(4, 4)).unwrap();
    apply_schedule(
        &mut lm,
        0,
        &[SchedOp::Skew { pos: 1, along: 0 }, SchedOp::Permute(vec![1, 0])],
    )
    .unwrap();
    let err = visited_tuples(&lm, 0).unwrap_err();
    assert!(err.contains("scheduled outside"), "{err}");
}

#[test]
fn skew_along_its_own_loop_is_refused() {
    let mut lm = lower_graph_to_loops(&add_nest(4, 4)).unwrap();
    assert!(apply_schedule(&mut lm, 0, &[SchedOp::Skew { pos: 0, along: 0 }]).is_err());
}
