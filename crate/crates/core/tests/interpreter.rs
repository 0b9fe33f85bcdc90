//! Interpreter behaviour: argument checking, debug-mode uninitialized reads,
//! views and trip counts.

use loomc::exec::{interpret, trip_count_report, ExecError, ExecOptions};
use loomc::graph::{EntryPoint, MAIN_GRAPH};
use loomc::loops::{BinaryOp, Index, Iv, LoopModule};
use loomc::lower::lower_loops_to_affine;
use loomc::models::{add_testcase, matmul, sample_inputs};
use loomc::pipeline::{compile_module, CompileOptions, TileSpec};
use loomc::tensor::{DType, TensorValue};

const DEBUG: ExecOptions = ExecOptions { debug: true };
const RELEASE: ExecOptions = ExecOptions { debug: false };

fn entry(num_inputs: usize) -> EntryPoint {
    EntryPoint {
        func: MAIN_GRAPH.into(),
        num_inputs,
        num_outputs: 1,
    }
}

fn idx(l: &[loomc::loops::LoopId]) -> Vec<Index> {
    l.iter().map(|l| Index::var(Iv::Loop(*l))).collect()
}

/// `out[i] = tmp[i] + 1` where `tmp` is never written.
fn reads_scratch() -> LoopModule {
    let mut m = LoopModule::new(MAIN_GRAPH, entry(0));
    let tmp = m.alloc(DType::F32, &[4]);
    let out = m.alloc(DType::F32, &[4]);
    m.results.push(out);
    let l = m.define_loops(&[(0, 4)]).unwrap();
    let mut b = m.body_builder();
    let v = b.load(tmp, idx(&l));
    let one = b.constf(1.0);
    let s = b.binary(BinaryOp::Add, v, one);
    b.store(s, out, idx(&l));
    let body = b.finish();
    m.push_iterate("Scratch", l, body);
    m
}

/// Writes only `out[0..2]` of a 4-element result.
fn half_written() -> LoopModule {
    let mut m = LoopModule::new(MAIN_GRAPH, entry(0));
    let out = m.alloc(DType::F32, &[4]);
    m.results.push(out);
    let l = m.define_loops(&[(0, 2)]).unwrap();
    let mut b = m.body_builder();
    let v = b.constf(3.0);
    b.store(v, out, idx(&l));
    let body = b.finish();
    m.push_iterate("Half", l, body);
    m
}

#[test]
fn debug_mode_reports_uninitialized_reads() {
    let p = lower_loops_to_affine(&reads_scratch()).unwrap();
    assert!(matches!(interpret(&p, &[], &DEBUG), Err(ExecError::UninitializedRead { index, .. }) if index == vec![0]));
    // Release mode reads the zero fill.
    let out = interpret(&p, &[], &RELEASE).unwrap();
    assert_eq!(out[0].as_f32().unwrap(), &[1.0; 4]);
}

#[test]
fn debug_mode_rejects_partially_written_results() {
    let p = lower_loops_to_affine(&half_written()).unwrap();
    assert!(matches!(
        interpret(&p, &[], &DEBUG),
        Err(ExecError::UninitializedRead { index, .. }) if index == vec![2]
    ));
    assert_eq!(
        interpret(&p, &[], &RELEASE).unwrap()[0].as_f32().unwrap(),
        &[3.0, 3.0, 0.0, 0.0]
    );
}

#[test]
fn input_arity_and_types_are_checked() {
    let c = compile_module(add_testcase(), &CompileOptions::default()).unwrap();
    let good = sample_inputs(&c.imported, 1);
    assert_eq!(
        interpret(&c.program, &good[..1], &DEBUG),
        Err(ExecError::ArityMismatch { expected: 2, actual: 1 })
    );
    let wrong_shape = vec![good[0].clone(), TensorValue::filled_f32(&[3, 4], 0.0)];
    assert!(matches!(
        interpret(&c.program, &wrong_shape, &DEBUG),
        Err(ExecError::TypeMismatch { index: 1, .. })
    ));
    let wrong_dtype = vec![good[0].clone(), TensorValue::from_i64(&[3, 4, 5], vec![0; 60]).unwrap()];
    assert!(matches!(
        interpret(&c.program, &wrong_dtype, &DEBUG),
        Err(ExecError::TypeMismatch { index: 1, .. })
    ));
}

#[test]
fn add_nest_runs_sixty_innermost_iterations() {
    let c = compile_module(add_testcase(), &CompileOptions::default()).unwrap();
    let t = trip_count_report(&c.program);
    let totals: Vec<u64> = t.iter().map(|t| t.total).collect();
    assert_eq!(totals, vec![3, 12, 60]);
    assert!(t[2].innermost && !t[1].innermost);
}

fn relu_tiled(n: usize, tile: i64) -> Vec<loomc::exec::TripCount> {
    use loomc::graph::{Attributes, GraphFunction, GraphModule, OpKind};
    use loomc::tensor::TensorType;
    let mut f = GraphFunction::new(MAIN_GRAPH);
    let x = f.add_input(TensorType::of_static(DType::F32, &[n]));
    let r = f.push_op(OpKind::Relu, vec![x], Attributes::new());
    f.results.push(r);
    let opts = CompileOptions {
        tiles: vec![TileSpec {
            op: "Relu".into(),
            size: tile,
        }],
        ..Default::default()
    };
    trip_count_report(&compile_module(GraphModule::from_function(f), &opts).unwrap().program)
}

#[test]
fn blocking_by_two_splits_ten_into_five_tiles_of_two() {
    let t = relu_tiled(10, 2);
    assert_eq!((t[0].entries, t[0].total), (1, 5));
    assert_eq!(
        (t[1].entries, t[1].total, t[1].min_per_entry, t[1].max_per_entry),
        (5, 10, 2, 2)
    );
}

#[test]
fn blocking_by_three_leaves_a_partial_tile() {
    let t = relu_tiled(10, 3);
    assert_eq!(t[0].total, 4);
    assert_eq!((t[1].total, t[1].min_per_entry, t[1].max_per_entry), (10, 1, 3));
}

#[test]
fn tiled_matmul_matches_untiled_bit_for_bit() {
    let m = matmul(5, 7, 3);
    let inputs = sample_inputs(&m, 3);
    let plain = compile_module(m.clone(), &CompileOptions::default()).unwrap();
    for tile in 1..=6 {
        let opts = CompileOptions {
            tiles: vec![TileSpec {
                op: "MatMul".into(),
                size: tile,
            }],
            ..Default::default()
        };
        let tiled = compile_module(m.clone(), &opts).unwrap();
        assert_eq!(
            interpret(&tiled.program, &inputs, &DEBUG).unwrap(),
            interpret(&plain.program, &inputs, &DEBUG).unwrap(),
            "tile {tile}"
        );
    }
}

#[test]
fn reshape_result_is_the_input_data_with_new_dims() {
    use loomc::graph::{Attributes, GraphFunction, GraphModule, OpKind};
    use loomc::tensor::TensorType;
    let mut f = GraphFunction::new(MAIN_GRAPH);
    let x = f.add_input(TensorType::of_static(DType::F32, &[2, 6]));
    let shape = f.push_constant(TensorValue::from_i64(&[2], vec![4, -1]).unwrap());
    let r = f.push_op(OpKind::Reshape, vec![x, shape], Attributes::new());
    let e = f.push_op(OpKind::Exp, vec![r], Attributes::new());
    f.results.push(r);
    f.results.push(e);
    let mut m = GraphModule::from_function(f);
    m.entry_point.num_outputs = 2;
    let c = compile_module(m, &CompileOptions::default()).unwrap();
    let data: Vec<f32> = (0..12).map(|v| v as f32 / 4.0).collect();
    let out = interpret(
        &c.program,
        &[TensorValue::from_f32(&[2, 6], data.clone()).unwrap()],
        &DEBUG,
    )
    .unwrap();
    assert_eq!(out[0].dims(), &[4, 3]);
    assert_eq!(out[0].as_f32().unwrap(), &data[..]);
    let exp: Vec<f32> = data.iter().map(|v| v.exp()).collect();
    assert_eq!(out[1].as_f32().unwrap(), &exp[..]);
}
