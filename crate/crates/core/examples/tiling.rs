//! Loop schedules at the loop level: blocking, interchange and skewing, all
//! applied without touching the loop bodies.
//!
//! `cargo run --example tiling`

use loomc::exec::{interpret, trip_count_report, ExecOptions};
use loomc::graph::{Attributes, GraphFunction, GraphModule, OpKind, MAIN_GRAPH};
use loomc::loops::{permute, print_loop_module, verify_loop_module};
use loomc::lower::{lower_graph_to_loops, lower_loops_to_affine, print_affine};
use loomc::models::{random_tensor, sample_inputs};
use loomc::pipeline::{compile_module, CompileOptions, Emit, TileSpec};
use loomc::tensor::{DType, TensorType};
use rand::SeedableRng;

fn unary(kind: OpKind, dims: &[usize]) -> GraphModule {
    let mut f = GraphFunction::new(MAIN_GRAPH);
    let x = f.add_input(TensorType::of_static(DType::F32, dims));
    let r = f.push_op(kind, vec![x], Attributes::new());
    f.results.push(r);
    GraphModule::from_function(f)
}

fn add2(n: usize) -> GraphModule {
    let mut f = GraphFunction::new(MAIN_GRAPH);
    let x = f.add_input(TensorType::of_static(DType::F32, &[n, n]));
    let y = f.add_input(TensorType::of_static(DType::F32, &[n, n]));
    let r = f.push_op(OpKind::Add, vec![x, y], Attributes::new());
    f.results.push(r);
    GraphModule::from_function(f)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // Same as `loomc compile relu.json --tile=Relu:2`.
    let opts = CompileOptions {
        tiles: vec!["Relu:2".parse::<TileSpec>()?],
        ..Default::default()
    };
    let c = compile_module(unary(OpKind::Relu, &[10]), &opts)?;
    println!("// ---- Relu blocked by 2: loop level ----");
    print!("{}", c.emit(Emit::Loop));
    println!("// ---- Relu blocked by 2: affine level ----");
    print!("{}", c.emit(Emit::Affine));

    // A hand-written composition on a 10×10 Add: block i by 3, skew j along
    // i, then move the tile loop of i to the front. The skewed loop has to
    // stay inside the intra-tile loop, which is the one that defines i.
    let module = add2(10);
    let mut lm = lower_graph_to_loops(&module)?;
    let original = lm.iterates[0].original.clone();
    let (i_outer, i_inner) = lm.block(original[0], 3)?;
    let j_skewed = lm.skew(original[1], original[0], 1)?;
    lm.iterates[0].scheduled = permute(&[i_inner, j_skewed, i_outer], &[2, 0, 1])?;
    let diags = verify_loop_module(&lm);
    assert!(diags.is_empty(), "{diags:?}");
    println!("// ---- block 3, skew 1, permute: loop level ----");
    print!("{}", print_loop_module(&lm));
    let program = lower_loops_to_affine(&lm)?;
    println!("// ---- affine level ----");
    print!("{}", print_affine(&program));
    println!("// ---- trip counts ----");
    for t in trip_count_report(&program) {
        println!("{t}");
    }

    // The schedule must not change what is computed.
    let inputs = sample_inputs(&module, 7);
    let plain = compile_module(module, &CompileOptions::default())?;
    let opts = ExecOptions { debug: true };
    let a = interpret(&plain.program, &inputs, &opts)?;
    let b = interpret(&program, &inputs, &opts)?;
    println!("scheduled output identical to unscheduled: {}", a == b);

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    let x = random_tensor(&mut rng, &[4, 4], 1.0);
    let c = compile_module(
        unary(OpKind::Exp, &[4, 4]),
        &CompileOptions {
            tiles: vec!["Exp:3".parse()?],
            ..Default::default()
        },
    )?;
    println!("// ---- Exp over 4×4 blocked by 3 (partial tiles) ----");
    for t in trip_count_report(&c.program) {
        println!("{t}");
    }
    println!(
        "exp(x[0][0]) = {}",
        interpret(&c.program, &[x], &opts)?[0].as_f32().unwrap()[0]
    );
    Ok(())
}
