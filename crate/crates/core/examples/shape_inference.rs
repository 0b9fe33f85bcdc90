//! Shape inference on a graph whose intermediate types start unranked.
//!
//! `cargo run --example shape_inference`

use loomc::graph::{print_graph, AttributeValue, Attributes, GraphFunction, GraphModule, OpKind, MAIN_GRAPH};
use loomc::passes::pass_shape_inference;
use loomc::tensor::{DType, TensorType, TensorValue};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let ints = |v: &[i64]| AttributeValue::Ints(v.to_vec());
    let mut f = GraphFunction::new(MAIN_GRAPH);
    let x = f.add_input(TensorType::of_static(DType::F32, &[1, 3, 11, 9]));
    let w = f.add_input(TensorType::of_static(DType::F32, &[4, 3, 3, 3]));
    let mut conv = Attributes::new();
    conv.insert("strides".into(), ints(&[2, 1]));
    conv.insert("pads".into(), ints(&[1, 0, 1, 0]));
    let c = f.push_op(OpKind::Conv, vec![x, w], conv);
    let mut pool = Attributes::new();
    pool.insert("kernel_shape".into(), ints(&[2, 2]));
    pool.insert("strides".into(), ints(&[2, 2]));
    let p = f.push_op(OpKind::MaxPool, vec![c], pool);
    let shape = f.push_constant(TensorValue::from_i64(&[2], vec![1, -1])?);
    let flat = f.push_op(OpKind::Reshape, vec![p, shape], Attributes::new());
    let mut keep = Attributes::new();
    keep.insert("keepdims".into(), AttributeValue::Int(0));
    let s = f.push_op(OpKind::ReduceSum, vec![flat], keep);
    f.results.push(s);

    // Forget everything the builder inferred.
    for v in [c, p, flat, s] {
        f.set_value_type(v, TensorType::unranked(DType::F32));
    }
    let mut m = GraphModule::from_function(f);
    println!("// before:");
    print!("{}", print_graph(&m));
    let stats = pass_shape_inference(&mut m)?;
    println!(
        "// after ({} sweep(s), {} refinement(s)):",
        stats.iterations, stats.refinements
    );
    print!("{}", print_graph(&m));
    Ok(())
}
