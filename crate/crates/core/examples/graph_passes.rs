//! The graph passes on small graphs: ReduceL1 decomposition, MatMul+Add
//! fusion into Gemm, Identity elimination and constant propagation.
//!
//! `cargo run --example graph_passes`

use loomc::graph::{print_graph, AttributeValue, Attributes, GraphFunction, GraphModule, OpKind, MAIN_GRAPH};
use loomc::passes::PassPipeline;
use loomc::tensor::{DType, TensorType, TensorValue};

fn show(title: &str, mut m: GraphModule) -> Result<(), loomc::passes::PassError> {
    println!("// ==== {title} ====");
    print!("{}", print_graph(&m));
    let report = PassPipeline::default().run(&mut m)?;
    println!("// after passes:");
    print!("{}", print_graph(&m));
    println!("// {report:?}\n");
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let f32_ty = |d: &[usize]| TensorType::of_static(DType::F32, d);

    let mut f = GraphFunction::new(MAIN_GRAPH);
    let x = f.add_input(f32_ty(&[3, 4]));
    let mut a = Attributes::new();
    a.insert("axes".into(), AttributeValue::Ints(vec![1]));
    let r = f.push_op(OpKind::ReduceL1, vec![x], a);
    f.results.push(r);
    show(
        "ReduceL1 decomposes into ReduceSum(Abs(x))",
        GraphModule::from_function(f),
    )?;

    let mut f = GraphFunction::new(MAIN_GRAPH);
    let a = f.add_input(f32_ty(&[2, 3]));
    let b = f.add_input(f32_ty(&[3, 4]));
    let c = f.add_input(f32_ty(&[4]));
    let mm = f.push_op(OpKind::MatMul, vec![a, b], Attributes::new());
    let id = f.push_op(OpKind::Identity, vec![mm], Attributes::new());
    let s = f.push_op(OpKind::Add, vec![id, c], Attributes::new());
    f.results.push(s);
    show(
        "Identity vanishes, then MatMul + Add fuses into Gemm",
        GraphModule::from_function(f),
    )?;

    let mut f = GraphFunction::new(MAIN_GRAPH);
    let x = f.add_input(f32_ty(&[2]));
    let y = f.add_input(f32_ty(&[2]));
    let c1 = f.push_constant(TensorValue::from_f32(&[2], vec![1.0, 2.0])?);
    let c2 = f.push_constant(TensorValue::from_f32(&[2], vec![10.0, 20.0])?);
    let l = f.push_op(OpKind::Add, vec![c1, x], Attributes::new());
    let r = f.push_op(OpKind::Add, vec![y, c2], Attributes::new());
    let s = f.push_op(OpKind::Add, vec![l, r], Attributes::new());
    f.results.push(s);
    show(
        "(c1 + x) + (y + c2) normalizes to (x + y) + c",
        GraphModule::from_function(f),
    )?;

    let mut f = GraphFunction::new(MAIN_GRAPH);
    let c1 = f.push_constant(TensorValue::from_f32(&[2], vec![-1.0, 2.0])?);
    let c2 = f.push_constant(TensorValue::from_f32(&[2], vec![3.0, 4.0])?);
    let abs = f.push_op(OpKind::Abs, vec![c1], Attributes::new());
    let m = f.push_op(OpKind::Mul, vec![abs, c2], Attributes::new());
    f.results.push(m);
    show(
        "an all-constant graph folds to one Constant",
        GraphModule::from_function(f),
    )?;
    Ok(())
}
