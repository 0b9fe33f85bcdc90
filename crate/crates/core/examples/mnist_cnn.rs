//! Compiles the bundled CNN, runs it on its sample image and checks the
//! result against direct graph evaluation.
//!
//! `cargo run --example mnist_cnn`

use loomc::exec::ExecOptions;
use loomc::graph::{print_graph, reference_eval, OpKind};
use loomc::models::{mnist_cnn, sample_inputs, DEFAULT_SEED};
use loomc::pipeline::{compile_module, max_abs, max_abs_diff, run_program, CompileOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let model = mnist_cnn(DEFAULT_SEED);
    let inputs = sample_inputs(&model, DEFAULT_SEED);

    let start = std::time::Instant::now();
    let c = compile_module(model.clone(), &CompileOptions::default())?;
    println!("compile: {:.3} ms", start.elapsed().as_secs_f64() * 1e3);

    let ops: Vec<&str> = c
        .optimized
        .main()
        .ops
        .iter()
        .filter(|o| o.kind != OpKind::Constant)
        .map(|o| o.kind.name())
        .collect();
    println!("optimized ops: {}", ops.join(" -> "));
    if let Some(r) = &c.report.rewrite {
        println!("MulAddToGemm fired {} time(s)", r.count("MulAddToGemm"));
    }
    println!(
        "gemm ops in graph-opt text: {}",
        print_graph(&c.optimized).matches("\"onnx.Gemm\"").count()
    );

    let (outputs, took) = run_program(&c.program, &inputs, &ExecOptions::default())?;
    println!("run: {:.3} ms", took.as_secs_f64() * 1e3);
    let logits = outputs[0].as_f32().expect("f32 logits");
    let best = (0..logits.len())
        .max_by(|a, b| logits[*a].total_cmp(&logits[*b]))
        .unwrap();
    println!("logits: {logits:?}");
    println!("argmax: {best}");

    let reference = reference_eval(&model, &inputs)?;
    let diff = max_abs_diff(&outputs, &reference).expect("same shapes");
    println!(
        "max abs diff vs reference: {diff:e} (bound {:e})",
        1e-5 * (1.0 + max_abs(&reference))
    );
    Ok(())
}
