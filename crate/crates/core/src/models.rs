//! Small models used by the examples, the tests and the bundled `models/`
//! directory. Weights come from a seeded ChaCha generator, so every build of a
//! model is bit-identical.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::{AttributeValue, Attributes, GraphFunction, GraphModule, OpKind, MAIN_GRAPH};
use crate::import::{export_model, write_payload_file, ImportError};
use crate::tensor::{DType, TensorType, TensorValue};

/// Seed for bundled weights and sample inputs.
pub const DEFAULT_SEED: u64 = 2020;

/// Uniform values in `[-scale, scale)`.
pub fn random_tensor(rng: &mut ChaCha8Rng, dims: &[usize], scale: f32) -> TensorValue {
    let n: usize = dims.iter().product();
    let data = (0..n).map(|_| rng.random_range(-scale..scale)).collect();
    TensorValue::from_f32(dims, data).expect("length matches dims")
}

fn named_input(f: &mut GraphFunction, name: &str, dims: &[usize]) -> crate::graph::ValueId {
    let v = f.add_input(TensorType::of_static(DType::F32, dims));
    f.set_value_name(v, name);
    v
}

/// `z = x + y` over 3×4×5 tensors.
pub fn add_testcase() -> GraphModule {
    let mut f = GraphFunction::new(MAIN_GRAPH);
    let x = named_input(&mut f, "x", &[3, 4, 5]);
    let y = named_input(&mut f, "y", &[3, 4, 5]);
    let z = f.push_op(OpKind::Add, vec![x, y], Attributes::new());
    f.set_value_name(z, "z");
    f.results.push(z);
    GraphModule::from_function(f)
}

/// `y = LeakyRelu(x)` with alpha 0.1 over a 3×4×5 tensor.
pub fn leaky_relu() -> GraphModule {
    let mut f = GraphFunction::new(MAIN_GRAPH);
    let x = named_input(&mut f, "x", &[3, 4, 5]);
    let mut a = Attributes::new();
    a.insert("alpha".into(), AttributeValue::Float(0.1));
    let y = f.push_op(OpKind::LeakyRelu, vec![x], a);
    f.set_value_name(y, "y");
    f.results.push(y);
    GraphModule::from_function(f)
}

/// `c = a · b` for an `m×k` by `k×n` product.
pub fn matmul(m: usize, k: usize, n: usize) -> GraphModule {
    let mut f = GraphFunction::new(MAIN_GRAPH);
    let a = named_input(&mut f, "a", &[m, k]);
    let b = named_input(&mut f, "b", &[k, n]);
    let c = f.push_op(OpKind::MatMul, vec![a, b], Attributes::new());
    f.set_value_name(c, "c");
    f.results.push(c);
    GraphModule::from_function(f)
}

/// A small MNIST-class CNN on a 1×1×28×28 image:
/// Conv(1→2, 3×3, pad 1) → Relu → MaxPool(2×2) → Reshape(1×392) → MatMul(392×10) → Add.
pub fn mnist_cnn(seed: u64) -> GraphModule {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut f = GraphFunction::new(MAIN_GRAPH);
    let image = named_input(&mut f, "image", &[1, 1, 28, 28]);
    let constant = |f: &mut GraphFunction, name: &str, t: TensorValue| {
        let v = f.push_constant(t);
        f.set_value_name(v, name);
        v
    };
    let w = constant(&mut f, "conv_w", random_tensor(&mut rng, &[2, 1, 3, 3], 0.5));
    let b = constant(&mut f, "conv_b", random_tensor(&mut rng, &[2], 0.1));
    let fc_w = constant(&mut f, "fc_w", random_tensor(&mut rng, &[392, 10], 0.1));
    let fc_b = constant(&mut f, "fc_b", random_tensor(&mut rng, &[10], 0.1));
    let shape = constant(&mut f, "flat_shape", TensorValue::from_i64(&[2], vec![1, 392]).unwrap());

    let ints = |v: &[i64]| AttributeValue::Ints(v.to_vec());
    let mut conv_attrs = Attributes::new();
    conv_attrs.insert("kernel_shape".into(), ints(&[3, 3]));
    conv_attrs.insert("pads".into(), ints(&[1, 1, 1, 1]));
    conv_attrs.insert("strides".into(), ints(&[1, 1]));
    let conv = f.push_op(OpKind::Conv, vec![image, w, b], conv_attrs);
    let relu = f.push_op(OpKind::Relu, vec![conv], Attributes::new());
    let mut pool_attrs = Attributes::new();
    pool_attrs.insert("kernel_shape".into(), ints(&[2, 2]));
    pool_attrs.insert("strides".into(), ints(&[2, 2]));
    let pool = f.push_op(OpKind::MaxPool, vec![relu], pool_attrs);
    let flat = f.push_op(OpKind::Reshape, vec![pool, shape], Attributes::new());
    let mm = f.push_op(OpKind::MatMul, vec![flat, fc_w], Attributes::new());
    let logits = f.push_op(OpKind::Add, vec![mm, fc_b], Attributes::new());
    for (v, n) in [
        (conv, "conv"),
        (relu, "relu"),
        (pool, "pool"),
        (flat, "flat"),
        (mm, "fc"),
        (logits, "logits"),
    ] {
        f.set_value_name(v, n);
    }
    f.results.push(logits);
    GraphModule::from_function(f)
}

/// Sample inputs matching a module's entry signature, seeded.
pub fn sample_inputs(module: &GraphModule, seed: u64) -> Vec<TensorValue> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    module
        .main()
        .input_types()
        .iter()
        .map(|t| {
            let dims = t.shape.static_dims().expect("bundled models have static inputs");
            random_tensor(&mut rng, &dims, 1.0)
        })
        .collect()
}

/// Every bundled model, by directory name.
pub fn bundled() -> Vec<(&'static str, GraphModule)> {
    vec![
        ("add", add_testcase()),
        ("leakyrelu", leaky_relu()),
        ("mm", matmul(4, 6, 4)),
        ("mnist", mnist_cnn(DEFAULT_SEED)),
    ]
}

/// Writes each bundled model to `dir/<name>/` with `input_<i>.tensor` samples.
pub fn write_bundled(dir: &Path) -> Result<(), ImportError> {
    for (name, module) in bundled() {
        let d = dir.join(name);
        export_model(&module, &d)?;
        for (i, t) in sample_inputs(&module, DEFAULT_SEED).iter().enumerate() {
            write_payload_file(&d.join(format!("input_{i}.tensor")), t)?;
        }
    }
    Ok(())
}
