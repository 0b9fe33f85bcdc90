use std::collections::HashMap;
use std::fmt::Write;

use crate::tensor::{Shape, TensorData, TensorType, TensorValue};

use super::{AttributeValue, GraphFunction, GraphModule, ValueId};

pub fn print_shape_body(shape: &Shape, dtype: &str) -> String {
    if !shape.rank_known() {
        return format!("*x{dtype}");
    }
    let mut s = String::new();
    for d in shape.dims() {
        write!(s, "{d}x").unwrap();
    }
    s.push_str(dtype);
    s
}

/// `tensor<3x4x5xf32>`, `tensor<?x4xf32>`, `tensor<*xf32>`, `tensor<f32>`.
pub fn print_tensor_type(ty: &TensorType) -> String {
    format!("tensor<{}>", print_shape_body(&ty.shape, ty.dtype.mnemonic()))
}

pub(crate) fn print_f32(v: f32) -> String {
    format!("{v:?}")
}

pub(crate) fn print_dense(t: &TensorValue) -> String {
    let items: Vec<String> = match t.data() {
        TensorData::F32(v) => v.iter().map(|x| print_f32(*x)).collect(),
        TensorData::I64(v) => v.iter().map(|x| x.to_string()).collect(),
    };
    format!("dense<[{}]>", items.join(", "))
}

fn print_attr(v: &AttributeValue) -> String {
    match v {
        AttributeValue::Float(f) => print_f32(*f),
        AttributeValue::Int(i) => i.to_string(),
        AttributeValue::Ints(v) => {
            let items: Vec<String> = v.iter().map(|x| x.to_string()).collect();
            format!("[{}]", items.join(", "))
        }
        AttributeValue::Tensor(t) => {
            format!("{} : {}", print_dense(t), print_tensor_type(&t.tensor_type()))
        }
    }
}

struct Namer {
    names: HashMap<ValueId, String>,
    next: usize,
}

impl Namer {
    fn name(&mut self, v: ValueId) -> String {
        if let Some(n) = self.names.get(&v) {
            return n.clone();
        }
        // Only reachable for values that are used but never defined.
        let n = format!("%undef{}", v.0);
        self.names.insert(v, n.clone());
        n
    }

    fn define(&mut self, v: ValueId) -> String {
        let n = format!("%{}", self.next);
        self.next += 1;
        self.names.insert(v, n.clone());
        n
    }
}

fn type_list(f: &GraphFunction, vals: &[ValueId]) -> String {
    vals.iter()
        .map(|v| print_tensor_type(f.value_type(*v)))
        .collect::<Vec<_>>()
        .join(", ")
}

fn result_type_list(f: &GraphFunction, vals: &[ValueId]) -> String {
    match vals {
        [one] => print_tensor_type(f.value_type(*one)),
        many => format!("({})", type_list(f, many)),
    }
}

fn print_function(f: &GraphFunction, out: &mut String) {
    let mut namer = Namer {
        names: HashMap::new(),
        next: 0,
    };
    let args: Vec<String> = f
        .inputs
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let n = format!("%arg{i}");
            namer.names.insert(*v, n.clone());
            format!("{n}: {}", print_tensor_type(f.value_type(*v)))
        })
        .collect();
    writeln!(
        out,
        "  func @{}({}) -> {} {{",
        f.name,
        args.join(", "),
        result_type_list(f, &f.results)
    )
    .unwrap();
    for op in &f.ops {
        let operands: Vec<String> = op.operands.iter().map(|v| namer.name(*v)).collect();
        let results: Vec<String> = op.results.iter().map(|v| namer.define(*v)).collect();
        let attrs = if op.attrs.is_empty() {
            String::new()
        } else {
            let items: Vec<String> = op
                .attrs
                .iter()
                .map(|(k, v)| format!("{k} = {}", print_attr(v)))
                .collect();
            format!(" {{{}}}", items.join(", "))
        };
        writeln!(
            out,
            "    {} = \"onnx.{}\"({}){} : ({}) -> {}",
            results.join(", "),
            op.kind.name(),
            operands.join(", "),
            attrs,
            type_list(f, &op.operands),
            result_type_list(f, &op.results)
        )
        .unwrap();
    }
    let rets: Vec<String> = f.results.iter().map(|v| namer.name(*v)).collect();
    writeln!(out, "    std.return {} : {}", rets.join(", "), type_list(f, &f.results)).unwrap();
    out.push_str("  }\n");
}

/// Deterministic textual form of a graph module.
pub fn print_graph(module: &GraphModule) -> String {
    let mut out = String::from("module {\n");
    for f in &module.functions {
        print_function(f, &mut out);
    }
    let ep = &module.entry_point;
    writeln!(
        out,
        "  \"onnx.EntryPoint\"() {{func = @{}, numInputs = {} : i32, numOutputs = {} : i32}} : () -> ()",
        ep.func, ep.num_inputs, ep.num_outputs
    )
    .unwrap();
    out.push_str("}\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::testutil::add_module;
    use crate::graph::{Attributes, GraphFunction, OpKind, MAIN_GRAPH};
    use crate::tensor::{DType, Dim};

    #[test]
    fn add_testcase_layout() {
        let text = print_graph(&add_module());
        let expected = "\
module {
  func @main_graph(%arg0: tensor<3x4x5xf32>, %arg1: tensor<3x4x5xf32>) -> tensor<3x4x5xf32> {
    %0 = \"onnx.Add\"(%arg0, %arg1) : (tensor<3x4x5xf32>, tensor<3x4x5xf32>) -> tensor<3x4x5xf32>
    std.return %0 : tensor<3x4x5xf32>
  }
  \"onnx.EntryPoint\"() {func = @main_graph, numInputs = 2 : i32, numOutputs = 1 : i32} : () -> ()
}
";
        assert_eq!(text, expected);
    }

    #[test]
    fn passthrough_function_is_header_and_return() {
        let mut f = GraphFunction::new(MAIN_GRAPH);
        let x = f.add_input(TensorType::of_static(DType::F32, &[2]));
        f.results.push(x);
        let text = print_graph(&GraphModule::from_function(f));
        let body: Vec<&str> = text.lines().skip(1).take_while(|l| *l != "  }").collect();
        assert_eq!(
            body,
            vec![
                "  func @main_graph(%arg0: tensor<2xf32>) -> tensor<2xf32> {",
                "    std.return %arg0 : tensor<2xf32>"
            ]
        );
    }

    #[test]
    fn leaky_relu_alpha_attribute() {
        let mut f = GraphFunction::new(MAIN_GRAPH);
        let x = f.add_input(TensorType::of_static(DType::F32, &[3, 4, 5]));
        let mut attrs = Attributes::new();
        attrs.insert("alpha".into(), AttributeValue::Float(0.1));
        let y = f.push_op(OpKind::LeakyRelu, vec![x], attrs);
        f.results.push(y);
        let text = print_graph(&GraphModule::from_function(f));
        assert!(text.contains("\"onnx.LeakyRelu\"(%arg0) {alpha = 0.1} :"), "{text}");
    }

    #[test]
    fn type_spellings() {
        let t = |s| TensorType::new(DType::F32, s);
        assert_eq!(print_tensor_type(&t(Shape::unranked())), "tensor<*xf32>");
        assert_eq!(print_tensor_type(&t(Shape::scalar())), "tensor<f32>");
        assert_eq!(
            print_tensor_type(&t(Shape::ranked(vec![Dim::Unknown, Dim::Known(4)]))),
            "tensor<?x4xf32>"
        );
        assert_eq!(
            print_tensor_type(&TensorType::of_static(DType::I64, &[1])),
            "tensor<1xi64>"
        );
    }
}
