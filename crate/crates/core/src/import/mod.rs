//! On-disk model format: a JSON manifest laid out like an ONNX `ModelProto`
//! plus `.tensor` payload files for tensor data.

mod manifest;
pub mod payload;

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::graph::{
    lookup_op, verify, AttributeValue, Attributes, Diagnostic, GraphFunction, GraphModule, OpKind, ValueId, MAIN_GRAPH,
};
use crate::tensor::{DType, Dim, Shape, TensorData, TensorType, TensorValue};

pub use manifest::{
    AttributeProto, DimProto, GraphProto, ModelManifest, NodeProto, OperatorSetId, ShapeProto, StringEntry,
    TensorProto, TensorTypeProto, TypeProto, ValueInfoProto,
};
pub use payload::{decode_payload, decode_payload_on, encode_payload, encode_payload_on, HostOrder, PayloadError};

pub const MANIFEST_FILE: &str = "model.json";

#[derive(Debug, Error)]
pub enum ImportError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed manifest: {0}")]
    Parse(String),
    #[error("unsupported op `{op_type}` (node {node})")]
    UnsupportedOp { op_type: String, node: String },
    #[error(
        "tensor `{tensor}` has unsupported element type {name} (code {code}); only float32 and int64 are supported"
    )]
    UnsupportedDtype {
        tensor: String,
        code: i64,
        name: &'static str,
    },
    #[error("payload for `{tensor}` holds {actual} bytes, expected {expected}")]
    PayloadSizeMismatch {
        tensor: String,
        expected: usize,
        actual: usize,
    },
    #[error("payload for `{tensor}`: {source}")]
    Payload {
        tensor: String,
        #[source]
        source: PayloadError,
    },
    #[error("imported module failed verification:\n{}", crate::graph::render_diagnostics(.0))]
    Invalid(Vec<Diagnostic>),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ImportError + '_ {
    move |source| ImportError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn parse_err(msg: impl Into<String>) -> ImportError {
    ImportError::Parse(msg.into())
}

pub fn read_manifest(path: &Path) -> Result<ModelManifest, ImportError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| parse_err(format!("{}: {e}", path.display())))
}

/// Reads `model.json`-style manifests; payloads are looked up next to the manifest.
pub fn import_model_file(manifest_path: &Path) -> Result<GraphModule, ImportError> {
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    import_model(manifest_path, dir)
}

pub fn import_model(manifest_path: &Path, payload_dir: &Path) -> Result<GraphModule, ImportError> {
    let manifest = read_manifest(manifest_path)?;
    import_manifest(&manifest, payload_dir)
}

pub fn read_payload_file(path: &Path) -> Result<TensorValue, ImportError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let tensor = path.display().to_string();
    decode_payload(&bytes).map_err(|source| match source {
        PayloadError::SizeMismatch { expected, actual } => ImportError::PayloadSizeMismatch {
            tensor,
            expected,
            actual,
        },
        PayloadError::UnsupportedDtype { code, name } => ImportError::UnsupportedDtype { tensor, code, name },
        source => ImportError::Payload { tensor, source },
    })
}

pub fn write_payload_file(path: &Path, t: &TensorValue) -> Result<(), ImportError> {
    fs::write(path, encode_payload(t)).map_err(io_err(path))
}

fn dtype_of(tensor: &str, code: i64) -> Result<DType, ImportError> {
    DType::from_onnx_code(code).ok_or(ImportError::UnsupportedDtype {
        tensor: tensor.to_string(),
        code,
        name: DType::onnx_code_name(code),
    })
}

fn type_from_proto(name: &str, t: &TypeProto) -> Result<TensorType, ImportError> {
    let tt = &t.tensor_type;
    let dtype = dtype_of(name, tt.elem_type)?;
    let shape = match &tt.shape {
        None => Shape::unranked(),
        Some(s) => Shape::ranked(
            s.dim
                .iter()
                .map(|d| match d.dim_value {
                    Some(v) if v >= 0 => Ok(Dim::Known(v as usize)),
                    Some(v) => Err(parse_err(format!("`{name}` has negative dimension {v}"))),
                    None => Ok(Dim::Unknown),
                })
                .collect::<Result<_, _>>()?,
        ),
    };
    Ok(TensorType::new(dtype, shape))
}

fn type_to_proto(ty: &TensorType) -> TypeProto {
    let shape = ty.shape.rank_known().then(|| ShapeProto {
        dim: ty
            .shape
            .dims()
            .iter()
            .map(|d| match d {
                Dim::Known(n) => DimProto {
                    dim_value: Some(*n as i64),
                    dim_param: None,
                },
                Dim::Unknown => DimProto::default(),
            })
            .collect(),
    });
    TypeProto {
        tensor_type: TensorTypeProto {
            elem_type: ty.dtype.onnx_code() as i64,
            shape,
        },
    }
}

/// Resolves a tensor proto to a value, reading its payload file if it has no inline data.
fn load_tensor(t: &TensorProto, default_name: &str, payload_dir: &Path) -> Result<TensorValue, ImportError> {
    let name = if t.name.is_empty() { default_name } else { &t.name };
    let dtype = dtype_of(name, t.data_type)?;
    let dims = t
        .dims
        .iter()
        .map(|d| usize::try_from(*d).map_err(|_| parse_err(format!("`{name}` has negative dimension {d}"))))
        .collect::<Result<Vec<_>, _>>()?;
    let count: usize = dims.iter().product();
    let inline = match (dtype, &t.float_data, &t.int64_data) {
        (DType::F32, Some(v), None) => Some(TensorData::F32(v.clone())),
        (DType::I64, None, Some(v)) => Some(TensorData::I64(v.clone())),
        (_, None, None) => None,
        _ => return Err(parse_err(format!("`{name}`: inline data does not match data_type"))),
    };
    if let Some(data) = inline {
        if data.len() != count {
            return Err(ImportError::PayloadSizeMismatch {
                tensor: name.to_string(),
                expected: count * dtype.width(),
                actual: data.len() * dtype.width(),
            });
        }
        return Ok(TensorValue::new(dims, data).expect("length checked"));
    }
    let file = t
        .location()
        .map(str::to_string)
        .unwrap_or_else(|| format!("{name}.tensor"));
    let path = payload_dir.join(file);
    let value = read_payload_file(&path)?;
    if value.dtype() != dtype || value.dims() != dims.as_slice() {
        return Err(ImportError::PayloadSizeMismatch {
            tensor: name.to_string(),
            expected: count * dtype.width(),
            actual: value.len() * value.dtype().width(),
        });
    }
    Ok(value)
}

fn attr_from_proto(a: &AttributeProto, payload_dir: &Path) -> Result<AttributeValue, ImportError> {
    match (&a.f, &a.i, &a.ints, &a.t) {
        (Some(f), None, None, None) => Ok(AttributeValue::Float(*f)),
        (None, Some(i), None, None) => Ok(AttributeValue::Int(*i)),
        (None, None, Some(v), None) => Ok(AttributeValue::Ints(v.clone())),
        (None, None, None, Some(t)) => Ok(AttributeValue::Tensor(load_tensor(t, &a.name, payload_dir)?)),
        _ => Err(parse_err(format!(
            "attribute `{}` must carry exactly one of f, i, ints, t",
            a.name
        ))),
    }
}

/// Builds and verifies a module from an in-memory manifest.
pub fn import_manifest(m: &ModelManifest, payload_dir: &Path) -> Result<GraphModule, ImportError> {
    let g = &m.graph;
    let mut f = GraphFunction::new(MAIN_GRAPH);
    let mut env: HashMap<&str, ValueId> = HashMap::new();
    let declared: HashMap<&str, &ValueInfoProto> = g
        .value_info
        .iter()
        .chain(&g.output)
        .map(|v| (v.name.as_str(), v))
        .collect();

    let init_names: HashSet<&str> = g.initializer.iter().map(|t| t.name.as_str()).collect();
    for inp in &g.input {
        if init_names.contains(inp.name.as_str()) {
            continue;
        }
        let ty = type_from_proto(&inp.name, &inp.ty)?;
        let v = f.add_input(ty);
        f.set_value_name(v, &inp.name);
        if env.insert(&inp.name, v).is_some() {
            return Err(parse_err(format!("graph input `{}` declared twice", inp.name)));
        }
    }
    for init in &g.initializer {
        if init.name.is_empty() {
            return Err(parse_err("initializer without a name"));
        }
        let value = load_tensor(init, &init.name, payload_dir)?;
        let v = f.push_constant(value);
        f.set_value_name(v, &init.name);
        if env.insert(&init.name, v).is_some() {
            return Err(parse_err(format!("initializer `{}` defined twice", init.name)));
        }
    }
    for (i, node) in g.node.iter().enumerate() {
        let label = node.name.clone().unwrap_or_else(|| format!("#{i}"));
        let kind = lookup_op(&node.op_type).ok_or_else(|| ImportError::UnsupportedOp {
            op_type: node.op_type.clone(),
            node: label.clone(),
        })?;
        // ONNX spells an omitted optional input as "". Only trailing ones make sense here.
        let mut names: &[String] = &node.input;
        while let [rest @ .., last] = names {
            if !last.is_empty() {
                break;
            }
            names = rest;
        }
        let operands = names
            .iter()
            .map(|n| {
                env.get(n.as_str())
                    .copied()
                    .ok_or_else(|| parse_err(format!("node {label} ({}) uses undefined value `{n}`", node.op_type)))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut attrs = Attributes::new();
        for a in &node.attribute {
            attrs.insert(a.name.clone(), attr_from_proto(a, payload_dir)?);
        }
        let [out] = node.output.as_slice() else {
            return Err(parse_err(format!(
                "node {label} ({}) must have exactly one output, has {}",
                node.op_type,
                node.output.len()
            )));
        };
        let v = f.push_op(kind, operands, attrs);
        f.set_value_name(v, out);
        if let Some(info) = declared.get(out.as_str()) {
            let want = type_from_proto(out, &info.ty)?;
            let have = f.value_type(v);
            let refined = refine_type(have, &want).ok_or_else(|| {
                parse_err(format!(
                    "`{out}` is declared {} but {} produces {}",
                    crate::graph::print_tensor_type(&want),
                    kind,
                    crate::graph::print_tensor_type(have)
                ))
            })?;
            f.set_value_type(v, refined);
        }
        if env.insert(out, v).is_some() {
            return Err(parse_err(format!("value `{out}` defined twice")));
        }
    }
    for out in &g.output {
        let v = *env
            .get(out.name.as_str())
            .ok_or_else(|| parse_err(format!("graph output `{}` is never defined", out.name)))?;
        f.results.push(v);
    }
    let module = GraphModule::from_function(f);
    let diags = verify(&module);
    if diags.is_empty() {
        Ok(module)
    } else {
        Err(ImportError::Invalid(diags))
    }
}

/// The more precise of two compatible types. Unranked result types from the
/// import-time inference defer to whatever the manifest declares.
fn refine_type(have: &TensorType, want: &TensorType) -> Option<TensorType> {
    if have.dtype != want.dtype {
        return None;
    }
    Some(TensorType::new(have.dtype, have.shape.refine(&want.shape)?))
}

fn tensor_to_proto(name: &str, t: &TensorValue, location: Option<String>) -> TensorProto {
    let (float_data, int64_data) = match (location.is_some(), t.data()) {
        (true, _) => (None, None),
        (false, TensorData::F32(v)) => (Some(v.clone()), None),
        (false, TensorData::I64(v)) => (None, Some(v.clone())),
    };
    TensorProto {
        name: name.to_string(),
        data_type: t.dtype().onnx_code() as i64,
        dims: t.dims().iter().map(|d| *d as i64).collect(),
        float_data,
        int64_data,
        external_data: location
            .map(|l| {
                vec![StringEntry {
                    key: "location".into(),
                    value: l,
                }]
            })
            .unwrap_or_default(),
    }
}

fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '_' || c == '-' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Assigns every value a unique manifest name, preferring its source name.
fn value_names(f: &GraphFunction) -> HashMap<ValueId, String> {
    let mut names = HashMap::new();
    let mut taken = HashSet::new();
    let defined = f
        .inputs
        .iter()
        .copied()
        .chain(f.ops.iter().flat_map(|op| op.results.iter().copied()));
    for v in defined {
        let base = f
            .value_name(v)
            .map(str::to_string)
            .unwrap_or_else(|| format!("v{}", v.0));
        let mut name = base.clone();
        let mut n = 1;
        while !taken.insert(name.clone()) {
            name = format!("{base}_{n}");
            n += 1;
        }
        names.insert(v, name);
    }
    names
}

/// Converts a module to a manifest. Returns the payload files that must be
/// written alongside it (file name, contents).
pub fn module_to_manifest(module: &GraphModule) -> (ModelManifest, Vec<(String, TensorValue)>) {
    let f = module.main();
    let names = value_names(f);
    let mut payloads = Vec::new();
    let mut files = HashSet::new();
    let mut nodes = Vec::new();
    let mut value_info = Vec::new();
    let outputs: HashSet<ValueId> = f.results.iter().copied().collect();
    for op in &f.ops {
        let out = &names[&op.result()];
        let mut attribute = Vec::new();
        for (k, v) in &op.attrs {
            let mut a = AttributeProto {
                name: k.clone(),
                ..AttributeProto::default()
            };
            match v {
                AttributeValue::Float(x) => {
                    a.f = Some(*x);
                    a.ty = Some("FLOAT".into());
                }
                AttributeValue::Int(x) => {
                    a.i = Some(*x);
                    a.ty = Some("INT".into());
                }
                AttributeValue::Ints(x) => {
                    a.ints = Some(x.clone());
                    a.ty = Some("INTS".into());
                }
                AttributeValue::Tensor(t) => {
                    // Always external: payloads keep exact bits (NaN included) and
                    // the manifest stays small.
                    let stem = file_stem(out);
                    let mut file = format!("{stem}.tensor");
                    let mut n = 1;
                    while !files.insert(file.clone()) {
                        file = format!("{stem}_{n}.tensor");
                        n += 1;
                    }
                    payloads.push((file.clone(), t.clone()));
                    a.t = Some(tensor_to_proto(out, t, Some(file)));
                    a.ty = Some("TENSOR".into());
                }
            }
            attribute.push(a);
        }
        nodes.push(NodeProto {
            input: op.operands.iter().map(|v| names[v].clone()).collect(),
            output: vec![out.clone()],
            op_type: op.kind.name().to_string(),
            name: None,
            attribute,
        });
        if !outputs.contains(&op.result()) && op.kind != OpKind::Constant {
            value_info.push(ValueInfoProto {
                name: out.clone(),
                ty: type_to_proto(f.value_type(op.result())),
            });
        }
    }
    let info = |v: &ValueId| ValueInfoProto {
        name: names[v].clone(),
        ty: type_to_proto(f.value_type(*v)),
    };
    let manifest = ModelManifest {
        ir_version: 3,
        producer_name: Some("loomc".into()),
        graph: GraphProto {
            name: f.name.clone(),
            node: nodes,
            input: f.inputs.iter().map(info).collect(),
            output: f.results.iter().map(info).collect(),
            initializer: Vec::new(),
            value_info,
        },
        opset_import: vec![OperatorSetId { version: 9 }],
    };
    (manifest, payloads)
}

/// Writes `model.json` and its payloads into `out_dir`, returning the manifest.
pub fn export_model(module: &GraphModule, out_dir: &Path) -> Result<ModelManifest, ImportError> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let (manifest, payloads) = module_to_manifest(module);
    for (file, t) in &payloads {
        write_payload_file(&out_dir.join(file), t)?;
    }
    let path = out_dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(io_err(&path))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::print_graph;

    const LEAKY_RELU: &str = r#"{
      "ir_version": 3,
      "producer_name": "backend-test",
      "graph": {
        "node": [{"input": ["x"], "output": ["y"], "op_type": "LeakyRelu",
                  "attribute": [{"name": "alpha", "f": 0.1, "type": "FLOAT"}]}],
        "name": "test_leakyrelu",
        "input": [{"name": "x", "type": {"tensor_type": {"elem_type": 1,
                   "shape": {"dim": [{"dim_value": 3}, {"dim_value": 4}, {"dim_value": 5}]}}}}],
        "output": [{"name": "y", "type": {"tensor_type": {"elem_type": 1,
                    "shape": {"dim": [{"dim_value": 3}, {"dim_value": 4}, {"dim_value": 5}]}}}}]
      },
      "opset_import": [{"version": 9}]
    }"#;

    fn import_str(text: &str) -> Result<GraphModule, ImportError> {
        let m: ModelManifest = serde_json::from_str(text).map_err(|e| parse_err(e.to_string()))?;
        import_manifest(&m, Path::new("."))
    }

    #[test]
    fn leaky_relu_model() {
        let m = import_str(LEAKY_RELU).unwrap();
        let f = m.main();
        assert_eq!(f.ops.len(), 1);
        assert_eq!(f.ops[0].kind, OpKind::LeakyRelu);
        assert_eq!(f.ops[0].attrs["alpha"], AttributeValue::Float(0.1));
        let t = TensorType::of_static(DType::F32, &[3, 4, 5]);
        assert_eq!(f.value_type(f.inputs[0]), &t);
        assert_eq!(f.value_type(f.results[0]), &t);
        assert_eq!((m.entry_point.num_inputs, m.entry_point.num_outputs), (1, 1));
    }

    #[test]
    fn passthrough_model() {
        let text = r#"{"graph": {"input": [{"name": "x", "type": {"tensor_type": {"elem_type": 1}}}],
                                 "output": [{"name": "x", "type": {"tensor_type": {"elem_type": 1}}}]}}"#;
        let m = import_str(text).unwrap();
        let f = m.main();
        assert!(f.ops.is_empty());
        assert_eq!(f.results, f.inputs);
        assert!(!f.value_type(f.inputs[0]).shape.rank_known());
    }

    #[test]
    fn lstm_is_unsupported() {
        let text = LEAKY_RELU.replace("LeakyRelu", "LSTM");
        match import_str(&text) {
            Err(ImportError::UnsupportedOp { op_type, .. }) => assert_eq!(op_type, "LSTM"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn float16_input_is_rejected() {
        let text = LEAKY_RELU.replacen("\"elem_type\": 1", "\"elem_type\": 10", 1);
        let err = import_str(&text).unwrap_err();
        assert!(matches!(err, ImportError::UnsupportedDtype { code: 10, .. }));
        assert!(err.to_string().contains("float16"));
    }

    #[test]
    fn initializer_inputs_are_not_entry_inputs() {
        let text = r#"{"graph": {
            "node": [{"input": ["x", "b"], "output": ["y"], "op_type": "Add"}],
            "input": [{"name": "x", "type": {"tensor_type": {"elem_type": 1, "shape": {"dim": [{"dim_value": 2}]}}}},
                      {"name": "b", "type": {"tensor_type": {"elem_type": 1, "shape": {"dim": [{"dim_value": 2}]}}}}],
            "initializer": [{"name": "b", "data_type": 1, "dims": [2], "float_data": [1.0, 2.0]}],
            "output": [{"name": "y", "type": {"tensor_type": {"elem_type": 1}}}]}}"#;
        let m = import_str(text).unwrap();
        assert_eq!(m.entry_point.num_inputs, 1);
        assert_eq!(m.main().ops[0].kind, OpKind::Constant);
        assert_eq!(print_graph(&m).matches("onnx.Constant").count(), 1);
    }

    #[test]
    fn inline_length_is_checked() {
        let text = r#"{"graph": {
            "initializer": [{"name": "b", "data_type": 1, "dims": [3], "float_data": [1.0, 2.0]}],
            "output": [{"name": "b", "type": {"tensor_type": {"elem_type": 1}}}]}}"#;
        assert!(matches!(
            import_str(text),
            Err(ImportError::PayloadSizeMismatch {
                expected: 12,
                actual: 8,
                ..
            })
        ));
    }

    #[test]
    fn export_import_fixpoint() {
        let dir = tempfile::tempdir().unwrap();
        let m = import_str(LEAKY_RELU).unwrap();
        export_model(&m, dir.path()).unwrap();
        let again = import_model_file(&dir.path().join(MANIFEST_FILE)).unwrap();
        assert!(
            m.structurally_eq(&again),
            "{}\n{}",
            print_graph(&m),
            print_graph(&again)
        );
    }

    #[test]
    fn large_constant_goes_to_payload() {
        let mut f = GraphFunction::new(MAIN_GRAPH);
        let c = f.push_constant(TensorValue::filled_f32(&[3, 4, 5], 2.0));
        f.results.push(c);
        let m = GraphModule::from_function(f);
        let dir = tempfile::tempdir().unwrap();
        export_model(&m, dir.path()).unwrap();
        let files: Vec<_> = fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().path())
            .filter(|p| p.extension().is_some_and(|e| e == "tensor"))
            .collect();
        assert_eq!(files.len(), 1);
        let len = fs::metadata(&files[0]).unwrap().len() as usize;
        assert_eq!(len, payload::HEADER_LEN + 3 * 8 + 240);
        let again = import_model_file(&dir.path().join(MANIFEST_FILE)).unwrap();
        assert!(m.structurally_eq(&again));
    }
}
