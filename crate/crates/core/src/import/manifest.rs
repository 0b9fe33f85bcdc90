//! Serde mirror of the subset of ONNX `ModelProto` the importer understands.
//! Field names follow the protobuf schema; plural aliases are accepted on input.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    #[serde(default)]
    pub ir_version: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub producer_name: Option<String>,
    pub graph: GraphProto,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub opset_import: Vec<OperatorSetId>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OperatorSetId {
    pub version: i64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GraphProto {
    #[serde(default)]
    pub name: String,
    #[serde(default, alias = "nodes")]
    pub node: Vec<NodeProto>,
    #[serde(default, alias = "inputs")]
    pub input: Vec<ValueInfoProto>,
    #[serde(default, alias = "outputs")]
    pub output: Vec<ValueInfoProto>,
    #[serde(default, alias = "initializers", skip_serializing_if = "Vec::is_empty")]
    pub initializer: Vec<TensorProto>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub value_info: Vec<ValueInfoProto>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NodeProto {
    #[serde(default, alias = "inputs")]
    pub input: Vec<String>,
    #[serde(default, alias = "outputs")]
    pub output: Vec<String>,
    pub op_type: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, alias = "attributes", skip_serializing_if = "Vec::is_empty")]
    pub attribute: Vec<AttributeProto>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AttributeProto {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f: Option<f32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub i: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ints: Option<Vec<i64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<TensorProto>,
    /// Informational (`FLOAT`, `INT`, ...); the populated field decides the kind.
    #[serde(rename = "type", default, skip_serializing_if = "Option::is_none")]
    pub ty: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueInfoProto {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: TypeProto,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeProto {
    pub tensor_type: TensorTypeProto,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorTypeProto {
    pub elem_type: i64,
    /// Absent for tensors of unknown rank.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shape: Option<ShapeProto>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ShapeProto {
    #[serde(default)]
    pub dim: Vec<DimProto>,
}

/// A dimension with neither field set (or only `dim_param`) is unknown.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DimProto {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim_value: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim_param: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TensorProto {
    #[serde(default)]
    pub name: String,
    pub data_type: i64,
    #[serde(default)]
    pub dims: Vec<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub float_data: Option<Vec<f32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub int64_data: Option<Vec<i64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub external_data: Vec<StringEntry>,
}

impl TensorProto {
    /// Payload file named by an `external_data` `location` entry.
    pub fn location(&self) -> Option<&str> {
        self.external_data
            .iter()
            .find(|e| e.key == "location")
            .map(|e| e.value.as_str())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StringEntry {
    pub key: String,
    pub value: String,
}
