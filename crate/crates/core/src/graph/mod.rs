//! SSA dataflow-graph IR mirroring ONNX operator semantics.
//!
//! A [`GraphModule`] holds one function, `main_graph`, plus an entry-point
//! descriptor recording how many inputs and outputs the inference entry has.
//! Values live in a per-function arena and are referenced by [`ValueId`];
//! ops are kept in a topological order.

mod eval;
mod parser;
mod printer;
pub mod registry;
pub mod shape_rules;
mod verify;

use std::collections::{BTreeMap, HashMap};

use thiserror::Error;

use crate::tensor::{TensorType, TensorValue};

pub use eval::{eval_op, reference_eval, EvalError};
pub use parser::{parse_graph_text, ParseError, SyntaxError};
pub(crate) use printer::print_dense;
pub use printer::{print_graph, print_tensor_type};
pub use registry::{lookup_op, schema, AttrKind, OpKind, OpSchema};
pub use verify::{verify, Diagnostic, DiagnosticKind};

pub const MAIN_GRAPH: &str = "main_graph";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ValueId(pub u32);

impl ValueId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AttributeValue {
    Float(f32),
    Int(i64),
    Ints(Vec<i64>),
    Tensor(TensorValue),
}

impl AttributeValue {
    pub fn kind(&self) -> AttrKind {
        match self {
            AttributeValue::Float(_) => AttrKind::Float,
            AttributeValue::Int(_) => AttrKind::Int,
            AttributeValue::Ints(_) => AttrKind::Ints,
            AttributeValue::Tensor(_) => AttrKind::Tensor,
        }
    }
}

pub type Attributes = BTreeMap<String, AttributeValue>;

#[derive(Debug, Clone, PartialEq)]
pub struct ValueInfo {
    pub ty: TensorType,
    /// Source-level name (from the model file); not part of structural identity.
    pub name: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphOp {
    pub kind: OpKind,
    pub operands: Vec<ValueId>,
    pub results: Vec<ValueId>,
    pub attrs: Attributes,
}

impl GraphOp {
    pub fn result(&self) -> ValueId {
        self.results[0]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphFunction {
    pub name: String,
    values: Vec<ValueInfo>,
    pub inputs: Vec<ValueId>,
    pub ops: Vec<GraphOp>,
    pub results: Vec<ValueId>,
}

impl GraphFunction {
    pub fn new(name: impl Into<String>) -> Self {
        GraphFunction {
            name: name.into(),
            values: Vec::new(),
            inputs: Vec::new(),
            ops: Vec::new(),
            results: Vec::new(),
        }
    }

    /// Allocates a value that is not yet defined anywhere.
    pub fn new_value(&mut self, ty: TensorType) -> ValueId {
        let id = ValueId(self.values.len() as u32);
        self.values.push(ValueInfo { ty, name: None });
        id
    }

    pub fn add_input(&mut self, ty: TensorType) -> ValueId {
        let v = self.new_value(ty);
        self.inputs.push(v);
        v
    }

    /// Appends an op with one result; the result type comes from the op's
    /// shape rule when it can be computed, unranked otherwise.
    pub fn push_op(&mut self, kind: OpKind, operands: Vec<ValueId>, attrs: Attributes) -> ValueId {
        let ty = self.infer_result_type(kind, &operands, &attrs);
        let result = self.new_value(ty);
        self.ops.push(GraphOp {
            kind,
            operands,
            results: vec![result],
            attrs,
        });
        result
    }

    pub fn push_constant(&mut self, value: TensorValue) -> ValueId {
        let mut attrs = Attributes::new();
        attrs.insert("value".into(), AttributeValue::Tensor(value));
        self.push_op(OpKind::Constant, Vec::new(), attrs)
    }

    /// Best-effort result type for a prospective op; falls back to an unranked
    /// tensor of the first operand's dtype.
    pub fn infer_result_type(&self, kind: OpKind, operands: &[ValueId], attrs: &Attributes) -> TensorType {
        let tys: Vec<&TensorType> = operands.iter().map(|v| self.value_type(*v)).collect();
        let consts: Vec<Option<&TensorValue>> = operands.iter().map(|v| self.constant_value(*v)).collect();
        match shape_rules::infer(kind, &tys, attrs, &consts) {
            Ok(mut out) if !out.is_empty() => out.swap_remove(0),
            _ => {
                let dtype = tys.first().map(|t| t.dtype).unwrap_or(crate::tensor::DType::F32);
                TensorType::unranked(dtype)
            }
        }
    }

    pub fn num_values(&self) -> usize {
        self.values.len()
    }

    pub fn value(&self, v: ValueId) -> &ValueInfo {
        &self.values[v.index()]
    }

    pub fn value_type(&self, v: ValueId) -> &TensorType {
        &self.values[v.index()].ty
    }

    pub fn set_value_type(&mut self, v: ValueId, ty: TensorType) {
        self.values[v.index()].ty = ty;
    }

    pub fn value_name(&self, v: ValueId) -> Option<&str> {
        self.values[v.index()].name.as_deref()
    }

    pub fn set_value_name(&mut self, v: ValueId, name: impl Into<String>) {
        self.values[v.index()].name = Some(name.into());
    }

    /// Index of the op defining `v`, if any.
    pub fn defining_op(&self, v: ValueId) -> Option<usize> {
        self.ops.iter().position(|op| op.results.contains(&v))
    }

    /// Map from value to defining op index, for repeated lookups.
    pub fn def_map(&self) -> HashMap<ValueId, usize> {
        let mut m = HashMap::new();
        for (i, op) in self.ops.iter().enumerate() {
            for r in &op.results {
                m.insert(*r, i);
            }
        }
        m
    }

    /// The payload of `v` if it is produced by a `Constant` op.
    pub fn constant_value(&self, v: ValueId) -> Option<&TensorValue> {
        let op = &self.ops[self.defining_op(v)?];
        constant_payload(op)
    }

    /// Number of uses of `v`, counting function results as uses.
    pub fn use_count(&self, v: ValueId) -> usize {
        self.ops
            .iter()
            .flat_map(|op| op.operands.iter())
            .chain(self.results.iter())
            .filter(|u| **u == v)
            .count()
    }

    pub fn replace_all_uses(&mut self, from: ValueId, to: ValueId) {
        for op in &mut self.ops {
            for o in &mut op.operands {
                if *o == from {
                    *o = to;
                }
            }
        }
        for r in &mut self.results {
            if *r == from {
                *r = to;
            }
        }
    }

    /// Removes ops none of whose results are used, repeating until stable.
    /// Returns how many ops were removed.
    pub fn erase_dead_ops(&mut self) -> usize {
        let mut removed = 0;
        loop {
            let mut used = vec![false; self.values.len()];
            for v in self.ops.iter().flat_map(|op| op.operands.iter()).chain(&self.results) {
                used[v.index()] = true;
            }
            let before = self.ops.len();
            self.ops.retain(|op| op.results.iter().any(|r| used[r.index()]));
            let n = before - self.ops.len();
            if n == 0 {
                return removed;
            }
            removed += n;
        }
    }

    /// Copy with values renumbered in definition order and unreachable arena
    /// entries dropped. Undefined values used by ops keep trailing numbers.
    pub fn compacted(&self) -> GraphFunction {
        let mut map: HashMap<ValueId, ValueId> = HashMap::new();
        let mut values = Vec::new();
        let mut remap = |v: ValueId, map: &mut HashMap<ValueId, ValueId>| -> ValueId {
            *map.entry(v).or_insert_with(|| {
                values.push(self.values[v.index()].clone());
                ValueId(values.len() as u32 - 1)
            })
        };
        let inputs: Vec<ValueId> = self.inputs.iter().map(|v| remap(*v, &mut map)).collect();
        let mut ops = Vec::with_capacity(self.ops.len());
        for op in &self.ops {
            let results: Vec<ValueId> = op.results.iter().map(|v| remap(*v, &mut map)).collect();
            ops.push((op, results));
        }
        let ops: Vec<GraphOp> = ops
            .into_iter()
            .map(|(op, results)| GraphOp {
                kind: op.kind,
                operands: op.operands.iter().map(|v| remap(*v, &mut map)).collect(),
                results,
                attrs: op.attrs.clone(),
            })
            .collect();
        let results = self.results.iter().map(|v| remap(*v, &mut map)).collect();
        GraphFunction {
            name: self.name.clone(),
            values,
            inputs,
            ops,
            results,
        }
    }

    pub fn input_types(&self) -> Vec<TensorType> {
        self.inputs.iter().map(|v| self.value_type(*v).clone()).collect()
    }

    pub fn result_types(&self) -> Vec<TensorType> {
        self.results.iter().map(|v| self.value_type(*v).clone()).collect()
    }
}

pub(crate) fn constant_payload(op: &GraphOp) -> Option<&TensorValue> {
    match (op.kind, op.attrs.get("value")) {
        (OpKind::Constant, Some(AttributeValue::Tensor(t))) => Some(t),
        _ => None,
    }
}

/// Entry-point metadata: which function to call and its input/output arity.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct EntryPoint {
    pub func: String,
    pub num_inputs: usize,
    pub num_outputs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphModule {
    pub functions: Vec<GraphFunction>,
    pub entry_point: EntryPoint,
}

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("module failed verification:\n{}", render_diagnostics(.0))]
    Invalid(Vec<Diagnostic>),
}

pub fn render_diagnostics(diags: &[Diagnostic]) -> String {
    diags.iter().map(|d| format!("  {d}")).collect::<Vec<_>>().join("\n")
}

impl GraphModule {
    /// Wraps a single function, synthesizing the entry point from its signature.
    pub fn from_function(func: GraphFunction) -> Self {
        let entry_point = EntryPoint {
            func: func.name.clone(),
            num_inputs: func.inputs.len(),
            num_outputs: func.results.len(),
        };
        GraphModule {
            functions: vec![func],
            entry_point,
        }
    }

    /// The function named by the entry point (or the first function if the
    /// entry point dangles, which `verify` reports).
    ///
    /// Panics on a module with no functions.
    pub fn main(&self) -> &GraphFunction {
        let i = self.entry_index();
        &self.functions[i]
    }

    pub fn main_mut(&mut self) -> &mut GraphFunction {
        let i = self.entry_index();
        &mut self.functions[i]
    }

    fn entry_index(&self) -> usize {
        self.functions
            .iter()
            .position(|f| f.name == self.entry_point.func)
            .unwrap_or(0)
    }

    /// Structural equality: same ops, attributes, types and dataflow,
    /// ignoring value numbering and source names.
    pub fn structurally_eq(&self, other: &GraphModule) -> bool {
        let strip = |m: &GraphModule| -> Vec<GraphFunction> {
            m.functions
                .iter()
                .map(|f| {
                    let mut c = f.compacted();
                    for v in &mut c.values {
                        v.name = None;
                    }
                    c
                })
                .collect()
        };
        self.entry_point == other.entry_point && strip(self) == strip(other)
    }

    pub fn verified(self) -> Result<Self, GraphError> {
        let diags = verify(&self);
        if diags.is_empty() {
            Ok(self)
        } else {
            Err(GraphError::Invalid(diags))
        }
    }
}
