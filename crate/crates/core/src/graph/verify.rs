use std::collections::HashMap;
use std::fmt;

use super::registry::{schema, AttrDefault, Fixed};
use super::{AttributeValue, GraphFunction, GraphModule, ValueId, MAIN_GRAPH};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiagnosticKind {
    MissingMainGraph,
    MultipleFunctions,
    MissingEntryFunction,
    EntryPointMismatch,
    UndefinedValue,
    SSADominanceViolation,
    MultipleDefinition,
    OperandCount,
    ResultCount,
    UnknownAttribute,
    MissingAttribute,
    AttributeType,
    UnsupportedAttributeValue,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub kind: DiagnosticKind,
    /// Index of the offending op in its function, when there is one.
    pub op: Option<usize>,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.op {
            Some(i) => write!(f, "op #{i}: {:?}: {}", self.kind, self.message),
            None => write!(f, "{:?}: {}", self.kind, self.message),
        }
    }
}

fn diag(kind: DiagnosticKind, op: Option<usize>, message: impl Into<String>) -> Diagnostic {
    Diagnostic {
        kind,
        op,
        message: message.into(),
    }
}

/// Checks module-level and per-op invariants. An empty result means the module is valid.
pub fn verify(module: &GraphModule) -> Vec<Diagnostic> {
    use DiagnosticKind::*;
    let mut out = Vec::new();
    if !module.functions.iter().any(|f| f.name == MAIN_GRAPH) {
        out.push(diag(
            MissingMainGraph,
            None,
            format!("no function named `{MAIN_GRAPH}`"),
        ));
    }
    if module.functions.len() > 1 {
        out.push(diag(
            MultipleFunctions,
            None,
            format!("expected a single function, found {}", module.functions.len()),
        ));
    }
    let ep = &module.entry_point;
    match module.functions.iter().find(|f| f.name == ep.func) {
        None => out.push(diag(
            MissingEntryFunction,
            None,
            format!("entry point names missing function `@{}`", ep.func),
        )),
        Some(f) => {
            if ep.num_outputs < 1 {
                out.push(diag(
                    EntryPointMismatch,
                    None,
                    "entry point must declare at least one output",
                ));
            }
            if ep.num_inputs != f.inputs.len() || ep.num_outputs != f.results.len() {
                out.push(diag(
                    EntryPointMismatch,
                    None,
                    format!(
                        "entry point declares {} inputs / {} outputs but `@{}` has {} / {}",
                        ep.num_inputs,
                        ep.num_outputs,
                        f.name,
                        f.inputs.len(),
                        f.results.len()
                    ),
                ));
            }
        }
    }
    for f in &module.functions {
        verify_function(f, &mut out);
    }
    out
}

fn verify_function(f: &GraphFunction, out: &mut Vec<Diagnostic>) {
    use DiagnosticKind::*;
    // Where each value gets defined: usize::MAX for inputs, op index otherwise.
    let mut def_site: HashMap<ValueId, usize> = HashMap::new();
    for &v in &f.inputs {
        if def_site.insert(v, usize::MAX).is_some() {
            out.push(diag(MultipleDefinition, None, format!("input %{} listed twice", v.0)));
        }
    }
    for (i, op) in f.ops.iter().enumerate() {
        for &r in &op.results {
            if def_site.insert(r, i).is_some() {
                out.push(diag(
                    MultipleDefinition,
                    Some(i),
                    format!("value %{} defined twice", r.0),
                ));
            }
        }
    }
    let defined_before = |v: ValueId, at: usize| -> Result<(), DiagnosticKind> {
        match def_site.get(&v) {
            None => Err(UndefinedValue),
            Some(&d) if d == usize::MAX || d < at => Ok(()),
            Some(_) => Err(SSADominanceViolation),
        }
    };
    for (i, op) in f.ops.iter().enumerate() {
        let s = schema(op.kind);
        for &o in &op.operands {
            match defined_before(o, i) {
                Ok(()) => {}
                Err(UndefinedValue) => out.push(diag(
                    UndefinedValue,
                    Some(i),
                    format!("{} uses undefined value %{}", op.kind, o.0),
                )),
                Err(k) => out.push(diag(
                    k,
                    Some(i),
                    format!("{} uses %{} before its definition", op.kind, o.0),
                )),
            }
        }
        if op.operands.len() < s.min_operands || op.operands.len() > s.max_operands {
            out.push(diag(
                OperandCount,
                Some(i),
                format!(
                    "{} takes {}..={} operands, got {}",
                    op.kind,
                    s.min_operands,
                    s.max_operands,
                    op.operands.len()
                ),
            ));
        }
        if op.results.len() != s.num_results {
            out.push(diag(
                ResultCount,
                Some(i),
                format!(
                    "{} produces {} result(s), got {}",
                    op.kind,
                    s.num_results,
                    op.results.len()
                ),
            ));
        }
        for (name, value) in &op.attrs {
            let Some(a) = s.attr(name) else {
                out.push(diag(
                    UnknownAttribute,
                    Some(i),
                    format!("{} has no attribute `{name}`", op.kind),
                ));
                continue;
            };
            if a.kind != value.kind() {
                out.push(diag(
                    AttributeType,
                    Some(i),
                    format!("{}.{name} expects {:?}, got {:?}", op.kind, a.kind, value.kind()),
                ));
                continue;
            }
            let accepted = match (a.only, value) {
                (None, _) => true,
                (Some(Fixed::Int(want)), AttributeValue::Int(v)) => *v == want,
                (Some(Fixed::AllInts(want)), AttributeValue::Ints(v)) => v.iter().all(|x| *x == want),
                _ => false,
            };
            if !accepted {
                out.push(diag(
                    UnsupportedAttributeValue,
                    Some(i),
                    format!("{}.{name} = {value:?} is not supported", op.kind),
                ));
            }
        }
        for a in s.attrs {
            if a.default == AttrDefault::Required && !op.attrs.contains_key(a.name) {
                out.push(diag(
                    MissingAttribute,
                    Some(i),
                    format!("{} requires `{}`", op.kind, a.name),
                ));
            }
        }
    }
    for &r in &f.results {
        if !def_site.contains_key(&r) {
            out.push(diag(
                UndefinedValue,
                None,
                format!("function returns undefined value %{}", r.0),
            ));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::testutil::add_module;
    use crate::graph::{Attributes, GraphOp, OpKind};
    use crate::tensor::{DType, TensorType};

    fn kinds(m: &GraphModule) -> Vec<DiagnosticKind> {
        verify(m).into_iter().map(|d| d.kind).collect()
    }

    #[test]
    fn add_testcase_verifies() {
        assert!(verify(&add_module()).is_empty());
    }

    #[test]
    fn missing_entry_function() {
        let mut m = add_module();
        m.entry_point.func = "nope".into();
        assert_eq!(kinds(&m), vec![DiagnosticKind::MissingEntryFunction]);
    }

    #[test]
    fn use_before_def() {
        let mut m = add_module();
        let f = m.main_mut();
        let x = f.inputs[0];
        let later = f.new_value(TensorType::of_static(DType::F32, &[3, 4, 5]));
        let abs = f.new_value(TensorType::unranked(DType::F32));
        f.ops.insert(
            0,
            GraphOp {
                kind: OpKind::Abs,
                operands: vec![later],
                results: vec![abs],
                attrs: Attributes::new(),
            },
        );
        f.ops.push(GraphOp {
            kind: OpKind::Exp,
            operands: vec![x],
            results: vec![later],
            attrs: Attributes::new(),
        });
        assert_eq!(kinds(&m), vec![DiagnosticKind::SSADominanceViolation]);
    }

    #[test]
    fn attribute_checks() {
        let mut m = add_module();
        let f = m.main_mut();
        f.ops[0].attrs.insert("alpha".into(), AttributeValue::Float(1.0));
        let x = f.inputs[0];
        let mut attrs = Attributes::new();
        attrs.insert("transA".into(), AttributeValue::Int(1));
        let g = f.new_value(TensorType::unranked(DType::F32));
        f.ops.push(GraphOp {
            kind: OpKind::Gemm,
            operands: vec![x, x],
            results: vec![g],
            attrs,
        });
        let pooled = f.new_value(TensorType::unranked(DType::F32));
        f.ops.push(GraphOp {
            kind: OpKind::MaxPool,
            operands: vec![x],
            results: vec![pooled],
            attrs: Attributes::new(),
        });
        assert_eq!(
            kinds(&m),
            vec![
                DiagnosticKind::UnknownAttribute,
                DiagnosticKind::UnsupportedAttributeValue,
                DiagnosticKind::MissingAttribute
            ]
        );
    }

    #[test]
    fn entry_arity_mismatch() {
        let mut m = add_module();
        m.entry_point.num_inputs = 3;
        assert_eq!(kinds(&m), vec![DiagnosticKind::EntryPointMismatch]);
    }
}
