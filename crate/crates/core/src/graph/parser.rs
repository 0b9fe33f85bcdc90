//! Parser for the textual graph form produced by [`super::print_graph`].

use std::collections::HashMap;

use thiserror::Error;

use crate::tensor::{DType, Dim, Shape, TensorData, TensorType, TensorValue};

use super::{
    lookup_op, verify, AttributeValue, Attributes, Diagnostic, EntryPoint, GraphFunction, GraphModule, GraphOp, ValueId,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{line}:{col}: {message}")]
pub struct SyntaxError {
    pub line: usize,
    pub col: usize,
    pub message: String,
}

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("syntax error at {0}")]
    Syntax(#[from] SyntaxError),
    #[error("unsupported op `{name}` at {line}:{col}")]
    UnsupportedOp { name: String, line: usize, col: usize },
    #[error("parsed module is invalid:\n{}", super::render_diagnostics(.0))]
    Invalid(Vec<Diagnostic>),
}

/// Parses and verifies a module in the printer's grammar.
pub fn parse_graph_text(text: &str) -> Result<GraphModule, ParseError> {
    let mut p = Parser {
        src: text.as_bytes(),
        pos: 0,
    };
    let module = p.module()?;
    let diags = verify(&module);
    if diags.is_empty() {
        Ok(module)
    } else {
        Err(ParseError::Invalid(diags))
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

type PResult<T> = Result<T, ParseError>;

impl<'a> Parser<'a> {
    fn location(&self, pos: usize) -> (usize, usize) {
        let before = &self.src[..pos.min(self.src.len())];
        let line = before.iter().filter(|b| **b == b'\n').count() + 1;
        let col = pos - before.iter().rposition(|b| *b == b'\n').map_or(0, |i| i + 1) + 1;
        (line, col)
    }

    fn err<T>(&self, message: impl Into<String>) -> PResult<T> {
        let (line, col) = self.location(self.pos);
        Err(SyntaxError {
            line,
            col,
            message: message.into(),
        }
        .into())
    }

    fn skip_ws(&mut self) {
        while let Some(c) = self.src.get(self.pos) {
            if c.is_ascii_whitespace() {
                self.pos += 1;
            } else if self.src[self.pos..].starts_with(b"//") {
                while self.pos < self.src.len() && self.src[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else {
                break;
            }
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn eat(&mut self, tok: &str) -> bool {
        self.skip_ws();
        if self.src[self.pos..].starts_with(tok.as_bytes()) {
            self.pos += tok.len();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, tok: &str) -> PResult<()> {
        if self.eat(tok) {
            Ok(())
        } else {
            let found = self.src[self.pos..]
                .iter()
                .take(12)
                .take_while(|c| **c != b'\n')
                .map(|c| *c as char)
                .collect::<String>();
            if found.is_empty() {
                self.err(format!("expected `{tok}`, found end of line or input"))
            } else {
                self.err(format!("expected `{tok}`, found `{found}`"))
            }
        }
    }

    fn word(&mut self) -> String {
        self.skip_ws();
        let start = self.pos;
        while let Some(c) = self.src.get(self.pos) {
            if c.is_ascii_alphanumeric() || matches!(c, b'_' | b'.' | b'-' | b'+') {
                self.pos += 1;
            } else {
                break;
            }
        }
        String::from_utf8_lossy(&self.src[start..self.pos]).into_owned()
    }

    fn ident(&mut self) -> PResult<String> {
        let w = self.word();
        if w.is_empty() {
            self.err("expected identifier")
        } else {
            Ok(w)
        }
    }

    fn value_name(&mut self) -> PResult<String> {
        self.skip_ws();
        if self.peek() != Some(b'%') {
            return self.err("expected `%` value name");
        }
        self.pos += 1;
        let start = self.pos;
        while let Some(c) = self.src.get(self.pos) {
            if c.is_ascii_alphanumeric() || *c == b'_' {
                self.pos += 1;
            } else {
                break;
            }
        }
        if start == self.pos {
            return self.err("empty value name");
        }
        Ok(String::from_utf8_lossy(&self.src[start..self.pos]).into_owned())
    }

    fn int(&mut self) -> PResult<i64> {
        let w = self.word();
        w.parse()
            .or_else(|_| self.err(format!("expected integer, found `{w}`")))
    }

    fn string(&mut self) -> PResult<String> {
        self.expect("\"")?;
        let start = self.pos;
        while let Some(c) = self.src.get(self.pos) {
            if *c == b'"' {
                let s = String::from_utf8_lossy(&self.src[start..self.pos]).into_owned();
                self.pos += 1;
                return Ok(s);
            }
            self.pos += 1;
        }
        self.err("unterminated string")
    }

    fn tensor_type(&mut self) -> PResult<TensorType> {
        self.expect("tensor")?;
        self.expect("<")?;
        let start = self.pos;
        while self.src.get(self.pos).is_some_and(|c| *c != b'>') {
            self.pos += 1;
        }
        let body = String::from_utf8_lossy(&self.src[start..self.pos]).into_owned();
        let ty = self.type_body(&body)?;
        self.expect(">")?;
        Ok(ty)
    }

    fn type_body(&self, body: &str) -> PResult<TensorType> {
        let parts: Vec<&str> = body.split('x').collect();
        let (dtype, dims) = parts.split_last().unwrap();
        let dtype = match dtype.trim() {
            "f32" => DType::F32,
            "i64" => DType::I64,
            other => return self.err(format!("unsupported element type `{other}`")),
        };
        if dims == ["*"] {
            return Ok(TensorType::unranked(dtype));
        }
        let mut out = Vec::with_capacity(dims.len());
        for d in dims {
            out.push(match d.trim() {
                "?" => Dim::Unknown,
                n => match n.parse() {
                    Ok(v) => Dim::Known(v),
                    Err(_) => return self.err(format!("bad dimension `{n}` in `{body}`")),
                },
            });
        }
        Ok(TensorType::new(dtype, Shape::ranked(out)))
    }

    fn type_list(&mut self) -> PResult<Vec<TensorType>> {
        self.expect("(")?;
        let mut out = Vec::new();
        if self.eat(")") {
            return Ok(out);
        }
        loop {
            out.push(self.tensor_type()?);
            if self.eat(")") {
                return Ok(out);
            }
            self.expect(",")?;
        }
    }

    fn result_types(&mut self) -> PResult<Vec<TensorType>> {
        if self.peek() == Some(b'(') {
            self.type_list()
        } else {
            Ok(vec![self.tensor_type()?])
        }
    }

    fn number_token(&mut self) -> PResult<String> {
        let w = self.word();
        if w.is_empty() {
            self.err("expected number")
        } else {
            Ok(w)
        }
    }

    fn is_float_token(w: &str) -> bool {
        w.contains(['.', 'e', 'E']) || w.contains("inf") || w.contains("NaN")
    }

    fn parse_f32(&self, w: &str) -> PResult<f32> {
        w.parse().or_else(|_| self.err(format!("bad float `{w}`")))
    }

    fn attr_value(&mut self) -> PResult<AttributeValue> {
        if self.eat("dense") {
            self.expect("<")?;
            self.expect("[")?;
            let mut toks = Vec::new();
            if !self.eat("]") {
                loop {
                    toks.push(self.number_token()?);
                    if self.eat("]") {
                        break;
                    }
                    self.expect(",")?;
                }
            }
            self.expect(">")?;
            self.expect(":")?;
            let ty = self.tensor_type()?;
            let Some(dims) = ty.shape.static_dims() else {
                return self.err("dense attribute needs a static type");
            };
            let data = match ty.dtype {
                DType::F32 => TensorData::F32(toks.iter().map(|t| self.parse_f32(t)).collect::<PResult<_>>()?),
                DType::I64 => TensorData::I64(
                    toks.iter()
                        .map(|t| t.parse().or_else(|_| self.err(format!("bad integer `{t}`"))))
                        .collect::<PResult<_>>()?,
                ),
            };
            return match TensorValue::new(dims, data) {
                Ok(t) => Ok(AttributeValue::Tensor(t)),
                Err(e) => self.err(e.to_string()),
            };
        }
        if self.eat("[") {
            let mut v = Vec::new();
            if !self.eat("]") {
                loop {
                    v.push(self.int()?);
                    if self.eat("]") {
                        break;
                    }
                    self.expect(",")?;
                }
            }
            return Ok(AttributeValue::Ints(v));
        }
        let w = self.number_token()?;
        if Self::is_float_token(&w) {
            Ok(AttributeValue::Float(self.parse_f32(&w)?))
        } else {
            w.parse()
                .map(AttributeValue::Int)
                .or_else(|_| self.err(format!("bad attribute value `{w}`")))
        }
    }

    fn attr_dict(&mut self) -> PResult<Attributes> {
        let mut attrs = Attributes::new();
        if !self.eat("{") {
            return Ok(attrs);
        }
        if self.eat("}") {
            return Ok(attrs);
        }
        loop {
            let name = self.ident()?;
            self.expect("=")?;
            let v = self.attr_value()?;
            if attrs.insert(name.clone(), v).is_some() {
                return self.err(format!("duplicate attribute `{name}`"));
            }
            if self.eat("}") {
                return Ok(attrs);
            }
            self.expect(",")?;
        }
    }

    fn module(&mut self) -> PResult<GraphModule> {
        self.expect("module")?;
        self.expect("{")?;
        let mut functions = Vec::new();
        while self.peek() == Some(b'f') {
            functions.push(self.function()?);
        }
        self.expect("\"onnx.EntryPoint\"")?;
        self.expect("(")?;
        self.expect(")")?;
        self.expect("{")?;
        self.expect("func")?;
        self.expect("=")?;
        self.expect("@")?;
        let func = self.ident()?;
        self.expect(",")?;
        self.expect("numInputs")?;
        self.expect("=")?;
        let num_inputs = self.int()?;
        self.expect(":")?;
        self.expect("i32")?;
        self.expect(",")?;
        self.expect("numOutputs")?;
        self.expect("=")?;
        let num_outputs = self.int()?;
        self.expect(":")?;
        self.expect("i32")?;
        self.expect("}")?;
        self.expect(":")?;
        self.expect("(")?;
        self.expect(")")?;
        self.expect("->")?;
        self.expect("(")?;
        self.expect(")")?;
        self.expect("}")?;
        if self.peek().is_some() {
            return self.err("trailing input after module");
        }
        if num_inputs < 0 || num_outputs < 0 {
            return self.err("entry point counts must be non-negative");
        }
        Ok(GraphModule {
            functions,
            entry_point: EntryPoint {
                func,
                num_inputs: num_inputs as usize,
                num_outputs: num_outputs as usize,
            },
        })
    }

    fn function(&mut self) -> PResult<GraphFunction> {
        self.expect("func")?;
        self.expect("@")?;
        let name = self.ident()?;
        let mut f = GraphFunction::new(name);
        let mut names: HashMap<String, ValueId> = HashMap::new();
        // Values referenced before their definition; verify reports them.
        let mut pending: HashMap<String, ValueId> = HashMap::new();
        self.expect("(")?;
        if !self.eat(")") {
            loop {
                let n = self.value_name()?;
                self.expect(":")?;
                let ty = self.tensor_type()?;
                let v = f.add_input(ty);
                if names.insert(n.clone(), v).is_some() {
                    return self.err(format!("redefinition of %{n}"));
                }
                if self.eat(")") {
                    break;
                }
                self.expect(",")?;
            }
        }
        self.expect("->")?;
        let declared_results = self.result_types()?;
        self.expect("{")?;
        loop {
            if self.eat("std.return") {
                let mut rets = Vec::new();
                if self.peek() == Some(b'%') {
                    loop {
                        let n = self.value_name()?;
                        rets.push(n);
                        if !self.eat(",") {
                            break;
                        }
                    }
                }
                let tys = if self.eat(":") {
                    let mut tys = vec![self.tensor_type()?];
                    while self.eat(",") {
                        tys.push(self.tensor_type()?);
                    }
                    tys
                } else {
                    Vec::new()
                };
                if tys.len() != rets.len() || declared_results.len() != rets.len() {
                    return self.err("return arity does not match the function signature");
                }
                for (n, ty) in rets.iter().zip(tys) {
                    let v = Self::resolve(&mut f, &names, &mut pending, n, ty);
                    f.results.push(v);
                }
                self.expect("}")?;
                return Ok(f);
            }
            self.op(&mut f, &mut names, &mut pending)?;
        }
    }

    fn resolve(
        f: &mut GraphFunction,
        names: &HashMap<String, ValueId>,
        pending: &mut HashMap<String, ValueId>,
        name: &str,
        ty: TensorType,
    ) -> ValueId {
        if let Some(v) = names.get(name) {
            return *v;
        }
        *pending.entry(name.to_string()).or_insert_with(|| f.new_value(ty))
    }

    fn op(
        &mut self,
        f: &mut GraphFunction,
        names: &mut HashMap<String, ValueId>,
        pending: &mut HashMap<String, ValueId>,
    ) -> PResult<()> {
        let mut result_names = vec![self.value_name()?];
        while self.eat(",") {
            result_names.push(self.value_name()?);
        }
        self.expect("=")?;
        self.skip_ws();
        let op_pos = self.pos;
        let full = self.string()?;
        let Some(kind_name) = full.strip_prefix("onnx.") else {
            return self.err(format!("expected an `onnx.` op, found \"{full}\""));
        };
        let Some(kind) = lookup_op(kind_name) else {
            let (line, col) = self.location(op_pos);
            return Err(ParseError::UnsupportedOp {
                name: kind_name.to_string(),
                line,
                col,
            });
        };
        self.expect("(")?;
        let mut operand_names = Vec::new();
        if !self.eat(")") {
            loop {
                operand_names.push(self.value_name()?);
                if self.eat(")") {
                    break;
                }
                self.expect(",")?;
            }
        }
        let attrs = self.attr_dict()?;
        self.expect(":")?;
        let operand_types = self.type_list()?;
        self.expect("->")?;
        let result_types = self.result_types()?;
        if operand_types.len() != operand_names.len() || result_types.len() != result_names.len() {
            return self.err("operand/result count does not match the type signature");
        }
        let operands = operand_names
            .iter()
            .zip(operand_types)
            .map(|(n, ty)| Self::resolve(f, names, pending, n, ty))
            .collect();
        let mut results = Vec::new();
        for (n, ty) in result_names.into_iter().zip(result_types) {
            if names.contains_key(&n) {
                return self.err(format!("redefinition of %{n}"));
            }
            let v = match pending.remove(&n) {
                Some(v) => {
                    f.set_value_type(v, ty);
                    v
                }
                None => f.new_value(ty),
            };
            names.insert(n, v);
            results.push(v);
        }
        f.ops.push(GraphOp {
            kind,
            operands,
            results,
            attrs,
        });
        Ok(())
    }
}
