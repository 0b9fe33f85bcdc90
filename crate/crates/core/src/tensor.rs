//! Tensor types, shapes and concrete row-major tensor values.

use std::fmt;

use base64::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TensorError {
    #[error("incompatible shapes for broadcasting: {0} and {1}")]
    IncompatibleShapes(Shape, Shape),
    #[error("index {index:?} out of range for shape {shape}")]
    OutOfRange { shape: Shape, index: Vec<usize> },
    #[error("shape {0} is not static")]
    NotStatic(Shape),
    #[error("buffer of {actual} elements does not match shape {shape} ({expected} elements)")]
    LengthMismatch {
        shape: Shape,
        expected: usize,
        actual: usize,
    },
}

/// Element type of a tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DType {
    F32,
    I64,
}

impl DType {
    /// Width in bytes of one element.
    pub fn width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::I64 => 8,
        }
    }

    /// ONNX `TensorProto.DataType` code.
    pub fn onnx_code(self) -> u8 {
        match self {
            DType::F32 => 1,
            DType::I64 => 7,
        }
    }

    pub fn from_onnx_code(code: i64) -> Option<DType> {
        match code {
            1 => Some(DType::F32),
            7 => Some(DType::I64),
            _ => None,
        }
    }

    /// Human-readable name for an ONNX dtype code, including the ones we reject.
    pub fn onnx_code_name(code: i64) -> &'static str {
        match code {
            1 => "float32",
            2 => "uint8",
            3 => "int8",
            4 => "uint16",
            5 => "int16",
            6 => "int32",
            7 => "int64",
            8 => "string",
            9 => "bool",
            10 => "float16",
            11 => "float64",
            12 => "uint32",
            13 => "uint64",
            16 => "bfloat16",
            _ => "unknown",
        }
    }

    pub fn mnemonic(self) -> &'static str {
        match self {
            DType::F32 => "f32",
            DType::I64 => "i64",
        }
    }
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.mnemonic())
    }
}

/// One dimension of a possibly-dynamic shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Dim {
    Known(usize),
    Unknown,
}

impl Dim {
    pub fn known(self) -> Option<usize> {
        match self {
            Dim::Known(d) => Some(d),
            Dim::Unknown => None,
        }
    }
}

impl fmt::Display for Dim {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Dim::Known(d) => write!(f, "{d}"),
            Dim::Unknown => f.write_str("?"),
        }
    }
}

/// A tensor shape. `None` dims means the rank itself is unknown.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Shape {
    dims: Option<Vec<Dim>>,
}

impl Shape {
    pub fn unranked() -> Self {
        Shape { dims: None }
    }

    pub fn ranked(dims: Vec<Dim>) -> Self {
        Shape { dims: Some(dims) }
    }

    pub fn from_static(dims: &[usize]) -> Self {
        Shape::ranked(dims.iter().map(|&d| Dim::Known(d)).collect())
    }

    pub fn scalar() -> Self {
        Shape::ranked(Vec::new())
    }

    pub fn rank_known(&self) -> bool {
        self.dims.is_some()
    }

    pub fn rank(&self) -> Option<usize> {
        self.dims.as_ref().map(Vec::len)
    }

    /// Dimensions; empty for unranked shapes.
    pub fn dims(&self) -> &[Dim] {
        self.dims.as_deref().unwrap_or(&[])
    }

    pub fn is_static(&self) -> bool {
        self.dims
            .as_ref()
            .is_some_and(|d| d.iter().all(|d| matches!(d, Dim::Known(_))))
    }

    /// Concrete dims if the shape is static.
    pub fn static_dims(&self) -> Option<Vec<usize>> {
        self.dims
            .as_ref()?
            .iter()
            .map(|d| d.known())
            .collect::<Option<Vec<_>>>()
    }

    pub fn elem_count(&self) -> Option<usize> {
        self.static_dims().map(|d| d.iter().product())
    }

    /// Combines two descriptions of the same value, keeping whatever either knows.
    /// Returns `None` when they contradict each other.
    pub fn refine(&self, other: &Shape) -> Option<Shape> {
        match (&self.dims, &other.dims) {
            (None, _) => Some(other.clone()),
            (_, None) => Some(self.clone()),
            (Some(a), Some(b)) => {
                if a.len() != b.len() {
                    return None;
                }
                a.iter()
                    .zip(b)
                    .map(|(x, y)| match (x, y) {
                        (Dim::Known(p), Dim::Known(q)) if p != q => None,
                        (Dim::Known(p), _) | (_, Dim::Known(p)) => Some(Dim::Known(*p)),
                        _ => Some(Dim::Unknown),
                    })
                    .collect::<Option<Vec<_>>>()
                    .map(Shape::ranked)
            }
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.dims {
            None => f.write_str("*"),
            Some(d) if d.is_empty() => f.write_str("scalar"),
            Some(d) => {
                for (i, dim) in d.iter().enumerate() {
                    if i > 0 {
                        f.write_str("x")?;
                    }
                    write!(f, "{dim}")?;
                }
                Ok(())
            }
        }
    }
}

/// Static type of a graph value.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TensorType {
    pub dtype: DType,
    pub shape: Shape,
}

impl TensorType {
    pub fn new(dtype: DType, shape: Shape) -> Self {
        TensorType { dtype, shape }
    }

    pub fn unranked(dtype: DType) -> Self {
        TensorType::new(dtype, Shape::unranked())
    }

    pub fn of_static(dtype: DType, dims: &[usize]) -> Self {
        TensorType::new(dtype, Shape::from_static(dims))
    }
}

/// Row-major strides for a static shape.
pub fn strides(dims: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; dims.len()];
    for k in (0..dims.len().saturating_sub(1)).rev() {
        strides[k] = strides[k + 1] * dims[k + 1];
    }
    strides
}

/// Row-major offset of `indices` within `shape`.
pub fn linear_index(shape: &Shape, indices: &[usize]) -> Result<usize, TensorError> {
    let dims = shape
        .static_dims()
        .ok_or_else(|| TensorError::NotStatic(shape.clone()))?;
    let out_of_range = || TensorError::OutOfRange {
        shape: shape.clone(),
        index: indices.to_vec(),
    };
    if dims.len() != indices.len() {
        return Err(out_of_range());
    }
    let mut offset = 0;
    for (&i, &d) in indices.iter().zip(&dims) {
        if i >= d {
            return Err(out_of_range());
        }
        offset = offset * d + i;
    }
    Ok(offset)
}

/// Inverse of [`linear_index`] for in-range offsets.
pub fn unravel_index(dims: &[usize], mut offset: usize) -> Vec<usize> {
    let mut idx = vec![0; dims.len()];
    for k in (0..dims.len()).rev() {
        idx[k] = offset % dims[k];
        offset /= dims[k];
    }
    idx
}

/// Multidirectional (numpy-style) broadcast of two static shapes.
pub fn broadcast_shapes(a: &Shape, b: &Shape) -> Result<Shape, TensorError> {
    let da = a.static_dims().ok_or_else(|| TensorError::NotStatic(a.clone()))?;
    let db = b.static_dims().ok_or_else(|| TensorError::NotStatic(b.clone()))?;
    broadcast_dims(&da, &db)
        .map(|d| Shape::from_static(&d))
        .ok_or_else(|| TensorError::IncompatibleShapes(a.clone(), b.clone()))
}

pub fn broadcast_dims(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let x = if i < a.len() { a[a.len() - 1 - i] } else { 1 };
        let y = if i < b.len() { b[b.len() - 1 - i] } else { 1 };
        out[rank - 1 - i] = match (x, y) {
            _ if x == y => x,
            (1, _) => y,
            (_, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Maps an index into the broadcast result back to an index into an operand of
/// shape `operand`: leading dims are dropped and size-1 dims pinned to 0.
pub fn broadcast_source_index(operand: &[usize], out_index: &[usize]) -> Vec<usize> {
    let skip = out_index.len() - operand.len();
    operand
        .iter()
        .zip(&out_index[skip..])
        .map(|(&d, &i)| if d == 1 { 0 } else { i })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    I64(Vec<i64>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::I64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::I64(_) => DType::I64,
        }
    }

    pub fn zeros(dtype: DType, len: usize) -> Self {
        match dtype {
            DType::F32 => TensorData::F32(vec![0.0; len]),
            DType::I64 => TensorData::I64(vec![0; len]),
        }
    }
}

/// A dense row-major tensor with a static shape.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorValue {
    dims: Vec<usize>,
    data: TensorData,
}

impl TensorValue {
    pub fn new(dims: Vec<usize>, data: TensorData) -> Result<Self, TensorError> {
        let expected: usize = dims.iter().product();
        if expected != data.len() {
            return Err(TensorError::LengthMismatch {
                shape: Shape::from_static(&dims),
                expected,
                actual: data.len(),
            });
        }
        Ok(TensorValue { dims, data })
    }

    pub fn from_f32(dims: &[usize], data: Vec<f32>) -> Result<Self, TensorError> {
        TensorValue::new(dims.to_vec(), TensorData::F32(data))
    }

    pub fn from_i64(dims: &[usize], data: Vec<i64>) -> Result<Self, TensorError> {
        TensorValue::new(dims.to_vec(), TensorData::I64(data))
    }

    pub fn scalar_f32(v: f32) -> Self {
        TensorValue {
            dims: Vec::new(),
            data: TensorData::F32(vec![v]),
        }
    }

    pub fn zeros(dtype: DType, dims: &[usize]) -> Self {
        let len = dims.iter().product();
        TensorValue {
            dims: dims.to_vec(),
            data: TensorData::zeros(dtype, len),
        }
    }

    pub fn filled_f32(dims: &[usize], v: f32) -> Self {
        TensorValue {
            dims: dims.to_vec(),
            data: TensorData::F32(vec![v; dims.iter().product()]),
        }
    }

    pub fn dtype(&self) -> DType {
        self.data.dtype()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn shape(&self) -> Shape {
        Shape::from_static(&self.dims)
    }

    pub fn tensor_type(&self) -> TensorType {
        TensorType::new(self.dtype(), self.shape())
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn into_data(self) -> TensorData {
        self.data
    }

    pub fn as_f32(&self) -> Option<&[f32]> {
        match &self.data {
            TensorData::F32(v) => Some(v),
            TensorData::I64(_) => None,
        }
    }

    pub fn as_i64(&self) -> Option<&[i64]> {
        match &self.data {
            TensorData::I64(v) => Some(v),
            TensorData::F32(_) => None,
        }
    }

    /// Same buffer reinterpreted under another shape with the same element count.
    pub fn reshaped(&self, dims: &[usize]) -> Result<Self, TensorError> {
        TensorValue::new(dims.to_vec(), self.data.clone())
    }

    /// Equality on shape and raw element bits (so `-0.0 != 0.0` and NaNs compare by payload).
    pub fn bit_eq(&self, other: &TensorValue) -> bool {
        if self.dims != other.dims {
            return false;
        }
        match (&self.data, &other.data) {
            (TensorData::F32(a), TensorData::F32(b)) => {
                a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
            }
            (TensorData::I64(a), TensorData::I64(b)) => a == b,
            _ => false,
        }
    }

    /// Little-endian byte image of the payload.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        match &self.data {
            TensorData::F32(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            TensorData::I64(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
        }
    }

    pub fn from_le_bytes(dtype: DType, dims: &[usize], bytes: &[u8]) -> Result<Self, TensorError> {
        let expected: usize = dims.iter().product();
        if bytes.len() != expected * dtype.width() {
            return Err(TensorError::LengthMismatch {
                shape: Shape::from_static(dims),
                expected,
                actual: bytes.len() / dtype.width(),
            });
        }
        let data = match dtype {
            DType::F32 => TensorData::F32(
                bytes
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            DType::I64 => TensorData::I64(
                bytes
                    .chunks_exact(8)
                    .map(|c| i64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
        };
        TensorValue::new(dims.to_vec(), data)
    }
}

#[derive(Serialize, Deserialize)]
struct TensorRepr {
    dtype: DType,
    dims: Vec<usize>,
    /// base64 of the little-endian payload; keeps NaN/inf exact.
    data: String,
}

impl Serialize for TensorValue {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        TensorRepr {
            dtype: self.dtype(),
            dims: self.dims.clone(),
            data: base64::engine::general_purpose::STANDARD.encode(self.to_le_bytes()),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for TensorValue {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let repr = TensorRepr::deserialize(d)?;
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(repr.data.as_bytes())
            .map_err(D::Error::custom)?;
        TensorValue::from_le_bytes(repr.dtype, &repr.dims, &bytes).map_err(D::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn s(d: &[usize]) -> Shape {
        Shape::from_static(d)
    }

    #[test]
    fn broadcast_examples() {
        assert_eq!(broadcast_shapes(&s(&[3, 4, 5]), &s(&[3, 4, 5])).unwrap(), s(&[3, 4, 5]));
        assert_eq!(
            broadcast_shapes(&s(&[3, 4, 5]), &Shape::scalar()).unwrap(),
            s(&[3, 4, 5])
        );
        assert_eq!(broadcast_shapes(&s(&[2, 1, 4]), &s(&[3, 4])).unwrap(), s(&[2, 3, 4]));
    }

    #[test]
    fn broadcast_index_mapping_matches_enumeration() {
        // Every output index of (2x1x4, 3x4) must pull from an in-range operand element,
        // and every operand element must be reached.
        let out = [2, 3, 4];
        for operand in [[2usize, 1, 4].as_slice(), [3, 4].as_slice()] {
            let mut hit = vec![false; operand.iter().product()];
            for off in 0..24 {
                let oi = unravel_index(&out, off);
                let src = broadcast_source_index(operand, &oi);
                let lin = linear_index(&s(operand), &src).unwrap();
                hit[lin] = true;
            }
            assert!(hit.iter().all(|h| *h));
        }
    }

    #[test]
    fn broadcast_rejects_mismatch() {
        let err = broadcast_shapes(&s(&[3, 4]), &s(&[2, 4])).unwrap_err();
        assert!(matches!(err, TensorError::IncompatibleShapes(..)));
    }

    #[test]
    fn linear_index_examples() {
        let sh = s(&[3, 4, 5]);
        assert_eq!(linear_index(&sh, &[0, 0, 0]).unwrap(), 0);
        assert_eq!(linear_index(&sh, &[2, 3, 4]).unwrap(), 59);
        assert_eq!(linear_index(&sh, &[1, 2, 3]).unwrap(), 33);
        assert!(matches!(
            linear_index(&sh, &[3, 0, 0]),
            Err(TensorError::OutOfRange { .. })
        ));
        assert_eq!(linear_index(&Shape::scalar(), &[]).unwrap(), 0);
    }

    #[test]
    fn linear_index_agrees_with_enumeration_order() {
        let dims = [3usize, 4, 5];
        let mut expected = 0;
        for i in 0..3 {
            for j in 0..4 {
                for k in 0..5 {
                    assert_eq!(linear_index(&s(&dims), &[i, j, k]).unwrap(), expected);
                    expected += 1;
                }
            }
        }
    }

    #[test]
    fn strides_row_major() {
        assert_eq!(strides(&[3, 4, 5]), vec![20, 5, 1]);
        assert_eq!(strides(&[]), Vec::<usize>::new());
    }

    #[test]
    fn refine_merges_knowledge() {
        let a = Shape::ranked(vec![Dim::Known(3), Dim::Unknown]);
        let b = Shape::ranked(vec![Dim::Unknown, Dim::Known(4)]);
        assert_eq!(a.refine(&b).unwrap(), s(&[3, 4]));
        assert_eq!(Shape::unranked().refine(&a).unwrap(), a);
        assert!(s(&[3]).refine(&s(&[4])).is_none());
    }

    #[test]
    fn payload_bytes_roundtrip() {
        let t = TensorValue::from_f32(&[3, 4, 5], (0..60).map(|x| x as f32).collect()).unwrap();
        let bytes = t.to_le_bytes();
        assert_eq!(bytes.len(), 240);
        assert!(TensorValue::from_le_bytes(DType::F32, &[3, 4, 5], &bytes)
            .unwrap()
            .bit_eq(&t));
    }

    fn static_shape() -> impl Strategy<Value = Vec<usize>> {
        proptest::collection::vec(1usize..5, 0..4)
    }

    proptest! {
        #[test]
        fn linear_index_is_bijection(dims in static_shape()) {
            let n: usize = dims.iter().product();
            let mut seen = vec![false; n];
            for off in 0..n {
                let idx = unravel_index(&dims, off);
                let lin = linear_index(&s(&dims), &idx).unwrap();
                prop_assert_eq!(lin, off);
                prop_assert!(!seen[lin]);
                seen[lin] = true;
            }
        }

        #[test]
        fn broadcast_commutative_idempotent(a in static_shape(), b in static_shape()) {
            let ab = broadcast_shapes(&s(&a), &s(&b));
            let ba = broadcast_shapes(&s(&b), &s(&a));
            prop_assert_eq!(ab.is_ok(), ba.is_ok());
            if let (Ok(x), Ok(y)) = (ab, ba) {
                prop_assert_eq!(x, y);
            }
            prop_assert_eq!(broadcast_shapes(&s(&a), &s(&a)).unwrap(), s(&a));
        }
    }
}
