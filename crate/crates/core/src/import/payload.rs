//! `.tensor` payload files: a 16-byte little-endian header followed by the
//! element bytes, also little-endian.
//!
//! ```text
//! u32 magic   0x4C4F4F4D
//! u8  dtype   ONNX element code (1 = f32, 7 = i64)
//! u8  rank
//! u16 reserved (0)
//! u64 dims[rank]
//! body        elem_count * width bytes
//! ```

use thiserror::Error;

use crate::tensor::{DType, TensorData, TensorValue};

pub const PAYLOAD_MAGIC: u32 = 0x4C4F4F4D;
pub const HEADER_LEN: usize = 16;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PayloadError {
    #[error("payload too short: {0} bytes")]
    Truncated(usize),
    #[error("bad payload magic {0:#010x}")]
    BadMagic(u32),
    #[error("unsupported element type {name} (code {code})")]
    UnsupportedDtype { code: i64, name: &'static str },
    #[error("payload body is {actual} bytes, expected {expected}")]
    SizeMismatch { expected: usize, actual: usize },
}

/// Byte order of the machine doing the load or store.
///
/// Decoding always goes through [`HostOrder::native`] in production; the
/// other variant lets tests model a big-endian host on any machine.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HostOrder {
    Little,
    Big,
}

impl HostOrder {
    pub fn native() -> Self {
        if cfg!(target_endian = "big") {
            HostOrder::Big
        } else {
            HostOrder::Little
        }
    }
}

/// What a raw register load of these bytes would yield on `host`.
fn load_u64(host: HostOrder, b: [u8; 8]) -> u64 {
    match host {
        HostOrder::Little => u64::from_le_bytes(b),
        HostOrder::Big => u64::from_be_bytes(b),
    }
}

fn store_u64(host: HostOrder, v: u64) -> [u8; 8] {
    match host {
        HostOrder::Little => v.to_le_bytes(),
        HostOrder::Big => v.to_be_bytes(),
    }
}

fn load_u32(host: HostOrder, b: [u8; 4]) -> u32 {
    match host {
        HostOrder::Little => u32::from_le_bytes(b),
        HostOrder::Big => u32::from_be_bytes(b),
    }
}

fn store_u32(host: HostOrder, v: u32) -> [u8; 4] {
    match host {
        HostOrder::Little => v.to_le_bytes(),
        HostOrder::Big => v.to_be_bytes(),
    }
}

// Conversions between the on-disk (little-endian) order and the host's.
fn le32(host: HostOrder, v: u32) -> u32 {
    if host == HostOrder::Big {
        v.swap_bytes()
    } else {
        v
    }
}

fn le64(host: HostOrder, v: u64) -> u64 {
    if host == HostOrder::Big {
        v.swap_bytes()
    } else {
        v
    }
}

pub fn encode_payload(t: &TensorValue) -> Vec<u8> {
    encode_payload_on(HostOrder::native(), t)
}

pub fn decode_payload(bytes: &[u8]) -> Result<TensorValue, PayloadError> {
    decode_payload_on(HostOrder::native(), bytes)
}

pub fn encode_payload_on(host: HostOrder, t: &TensorValue) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * t.dims().len() + t.len() * t.dtype().width());
    out.extend(store_u32(host, le32(host, PAYLOAD_MAGIC)));
    out.push(t.dtype().onnx_code());
    out.push(t.dims().len() as u8);
    out.extend([0u8; 2]);
    // Pad the fixed part to 16 bytes.
    out.extend([0u8; HEADER_LEN - 8]);
    for d in t.dims() {
        out.extend(store_u64(host, le64(host, *d as u64)));
    }
    match t.data() {
        TensorData::F32(v) => {
            for x in v {
                out.extend(store_u32(host, le32(host, x.to_bits())));
            }
        }
        TensorData::I64(v) => {
            for x in v {
                out.extend(store_u64(host, le64(host, *x as u64)));
            }
        }
    }
    out
}

pub fn decode_payload_on(host: HostOrder, bytes: &[u8]) -> Result<TensorValue, PayloadError> {
    if bytes.len() < HEADER_LEN {
        return Err(PayloadError::Truncated(bytes.len()));
    }
    let magic = le32(host, load_u32(host, bytes[0..4].try_into().unwrap()));
    if magic != PAYLOAD_MAGIC {
        return Err(PayloadError::BadMagic(magic));
    }
    let code = bytes[4] as i64;
    let dtype = DType::from_onnx_code(code).ok_or(PayloadError::UnsupportedDtype {
        code,
        name: DType::onnx_code_name(code),
    })?;
    let rank = bytes[5] as usize;
    let dims_end = HEADER_LEN + 8 * rank;
    if bytes.len() < dims_end {
        return Err(PayloadError::Truncated(bytes.len()));
    }
    let dims: Vec<usize> = bytes[HEADER_LEN..dims_end]
        .chunks_exact(8)
        .map(|c| le64(host, load_u64(host, c.try_into().unwrap())) as usize)
        .collect();
    let body = &bytes[dims_end..];
    let count: usize = dims.iter().product();
    let expected = count * dtype.width();
    if body.len() != expected {
        return Err(PayloadError::SizeMismatch {
            expected,
            actual: body.len(),
        });
    }
    let data = match dtype {
        DType::F32 => TensorData::F32(
            body.chunks_exact(4)
                .map(|c| f32::from_bits(le32(host, load_u32(host, c.try_into().unwrap()))))
                .collect(),
        ),
        DType::I64 => TensorData::I64(
            body.chunks_exact(8)
                .map(|c| le64(host, load_u64(host, c.try_into().unwrap())) as i64)
                .collect(),
        ),
    };
    Ok(TensorValue::new(dims, data).expect("length checked above"))
}
