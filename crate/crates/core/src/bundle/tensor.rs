use std::path::Path;

use super::reader::{checked_size, push_f64s, Reader};
use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const TENSOR_MAGIC: &[u8; 4] = b"LQT1";
const HEADER_LEN: u64 = 4 + 1 + 8 + 8;

/// On-disk element type of a tensor file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementKind {
    F32,
    F64,
}

impl ElementKind {
    pub fn tag(self) -> u8 {
        match self {
            ElementKind::F32 => 1,
            ElementKind::F64 => 2,
        }
    }

    pub fn size(self) -> usize {
        match self {
            ElementKind::F32 => 4,
            ElementKind::F64 => 8,
        }
    }

    fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            1 => Some(ElementKind::F32),
            2 => Some(ElementKind::F64),
            _ => None,
        }
    }
}

/// Serializes a matrix. `F32` rounds every value to single precision.
pub fn encode_tensor(m: &Matrix, kind: ElementKind) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN as usize + m.len() * kind.size());
    out.extend_from_slice(TENSOR_MAGIC);
    out.push(kind.tag());
    out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
    match kind {
        ElementKind::F64 => push_f64s(&mut out, m.as_slice()),
        ElementKind::F32 => {
            for v in m.as_slice() {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
    }
    out
}

/// Parses a tensor file, returning the matrix and its stored element kind.
pub fn decode_tensor(bytes: &[u8]) -> Result<(Matrix, ElementKind)> {
    let mut r = Reader::new(bytes);
    r.expect_magic(TENSOR_MAGIC, "LQT1 tensor")?;
    let at = r.offset();
    let tag = r.u8("element kind")?;
    let kind = ElementKind::from_tag(tag).ok_or_else(|| Error::Corrupt { offset: at, reason: format!("unknown element kind {tag}") })?;
    let rows = r.u64("row count")?;
    let cols = r.u64("column count")?;
    let payload = checked_size(&[rows, cols, kind.size() as u64], r.offset(), "payload")?;
    if payload != r.remaining() {
        return Err(r.corrupt(format!("payload is {} bytes, shape {rows}x{cols} needs {payload}", r.remaining())));
    }
    let start = r.offset();
    let raw = r.take(payload, "payload")?;
    let data: Vec<f64> = match kind {
        ElementKind::F64 => super::reader::f64s(raw),
        ElementKind::F32 => raw.chunks_exact(4).map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes")))).collect(),
    };
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::Corrupt { offset: start + (i * kind.size()) as u64, reason: "non-finite element".into() });
    }
    r.finish()?;
    Ok((Matrix::new(rows as usize, cols as usize, data)?, kind))
}

pub fn save_tensor(path: impl AsRef<Path>, m: &Matrix, kind: ElementKind) -> Result<()> {
    Ok(std::fs::write(path, encode_tensor(m, kind))?)
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<Matrix> {
    Ok(decode_tensor(&std::fs::read(path)?)?.0)
}
