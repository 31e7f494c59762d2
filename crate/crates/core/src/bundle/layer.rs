use std::path::Path;

use serde::{Deserialize, Serialize};

use super::reader::{checked_size, f64s, push_f64s, Reader};
use crate::error::{Error, Result};
use crate::formats::{dequantize, FormatSpec, QuantizedTensor, ScaleKind};
use crate::pipeline::{LayerBundle, LayerMeta};

pub const BUNDLE_MAGIC: &[u8; 4] = b"LRQB";
pub const BUNDLE_VERSION: u16 = 1;

const PCOD: [u8; 4] = *b"PCOD";
const PSCL: [u8; 4] = *b"PSCL";
const LCOD: [u8; 4] = *b"LCOD";
const LSCL: [u8; 4] = *b"LSCL";
const RCOD: [u8; 4] = *b"RCOD";
const RSCL: [u8; 4] = *b"RSCL";
const GAMA: [u8; 4] = *b"GAMA";
const KNOWN: [[u8; 4]; 7] = [PCOD, PSCL, LCOD, LSCL, RCOD, RSCL, GAMA];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkEntry {
    pub tag: String,
    pub bytes: u64,
}

/// The JSON manifest stored after the header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub layer: LayerMeta,
    pub gamma: bool,
    /// Every chunk that follows, in file order.
    pub chunks: Vec<ChunkEntry>,
}

fn chunks_of(b: &LayerBundle) -> Vec<([u8; 4], Vec<u8>)> {
    let mut chunks = vec![
        (PCOD, b.residual.codes().to_vec()),
        (PSCL, b.residual.scales().to_vec()),
        (LCOD, b.lowrank_l.codes().to_vec()),
        (LSCL, b.lowrank_l.scales().to_vec()),
        (RCOD, b.lowrank_r.codes().to_vec()),
        (RSCL, b.lowrank_r.scales().to_vec()),
    ];
    if let Some(g) = &b.gamma {
        let mut bytes = Vec::with_capacity(g.len() * 8);
        push_f64s(&mut bytes, g);
        chunks.push((GAMA, bytes));
    }
    chunks
}

pub fn manifest_of(b: &LayerBundle) -> BundleManifest {
    BundleManifest {
        layer: b.meta.clone(),
        gamma: b.gamma.is_some(),
        chunks: chunks_of(b)
            .iter()
            .map(|(tag, bytes)| ChunkEntry { tag: String::from_utf8_lossy(tag).into_owned(), bytes: bytes.len() as u64 })
            .collect(),
    }
}

pub fn encode_bundle(b: &LayerBundle) -> Result<Vec<u8>> {
    b.validate()?;
    let manifest = serde_json::to_string_pretty(&manifest_of(b)).map_err(|e| Error::Format(format!("manifest: {e}")))?;
    let manifest_len = u32::try_from(manifest.len()).map_err(|_| Error::Format("manifest exceeds 4 GiB".into()))?;
    let mut out = Vec::new();
    out.extend_from_slice(BUNDLE_MAGIC);
    out.extend_from_slice(&BUNDLE_VERSION.to_le_bytes());
    out.extend_from_slice(&manifest_len.to_le_bytes());
    out.extend_from_slice(manifest.as_bytes());
    for (tag, bytes) in chunks_of(b) {
        out.extend_from_slice(&tag);
        out.extend_from_slice(&(bytes.len() as u64).to_le_bytes());
        out.extend_from_slice(&bytes);
    }
    Ok(out)
}

/// Header and manifest only; chunks are not read.
pub fn decode_manifest(bytes: &[u8]) -> Result<BundleManifest> {
    read_manifest(&mut Reader::new(bytes))
}

fn read_manifest(r: &mut Reader<'_>) -> Result<BundleManifest> {
    r.expect_magic(BUNDLE_MAGIC, "LRQB bundle")?;
    let version = r.u16("version")?;
    if version == 0 || version > BUNDLE_VERSION {
        return Err(Error::Version { found: version, supported: BUNDLE_VERSION });
    }
    let at = r.offset();
    let len = r.u32("manifest length")? as usize;
    if len > r.remaining() {
        return Err(Error::Corrupt { offset: at, reason: format!("manifest declares {len} bytes, only {} remain", r.remaining()) });
    }
    let start = r.offset();
    let text = r.take(len, "manifest")?;
    let text = std::str::from_utf8(text).map_err(|e| Error::Corrupt { offset: start + e.valid_up_to() as u64, reason: "manifest is not UTF-8".into() })?;
    serde_json::from_str(text).map_err(|e| Error::Corrupt { offset: start, reason: format!("manifest: {e}") })
}

/// Byte sizes of the code and scale streams of a `rows × cols` tensor.
fn stream_sizes(rows: usize, cols: usize, f: &FormatSpec, at: u64) -> Result<(usize, usize)> {
    let block = f.block_size as u64;
    let blocks = (cols as u64).div_ceil(block);
    let bits_per_row = checked_size(&[blocks, block, u64::from(f.bits_per_value())], at, "code stream")?;
    let codes = checked_size(&[rows as u64, bits_per_row.div_ceil(8) as u64], at, "code stream")?;
    let scales = if f.scale_kind == ScaleKind::None {
        0
    } else {
        checked_size(&[rows as u64, blocks, f.scale_kind.bytes() as u64], at, "scale stream")?
    };
    Ok((codes, scales))
}

fn checked_format(f: &FormatSpec, at: u64) -> Result<FormatSpec> {
    FormatSpec::custom(&f.name, f.block_size, f.scale_kind, f.codec).map_err(|e| Error::Corrupt { offset: at, reason: format!("manifest format: {e}") })
}

pub fn decode_bundle(bytes: &[u8]) -> Result<LayerBundle> {
    let mut r = Reader::new(bytes);
    let manifest = read_manifest(&mut r)?;
    let chunks_start = r.offset();
    let meta = &manifest.layer;
    let q1 = checked_format(&meta.q1, chunks_start)?;
    let q2 = checked_format(&meta.q2, chunks_start)?;
    let (pc, ps) = stream_sizes(meta.rows, meta.cols, &q1, chunks_start)?;
    let (lc, ls) = stream_sizes(meta.rows, meta.rank, &q2, chunks_start)?;
    let (rc, rs) = stream_sizes(meta.rank, meta.cols, &q2, chunks_start)?;
    let gamma_len = if manifest.gamma { checked_size(&[meta.rows as u64, 8], chunks_start, "smoothing vector")? } else { 0 };
    let expected = [pc, ps, lc, ls, rc, rs, gamma_len];

    let mut found: [Option<&[u8]>; 7] = [None; 7];
    let mut last_known = None;
    for entry in &manifest.chunks {
        let at = r.offset();
        let tag = r.array::<4>("chunk tag")?;
        if tag != entry.tag.as_bytes() {
            return Err(Error::Corrupt { offset: at, reason: format!("chunk {:?} where manifest lists {:?}", String::from_utf8_lossy(&tag), entry.tag) });
        }
        let len = r.length("chunk length")?;
        if len as u64 != entry.bytes {
            return Err(Error::Corrupt { offset: at, reason: format!("chunk {} is {len} bytes, manifest says {}", entry.tag, entry.bytes) });
        }
        let Some(k) = KNOWN.iter().position(|t| *t == tag) else {
            r.take(len, "unknown chunk")?;
            continue;
        };
        if last_known.is_some_and(|prev| prev >= k) || (k == 6 && !manifest.gamma) {
            return Err(Error::Corrupt { offset: at, reason: format!("unexpected chunk {}", entry.tag) });
        }
        if len != expected[k] {
            return Err(Error::Corrupt { offset: at, reason: format!("chunk {} is {len} bytes, shapes need {}", entry.tag, expected[k]) });
        }
        found[k] = Some(r.take(len, "chunk payload")?);
        last_known = Some(k);
    }
    r.finish()?;
    let required = if manifest.gamma { 7 } else { 6 };
    if let Some(k) = found[..required].iter().position(Option::is_none) {
        return Err(r.corrupt(format!("missing chunk {}", String::from_utf8_lossy(&KNOWN[k]))));
    }
    let part = |k: usize| found[k].unwrap_or_default().to_vec();
    let residual = QuantizedTensor::from_parts(meta.rows, meta.cols, q1, part(0), part(1))?;
    let lowrank_l = QuantizedTensor::from_parts(meta.rows, meta.rank, q2.clone(), part(2), part(3))?;
    let lowrank_r = QuantizedTensor::from_parts(meta.rank, meta.cols, q2, part(4), part(5))?;
    let bundle = LayerBundle {
        residual,
        lowrank_l,
        lowrank_r,
        gamma: manifest.gamma.then(|| f64s(found[6].unwrap_or_default())),
        meta: manifest.layer,
    };
    bundle.validate()?;
    for t in [&bundle.residual, &bundle.lowrank_l, &bundle.lowrank_r] {
        dequantize(t)?;
    }
    Ok(bundle)
}

pub fn save_bundle(path: impl AsRef<Path>, b: &LayerBundle) -> Result<()> {
    Ok(std::fs::write(path, encode_bundle(b)?)?)
}

pub fn load_bundle(path: impl AsRef<Path>) -> Result<LayerBundle> {
    decode_bundle(&std::fs::read(path)?)
}
