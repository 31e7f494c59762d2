use crate::error::{Error, Result};
use crate::formats::codec::{choose_scale, decode_scale};
use crate::formats::pack::{pack_codes, packed_len, unpack_codes};
use crate::formats::{FormatSpec, ScaleKind};
use crate::numerics::Matrix;

/// Packed element codes plus per-block scales for a `rows × cols` matrix.
///
/// Blocks run along each row; the last block of a row is zero-padded. Each
/// row's codes start on a byte boundary. Scales are stored in wire form:
/// one byte per block for e8m0, two little-endian bytes for fp16.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantizedTensor {
    rows: usize,
    cols: usize,
    format: FormatSpec,
    codes: Vec<u8>,
    scales: Vec<u8>,
}

impl QuantizedTensor {
    /// Reassembles a tensor from raw parts, checking every length.
    pub fn from_parts(rows: usize, cols: usize, format: FormatSpec, codes: Vec<u8>, scales: Vec<u8>) -> Result<Self> {
        let t = Self { rows, cols, format, codes, scales };
        if t.codes.len() != t.expected_code_bytes() {
            return Err(Error::Format(format!(
                "code stream has {} bytes, expected {} for {}x{} {}",
                t.codes.len(),
                t.expected_code_bytes(),
                rows,
                cols,
                t.format.name
            )));
        }
        if t.scales.len() != t.expected_scale_bytes() {
            return Err(Error::Format(format!(
                "scale stream has {} bytes, expected {}",
                t.scales.len(),
                t.expected_scale_bytes()
            )));
        }
        Ok(t)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn format(&self) -> &FormatSpec {
        &self.format
    }

    pub fn codes(&self) -> &[u8] {
        &self.codes
    }

    pub fn scales(&self) -> &[u8] {
        &self.scales
    }

    pub fn blocks_per_row(&self) -> usize {
        blocks_per_row(self.cols, &self.format)
    }

    /// Number of zero-padding elements at the end of every row.
    pub fn pad_count(&self) -> usize {
        self.blocks_per_row() * self.format.block_size - self.cols
    }

    pub fn scale_count(&self) -> usize {
        if self.format.scale_kind == ScaleKind::None {
            0
        } else {
            self.rows * self.blocks_per_row()
        }
    }

    pub fn row_code_bytes(&self) -> usize {
        packed_len(self.blocks_per_row() * self.format.block_size, self.format.bits_per_value())
    }

    pub fn expected_code_bytes(&self) -> usize {
        self.rows * self.row_code_bytes()
    }

    pub fn expected_scale_bytes(&self) -> usize {
        self.scale_count() * self.format.scale_kind.bytes()
    }

    /// Decoded scale of every block, row-major.
    pub fn scale_values(&self) -> Result<Vec<f64>> {
        let kind = self.format.scale_kind;
        (0..self.scale_count()).map(|b| decode_scale(kind, self.scale_wire(b))).collect()
    }

    fn scale_wire(&self, block: usize) -> u16 {
        match self.format.scale_kind {
            ScaleKind::E8m0 => u16::from(self.scales[block]),
            ScaleKind::Fp16 => u16::from_le_bytes([self.scales[2 * block], self.scales[2 * block + 1]]),
            ScaleKind::None => 0,
        }
    }

    /// Raw codes of row `i`, padding included.
    pub fn row_codes(&self, i: usize) -> Vec<u64> {
        let n = self.blocks_per_row() * self.format.block_size;
        let width = self.row_code_bytes();
        unpack_codes(&self.codes[i * width..(i + 1) * width], self.format.bits_per_value(), n)
    }

    /// Unscaled element values (grid levels), padding excluded.
    pub fn levels(&self) -> Result<Matrix> {
        let codec = self.format.codec;
        let mut data = Vec::with_capacity(self.rows * self.cols);
        for i in 0..self.rows {
            for code in self.row_codes(i).into_iter().take(self.cols) {
                data.push(codec.decode(code)?);
            }
        }
        Ok(Matrix::from_raw(self.rows, self.cols, data))
    }

    /// Total stored payload bits (codes) and scale bits.
    pub fn storage_bits(&self) -> (u64, u64) {
        (8 * self.codes.len() as u64, 8 * self.scales.len() as u64)
    }
}

fn blocks_per_row(cols: usize, format: &FormatSpec) -> usize {
    cols.div_ceil(format.block_size)
}

/// Quantizes `m` block by block along each row.
pub fn quantize_blockwise(m: &Matrix, spec: &FormatSpec) -> QuantizedTensor {
    let (rows, cols) = m.shape();
    let bs = spec.block_size;
    let nblocks = blocks_per_row(cols, spec);
    let bits = spec.bits_per_value();
    let mut codes = Vec::with_capacity(rows * packed_len(nblocks * bs, bits));
    let mut scales = Vec::with_capacity(rows * nblocks * spec.scale_kind.bytes());
    let mut row_codes = vec![0u64; nblocks * bs];
    for i in 0..rows {
        let row = m.row(i);
        row_codes.iter_mut().for_each(|c| *c = 0);
        for (b, chunk) in row.chunks(bs).enumerate() {
            let amax = chunk.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let (wire, scale) = choose_scale(spec.scale_kind, spec.codec, amax);
            match spec.scale_kind {
                ScaleKind::E8m0 => scales.push(wire as u8),
                ScaleKind::Fp16 => scales.extend_from_slice(&wire.to_le_bytes()),
                ScaleKind::None => {}
            }
            for (k, v) in chunk.iter().enumerate() {
                let x = if spec.scale_kind == ScaleKind::None { *v } else { v / scale };
                row_codes[b * bs + k] = spec.codec.encode(x);
            }
        }
        pack_codes(&row_codes, bits, &mut codes);
    }
    QuantizedTensor { rows, cols, format: spec.clone(), codes, scales }
}

/// `value = decode(code) × scale`; padding is dropped.
pub fn dequantize(t: &QuantizedTensor) -> Result<Matrix> {
    if t.codes.len() != t.expected_code_bytes() || t.scales.len() != t.expected_scale_bytes() {
        return Err(Error::Format(format!(
            "tensor streams are {}+{} bytes, expected {}+{}",
            t.codes.len(),
            t.scales.len(),
            t.expected_code_bytes(),
            t.expected_scale_bytes()
        )));
    }
    let scales = t.scale_values()?;
    let bs = t.format.block_size;
    let nblocks = t.blocks_per_row();
    let codec = t.format.codec;
    let mut data = Vec::with_capacity(t.rows * t.cols);
    for i in 0..t.rows {
        for (j, code) in t.row_codes(i).into_iter().enumerate() {
            let level = codec.decode(code)?;
            if j >= t.cols {
                if level != 0.0 {
                    return Err(Error::Format(format!("non-zero padding code in row {i}")));
                }
                continue;
            }
            let scale = if scales.is_empty() { 1.0 } else { scales[i * nblocks + j / bs] };
            data.push(level * scale);
        }
    }
    Ok(Matrix::from_raw(t.rows, t.cols, data))
}

/// The quantization operator: `dequantize(quantize_blockwise(m, spec))`.
///
/// Computed directly without packing; agrees bit-for-bit with the packed route.
pub fn fake_quant(m: &Matrix, spec: &FormatSpec) -> Matrix {
    let codec = spec.codec;
    match spec.scale_kind {
        ScaleKind::None => {
            if codec == crate::formats::ElementCodec::Identity {
                return m.clone();
            }
            m.map(|v| codec.decode(codec.encode(v)).expect("encoder emits valid codes"))
        }
        kind => {
            let mut out = m.clone();
            for i in 0..out.rows() {
                for chunk in out.row_mut(i).chunks_mut(spec.block_size) {
                    let amax = chunk.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                    let (_, scale) = choose_scale(kind, codec, amax);
                    for v in chunk.iter_mut() {
                        *v = codec.decode(codec.encode(*v / scale)).expect("encoder emits valid codes") * scale;
                    }
                }
            }
            out
        }
    }
}

/// Mean squared quantization error `mean((Q(m) − m)²)`.
pub fn quantization_mse(m: &Matrix, spec: &FormatSpec) -> f64 {
    fake_quant(m, spec).sub(m).expect("same shape").mean_square()
}
