//! Blockwise quantizer formats: SINT4, the MX family, and unscaled passthroughs.
//!
//! Wire layout: element codes are packed LSB-first into bytes, each row
//! starting on a byte boundary and zero-padded to whole blocks; scales follow
//! as one e8m0 byte or two little-endian fp16 bytes per block.

pub mod codec;
mod pack;
mod spec;
mod tensor;

pub use codec::{decode_element, encode_element};
pub use pack::{pack_codes, packed_len, unpack_codes};
pub use spec::{make_format, ElementCodec, FormatSpec, ScaleKind, PASSTHROUGH_FORMATS, REGISTERED_FORMATS};
pub use tensor::{dequantize, fake_quant, quantization_mse, quantize_blockwise, QuantizedTensor};
