//! Post-training weight quantization with a quantized low-rank
//! error-compensation branch.
//!
//! A dense weight `W` is split into a 4-bit residual branch and a low-rank
//! branch `A = L·R`, both quantized. The low-rank factors are first optimized
//! so that the residual lands close to the residual quantizer's grid
//! ([`absorber`]), then rotated by a learned orthogonal matrix that reduces the
//! quantization error of the factors themselves ([`rotation`]). The rotation
//! is fused into the factors, so inference cost is unchanged.
//!
//! [`pipeline`] assembles layers and reports errors, [`bundle`] persists them.

pub mod absorber;
pub mod bundle;
mod error;
pub mod formats;
pub mod numerics;
pub mod pipeline;
pub mod rotation;
pub mod smoothing;

pub use error::{Error, Result};
pub use formats::{dequantize, fake_quant, make_format, quantize_blockwise, FormatSpec, QuantizedTensor};
pub use numerics::Matrix;
