//! Element codecs and block-scale rules.

use half::f16;

use crate::error::{Error, Result};
use crate::formats::{ElementCodec, ScaleKind};

/// Exponent byte bias of an e8m0 scale.
pub const E8M0_BIAS: i32 = 127;
/// e8m0 exponent used for all-zero blocks.
pub const E8M0_MIN_EXP: i32 = -127;
pub const E8M0_MAX_EXP: i32 = 127;
/// Smallest fp16 scale ever emitted (smallest positive normal, `2^-14`).
pub const FP16_MIN_SCALE: f64 = 6.103515625e-5;
/// Largest finite fp16.
pub const FP16_MAX: f64 = 65504.0;

impl ElementCodec {
    /// Largest representable magnitude before scaling.
    pub fn max_value(self) -> f64 {
        match self {
            ElementCodec::Int { bits } => ((1i64 << (bits - 1)) - 1) as f64,
            ElementCodec::MiniFloat { .. } => minifloat_magnitude(self, max_magnitude_code(self)),
            ElementCodec::Half => FP16_MAX,
            ElementCodec::Identity => f64::MAX,
        }
    }

    /// Encodes an already-scaled value: round to nearest, ties to even, saturating.
    pub fn encode(self, x: f64) -> u64 {
        match self {
            ElementCodec::Int { bits } => {
                let qmax = self.max_value();
                let q = x.round_ties_even().clamp(-qmax, qmax) as i64;
                (q as u64) & mask(u32::from(bits))
            }
            ElementCodec::MiniFloat { exp_bits, man_bits, .. } => {
                let mag = nearest_minifloat(self, x.abs());
                if mag == 0 || x >= 0.0 {
                    mag
                } else {
                    mag | (1 << (exp_bits + man_bits))
                }
            }
            ElementCodec::Half => {
                let h = f16::from_f64(x.clamp(-FP16_MAX, FP16_MAX));
                u64::from(h.to_bits())
            }
            ElementCodec::Identity => x.to_bits(),
        }
    }

    /// Decodes a code to its unscaled value.
    pub fn decode(self, code: u64) -> Result<f64> {
        let width = self.bits();
        if width < 64 && code > mask(width) {
            return Err(Error::Format(format!("code {code:#x} wider than {width} bits")));
        }
        match self {
            ElementCodec::Int { bits } => {
                let shift = 64 - u32::from(bits);
                let q = ((code << shift) as i64) >> shift;
                if q == -(1i64 << (bits - 1)) {
                    return Err(Error::Format(format!("reserved integer code {q} for int{bits}")));
                }
                Ok(q as f64)
            }
            ElementCodec::MiniFloat { exp_bits, man_bits, top_code_is_nan, .. } => {
                let sign_bit = 1u64 << (exp_bits + man_bits);
                let mag = code & (sign_bit - 1);
                if top_code_is_nan && mag == sign_bit - 1 {
                    return Err(Error::Format(format!("NaN code {code:#x} for {self}")));
                }
                let v = minifloat_magnitude(self, mag);
                Ok(if code & sign_bit != 0 && v != 0.0 { -v } else { v })
            }
            ElementCodec::Half => {
                let v = f16::from_bits(code as u16).to_f64();
                if !v.is_finite() {
                    return Err(Error::Format(format!("non-finite fp16 code {code:#06x}")));
                }
                Ok(v)
            }
            ElementCodec::Identity => {
                let v = f64::from_bits(code);
                if !v.is_finite() {
                    return Err(Error::Format("non-finite f64 code".into()));
                }
                Ok(v)
            }
        }
    }
}

fn mask(bits: u32) -> u64 {
    if bits >= 64 {
        u64::MAX
    } else {
        (1u64 << bits) - 1
    }
}

fn max_magnitude_code(codec: ElementCodec) -> u64 {
    let ElementCodec::MiniFloat { exp_bits, man_bits, top_code_is_nan, .. } = codec else {
        unreachable!("minifloat only")
    };
    let all_ones = (1u64 << (exp_bits + man_bits)) - 1;
    if top_code_is_nan {
        all_ones - 1
    } else {
        all_ones
    }
}

/// Value of an unsigned minifloat magnitude code; monotone in the code.
fn minifloat_magnitude(codec: ElementCodec, code: u64) -> f64 {
    let ElementCodec::MiniFloat { man_bits, bias, .. } = codec else {
        unreachable!("minifloat only")
    };
    let exp = (code >> man_bits) as i32;
    let man = (code & ((1 << man_bits) - 1)) as f64;
    let m = i32::from(man_bits);
    if exp == 0 {
        man * 2f64.powi(1 - bias - m)
    } else {
        ((1u64 << man_bits) as f64 + man) * 2f64.powi(exp - bias - m)
    }
}

/// Nearest magnitude code for `x ≥ 0`, ties to the even code, saturating.
fn nearest_minifloat(codec: ElementCodec, x: f64) -> u64 {
    let top = max_magnitude_code(codec);
    if x >= minifloat_magnitude(codec, top) {
        return top;
    }
    // First code whose magnitude is >= x.
    let (mut lo, mut hi) = (0u64, top);
    while lo < hi {
        let mid = (lo + hi) / 2;
        if minifloat_magnitude(codec, mid) < x {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    if lo == 0 {
        return 0;
    }
    let above = minifloat_magnitude(codec, lo);
    let below = minifloat_magnitude(codec, lo - 1);
    let (d_above, d_below) = (above - x, x - below);
    // ties go to the even code
    if d_below < d_above || (d_below == d_above && lo % 2 == 1) {
        lo - 1
    } else {
        lo
    }
}

/// `floor(log2(x))` for positive finite `x`, computed exactly from the bit pattern.
pub(crate) fn floor_log2(x: f64) -> i32 {
    debug_assert!(x > 0.0 && x.is_finite());
    let bits = x.to_bits();
    let biased = ((bits >> 52) & 0x7ff) as i32;
    if biased == 0 {
        let mantissa = bits & ((1u64 << 52) - 1);
        -1022 - (mantissa.leading_zeros() as i32 - 11)
    } else {
        biased - 1023
    }
}

/// Chooses a block scale for block maximum `amax`. Returns `(wire bits, scale value)`.
///
/// e8m0: `e = floor(log2 amax) − floor(log2 codec_max)`, clamped to ±127; an
/// all-zero block uses `e = −127`. Scaled block maxima land in
/// `[2^E, 2^(E+1))` with `E = floor(log2 codec_max)`, which makes re-encoding
/// a decoded block reproduce the same exponent.
///
/// fp16: `amax / codec_max` rounded up to the next binary16 value, clamped to
/// `[2^-14, 65504]`.
pub fn choose_scale(kind: ScaleKind, codec: ElementCodec, amax: f64) -> (u16, f64) {
    match kind {
        ScaleKind::E8m0 => {
            let e = if amax == 0.0 {
                E8M0_MIN_EXP
            } else {
                (floor_log2(amax) - floor_log2(codec.max_value())).clamp(E8M0_MIN_EXP, E8M0_MAX_EXP)
            };
            ((e + E8M0_BIAS) as u16, 2f64.powi(e))
        }
        ScaleKind::Fp16 => {
            let target = amax / codec.max_value();
            let bits = if target <= FP16_MIN_SCALE {
                f16::from_f64(FP16_MIN_SCALE).to_bits()
            } else if target >= FP16_MAX {
                f16::MAX.to_bits()
            } else {
                let h = f16::from_f64(target);
                if h.to_f64() < target {
                    h.to_bits() + 1
                } else {
                    h.to_bits()
                }
            };
            (bits, f16::from_bits(bits).to_f64())
        }
        ScaleKind::None => (0, 1.0),
    }
}

/// Decodes and validates a stored scale.
pub fn decode_scale(kind: ScaleKind, wire: u16) -> Result<f64> {
    match kind {
        ScaleKind::E8m0 => {
            if wire > 254 {
                return Err(Error::Format(format!("e8m0 scale byte {wire} is reserved")));
            }
            Ok(2f64.powi(i32::from(wire) - E8M0_BIAS))
        }
        ScaleKind::Fp16 => {
            let v = f16::from_bits(wire).to_f64();
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Format(format!("fp16 scale {wire:#06x} is not a positive finite value")));
            }
            Ok(v)
        }
        ScaleKind::None => Ok(1.0),
    }
}

/// Encodes `v` with the given positive scale.
pub fn encode_element(v: f64, codec: ElementCodec, scale: f64) -> Result<u64> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::Parameter(format!("scale must be positive and finite, got {scale}")));
    }
    Ok(codec.encode(v / scale))
}

/// Decodes `code` and multiplies by `scale`.
pub fn decode_element(code: u64, codec: ElementCodec, scale: f64) -> Result<f64> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::Parameter(format!("scale must be positive and finite, got {scale}")));
    }
    Ok(codec.decode(code)? * scale)
}
