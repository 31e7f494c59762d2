use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How each block's shared scale is stored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScaleKind {
    /// IEEE binary16 scale, two bytes little-endian.
    Fp16,
    /// Power-of-two scale `2^(byte − 127)`, one byte.
    E8m0,
    /// No scale; elements are stored as-is.
    None,
}

impl ScaleKind {
    pub fn bytes(self) -> usize {
        match self {
            ScaleKind::Fp16 => 2,
            ScaleKind::E8m0 => 1,
            ScaleKind::None => 0,
        }
    }
}

/// Element encoding inside a block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ElementCodec {
    /// Symmetric signed integer `−(2^(k−1)−1) ..= 2^(k−1)−1`, two's complement on the wire.
    Int { bits: u8 },
    /// Sign + `exp_bits` exponent + `man_bits` mantissa, subnormals, no infinities.
    /// When `top_code_is_nan` the all-ones magnitude is reserved (e4m3 style).
    MiniFloat { exp_bits: u8, man_bits: u8, bias: i32, top_code_is_nan: bool },
    /// IEEE binary16, saturating at ±65504.
    Half,
    /// Exact `f64` passthrough.
    Identity,
}

impl ElementCodec {
    pub const E4M3: ElementCodec = ElementCodec::MiniFloat { exp_bits: 4, man_bits: 3, bias: 7, top_code_is_nan: true };
    pub const E2M3: ElementCodec = ElementCodec::MiniFloat { exp_bits: 2, man_bits: 3, bias: 1, top_code_is_nan: false };
    pub const E2M1: ElementCodec = ElementCodec::MiniFloat { exp_bits: 2, man_bits: 1, bias: 1, top_code_is_nan: false };

    pub fn bits(self) -> u32 {
        match self {
            ElementCodec::Int { bits } => u32::from(bits),
            ElementCodec::MiniFloat { exp_bits, man_bits, .. } => 1 + u32::from(exp_bits) + u32::from(man_bits),
            ElementCodec::Half => 16,
            ElementCodec::Identity => 64,
        }
    }

    fn validate(self) -> Result<()> {
        match self {
            ElementCodec::Int { bits } if !(2..=16).contains(&bits) => {
                Err(Error::Parameter(format!("integer codec width {bits} outside 2..=16")))
            }
            ElementCodec::MiniFloat { exp_bits, man_bits, .. }
                if exp_bits == 0 || exp_bits > 5 || man_bits > 7 =>
            {
                Err(Error::Parameter(format!("unsupported minifloat e{exp_bits}m{man_bits}")))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for ElementCodec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ElementCodec::Int { bits } => write!(f, "int{bits}"),
            ElementCodec::MiniFloat { exp_bits, man_bits, .. } => write!(f, "e{exp_bits}m{man_bits}"),
            ElementCodec::Half => write!(f, "fp16"),
            ElementCodec::Identity => write!(f, "f64"),
        }
    }
}

/// A blockwise quantization format.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FormatSpec {
    pub name: String,
    pub block_size: usize,
    pub scale_kind: ScaleKind,
    pub codec: ElementCodec,
}

/// The blockwise formats available by name.
pub const REGISTERED_FORMATS: [&str; 6] = ["SINT4", "MXINT4", "MXINT8", "MXFP4e2", "MXFP6e2", "MXFP8e4"];

/// Unscaled passthrough formats, selectable by name for baselines and tests.
pub const PASSTHROUGH_FORMATS: [&str; 2] = ["fp16-passthrough", "identity"];

impl FormatSpec {
    /// Builds an arbitrary format, e.g. a block-4 variant for hand-checked tests.
    pub fn custom(name: &str, block_size: usize, scale_kind: ScaleKind, codec: ElementCodec) -> Result<Self> {
        if block_size == 0 {
            return Err(Error::Parameter("block size must be at least 1".into()));
        }
        codec.validate()?;
        let scaled_codec = matches!(codec, ElementCodec::Int { .. } | ElementCodec::MiniFloat { .. });
        if scaled_codec == (scale_kind == ScaleKind::None) {
            return Err(Error::Parameter(format!(
                "codec {codec} cannot be combined with scale kind {scale_kind:?}"
            )));
        }
        Ok(Self { name: name.to_string(), block_size, scale_kind, codec })
    }

    pub fn bits_per_value(&self) -> u32 {
        self.codec.bits()
    }

    pub fn is_passthrough(&self) -> bool {
        self.scale_kind == ScaleKind::None
    }

    /// Exact passthrough: `fake_quant` is the identity.
    pub fn identity() -> Self {
        Self::custom("identity", 1, ScaleKind::None, ElementCodec::Identity).expect("valid")
    }

    /// Per-element binary16 rounding, no block scale.
    pub fn fp16_passthrough() -> Self {
        Self::custom("fp16-passthrough", 1, ScaleKind::None, ElementCodec::Half).expect("valid")
    }

    /// Scale bits per block (0 for passthrough formats).
    pub fn scale_bits(&self) -> u32 {
        8 * self.scale_kind.bytes() as u32
    }
}

impl fmt::Display for FormatSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({}", self.name, self.codec)?;
        if self.scale_kind != ScaleKind::None {
            write!(f, ", block {}, {:?} scale", self.block_size, self.scale_kind)?;
        }
        write!(f, ")")
    }
}

/// Looks up a format by name (registered blockwise formats or passthroughs).
pub fn make_format(name: &str) -> Result<FormatSpec> {
    let spec = match name {
        "SINT4" => FormatSpec::custom(name, 64, ScaleKind::Fp16, ElementCodec::Int { bits: 4 }),
        "MXINT4" => FormatSpec::custom(name, 32, ScaleKind::E8m0, ElementCodec::Int { bits: 4 }),
        "MXINT8" => FormatSpec::custom(name, 32, ScaleKind::E8m0, ElementCodec::Int { bits: 8 }),
        "MXFP4e2" => FormatSpec::custom(name, 32, ScaleKind::E8m0, ElementCodec::E2M1),
        "MXFP6e2" => FormatSpec::custom(name, 32, ScaleKind::E8m0, ElementCodec::E2M3),
        "MXFP8e4" => FormatSpec::custom(name, 32, ScaleKind::E8m0, ElementCodec::E4M3),
        "fp16-passthrough" => Ok(FormatSpec::fp16_passthrough()),
        "identity" => Ok(FormatSpec::identity()),
        other => return Err(Error::UnknownFormat(other.to_string())),
    };
    Ok(spec.expect("registry entries are valid"))
}
