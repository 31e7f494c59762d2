//! Binary persistence for tensors (`LQT1`), layer bundles (`LRQB`) and
//! calibration statistics (`LQS1`).
//!
//! All integers and floats are little-endian. Loaders check every declared
//! length against the bytes actually present before allocating, and report
//! truncation or inconsistency as [`Error::Corrupt`](crate::Error::Corrupt)
//! with the offending byte offset. Byte layouts are documented in
//! `docs/FORMATS.md`.

mod layer;
mod reader;
mod stats;
mod tensor;

pub use layer::{
    decode_bundle, decode_manifest, encode_bundle, load_bundle, manifest_of, save_bundle, BundleManifest, ChunkEntry, BUNDLE_MAGIC, BUNDLE_VERSION,
};
pub use stats::{decode_stats, encode_stats, load_stats, save_stats, CalibrationStats, STATS_MAGIC, STATS_VERSION};
pub use tensor::{decode_tensor, encode_tensor, load_tensor, save_tensor, ElementKind, TENSOR_MAGIC};
