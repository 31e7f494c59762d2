use std::path::Path;

use super::reader::{checked_size, f64s, push_f64s, Reader};
use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::smoothing::ChannelStats;

pub const STATS_MAGIC: &[u8; 4] = b"LQS1";
pub const STATS_VERSION: u16 = 1;

/// Channel maxima, optionally with the calibration activations they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationStats {
    pub stats: ChannelStats,
    /// `samples × channels`; enables grid search over migration strengths.
    pub activations: Option<Matrix>,
}

impl CalibrationStats {
    pub fn from_activations(x: Matrix) -> Self {
        Self { stats: crate::smoothing::compute_channel_stats(&x), activations: Some(x) }
    }
}

pub fn encode_stats(s: &CalibrationStats) -> Result<Vec<u8>> {
    let channels = s.stats.channels();
    if let Some(x) = &s.activations {
        if x.cols() != channels {
            return Err(Error::Shape(format!("{} activation columns for {channels} channels", x.cols())));
        }
    }
    let mut out = Vec::new();
    out.extend_from_slice(STATS_MAGIC);
    out.extend_from_slice(&STATS_VERSION.to_le_bytes());
    out.extend_from_slice(&(channels as u64).to_le_bytes());
    out.extend_from_slice(&s.stats.sample_count.to_le_bytes());
    push_f64s(&mut out, &s.stats.act_max);
    let rows = s.activations.as_ref().map_or(0, Matrix::rows);
    out.extend_from_slice(&(rows as u64).to_le_bytes());
    if let Some(x) = &s.activations {
        push_f64s(&mut out, x.as_slice());
    }
    Ok(out)
}

pub fn decode_stats(bytes: &[u8]) -> Result<CalibrationStats> {
    let mut r = Reader::new(bytes);
    r.expect_magic(STATS_MAGIC, "LQS1 statistics")?;
    let version = r.u16("version")?;
    if version == 0 || version > STATS_VERSION {
        return Err(Error::Version { found: version, supported: STATS_VERSION });
    }
    let channels = r.u64("channel count")?;
    let sample_count = r.u64("sample count")?;
    let len = checked_size(&[channels, 8], r.offset(), "channel maxima")?;
    let start = r.offset();
    let act_max = f64s(r.take(len, "channel maxima")?);
    let stats = ChannelStats::new(act_max, sample_count).map_err(|e| Error::Corrupt { offset: start, reason: e.to_string() })?;
    let rows = r.u64("activation rows")?;
    let len = checked_size(&[rows, channels, 8], r.offset(), "activations")?;
    let start = r.offset();
    let raw = r.take(len, "activations")?;
    r.finish()?;
    let activations = if rows == 0 {
        None
    } else {
        let data = f64s(raw);
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Corrupt { offset: start + 8 * i as u64, reason: "non-finite activation".into() });
        }
        Some(Matrix::new(rows as usize, channels as usize, data)?)
    };
    Ok(CalibrationStats { stats, activations })
}

pub fn save_stats(path: impl AsRef<Path>, s: &CalibrationStats) -> Result<()> {
    Ok(std::fs::write(path, encode_stats(s)?)?)
}

pub fn load_stats(path: impl AsRef<Path>) -> Result<CalibrationStats> {
    decode_stats(&std::fs::read(path)?)
}
