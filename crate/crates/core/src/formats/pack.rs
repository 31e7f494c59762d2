//! LSB-first bit packing of fixed-width codes.

/// Appends `codes` (each `bits` wide) to `out`, LSB-first, padding the final byte with zeros.
pub fn pack_codes(codes: &[u64], bits: u32, out: &mut Vec<u8>) {
    debug_assert!((1..=64).contains(&bits));
    let start = out.len();
    out.resize(start + packed_len(codes.len(), bits), 0);
    let buf = &mut out[start..];
    let mut bit_pos = 0usize;
    for &code in codes {
        let mut remaining = bits;
        let mut value = code;
        while remaining > 0 {
            let byte = bit_pos / 8;
            let offset = (bit_pos % 8) as u32;
            let take = remaining.min(8 - offset);
            let chunk = (value & ((1u64 << take) - 1)) as u8;
            buf[byte] |= chunk << offset;
            value = if take == 64 { 0 } else { value >> take };
            remaining -= take;
            bit_pos += take as usize;
        }
    }
}

/// Reads `count` codes of width `bits` from `bytes`.
pub fn unpack_codes(bytes: &[u8], bits: u32, count: usize) -> Vec<u64> {
    debug_assert!(bytes.len() >= packed_len(count, bits));
    let mut codes = Vec::with_capacity(count);
    let mut bit_pos = 0usize;
    for _ in 0..count {
        let mut value = 0u64;
        let mut filled = 0u32;
        while filled < bits {
            let byte = bit_pos / 8;
            let offset = (bit_pos % 8) as u32;
            let take = (bits - filled).min(8 - offset);
            let chunk = u64::from(bytes[byte] >> offset) & ((1u64 << take) - 1);
            value |= chunk << filled;
            filled += take;
            bit_pos += take as usize;
        }
        codes.push(value);
    }
    codes
}

/// Bytes needed for `count` codes of width `bits`.
pub fn packed_len(count: usize, bits: u32) -> usize {
    (count * bits as usize).div_ceil(8)
}
