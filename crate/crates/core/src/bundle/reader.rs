use crate::error::{Error, Result};

/// Bounds-checked little-endian cursor; every failure carries its byte offset.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn offset(&self) -> u64 {
        self.pos as u64
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn corrupt(&self, reason: impl Into<String>) -> Error {
        Error::Corrupt { offset: self.offset(), reason: reason.into() }
    }

    pub fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(self.corrupt(format!("truncated {what}: need {n} bytes, {} left", self.remaining())));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        Ok(self.take(N, what)?.try_into().expect("length checked"))
    }

    pub fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.array::<1>(what)?[0])
    }

    pub fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array(what)?))
    }

    pub fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array(what)?))
    }

    pub fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array(what)?))
    }

    /// A declared length that must fit in the rest of the buffer.
    pub fn length(&mut self, what: &str) -> Result<usize> {
        let at = self.offset();
        let len = self.u64(what)?;
        match usize::try_from(len) {
            Ok(n) if n <= self.remaining() => Ok(n),
            _ => Err(Error::Corrupt {
                offset: at,
                reason: format!("{what} declares {len} bytes, only {} remain", self.remaining()),
            }),
        }
    }

    pub fn expect_magic(&mut self, magic: &[u8; 4], kind: &str) -> Result<()> {
        if self.buf.len() < 4 {
            return Err(self.corrupt(format!("file too short for the {kind} magic")));
        }
        let found = self.array::<4>("magic")?;
        if &found != magic {
            return Err(Error::Format(format!(
                "not a {kind} file: magic {:?}, expected {:?}",
                String::from_utf8_lossy(&found),
                String::from_utf8_lossy(magic)
            )));
        }
        Ok(())
    }

    pub fn finish(&self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(self.corrupt(format!("{} trailing bytes", self.remaining())));
        }
        Ok(())
    }
}

/// `count` little-endian f64 values; the caller has checked the length.
pub(crate) fn f64s(bytes: &[u8]) -> Vec<f64> {
    bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect()
}

pub(crate) fn push_f64s(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// `a·b·c` or a corrupt-file error at `offset`.
pub(crate) fn checked_size(dims: &[u64], offset: u64, what: &str) -> Result<usize> {
    dims.iter()
        .try_fold(1u64, |acc, &d| acc.checked_mul(d))
        .and_then(|v| usize::try_from(v).ok())
        .ok_or_else(|| Error::Corrupt { offset, reason: format!("{what} size overflows") })
}
