use crate::error::{Error, Result};

pub(crate) fn format_err(offset: usize, reason: impl Into<String>) -> Error {
    Error::Format {
        offset: offset as u64,
        reason: reason.into(),
    }
}

/// Bounds-checked little-endian cursor that reports byte offsets.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub(crate) fn pos(&self) -> usize {
        self.pos
    }

    pub(crate) fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let Some(end) = end else {
            return Err(format_err(
                self.buf.len(),
                format!("truncated while reading {what} ({n} bytes needed at {})", self.pos),
            ));
        };
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub(crate) fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    /// Reads `n` f64 values; fails if they are not all present or if bytes
    /// remain afterwards.
    pub(crate) fn f64_payload(&mut self, n: usize) -> Result<Vec<f64>> {
        let start = self.pos;
        let len = n
            .checked_mul(8)
            .ok_or_else(|| format_err(start, "payload size overflows"))?;
        let raw = self.take(len, "payload")?;
        if self.pos != self.buf.len() {
            return Err(format_err(
                self.pos,
                format!("{} trailing bytes after payload", self.buf.len() - self.pos),
            ));
        }
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub(crate) fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let got = self.take(4, "magic")?;
        if got != expected {
            return Err(format_err(
                0,
                format!("bad magic {:?}, expected {:?}", String::from_utf8_lossy(got), std::str::from_utf8(expected).unwrap()),
            ));
        }
        Ok(())
    }
}

pub(crate) fn push_f64s(out: &mut Vec<u8>, values: &[f64]) {
    out.reserve(values.len() * 8);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}
