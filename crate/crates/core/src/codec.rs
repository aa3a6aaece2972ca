//! Canonical byte encoding shared by hashing, signing and the binary file
//! formats.
//!
//! Hash/sign inputs use big-endian fixed-width integers and `u32` length
//! prefixes. The dataset cache and model files are little-endian; they get
//! their own writer/reader pair below.

use thiserror::Error;

/// Append-only big-endian encoder for hash and signature payloads.
#[derive(Debug, Default, Clone)]
pub struct Canonical {
    buf: Vec<u8>,
}

impl Canonical {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn tag(&mut self, tag: &[u8]) -> &mut Self {
        self.buf.extend_from_slice(tag);
        self
    }

    pub fn u8(&mut self, v: u8) -> &mut Self {
        self.buf.push(v);
        self
    }

    pub fn u32(&mut self, v: u32) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn i64(&mut self, v: i64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn fixed(&mut self, bytes: &[u8]) -> &mut Self {
        self.buf.extend_from_slice(bytes);
        self
    }

    pub fn bytes(&mut self, bytes: &[u8]) -> &mut Self {
        self.u32(bytes.len() as u32);
        self.buf.extend_from_slice(bytes);
        self
    }

    pub fn str(&mut self, s: &str) -> &mut Self {
        self.bytes(s.as_bytes())
    }

    pub fn finish(&mut self) -> Vec<u8> {
        std::mem::take(&mut self.buf)
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.buf
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("truncated or malformed input at byte {0}")]
pub struct Truncated(pub usize);

/// Little-endian writer for on-disk binary formats.
#[derive(Debug, Default)]
pub struct LeWriter {
    pub buf: Vec<u8>,
}

impl LeWriter {
    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    pub fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }
    pub fn f64s(&mut self, vs: &[f64]) {
        self.u64(vs.len() as u64);
        for &v in vs {
            self.f64(v);
        }
    }
    pub fn raw(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }
}

/// Bounds-checked little-endian reader.
#[derive(Debug)]
pub struct LeReader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> LeReader<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        Self { data, pos: 0 }
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn is_empty(&self) -> bool {
        self.pos == self.data.len()
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], Truncated> {
        let end = self.pos.checked_add(n).ok_or(Truncated(self.pos))?;
        if end > self.data.len() {
            return Err(Truncated(self.pos));
        }
        let out = &self.data[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub fn u8(&mut self) -> Result<u8, Truncated> {
        Ok(self.take(1)?[0])
    }
    pub fn u32(&mut self) -> Result<u32, Truncated> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    pub fn u64(&mut self) -> Result<u64, Truncated> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    pub fn f64(&mut self) -> Result<f64, Truncated> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    pub fn str(&mut self) -> Result<String, Truncated> {
        let at = self.pos;
        let n = self.u32()? as usize;
        let bytes = self.take(n)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| Truncated(at))
    }
    /// Length-prefixed f64 vector; the length is checked against the
    /// remaining input before allocating.
    pub fn f64s(&mut self) -> Result<Vec<f64>, Truncated> {
        let at = self.pos;
        let n = self.u64()? as usize;
        if n.checked_mul(8).is_none_or(|b| b > self.data.len() - self.pos) {
            return Err(Truncated(at));
        }
        (0..n).map(|_| self.f64()).collect()
    }
    /// A count that must fit in the remaining bytes at `min_size` each.
    pub fn count(&mut self, min_size: usize) -> Result<usize, Truncated> {
        let at = self.pos;
        let n = self.u64()? as usize;
        if n.saturating_mul(min_size.max(1)) > self.data.len() - self.pos {
            return Err(Truncated(at));
        }
        Ok(n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_layout_is_big_endian_length_prefixed() {
        let bytes = Canonical::new().u32(1).str("ab").i64(-1).finish();
        assert_eq!(
            bytes,
            vec![0, 0, 0, 1, 0, 0, 0, 2, b'a', b'b', 255, 255, 255, 255, 255, 255, 255, 255]
        );
    }

    #[test]
    fn le_reader_rejects_truncation() {
        let mut w = LeWriter::default();
        w.str("hello");
        w.f64s(&[1.0, 2.0]);
        let full = w.buf.clone();
        let mut r = LeReader::new(&full);
        assert_eq!(r.str().unwrap(), "hello");
        assert_eq!(r.f64s().unwrap(), vec![1.0, 2.0]);
        assert!(r.is_empty());
        for cut in 0..full.len() {
            let mut r = LeReader::new(&full[..cut]);
            let ok = r.str().and_then(|_| r.f64s());
            assert!(ok.is_err(), "cut {cut} accepted");
        }
    }
}
