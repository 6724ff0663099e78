//! Binary record format shared by state snapshots and model checkpoints.
//!
//! Layout: an 8-byte magic (7-byte tag + 1 version byte), then a sequence of
//! records. Each record is a little-endian `u64` payload length followed by
//! the payload. Integers are `u64` LE, reals are IEEE-754 `f64` LE, so every
//! float round-trips bit-exactly.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
#[error("malformed {what} at byte offset {offset}: {reason}")]
pub struct DecodeError {
    pub what: &'static str,
    pub offset: usize,
    pub reason: String,
}

#[derive(Debug, Default)]
pub struct RecordWriter {
    buf: Vec<u8>,
}

impl RecordWriter {
    pub fn new(magic: &[u8; 8]) -> Self {
        Self { buf: magic.to_vec() }
    }

    /// Appends one length-prefixed record built by `fill`.
    pub fn record(&mut self, fill: impl FnOnce(&mut Payload)) {
        let mut payload = Payload::default();
        fill(&mut payload);
        self.buf.extend_from_slice(&(payload.0.len() as u64).to_le_bytes());
        self.buf.extend_from_slice(&payload.0);
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

#[derive(Debug, Default)]
pub struct Payload(Vec<u8>);

impl Payload {
    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.0.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn f64(&mut self, v: f64) -> &mut Self {
        self.0.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn f64s(&mut self, vs: &[f64]) -> &mut Self {
        for &v in vs {
            self.f64(v);
        }
        self
    }
}

/// Cursor over a byte buffer that reports absolute offsets on failure.
pub struct RecordReader<'a> {
    what: &'static str,
    buf: &'a [u8],
    base: usize,
    pos: usize,
}

impl<'a> RecordReader<'a> {
    /// Checks the magic and positions the cursor on the first record.
    pub fn open(what: &'static str, buf: &'a [u8], magic: &[u8; 8]) -> Result<Self, DecodeError> {
        let mut reader = Self { what, buf, base: 0, pos: 0 };
        let head = reader.take(8)?;
        if head[..7] != magic[..7] {
            return Err(reader.error_at(0, "bad magic header"));
        }
        if head[7] != magic[7] {
            return Err(reader.error_at(7, format!("unsupported format version {}", head[7])));
        }
        Ok(reader)
    }

    pub fn is_empty(&self) -> bool {
        self.pos >= self.buf.len()
    }

    /// Absolute offset of the cursor.
    pub fn offset(&self) -> usize {
        self.base + self.pos
    }

    pub fn error(&self, reason: impl Into<String>) -> DecodeError {
        self.error_at(self.offset(), reason)
    }

    fn error_at(&self, offset: usize, reason: impl Into<String>) -> DecodeError {
        DecodeError { what: self.what, offset, reason: reason.into() }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let out = &self.buf[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            None => Err(self.error(format!(
                "truncated: wanted {n} bytes, {} remain",
                self.buf.len() - self.pos
            ))),
        }
    }

    pub fn u64(&mut self) -> Result<u64, DecodeError> {
        let bytes = self.take(8)?;
        Ok(u64::from_le_bytes(bytes.try_into().expect("8 bytes")))
    }

    pub fn f64(&mut self) -> Result<f64, DecodeError> {
        let bytes = self.take(8)?;
        Ok(f64::from_le_bytes(bytes.try_into().expect("8 bytes")))
    }

    /// A `u64` that must fit in memory as a count.
    pub fn count(&mut self, limit: usize) -> Result<usize, DecodeError> {
        let at = self.offset();
        let v = self.u64()?;
        usize::try_from(v)
            .ok()
            .filter(|&v| v <= limit)
            .ok_or_else(|| self.error_at(at, format!("count {v} exceeds limit {limit}")))
    }

    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>, DecodeError> {
        (0..n).map(|_| self.f64()).collect()
    }

    /// Reads the next length-prefixed record as a sub-reader.
    pub fn record(&mut self) -> Result<RecordReader<'a>, DecodeError> {
        let at = self.offset();
        let len = self.u64()?;
        let len = usize::try_from(len)
            .ok()
            .filter(|&l| l <= self.buf.len() - self.pos)
            .ok_or_else(|| self.error_at(at, format!("record length {len} overruns buffer")))?;
        let base = self.offset();
        let body = self.take(len)?;
        Ok(RecordReader { what: self.what, buf: body, base, pos: 0 })
    }

    /// Fails if bytes remain unread.
    pub fn finish(self) -> Result<(), DecodeError> {
        if self.is_empty() {
            Ok(())
        } else {
            Err(self.error(format!("{} trailing bytes", self.buf.len() - self.pos)))
        }
    }
}
