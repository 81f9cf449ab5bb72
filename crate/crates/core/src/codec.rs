//! Little-endian binary framing shared by the on-disk formats: four-byte
//! magic, payload, trailing CRC32 of everything before it.

use thiserror::Error;

use crate::autodiff::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },
    #[error("unsupported format version {found} (supported: {supported})")]
    Version { found: u16, supported: u16 },
    #[error("truncated stream: needed {needed} bytes at offset {at}")]
    Truncated { needed: usize, at: usize },
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("malformed stream: {0}")]
    Invalid(String),
}

pub struct ByteWriter {
    buf: Vec<u8>,
}

impl ByteWriter {
    pub fn new(magic: &[u8; 4]) -> Self {
        Self { buf: magic.to_vec() }
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u32(&mut self, v: usize) {
        let v = u32::try_from(v).expect("extent fits in u32");
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn bytes(&mut self, b: &[u8]) {
        self.u32(b.len());
        self.buf.extend_from_slice(b);
    }

    pub fn str(&mut self, s: &str) {
        self.bytes(s.as_bytes());
    }

    pub fn indices(&mut self, idx: &[usize]) {
        self.u32(idx.len());
        for &i in idx {
            self.u32(i);
        }
    }

    /// `ndim u8`, extents `u32`, raw `f64` payload.
    pub fn tensor(&mut self, t: &Tensor) {
        self.u8(u8::try_from(t.rank()).expect("rank fits in u8"));
        for &e in t.shape() {
            self.u32(e);
        }
        for &v in t.data() {
            self.f64(v);
        }
    }

    pub fn finish(mut self) -> Vec<u8> {
        let crc = crc32fast::hash(&self.buf);
        self.buf.extend_from_slice(&crc.to_le_bytes());
        self.buf
    }
}

pub struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    /// Verifies magic and checksum, then positions after the magic.
    pub fn open(bytes: &'a [u8], magic: &[u8; 4]) -> Result<Self, FormatError> {
        if bytes.len() < 8 {
            return Err(FormatError::Truncated { needed: 8, at: 0 });
        }
        if &bytes[..4] != magic {
            return Err(FormatError::BadMagic {
                expected: String::from_utf8_lossy(magic).into_owned(),
                found: String::from_utf8_lossy(&bytes[..4]).into_owned(),
            });
        }
        let body = &bytes[..bytes.len() - 4];
        let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().expect("4 bytes"));
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(FormatError::Checksum { stored, computed });
        }
        Ok(Self { buf: body, pos: 4 })
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        if self.buf.len() - self.pos < n {
            return Err(FormatError::Truncated { needed: n, at: self.pos });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8, FormatError> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    pub fn u32(&mut self) -> Result<usize, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    pub fn f64(&mut self) -> Result<f64, FormatError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn bool(&mut self) -> Result<bool, FormatError> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            v => Err(FormatError::Invalid(format!("flag byte {v}"))),
        }
    }

    pub fn bytes(&mut self) -> Result<&'a [u8], FormatError> {
        let n = self.u32()?;
        self.take(n)
    }

    pub fn str(&mut self) -> Result<String, FormatError> {
        String::from_utf8(self.bytes()?.to_vec()).map_err(|e| FormatError::Invalid(e.to_string()))
    }

    pub fn indices(&mut self) -> Result<Vec<usize>, FormatError> {
        let n = self.u32()?;
        if n > self.remaining() / 4 {
            return Err(FormatError::Truncated { needed: n * 4, at: self.pos });
        }
        (0..n).map(|_| self.u32()).collect()
    }

    pub fn tensor(&mut self) -> Result<Tensor, FormatError> {
        let ndim = self.u8()? as usize;
        let shape: Vec<usize> = (0..ndim).map(|_| self.u32()).collect::<Result<_, _>>()?;
        let numel = shape.iter().try_fold(1usize, |a, &e| a.checked_mul(e));
        let numel = numel.filter(|&n| n <= self.remaining() / 8).ok_or(FormatError::Truncated {
            needed: shape.iter().product::<usize>().saturating_mul(8),
            at: self.pos,
        })?;
        let data = (0..numel).map(|_| self.f64()).collect::<Result<Vec<_>, _>>()?;
        Tensor::new(shape, data).map_err(|e| FormatError::Invalid(e.to_string()))
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn expect_end(&self) -> Result<(), FormatError> {
        match self.remaining() {
            0 => Ok(()),
            n => Err(FormatError::Invalid(format!("{n} trailing bytes before the checksum"))),
        }
    }
}
