//! Little-endian byte cursor shared by the sketch and hypercube codecs.

use crate::error::{FormatError, FormatErrorKind};

pub(crate) struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn offset(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn fail<T>(&self, kind: FormatErrorKind) -> Result<T, FormatError> {
        Err(FormatError::new(self.pos, kind))
    }

    pub fn fail_at<T>(&self, offset: usize, kind: FormatErrorKind) -> Result<T, FormatError> {
        Err(FormatError::new(offset, kind))
    }

    pub fn bytes(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        if self.remaining() < n {
            return self.fail(FormatErrorKind::Truncated);
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn array<const N: usize>(&mut self) -> Result<[u8; N], FormatError> {
        Ok(self.bytes(N)?.try_into().expect("length checked"))
    }

    pub fn u8(&mut self) -> Result<u8, FormatError> {
        Ok(self.array::<1>()?[0])
    }

    pub fn u16(&mut self) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    pub fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    pub fn u64(&mut self) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    pub fn u32_vec(&mut self, n: usize) -> Result<Vec<u32>, FormatError> {
        let raw = self.bytes(n.checked_mul(4).ok_or(FormatError::new(self.pos, FormatErrorKind::Truncated))?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    /// u16 length prefix + UTF-8.
    pub fn short_str(&mut self) -> Result<String, FormatError> {
        let start = self.pos;
        let len = self.u16()? as usize;
        let raw = self.bytes(len)?;
        match std::str::from_utf8(raw) {
            Ok(s) => Ok(s.to_owned()),
            Err(_) => self.fail_at(start, FormatErrorKind::Utf8),
        }
    }
}

pub(crate) fn put_short_str(out: &mut Vec<u8>, s: &str) -> Result<(), FormatError> {
    let len = u16::try_from(s.len()).map_err(|_| {
        FormatError::new(out.len(), FormatErrorKind::Invalid(format!("string longer than 65535 bytes: {s:.32}...")))
    })?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(s.as_bytes());
    Ok(())
}
