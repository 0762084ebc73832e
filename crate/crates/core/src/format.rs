//! Little-endian reader shared by the binary formats.

use crate::error::{FormatError, Result};

pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(len).filter(|&e| e <= self.bytes.len()).ok_or(
            FormatError::Truncated { needed: self.pos.saturating_add(len), have: self.bytes.len() },
        )?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub fn expect_magic(&mut self, magic: [u8; 4]) -> Result<()> {
        let found: [u8; 4] = self.take(4)?.try_into().unwrap();
        if found != magic {
            return Err(FormatError::BadMagic { expected: magic, found }.into());
        }
        Ok(())
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    /// Require the body to be exactly `body_len` bytes followed by a CRC-32 of it.
    pub fn check_crc_at(&self, body_len: usize) -> Result<()> {
        let total = body_len
            .checked_add(4)
            .ok_or_else(|| FormatError::InvalidField("length overflow".into()))?;
        if self.bytes.len() < total {
            return Err(FormatError::Truncated { needed: total, have: self.bytes.len() }.into());
        }
        if self.bytes.len() > total {
            return Err(FormatError::InvalidField(format!(
                "{} trailing bytes after checksum",
                self.bytes.len() - total
            ))
            .into());
        }
        let stored = u32::from_le_bytes(self.bytes[body_len..total].try_into().unwrap());
        let computed = crc32fast::hash(&self.bytes[..body_len]);
        if stored != computed {
            return Err(FormatError::CrcMismatch { stored, computed }.into());
        }
        Ok(())
    }
}
