//! `IFAB` feature files.
//!
//! All integers and floats are little-endian.
//!
//! | offset | size | field          |
//! |--------|------|----------------|
//! | 0      | 4    | magic `IFAB`   |
//! | 4      | 4    | format_version (u32, currently 1) |
//! | 8      | 4    | dim (u32)      |
//! | 12     | 8    | record_count (u64) |
//! | 20     | 4    | flags (u32; bit 0 = memory-bank export) |
//! | 24     | ...  | records        |
//!
//! Each record is `class_id: u32, family_id: u32, feature: [f32; dim]`, so a
//! file holds exactly `24 + record_count * (8 + 4 * dim)` bytes.

use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const FEATURE_MAGIC: [u8; 4] = *b"IFAB";
pub const FEATURE_FORMAT_VERSION: u32 = 1;
pub const FEATURE_HEADER_LEN: usize = 24;
/// Header flag marking a memory-bank export.
pub const FLAG_MEMORY_BANK: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureRecord {
    pub class_id: u32,
    pub family_id: u32,
    pub feature: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureFile {
    pub dim: u32,
    pub flags: u32,
    pub records: Vec<FeatureRecord>,
}

impl FeatureFile {
    pub fn new(dim: u32) -> Self {
        Self {
            dim,
            flags: 0,
            records: Vec::new(),
        }
    }

    pub fn record_len(dim: u32) -> usize {
        8 + 4 * dim as usize
    }

    pub fn push(&mut self, class_id: u32, family_id: u32, feature: Vec<f32>) -> Result<()> {
        if feature.len() != self.dim as usize {
            return Err(Error::Input(format!(
                "record has dim {}, file dim is {}",
                feature.len(),
                self.dim
            )));
        }
        self.records.push(FeatureRecord {
            class_id,
            family_id,
            feature,
        });
        Ok(())
    }

    /// Features widened to f64, one record per row.
    pub fn to_matrix(&self) -> Matrix {
        let data = self
            .records
            .iter()
            .flat_map(|r| r.feature.iter().map(|&x| f64::from(x)))
            .collect();
        Matrix::from_vec(self.records.len(), self.dim as usize, data).expect("consistent dims")
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(FEATURE_HEADER_LEN + self.records.len() * Self::record_len(self.dim));
        out.extend_from_slice(&FEATURE_MAGIC);
        out.extend_from_slice(&FEATURE_FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.dim.to_le_bytes());
        out.extend_from_slice(&(self.records.len() as u64).to_le_bytes());
        out.extend_from_slice(&self.flags.to_le_bytes());
        for (i, r) in self.records.iter().enumerate() {
            if r.feature.len() != self.dim as usize {
                return Err(Error::Input(format!("record {i} has dim {}", r.feature.len())));
            }
            out.extend_from_slice(&r.class_id.to_le_bytes());
            out.extend_from_slice(&r.family_id.to_le_bytes());
            for x in &r.feature {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        let magic = r.take(4)?;
        if magic != FEATURE_MAGIC {
            return Err(Error::format(0, format!("bad magic {magic:02x?}, expected IFAB")));
        }
        let version = r.u32()?;
        if version != FEATURE_FORMAT_VERSION {
            return Err(Error::Version {
                found: version,
                supported: FEATURE_FORMAT_VERSION,
            });
        }
        let dim = r.u32()?;
        let count_offset = r.offset();
        let count = r.u64()?;
        let flags = r.u32()?;
        let expected = (count as u128) * Self::record_len(dim) as u128 + FEATURE_HEADER_LEN as u128;
        if expected != bytes.len() as u128 {
            return Err(Error::format(
                count_offset as u64,
                format!(
                    "{count} records of dim {dim} need {expected} bytes, file has {}",
                    bytes.len()
                ),
            ));
        }
        let mut records = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let class_id = r.u32()?;
            let family_id = r.u32()?;
            let mut feature = Vec::with_capacity(dim as usize);
            for _ in 0..dim {
                feature.push(r.f32()?);
            }
            records.push(FeatureRecord {
                class_id,
                family_id,
                feature,
            });
        }
        Ok(Self { dim, flags, records })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Bounds-checked little-endian cursor; every failure reports its byte offset.
pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn offset(&self) -> usize {
        self.pos
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::format(
                self.pos as u64,
                format!("truncated: need {n} bytes, {} left", self.remaining()),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
