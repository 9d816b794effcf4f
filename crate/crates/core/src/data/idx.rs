use std::path::Path;

use crate::error::{Error, Result};

/// Magic for rank-1 unsigned-byte tensors (labels).
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
/// Magic for rank-3 unsigned-byte tensors (images).
pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;

/// Contents of an IDX file: dimension sizes and the raw bytes, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxTensor {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

impl IdxTensor {
    /// Pixel values scaled to `[0, 1]`.
    pub fn normalized(&self) -> Vec<f64> {
        self.data.iter().map(|b| f64::from(*b) / 255.0).collect()
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.data.iter().map(|b| f64::from(*b)).collect()
    }
}

pub fn idx_parse(bytes: &[u8]) -> Result<IdxTensor> {
    if bytes.len() < 4 {
        return Err(Error::format(bytes.len() as u64, "truncated idx magic"));
    }
    let magic = u32::from_be_bytes(bytes[..4].try_into().expect("4 bytes"));
    let rank = match magic {
        IDX_LABELS_MAGIC => 1,
        IDX_IMAGES_MAGIC => 3,
        other => return Err(Error::format(0, format!("unsupported idx magic {other:#010x}"))),
    };
    let mut dims = Vec::with_capacity(rank);
    for i in 0..rank {
        let at = 4 + 4 * i;
        let b = bytes
            .get(at..at + 4)
            .ok_or_else(|| Error::format(bytes.len() as u64, "truncated idx dimension"))?;
        dims.push(u32::from_be_bytes(b.try_into().expect("4 bytes")) as usize);
    }
    let start = 4 + 4 * rank;
    let count = dims
        .iter()
        .try_fold(1usize, |acc, d| acc.checked_mul(*d))
        .ok_or_else(|| Error::format(4, "idx dimension product overflows"))?;
    let payload = bytes.len() - start;
    if payload < count {
        return Err(Error::format(
            bytes.len() as u64,
            format!("truncated idx payload: {payload} of {count} bytes"),
        ));
    }
    if payload > count {
        return Err(Error::format((start + count) as u64, "trailing bytes after idx payload"));
    }
    Ok(IdxTensor {
        dims,
        data: bytes[start..].to_vec(),
    })
}

pub fn idx_read(path: impl AsRef<Path>) -> Result<IdxTensor> {
    idx_parse(&std::fs::read(path)?)
}
