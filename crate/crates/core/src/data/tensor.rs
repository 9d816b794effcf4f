use std::path::Path;

use super::write_atomic;
use crate::error::{Error, Result};

pub const TENSOR_MAGIC: &[u8; 4] = b"SXTN";
pub const TENSOR_VERSION: u32 = 1;

/// Dense row-major f64 tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub values: Vec<f64>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let expected = dims.iter().try_fold(1usize, |acc, d| acc.checked_mul(*d));
        if expected != Some(values.len()) {
            return Err(Error::invalid(format!(
                "tensor dims {dims:?} do not match {} values",
                values.len()
            )));
        }
        Ok(Tensor { dims, values })
    }

    /// Rank-2 tensor from a matrix, rows first.
    pub fn from_matrix(m: &nalgebra::DMatrix<f64>) -> Self {
        let mut values = Vec::with_capacity(m.len());
        for r in 0..m.nrows() {
            values.extend(m.row(r).iter());
        }
        Tensor {
            dims: vec![m.nrows(), m.ncols()],
            values,
        }
    }

    /// Views a rank-2 tensor (or a rank-1 tensor as a column) as a matrix.
    pub fn to_matrix(&self) -> Result<nalgebra::DMatrix<f64>> {
        let (r, c) = match self.dims[..] {
            [r, c] => (r, c),
            [r] => (r, 1),
            _ => return Err(Error::invalid(format!("expected a rank-2 tensor, got dims {:?}", self.dims))),
        };
        Ok(nalgebra::DMatrix::from_row_slice(r, c, &self.values))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 4 * self.dims.len() + 8 * self.values.len());
        out.extend_from_slice(TENSOR_MAGIC);
        out.extend_from_slice(&TENSOR_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for d in &self.dims {
            out.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let u32_at = |pos: usize, what: &str| -> Result<u32> {
            bytes
                .get(pos..pos + 4)
                .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
                .ok_or_else(|| Error::format(pos as u64, format!("truncated while reading {what}")))
        };
        if bytes.len() < 4 || &bytes[..4] != TENSOR_MAGIC {
            return Err(Error::format(0, "bad magic, expected SXTN"));
        }
        let version = u32_at(4, "version")?;
        if version != TENSOR_VERSION {
            return Err(Error::format(4, format!("unsupported tensor version {version}")));
        }
        let rank = u32_at(8, "rank")? as usize;
        if 12 + rank.saturating_mul(4) > bytes.len() {
            return Err(Error::format(8, format!("rank {rank} exceeds file size")));
        }
        let mut dims = Vec::with_capacity(rank);
        for i in 0..rank {
            dims.push(u32_at(12 + 4 * i, "dimension")? as usize);
        }
        let start = 12 + 4 * rank;
        let count = dims
            .iter()
            .try_fold(1usize, |acc, d| acc.checked_mul(*d))
            .ok_or_else(|| Error::format(12, "dimension product overflows"))?;
        let payload = bytes.len() - start;
        if count.checked_mul(8) != Some(payload) {
            let at = if count.saturating_mul(8) > payload { bytes.len() } else { start + count * 8 };
            return Err(Error::format(
                at as u64,
                format!("payload holds {payload} bytes, dims need {} values", count),
            ));
        }
        let values = bytes[start..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok(Tensor { dims, values })
    }
}

pub fn tensor_save(path: impl AsRef<Path>, dims: &[usize], values: &[f64]) -> Result<()> {
    let t = Tensor::new(dims.to_vec(), values.to_vec())?;
    write_atomic(path, &t.to_bytes())
}

pub fn tensor_load(path: impl AsRef<Path>) -> Result<Tensor> {
    Tensor::from_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng_from_seed;
    use rand::Rng;

    #[test]
    fn byte_fixture() {
        let t = Tensor::new(vec![2, 1], vec![1.5, -2.0]).unwrap();
        let mut expected = b"SXTN".to_vec();
        expected.extend([1, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 1, 0, 0, 0]);
        expected.extend([0, 0, 0, 0, 0, 0, 0xF8, 0x3F]);
        expected.extend([0, 0, 0, 0, 0, 0, 0x00, 0xC0]);
        assert_eq!(t.to_bytes(), expected);
        assert_eq!(Tensor::from_bytes(&expected).unwrap(), t);
    }

    #[test]
    fn round_trips() {
        let mut rng = rng_from_seed(1);
        let values: Vec<f64> = (0..60).map(|_| rng.random::<f64>() * 1e6 - 5e5).collect();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.sxtn");
        tensor_save(&p, &[3, 4, 5], &values).unwrap();
        let t = tensor_load(&p).unwrap();
        assert_eq!(t.dims, vec![3, 4, 5]);
        assert!(t.values.iter().zip(&values).all(|(a, b)| a.to_bits() == b.to_bits()));

        for dims in [vec![0], vec![3, 0, 2], vec![]] {
            let n = dims.iter().product::<usize>();
            let t = Tensor::new(dims.clone(), vec![7.0; n]).unwrap();
            assert_eq!(Tensor::from_bytes(&t.to_bytes()).unwrap(), t);
        }
        assert!(Tensor::new(vec![2, 2], vec![1.0; 3]).is_err());
    }

    #[test]
    fn matrix_views() {
        let m = nalgebra::DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let t = Tensor::from_matrix(&m);
        assert_eq!(t.values, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(t.to_matrix().unwrap(), m);
    }

    #[test]
    fn header_corruptions_are_rejected() {
        let good = Tensor::new(vec![2, 3], (0..6).map(f64::from).collect()).unwrap().to_bytes();
        let header = 12 + 4 * 2;
        let mut rng = rng_from_seed(9);
        for _ in 0..100 {
            let mut bad = good.clone();
            let pos = rng.random_range(0..header);
            let old = bad[pos];
            while bad[pos] == old {
                bad[pos] = rng.random();
            }
            assert!(matches!(Tensor::from_bytes(&bad), Err(Error::Format { .. })), "byte {pos}");
        }
        for cut in 0..good.len() {
            assert!(Tensor::from_bytes(&good[..cut]).is_err());
        }
    }
}
