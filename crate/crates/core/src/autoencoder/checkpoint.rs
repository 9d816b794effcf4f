use std::path::Path;

use nalgebra::{DMatrix, DVector};

use super::network::{Activation, Dense, LayerSpec, NetworkSpec, ParamStore};
use crate::data::write_atomic;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SXAE";
pub const CHECKPOINT_VERSION: u32 = 1;

/// A network description with its weights. Optimizer state is not stored;
/// loading yields fresh Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub spec: NetworkSpec,
    pub params: ParamStore,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.params.check_shapes(&self.spec)?;
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        for stack in [&self.spec.encoder, &self.spec.decoder] {
            out.extend_from_slice(&(stack.len() as u32).to_le_bytes());
            for l in stack.iter() {
                out.extend_from_slice(&(l.in_dim as u32).to_le_bytes());
                out.extend_from_slice(&(l.out_dim as u32).to_le_bytes());
                out.push(l.activation.code());
            }
        }
        for d in &self.params.layers {
            for r in 0..d.weight.nrows() {
                for c in 0..d.weight.ncols() {
                    out.extend_from_slice(&d.weight[(r, c)].to_le_bytes());
                }
            }
            for b in d.bias.iter() {
                out.extend_from_slice(&b.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4, "magic")?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::format(0, "bad magic, expected SXAE"));
        }
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::format(4, format!("unsupported checkpoint version {version}")));
        }
        let mut stacks = Vec::with_capacity(2);
        for name in ["encoder", "decoder"] {
            let at = r.pos;
            let count = r.u32("layer count")? as usize;
            // each layer header is 9 bytes
            if count.saturating_mul(9) > r.remaining() {
                return Err(Error::format(at as u64, format!("{name} layer count {count} exceeds file size")));
            }
            let mut layers = Vec::with_capacity(count);
            for _ in 0..count {
                let in_dim = r.u32("layer input size")? as usize;
                let out_dim = r.u32("layer output size")? as usize;
                let code_at = r.pos;
                let code = r.take(1, "activation code")?[0];
                let activation = Activation::from_code(code)
                    .ok_or_else(|| Error::format(code_at as u64, format!("unknown activation code {code}")))?;
                layers.push(LayerSpec::new(in_dim, out_dim, activation));
            }
            stacks.push(layers);
        }
        let header_end = r.pos as u64;
        let decoder = stacks.pop().expect("two stacks");
        let encoder = stacks.pop().expect("two stacks");
        let spec = NetworkSpec::new(encoder, decoder)
            .map_err(|e| Error::format(header_end, format!("inconsistent network description: {e}")))?;

        let mut layers = Vec::with_capacity(spec.layer_count());
        for l in spec.layers() {
            let needed = (l.out_dim * l.in_dim + l.out_dim) * 8;
            if needed > r.remaining() {
                return Err(Error::format(r.pos as u64, "truncated parameter block"));
            }
            let mut weight = DMatrix::zeros(l.out_dim, l.in_dim);
            for row in 0..l.out_dim {
                for col in 0..l.in_dim {
                    weight[(row, col)] = r.f64()?;
                }
            }
            let mut bias = DVector::zeros(l.out_dim);
            for b in bias.iter_mut() {
                *b = r.f64()?;
            }
            layers.push(Dense { weight, bias });
        }
        if r.remaining() != 0 {
            return Err(Error::format(r.pos as u64, "trailing bytes after parameters"));
        }
        Ok(Checkpoint {
            spec,
            params: ParamStore::from_layers(layers),
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::format(self.pos as u64, format!("truncated while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        let b = self.take(8, "parameter")?;
        Ok(f64::from_le_bytes(b.try_into().expect("8 bytes")))
    }
}

pub fn save_checkpoint(path: impl AsRef<Path>, spec: &NetworkSpec, params: &ParamStore) -> Result<()> {
    let bytes = Checkpoint {
        spec: spec.clone(),
        params: params.clone(),
    }
    .to_bytes()?;
    write_atomic(path, &bytes)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&std::fs::read(path)?)
}
