//! Synthetic data, file formats and atomic output.

mod idx;
mod pnm;
mod synth;
mod table;
mod tensor;

use std::io::Write;
use std::path::Path;

pub use idx::{idx_parse, idx_read, IdxTensor, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};
pub use pnm::{pnm_parse, pnm_read, pnm_to_bytes, pnm_write, Image};
pub use synth::{make_classification, Dataset, Split, SynthConfig};
pub use table::{csv_export, csv_import, csv_parse, csv_to_string};
pub use tensor::{tensor_load, tensor_save, Tensor, TENSOR_MAGIC, TENSOR_VERSION};

use crate::error::Result;

/// Writes `bytes` to a temporary sibling of `path` and renames it into place,
/// so readers never observe a partial file.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".to_string());
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let result = (|| {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    Ok(result?)
}
