use super::ImageBatch;
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use std::path::Path;

/// One label byte plus a 32×32 RGB image stored plane by plane.
pub const CIFAR_RECORD_BYTES: usize = 1 + 3 * 32 * 32;

/// Parses CIFAR-10 binary records; `source` names the input in errors.
pub fn parse_cifar10(bytes: &[u8], source: &str) -> Result<ImageBatch> {
    if bytes.is_empty() || !bytes.len().is_multiple_of(CIFAR_RECORD_BYTES) {
        let whole = bytes.len() / CIFAR_RECORD_BYTES * CIFAR_RECORD_BYTES;
        return Err(Error::format(format!(
            "{source}: length {} is not a multiple of {CIFAR_RECORD_BYTES}; truncated record at offset {whole}",
            bytes.len()
        )));
    }
    let n = bytes.len() / CIFAR_RECORD_BYTES;
    let mut labels = Vec::with_capacity(n);
    let mut pixels = Vec::with_capacity(n * (CIFAR_RECORD_BYTES - 1));
    for (i, rec) in bytes.chunks_exact(CIFAR_RECORD_BYTES).enumerate() {
        if rec[0] > 9 {
            return Err(Error::format(format!("{source}: label {} > 9 at offset {}", rec[0], i * CIFAR_RECORD_BYTES)));
        }
        labels.push(rec[0]);
        pixels.extend(rec[1..].iter().map(|&b| super::byte_to_unit(b)));
    }
    ImageBatch::new(Tensor::new(&[n, 3, 32, 32], pixels)?, Some(labels))
}

/// Loads one CIFAR-10 `.bin` file, or every `.bin` file of a directory in name order.
pub fn load_cifar10(path: &Path) -> Result<ImageBatch> {
    let files = if path.is_dir() {
        let mut files: Vec<_> = std::fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "bin"))
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(Error::format(format!("{}: no .bin files", path.display())));
        }
        files
    } else {
        vec![path.to_path_buf()]
    };
    let mut bytes = Vec::new();
    for f in &files {
        let chunk = std::fs::read(f).map_err(|e| Error::io(f, e))?;
        // validate per file so offsets in errors refer to that file
        parse_cifar10(&chunk, &f.display().to_string())?;
        bytes.extend(chunk);
    }
    parse_cifar10(&bytes, &path.display().to_string())
}
