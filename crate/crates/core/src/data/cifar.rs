use std::fs;
use std::path::{Path, PathBuf};

use crate::data::{Dataset, Split};
use crate::engine::{Real, Tensor};
use crate::error::{Error, Result};

pub const CIFAR_CLASSES: usize = 10;
/// Channel-planar RGB, 32×32.
pub const CIFAR_PIXELS: usize = 3 * 32 * 32;
pub const CIFAR_RECORD_BYTES: usize = 1 + CIFAR_PIXELS;
/// Five training batches, then the test batch used for validation.
pub const CIFAR_FILES: [&str; 6] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
    "test_batch.bin",
];
/// Environment variable naming the default dataset root.
pub const DATA_ENV: &str = "GRIDNET_DATA";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CifarRecord {
    pub label: u8,
    pub pixels: Box<[u8; CIFAR_PIXELS]>,
}

/// `explicit`, else `$GRIDNET_DATA/cifar-10-batches-bin`, else `./data/cifar-10-batches-bin`.
pub fn cifar_root(explicit: Option<&Path>) -> PathBuf {
    if let Some(p) = explicit {
        return p.to_path_buf();
    }
    let base = std::env::var_os(DATA_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("data"));
    base.join("cifar-10-batches-bin")
}

/// Parse one batch file. The whole file must be a sequence of valid records.
pub fn read_cifar_file(path: &Path) -> Result<Vec<CifarRecord>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let whole = bytes.len() / CIFAR_RECORD_BYTES * CIFAR_RECORD_BYTES;
    if whole != bytes.len() {
        return Err(Error::Format {
            file: path.to_path_buf(),
            offset: whole as u64,
            detail: format!(
                "file is {} bytes, not a multiple of the {CIFAR_RECORD_BYTES}-byte record; trailing record truncated",
                bytes.len()
            ),
        });
    }
    bytes
        .chunks_exact(CIFAR_RECORD_BYTES)
        .enumerate()
        .map(|(i, rec)| {
            if rec[0] as usize >= CIFAR_CLASSES {
                return Err(Error::Format {
                    file: path.to_path_buf(),
                    offset: (i * CIFAR_RECORD_BYTES) as u64,
                    detail: format!("label byte {} is not below {CIFAR_CLASSES}", rec[0]),
                });
            }
            let mut pixels = Box::new([0u8; CIFAR_PIXELS]);
            pixels.copy_from_slice(&rec[1..]);
            Ok(CifarRecord { label: rec[0], pixels })
        })
        .collect()
}

pub fn write_cifar_file(path: &Path, records: &[CifarRecord]) -> Result<()> {
    let mut out = Vec::with_capacity(records.len() * CIFAR_RECORD_BYTES);
    for r in records {
        out.push(r.label);
        out.extend_from_slice(&r.pixels[..]);
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn to_dataset<T: Real>(records: &[CifarRecord], split: Split) -> Result<Dataset<T>> {
    let scale = 1.0 / 255.0;
    let mut data = Vec::with_capacity(records.len() * CIFAR_PIXELS);
    for r in records {
        data.extend(r.pixels.iter().map(|&b| T::from_f64_lossy(b as f64 * scale)));
    }
    let images = Tensor::new(vec![records.len(), 3, 32, 32], data)?;
    Dataset::new(images, records.iter().map(|r| r.label as usize).collect(), CIFAR_CLASSES, split)
}

/// Load `(train, val)` from the six binary batch files in `dir`, pixels scaled
/// to [0, 1]. `limit` caps the records taken from each file.
pub fn load_cifar10<T: Real>(dir: &Path, limit: Option<usize>) -> Result<(Dataset<T>, Dataset<T>)> {
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (i, name) in CIFAR_FILES.iter().enumerate() {
        let mut records = read_cifar_file(&dir.join(name))?;
        if let Some(n) = limit {
            records.truncate(n);
        }
        if i < 5 {
            train.extend(records);
        } else {
            val = records;
        }
    }
    if train.is_empty() || val.is_empty() {
        return Err(Error::Input(format!("no CIFAR-10 records under {}", dir.display())));
    }
    Ok((to_dataset(&train, Split::Train)?, to_dataset(&val, Split::Val)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(label: u8, fill: u8) -> CifarRecord {
        CifarRecord {
            label,
            pixels: Box::new([fill; CIFAR_PIXELS]),
        }
    }

    #[test]
    fn record_size() {
        assert_eq!(CIFAR_RECORD_BYTES, 3073);
        assert_eq!(10_000 * CIFAR_RECORD_BYTES, 30_730_000);
    }

    #[test]
    fn truncated_file_names_offset() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.bin");
        write_cifar_file(&p, &[record(1, 0), record(2, 0)]).unwrap();
        let mut bytes = fs::read(&p).unwrap();
        bytes.truncate(bytes.len() - 10);
        fs::write(&p, bytes).unwrap();
        match read_cifar_file(&p) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 3073),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_label_names_offset() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.bin");
        write_cifar_file(&p, &[record(1, 0), record(10, 0)]).unwrap();
        match read_cifar_file(&p) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 3073),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_file_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_cifar10::<f32>(dir.path(), None), Err(Error::Io { .. })));
    }

    #[test]
    fn explicit_root_wins() {
        assert_eq!(cifar_root(Some(Path::new("/x"))), PathBuf::from("/x"));
    }
}
