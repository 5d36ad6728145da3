//! IDX (MNIST) ingestion.

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::net::LabeledDataset;
use crate::tensor::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: bad IDX magic {found:#010x}, expected {expected:#010x}")]
    BadMagic { path: PathBuf, found: u32, expected: u32 },
    #[error("{path}: truncated at byte offset {offset} (need {needed} more bytes for {what})")]
    Truncated {
        path: PathBuf,
        offset: usize,
        needed: usize,
        what: &'static str,
    },
    #[error("{path}: {extra} unexpected trailing bytes after byte offset {offset}")]
    TrailingBytes { path: PathBuf, offset: usize, extra: usize },
    #[error("image file holds {images} samples but label file holds {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("{path}: label {label} at index {index} is not a digit class")]
    BadLabel { path: PathBuf, index: usize, label: u8 },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

struct Cursor<'a> {
    bytes: &'a [u8],
    offset: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], DataError> {
        let available = self.bytes.len() - self.offset;
        if available < n {
            return Err(DataError::Truncated {
                path: self.path.to_path_buf(),
                offset: self.bytes.len(),
                needed: n - available,
                what,
            });
        }
        let out = &self.bytes[self.offset..self.offset + n];
        self.offset += n;
        Ok(out)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, DataError> {
        let b = self.take(4, what)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn magic(&mut self, expected: u32) -> Result<(), DataError> {
        let found = self.u32("magic")?;
        if found != expected {
            return Err(DataError::BadMagic {
                path: self.path.to_path_buf(),
                found,
                expected,
            });
        }
        Ok(())
    }

    fn finish(&self) -> Result<(), DataError> {
        if self.offset != self.bytes.len() {
            return Err(DataError::TrailingBytes {
                path: self.path.to_path_buf(),
                offset: self.offset,
                extra: self.bytes.len() - self.offset,
            });
        }
        Ok(())
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>, DataError> {
    std::fs::read(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Raw image bytes: `(count, rows, cols, pixels)`.
pub fn read_idx_images(path: impl AsRef<Path>) -> Result<(usize, usize, usize, Vec<u8>), DataError> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    let mut cur = Cursor {
        bytes: &bytes,
        offset: 0,
        path,
    };
    cur.magic(IDX_IMAGES_MAGIC)?;
    let count = cur.u32("image count")? as usize;
    let rows = cur.u32("row count")? as usize;
    let cols = cur.u32("column count")? as usize;
    let pixels = cur.take(count * rows * cols, "pixel data")?.to_vec();
    cur.finish()?;
    Ok((count, rows, cols, pixels))
}

pub fn read_idx_labels(path: impl AsRef<Path>) -> Result<Vec<u8>, DataError> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    let mut cur = Cursor {
        bytes: &bytes,
        offset: 0,
        path,
    };
    cur.magic(IDX_LABELS_MAGIC)?;
    let count = cur.u32("label count")? as usize;
    let labels = cur.take(count, "label data")?.to_vec();
    cur.finish()?;
    Ok(labels)
}

/// Loads an IDX image/label pair as `1 x rows x cols` tensors scaled to
/// `[0, 1]` with ten classes.
pub fn load_mnist_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<LabeledDataset, DataError> {
    let (count, rows, cols, pixels) = read_idx_images(images)?;
    let raw_labels = read_idx_labels(labels.as_ref())?;
    if raw_labels.len() != count {
        return Err(DataError::CountMismatch {
            images: count,
            labels: raw_labels.len(),
        });
    }
    if let Some(index) = raw_labels.iter().position(|&l| l >= 10) {
        return Err(DataError::BadLabel {
            path: labels.as_ref().to_path_buf(),
            index,
            label: raw_labels[index],
        });
    }
    let plane = rows * cols;
    let tensors = (0..count)
        .map(|i| Tensor::from_fn(&[1, rows, cols], |j| pixels[i * plane + j] as f64 / 255.0))
        .collect();
    let labels = raw_labels.into_iter().map(usize::from).collect();
    Ok(LabeledDataset::new(tensors, labels, 10).expect("labels checked above"))
}

/// Conventional file names inside an MNIST directory: `(images, labels)`.
pub fn mnist_paths(dir: impl AsRef<Path>, train: bool) -> (PathBuf, PathBuf) {
    let prefix = if train { "train" } else { "t10k" };
    let dir = dir.as_ref();
    (
        dir.join(format!("{prefix}-images-idx3-ubyte")),
        dir.join(format!("{prefix}-labels-idx1-ubyte")),
    )
}
