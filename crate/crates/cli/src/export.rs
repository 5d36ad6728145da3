//! Portable graymap/pixmap export of images and perturbations.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder};
use serde::{Deserialize, Serialize};
use smoothfool::Tensor;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageMode {
    /// Clamps to `[0, 1]`, then scales to `[0, 255]`.
    Raw,
    /// Maps `[min, max]` affinely onto `[0, 255]`; a constant tensor maps
    /// to zeros.
    MinMax,
}

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("expected a 1- or 3-channel C x H x W tensor, got shape {0:?}")]
    Channels(Vec<usize>),
    #[error("non-finite value at flat index {0}")]
    NonFinite(usize),
    #[error("{path}: {source}")]
    Write {
        path: String,
        #[source]
        source: image::ImageError,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Interleaved 8-bit samples (`H x W x C`), rounding half away from zero.
pub fn to_bytes(t: &Tensor, mode: ImageMode) -> Result<Vec<u8>, ExportError> {
    let (c, h, w) = match t.shape() {
        &[c, h, w] if c == 1 || c == 3 => (c, h, w),
        other => return Err(ExportError::Channels(other.to_vec())),
    };
    if let Some(i) = t.data().iter().position(|v| !v.is_finite()) {
        return Err(ExportError::NonFinite(i));
    }
    let (lo, hi) = (t.min(), t.max());
    let level = |v: f64| -> u8 {
        let unit = match mode {
            ImageMode::Raw => v.clamp(0.0, 1.0),
            ImageMode::MinMax if hi > lo => (v - lo) / (hi - lo),
            ImageMode::MinMax => 0.0,
        };
        (unit * 255.0).round() as u8
    };
    let plane = h * w;
    let mut out = Vec::with_capacity(c * plane);
    for p in 0..plane {
        for ch in 0..c {
            out.push(level(t.data()[ch * plane + p]));
        }
    }
    Ok(out)
}

/// Writes a binary PGM (one channel) or PPM (three channels).
pub fn export_image(t: &Tensor, path: &Path, mode: ImageMode) -> Result<(), ExportError> {
    let bytes = to_bytes(t, mode)?;
    let (c, h, w) = (t.shape()[0], t.shape()[1], t.shape()[2]);
    let name = path.display().to_string();
    let file = File::create(path).map_err(|source| ExportError::Io {
        path: name.clone(),
        source,
    })?;
    let (subtype, color) = if c == 1 {
        (PnmSubtype::Graymap(SampleEncoding::Binary), ExtendedColorType::L8)
    } else {
        (PnmSubtype::Pixmap(SampleEncoding::Binary), ExtendedColorType::Rgb8)
    };
    PnmEncoder::new(BufWriter::new(file))
        .with_subtype(subtype)
        .write_image(&bytes, w as u32, h as u32, color)
        .map_err(|source| ExportError::Write { path: name, source })
}
