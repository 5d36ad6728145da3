//! Dense row-major `f64` tensors and the `SFT1` tensor file format.
//!
//! Images, perturbations, gradients and boundary normals all live in a
//! [`Tensor`]. Images use channels x height x width order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

/// Magic bytes opening every tensor file.
pub const TENSOR_MAGIC: &[u8; 4] = b"SFT1";

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape {shape:?} holds {expected} values but {actual} were supplied")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch { left: Vec<usize>, right: Vec<usize> },
    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },
    #[error("expected a channels x height x width tensor, got shape {0:?}")]
    NotAnImage(Vec<usize>),
    #[error("corrupt tensor file: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor, checking that `data` fills `shape` and is finite.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::DataLength {
                shape,
                expected,
                actual: data.len(),
            });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { index });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn zeros_like(other: &Tensor) -> Self {
        Self::zeros(&other.shape)
    }

    /// Tensor whose flat element `i` is `f(i)`.
    pub fn from_fn(shape: &[usize], f: impl FnMut(usize) -> f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `(channels, height, width)` of a rank-3 tensor.
    pub fn image_dims(&self) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [c, h, w] if c > 0 && h > 0 && w > 0 => Ok((c, h, w)),
            _ => Err(TensorError::NotAnImage(self.shape.clone())),
        }
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != self.data.len() {
            return Err(TensorError::DataLength {
                shape: shape.to_vec(),
                expected,
                actual: self.data.len(),
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn check_same_shape(&self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(TensorError::ShapeMismatch {
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        Ok(())
    }

    pub fn ensure_finite(&self) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(index) => Err(TensorError::NonFinite { index }),
            None => Ok(()),
        }
    }

    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        dot(self, other)
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn norm_l2(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn norm_linf(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, factor: f64) -> Tensor {
        self.map(|v| v * factor)
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &Tensor) -> Result<()> {
        self.check_same_shape(other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_with(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.check_same_shape(other)?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> Tensor {
        self.map(|v| v.clamp(lo, hi))
    }

    /// Writes the tensor in `SFT1` format: magic, `u32` rank, `u32` dims,
    /// then little-endian `f64` values in row-major order.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(TENSOR_MAGIC)?;
        w.write_all(&(self.shape.len() as u32).to_le_bytes())?;
        for &d in &self.shape {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Tensor> {
        let mut magic = [0u8; 4];
        read_exact_or(&mut r, &mut magic, "magic")?;
        if &magic != TENSOR_MAGIC {
            return Err(TensorError::Corrupt(format!("bad magic {magic:?}")));
        }
        let rank = read_u32(&mut r, "rank")? as usize;
        if rank > 16 {
            return Err(TensorError::Corrupt(format!("implausible rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for i in 0..rank {
            shape.push(read_u32(&mut r, &format!("dimension {i}"))? as usize);
        }
        let n: usize = shape.iter().product();
        let mut bytes = vec![0u8; n * 8];
        read_exact_or(&mut r, &mut bytes, "payload")?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing)? != 0 {
            return Err(TensorError::Corrupt("trailing bytes after payload".into()));
        }
        Tensor::new(shape, data)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Tensor> {
        Tensor::read_from(BufReader::new(File::open(path)?))
    }
}

fn read_exact_or(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => TensorError::Corrupt(format!("truncated {what}")),
        _ => TensorError::Io(e),
    })
}

fn read_u32(r: &mut impl Read, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact_or(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

/// Inner product of two tensors of identical shape.
pub fn dot(a: &Tensor, b: &Tensor) -> Result<f64> {
    a.check_same_shape(b)?;
    Ok(a.data.iter().zip(&b.data).map(|(x, y)| x * y).sum())
}

/// Moves `r` by whole ulps until every `x + r` lands inside `[0, 1]`.
///
/// Used after range repair so that the stored perturbation reproduces an
/// in-range image under plain floating-point addition.
pub(crate) fn settle_into_unit_range(x: &[f64], r: &mut [f64]) {
    for (xi, ri) in x.iter().zip(r.iter_mut()) {
        if xi + *ri > 1.0 {
            *ri = 1.0 - xi;
            while xi + *ri > 1.0 {
                *ri = ri.next_down();
            }
        } else if xi + *ri < 0.0 {
            *ri = -xi;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_wrong_length_and_nan() {
        assert!(matches!(
            Tensor::new(vec![2, 2], vec![0.0; 3]),
            Err(TensorError::DataLength { expected: 4, .. })
        ));
        assert!(matches!(
            Tensor::new(vec![2], vec![0.0, f64::NAN]),
            Err(TensorError::NonFinite { index: 1 })
        ));
    }

    #[test]
    fn dot_of_unit_impulses() {
        let e0 = Tensor::new(vec![1, 2, 2], vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let e1 = Tensor::new(vec![1, 2, 2], vec![0.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(dot(&e0, &e0).unwrap(), 1.0);
        assert_eq!(dot(&e0, &e1).unwrap(), 0.0);
        let other = Tensor::zeros(&[4]);
        assert!(matches!(
            dot(&e0, &other),
            Err(TensorError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn dot_matches_compensated_sum() {
        // Kahan-compensated accumulation as an independent reference.
        let a = Tensor::new(
            vec![10],
            vec![0.31, -1.7, 2.2, 0.004, -0.9, 3.3, 1e-3, -2.5, 0.77, 1.1],
        )
        .unwrap();
        let b = Tensor::new(
            vec![10],
            vec![1.9, 0.2, -0.35, 7.0, 0.6, -0.12, 50.0, 0.8, -1.3, 0.45],
        )
        .unwrap();
        let (mut sum, mut comp) = (0.0f64, 0.0f64);
        for (x, y) in a.data().iter().zip(b.data()) {
            let term = x * y - comp;
            let t = sum + term;
            comp = (t - sum) - term;
            sum = t;
        }
        assert!((dot(&a, &b).unwrap() - sum).abs() < 1e-13);
    }

    #[test]
    fn file_round_trip_and_truncation() {
        let t = Tensor::from_fn(&[2, 3, 4], |i| (i as f64).sin());
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"SFT1");
        assert_eq!(buf.len(), 4 + 4 + 12 + 24 * 8);
        let back = Tensor::read_from(&buf[..]).unwrap();
        assert_eq!(back, t);

        let err = Tensor::read_from(&buf[..buf.len() - 3]).unwrap_err();
        assert!(matches!(err, TensorError::Corrupt(ref m) if m.contains("payload")));
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(
            Tensor::read_from(&bad[..]),
            Err(TensorError::Corrupt(_))
        ));
    }

    #[test]
    fn settle_lands_in_range() {
        let x = [0.1, 0.7, 0.0, 1.0, 0.3];
        let mut r = [0.9 + 1e-12, 0.3, -1e-15, 0.0, 0.2];
        settle_into_unit_range(&x, &mut r);
        for (xi, ri) in x.iter().zip(&r) {
            let v = xi + ri;
            assert!((0.0..=1.0).contains(&v));
        }
        assert_eq!(r[4], 0.2);
    }
}
