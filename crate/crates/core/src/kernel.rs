//! Normalized 2-D low-pass kernels.
//!
//! The same type serves as the smoothing filter applied to boundary normals
//! and as the reference filter that defines roughness.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum KernelError {
    #[error("kernel size must be a positive odd integer, got {0}")]
    BadSize(usize),
    #[error("gaussian kernels need a positive finite sigma")]
    BadSigma,
    #[error("identity kernel has size 1, got {0}")]
    IdentitySize(usize),
    #[error("kernel {kind} needs an explicit size")]
    MissingSize { kind: KernelKind },
    #[error("cannot parse kernel description {0:?}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Gaussian,
    Linear,
    Uniform,
    Identity,
}

impl fmt::Display for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KernelKind::Gaussian => "gaussian",
            KernelKind::Linear => "linear",
            KernelKind::Uniform => "uniform",
            KernelKind::Identity => "identity",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmoothingKernel {
    kind: KernelKind,
    size: usize,
    sigma: Option<f64>,
    /// `size * size` weights, row-major, summing to 1.
    weights: Vec<f64>,
    /// Normalized 1-D factor when the kernel is an outer product of itself.
    factor: Option<Vec<f64>>,
}

/// Default gaussian width: `ceil(5 sigma)` bumped to the next odd integer.
pub fn gaussian_size(sigma: f64) -> usize {
    let k = (5.0 * sigma).ceil().max(1.0) as usize;
    if k % 2 == 0 {
        k + 1
    } else {
        k
    }
}

/// Builds a kernel of the given kind.
///
/// `size` may be omitted for gaussian kernels (it then follows
/// [`gaussian_size`]) and for the identity. `sigma` is required for, and
/// only used by, gaussian kernels.
pub fn make_kernel(
    kind: KernelKind,
    size: Option<usize>,
    sigma: Option<f64>,
) -> Result<SmoothingKernel, KernelError> {
    if let Some(k) = size {
        if k == 0 || k % 2 == 0 {
            return Err(KernelError::BadSize(k));
        }
    }
    match kind {
        KernelKind::Identity => match size {
            None | Some(1) => Ok(SmoothingKernel {
                kind,
                size: 1,
                sigma: None,
                weights: vec![1.0],
                factor: Some(vec![1.0]),
            }),
            Some(k) => Err(KernelError::IdentitySize(k)),
        },
        KernelKind::Gaussian => {
            let sigma = match sigma {
                Some(s) if s.is_finite() && s > 0.0 => s,
                _ => return Err(KernelError::BadSigma),
            };
            let k = size.unwrap_or_else(|| gaussian_size(sigma));
            let radius = (k / 2) as f64;
            let two_var = 2.0 * sigma * sigma;
            let mut weights = Vec::with_capacity(k * k);
            for i in 0..k {
                for j in 0..k {
                    let dy = i as f64 - radius;
                    let dx = j as f64 - radius;
                    weights.push((-(dx * dx + dy * dy) / two_var).exp());
                }
            }
            normalize(&mut weights);
            let mut factor: Vec<f64> = (0..k)
                .map(|i| {
                    let d = i as f64 - radius;
                    (-(d * d) / two_var).exp()
                })
                .collect();
            normalize(&mut factor);
            Ok(SmoothingKernel {
                kind,
                size: k,
                sigma: Some(sigma),
                weights,
                factor: Some(factor),
            })
        }
        KernelKind::Uniform => {
            let k = size.ok_or(KernelError::MissingSize { kind })?;
            let w = 1.0 / (k * k) as f64;
            Ok(SmoothingKernel {
                kind,
                size: k,
                sigma: None,
                weights: vec![w; k * k],
                factor: Some(vec![1.0 / k as f64; k]),
            })
        }
        KernelKind::Linear => {
            let k = size.ok_or(KernelError::MissingSize { kind })?;
            if k == 1 {
                return Ok(SmoothingKernel {
                    kind,
                    size: 1,
                    sigma: None,
                    weights: vec![1.0],
                    factor: Some(vec![1.0]),
                });
            }
            // Radial ramp: peak at the center, zero at the edge midpoints and
            // beyond.
            let radius = (k / 2) as f64;
            let mut weights = Vec::with_capacity(k * k);
            for i in 0..k {
                for j in 0..k {
                    let dy = i as f64 - radius;
                    let dx = j as f64 - radius;
                    let d = (dx * dx + dy * dy).sqrt();
                    weights.push((1.0 - d / radius).max(0.0));
                }
            }
            normalize(&mut weights);
            Ok(SmoothingKernel {
                kind,
                size: k,
                sigma: None,
                weights,
                factor: None,
            })
        }
    }
}

fn normalize(w: &mut [f64]) {
    let total: f64 = w.iter().sum();
    for v in w.iter_mut() {
        *v /= total;
    }
}

impl SmoothingKernel {
    pub fn identity() -> Self {
        make_kernel(KernelKind::Identity, None, None).expect("identity kernel")
    }

    pub fn gaussian(sigma: f64) -> Result<Self, KernelError> {
        make_kernel(KernelKind::Gaussian, None, Some(sigma))
    }

    pub fn uniform(size: usize) -> Result<Self, KernelError> {
        make_kernel(KernelKind::Uniform, Some(size), None)
    }

    pub fn linear(size: usize) -> Result<Self, KernelError> {
        make_kernel(KernelKind::Linear, Some(size), None)
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn radius(&self) -> usize {
        self.size / 2
    }

    pub fn sigma(&self) -> Option<f64> {
        self.sigma
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.size + col]
    }

    pub fn center_weight(&self) -> f64 {
        self.weight(self.radius(), self.radius())
    }

    pub fn separable_factor(&self) -> Option<&[f64]> {
        self.factor.as_deref()
    }

    pub fn is_identity(&self) -> bool {
        self.size == 1
    }
}

impl fmt::Display for SmoothingKernel {
    /// Formats as the description accepted by [`FromStr`], e.g.
    /// `gaussian:2`, `uniform:5`, `identity`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            KernelKind::Identity => f.write_str("identity"),
            KernelKind::Gaussian => {
                let sigma = self.sigma.expect("gaussian has sigma");
                if self.size == gaussian_size(sigma) {
                    write!(f, "gaussian:{sigma}")
                } else {
                    write!(f, "gaussian:{sigma}:{}", self.size)
                }
            }
            kind => write!(f, "{kind}:{}", self.size),
        }
    }
}

impl FromStr for SmoothingKernel {
    type Err = KernelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || KernelError::Parse(s.to_string());
        let mut parts = s.trim().split(':');
        let kind = parts.next().ok_or_else(bad)?;
        let args: Vec<&str> = parts.collect();
        let num = |v: &str| v.parse::<f64>().map_err(|_| bad());
        let int = |v: &str| v.parse::<usize>().map_err(|_| bad());
        match (kind, args.as_slice()) {
            ("identity", []) => Ok(SmoothingKernel::identity()),
            ("gaussian", [sigma]) => SmoothingKernel::gaussian(num(sigma)?),
            ("gaussian", [sigma, size]) => {
                make_kernel(KernelKind::Gaussian, Some(int(size)?), Some(num(sigma)?))
            }
            ("uniform", [size]) => SmoothingKernel::uniform(int(size)?),
            ("linear", [size]) => SmoothingKernel::linear(int(size)?),
            _ => Err(bad()),
        }
    }
}
