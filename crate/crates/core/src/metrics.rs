//! Roughness, fooling rates and smoothing-factor sweeps.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attack::{AttackConfig, AttackError, AttackOutcome, AttackStatus};
use crate::conv::convolve2d;
use crate::kernel::{KernelError, SmoothingKernel};
use crate::net::{LabeledDataset, NetError, Network};
use crate::tensor::{Tensor, TensorError};

pub const DENOMINATOR_POLICY: &str = "correctly-classified";

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("normalized roughness is undefined for a zero perturbation")]
    ZeroPerturbation,
    #[error("no samples to aggregate")]
    Empty,
    #[error("no correctly classified samples; fooling rate is undefined")]
    NoCorrectSamples,
    #[error("{outcomes} outcomes for {samples} samples")]
    Misaligned { outcomes: usize, samples: usize },
    #[error("sigmas must be positive and strictly increasing: {0:?}")]
    BadSigmas(Vec<f64>),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Attack(#[from] AttackError),
}

/// `‖r − r*h‖²`.
pub fn roughness(r: &Tensor, h: &SmoothingKernel) -> Result<f64, TensorError> {
    if h.is_identity() {
        r.ensure_finite()?;
        r.image_dims()?;
        return Ok(0.0);
    }
    let smoothed = convolve2d(r, h)?;
    Ok(r.data().iter().zip(smoothed.data()).map(|(a, b)| (a - b) * (a - b)).sum())
}

/// Roughness divided by the perturbation energy `‖r‖²`; scale-free.
pub fn normalized_roughness(r: &Tensor, h: &SmoothingKernel) -> Result<f64, MetricsError> {
    let energy = r.norm_sq();
    if energy == 0.0 {
        return Err(MetricsError::ZeroPerturbation);
    }
    Ok(roughness(r, h)? / energy)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoughnessReport {
    /// Mean of `Ω(r; h)`.
    pub omega_bar: f64,
    /// Mean of `Ω(r; h) / ‖r‖²`.
    pub omega_bar_n: f64,
    /// Median of `Ω(r; h) / ‖r‖²`.
    pub median_omega_n: f64,
    pub mean_l2: f64,
    pub sample_count: usize,
    pub h_sigma: Option<f64>,
}

impl RoughnessReport {
    /// Aggregates per-sample `Ω(r; h)` and `‖r‖₂` values.
    pub fn from_measurements(omegas: &[f64], l2: &[f64], h_sigma: Option<f64>) -> Result<Self, MetricsError> {
        if omegas.len() != l2.len() {
            return Err(MetricsError::Misaligned {
                outcomes: omegas.len(),
                samples: l2.len(),
            });
        }
        if omegas.is_empty() {
            return Err(MetricsError::Empty);
        }
        if l2.iter().any(|&n| n == 0.0) {
            return Err(MetricsError::ZeroPerturbation);
        }
        let normalized: Vec<f64> = omegas.iter().zip(l2).map(|(o, n)| o / (n * n)).collect();
        let n = omegas.len() as f64;
        Ok(RoughnessReport {
            omega_bar: omegas.iter().sum::<f64>() / n,
            omega_bar_n: normalized.iter().sum::<f64>() / n,
            median_omega_n: median(&normalized),
            mean_l2: l2.iter().sum::<f64>() / n,
            sample_count: omegas.len(),
            h_sigma,
        })
    }
}

/// Aggregates over the given perturbations (the successful ones).
pub fn roughness_report<'a>(
    perturbations: impl IntoIterator<Item = &'a Tensor>,
    h: &SmoothingKernel,
) -> Result<RoughnessReport, MetricsError> {
    let mut omegas = Vec::new();
    let mut l2 = Vec::new();
    for r in perturbations {
        omegas.push(roughness(r, h)?);
        l2.push(r.norm_l2());
    }
    RoughnessReport::from_measurements(&omegas, &l2, h.sigma())
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => v[n / 2],
        _ => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoolingReport {
    pub overall_rate: f64,
    pub per_class: Vec<f64>,
    /// Correctly classified samples per class (the per-class denominators).
    pub class_counts: Vec<usize>,
    pub fooled_counts: Vec<usize>,
    /// Benign samples excluded because the network already misclassifies them.
    pub misclassified: usize,
    pub denominator_policy: String,
    pub sigma_g: Option<f64>,
}

impl FoolingReport {
    /// `correct[i]`: sample `i` is classified correctly; `fooled[i]`: its
    /// attack succeeded. Entries with `correct[i] == false` are ignored.
    pub fn from_flags(
        labels: &[usize],
        num_classes: usize,
        correct: &[bool],
        fooled: &[bool],
        sigma_g: Option<f64>,
    ) -> Result<Self, MetricsError> {
        if correct.len() != labels.len() || fooled.len() != labels.len() {
            return Err(MetricsError::Misaligned {
                outcomes: fooled.len(),
                samples: labels.len(),
            });
        }
        let mut class_counts = vec![0usize; num_classes];
        let mut fooled_counts = vec![0usize; num_classes];
        let mut misclassified = 0;
        for ((&label, &ok), &hit) in labels.iter().zip(correct).zip(fooled) {
            if !ok {
                misclassified += 1;
                continue;
            }
            class_counts[label] += 1;
            if hit {
                fooled_counts[label] += 1;
            }
        }
        let total: usize = class_counts.iter().sum();
        if total == 0 {
            return Err(MetricsError::NoCorrectSamples);
        }
        let per_class: Vec<f64> = class_counts
            .iter()
            .zip(&fooled_counts)
            .map(|(&n, &k)| if n == 0 { 0.0 } else { k as f64 / n as f64 })
            .collect();
        let overall_rate = weighted_mean(&per_class, &class_counts);
        Ok(Self {
            overall_rate,
            per_class,
            class_counts,
            fooled_counts,
            misclassified,
            denominator_policy: DENOMINATOR_POLICY.to_string(),
            sigma_g,
        })
    }
}

/// `Σ n_c·rate_c / Σ n_c`.
pub fn weighted_mean(rates: &[f64], counts: &[usize]) -> f64 {
    let total: usize = counts.iter().sum();
    rates.iter().zip(counts).map(|(r, &n)| r * n as f64).sum::<f64>() / total as f64
}

/// Fooling rate over the correctly classified samples of `data`.
///
/// `outcomes[i]` belongs to `data` sample `i`; a sample counts as fooled
/// when its outcome has success status.
pub fn fooling_rate(net: &Network, outcomes: &[AttackOutcome], data: &LabeledDataset) -> Result<FoolingReport, MetricsError> {
    if outcomes.len() != data.len() {
        return Err(MetricsError::Misaligned {
            outcomes: outcomes.len(),
            samples: data.len(),
        });
    }
    let mut correct = Vec::with_capacity(data.len());
    for (x, label) in data.iter() {
        correct.push(net.predict(x)? == label);
    }
    let fooled: Vec<bool> = outcomes.iter().map(|o| o.status == AttackStatus::Success).collect();
    FoolingReport::from_flags(data.labels(), data.num_classes(), &correct, &fooled, None)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub sigma: f64,
    pub fooling: FoolingReport,
    /// `None` when no sample was fooled.
    pub roughness: Option<RoughnessReport>,
    pub status_counts: StatusCounts,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatusCounts {
    pub success: usize,
    pub max_iters: usize,
    pub orthogonal_failure: usize,
    pub clip_failure: usize,
}

impl StatusCounts {
    pub fn record(&mut self, status: AttackStatus) {
        match status {
            AttackStatus::Success => self.success += 1,
            AttackStatus::MaxIters => self.max_iters += 1,
            AttackStatus::OrthogonalFailure => self.orthogonal_failure += 1,
            AttackStatus::ClipFailure => self.clip_failure += 1,
        }
    }
}

/// Runs SmoothFool with a gaussian `g` of each `sigma` over the correctly
/// classified samples of `data`; roughness is measured with `h`.
pub fn sigma_sweep(
    net: &Network,
    data: &LabeledDataset,
    sigmas: &[f64],
    template: &AttackConfig,
    h: &SmoothingKernel,
) -> Result<Vec<SweepRow>, MetricsError> {
    if sigmas.is_empty() || sigmas.iter().any(|s| !(*s > 0.0)) || sigmas.windows(2).any(|w| w[1] <= w[0]) {
        return Err(MetricsError::BadSigmas(sigmas.to_vec()));
    }
    let mut correct = Vec::with_capacity(data.len());
    for (x, label) in data.iter() {
        correct.push(net.predict(x)? == label);
    }
    let mut rows = Vec::with_capacity(sigmas.len());
    for &sigma in sigmas {
        let cfg = AttackConfig {
            kernel: SmoothingKernel::gaussian(sigma)?,
            ..template.clone()
        };
        let mut fooled = vec![false; data.len()];
        let mut perturbations = Vec::new();
        let mut status_counts = StatusCounts::default();
        for (i, (x, _)) in data.iter().enumerate() {
            if !correct[i] {
                continue;
            }
            let outcome = crate::attack::smoothfool(net, x, &cfg)?;
            status_counts.record(outcome.status);
            if outcome.status == AttackStatus::Success {
                fooled[i] = true;
                perturbations.push(outcome.perturbation);
            }
        }
        let fooling = FoolingReport::from_flags(data.labels(), data.num_classes(), &correct, &fooled, Some(sigma))?;
        let roughness = match roughness_report(&perturbations, h) {
            Ok(r) => Some(r),
            Err(MetricsError::Empty) => None,
            Err(e) => return Err(e),
        };
        log::info!("sigma {sigma}: fooling rate {:.4}", fooling.overall_rate);
        rows.push(SweepRow {
            sigma,
            fooling,
            roughness,
            status_counts,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmaAtRate {
    pub level: f64,
    /// `None` when even the smallest sigma falls short of `level`.
    pub sigma: Option<f64>,
    /// True when every measured sigma reaches `level`, so the true value
    /// may lie beyond the sweep range.
    pub censored: bool,
}

/// Largest sigma whose fooling rate reaches `level` on the running-minimum
/// envelope of the curve, linearly interpolated between measured points.
pub fn sigma_at_rate(sigmas: &[f64], rates: &[f64], level: f64) -> SigmaAtRate {
    let mut envelope = Vec::with_capacity(rates.len());
    let mut lowest = f64::INFINITY;
    for &r in rates {
        lowest = lowest.min(r);
        envelope.push(lowest);
    }
    match envelope.iter().position(|&r| r < level) {
        None => SigmaAtRate {
            level,
            sigma: sigmas.last().copied(),
            censored: true,
        },
        Some(0) => SigmaAtRate {
            level,
            sigma: None,
            censored: false,
        },
        Some(j) => {
            let (s0, s1) = (sigmas[j - 1], sigmas[j]);
            let (r0, r1) = (envelope[j - 1], envelope[j]);
            let t = (r0 - level) / (r0 - r1);
            SigmaAtRate {
                level,
                sigma: Some(s0 + t * (s1 - s0)),
                censored: false,
            }
        }
    }
}
