//! Minimal-perturbation attacks.
//!
//! [`deepfool_l2`] finds the nearest linearized decision boundary.
//! [`smoothfool`] repeatedly projects onto that boundary along a low-pass
//! filtered normal and repairs range violations with [`smooth_clip`], so
//! every step it takes is smooth. [`iterative_smooth_baseline`] is the
//! penalty-based alternative used for comparison.

mod clip;
mod deepfool;
mod iterative;
mod linear;
mod projection;
mod smoothfool;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernel::{KernelError, SmoothingKernel};
use crate::net::NetError;
use crate::tensor::{Tensor, TensorError};

pub use clip::{hard_clip, smooth_clip, ClipResult, CLIP_TOLERANCE};
pub use deepfool::{boundary_normal, deepfool_attack, deepfool_l2, DeepFoolResult};
pub use iterative::{iterative_smooth_baseline, IsConfig};
pub use linear::{linear_closed_form, linear_network};
pub use projection::{projection_stats, smooth_projection, Projection, ProjectionStats, HYPERPLANE_TOLERANCE};
pub use smoothfool::smoothfool;

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("invalid attack configuration: {0}")]
    InvalidConfig(String),
    #[error("no label change after {iterations} iterations")]
    MaxIters { iterations: usize },
    #[error("orthogonality failure: {0}")]
    Orthogonal(String),
    #[error("smooth clip did not reach the valid range after {iterations} iterations (worst excess {excess:e})")]
    ClipFailure { iterations: usize, excess: f64 },
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

impl AttackError {
    /// The outcome status this error maps to, if it is an attack failure
    /// rather than a usage error.
    pub fn status(&self) -> Option<AttackStatus> {
        match self {
            AttackError::MaxIters { .. } => Some(AttackStatus::MaxIters),
            AttackError::Orthogonal(_) => Some(AttackStatus::OrthogonalFailure),
            AttackError::ClipFailure { .. } => Some(AttackStatus::ClipFailure),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackStatus {
    Success,
    MaxIters,
    OrthogonalFailure,
    ClipFailure,
}

impl std::fmt::Display for AttackStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AttackStatus::Success => "success",
            AttackStatus::MaxIters => "max_iters",
            AttackStatus::OrthogonalFailure => "orthogonal_failure",
            AttackStatus::ClipFailure => "clip_failure",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackConfig {
    /// Smoothing kernel `g` applied to boundary normals and clip masks.
    pub kernel: SmoothingKernel,
    /// Kernel `h` used for the per-iteration roughness record.
    pub roughness_kernel: SmoothingKernel,
    /// SmoothClip step size.
    pub clip_step: f64,
    /// Inflation of each projection scale; 0 lands exactly on the
    /// linearized boundary.
    pub overshoot: f64,
    /// Overshoot of the inner DeepFool runs.
    pub deepfool_overshoot: f64,
    /// Hyperplane anchor: `None` uses the DeepFool endpoint itself;
    /// `Some(m)` uses the first-order boundary point pushed `m` further
    /// along the unit normal.
    pub boundary_margin: Option<f64>,
    /// Competitor classes considered by DeepFool (top logits, original
    /// class included).
    pub candidates: usize,
    /// Slow cases need a few dozen steps once SmoothClip starts undoing
    /// part of each projection.
    pub max_outer_iters: usize,
    pub max_deepfool_iters: usize,
    pub max_clip_iters: usize,
    /// Minimum `|cos(w, g*w)|` accepted by the projection.
    pub orthogonality_floor: f64,
    /// Range repair after every step. Disabling it voids the `[0, 1]`
    /// guarantee and exists for equivalence checks.
    pub clip_enabled: bool,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            kernel: SmoothingKernel::gaussian(2.0).expect("valid sigma"),
            roughness_kernel: SmoothingKernel::gaussian(1.0).expect("valid sigma"),
            clip_step: 1.0,
            overshoot: 0.02,
            deepfool_overshoot: 0.02,
            boundary_margin: None,
            candidates: 10,
            max_outer_iters: 200,
            max_deepfool_iters: 100,
            max_clip_iters: 10_000,
            orthogonality_floor: 1e-3,
            clip_enabled: true,
        }
    }
}

impl AttackConfig {
    /// Gaussian `g` of `sigma_g` with `h` at half that width.
    pub fn with_sigma(sigma_g: f64) -> Result<Self, AttackError> {
        Ok(Self {
            kernel: SmoothingKernel::gaussian(sigma_g)?,
            roughness_kernel: SmoothingKernel::gaussian(sigma_g / 2.0)?,
            ..Self::default()
        })
    }

    /// Identity `g` and `h`: the attack reduces to iterated projections.
    pub fn identity() -> Self {
        Self {
            kernel: SmoothingKernel::identity(),
            roughness_kernel: SmoothingKernel::identity(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), AttackError> {
        let bad = |m: String| Err(AttackError::InvalidConfig(m));
        if !(self.clip_step > 0.0 && self.clip_step.is_finite()) {
            return bad(format!("clip_step must be positive, got {}", self.clip_step));
        }
        if !(0.0..0.2).contains(&self.overshoot) {
            return bad(format!("overshoot must lie in [0, 0.2), got {}", self.overshoot));
        }
        if !(0.0..0.2).contains(&self.deepfool_overshoot) {
            return bad(format!("deepfool_overshoot must lie in [0, 0.2), got {}", self.deepfool_overshoot));
        }
        if let Some(m) = self.boundary_margin {
            if !(m >= 0.0 && m.is_finite()) {
                return bad(format!("boundary_margin must be non-negative, got {m}"));
            }
        }
        if !(self.orthogonality_floor > 0.0 && self.orthogonality_floor < 0.5) {
            return bad(format!("orthogonality_floor must lie in (0, 0.5), got {}", self.orthogonality_floor));
        }
        if self.candidates < 2 {
            return bad(format!("candidates must be at least 2, got {}", self.candidates));
        }
        if self.max_outer_iters == 0 || self.max_deepfool_iters == 0 || self.max_clip_iters == 0 {
            return bad("iteration caps must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub step: Tensor,
    /// `Ω(step; h)`.
    pub roughness: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackOutcome {
    pub perturbation: Tensor,
    pub adversarial_image: Tensor,
    pub original_label: usize,
    pub adversarial_label: usize,
    pub outer_iterations: usize,
    pub per_iteration: Vec<IterationRecord>,
    pub status: AttackStatus,
    /// Inner work: DeepFool iterations for the smooth attack, optimizer
    /// steps for the penalty baseline.
    pub inner_iterations: usize,
    /// Total SmoothClip iterations spent.
    pub clip_iterations: usize,
}

impl AttackOutcome {
    pub fn is_success(&self) -> bool {
        self.status == AttackStatus::Success
    }

    pub fn l2(&self) -> f64 {
        self.perturbation.norm_l2()
    }

    /// `max_j Ω(r^j; h)` over the recorded steps.
    pub fn max_step_roughness(&self) -> f64 {
        self.per_iteration.iter().map(|r| r.roughness).fold(0.0, f64::max)
    }
}

pub(crate) fn check_unit_range(x: &Tensor) -> Result<(), AttackError> {
    x.ensure_finite()?;
    if x.min() < 0.0 || x.max() > 1.0 {
        return Err(AttackError::InvalidConfig(format!(
            "input must lie in [0, 1], found range [{}, {}]",
            x.min(),
            x.max()
        )));
    }
    Ok(())
}
