use std::sync::atomic::{AtomicU64, Ordering};

use super::AttackError;
use crate::conv::convolve2d;
use crate::kernel::SmoothingKernel;
use crate::tensor::Tensor;

/// Relative tolerance of the hyperplane identity `wᵀ(x + r − x_p) = 0`.
pub const HYPERPLANE_TOLERANCE: f64 = 1e-9;

static CALLS: AtomicU64 = AtomicU64::new(0);
static VIOLATIONS: AtomicU64 = AtomicU64::new(0);
// bit pattern of a nonnegative f64; integer order matches float order
static WORST: AtomicU64 = AtomicU64::new(0);

/// Process-wide record of every projection's hyperplane residual.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionStats {
    pub calls: u64,
    /// Calls whose residual exceeded `1e-9·‖w‖·‖x_p − x‖`.
    pub violations: u64,
    /// Largest `|wᵀ(x + r − x_p)| / (‖w‖·‖x_p − x‖)` seen.
    pub worst_relative_residual: f64,
}

pub fn projection_stats() -> ProjectionStats {
    ProjectionStats {
        calls: CALLS.load(Ordering::Relaxed),
        violations: VIOLATIONS.load(Ordering::Relaxed),
        worst_relative_residual: f64::from_bits(WORST.load(Ordering::Relaxed)),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    /// `ρ·w̃`.
    pub r: Tensor,
    pub rho: f64,
    /// `g * w`.
    pub w_tilde: Tensor,
}

/// Moves `x` onto the hyperplane through `x_p` with normal `w`, along the
/// smoothed normal `g * w`.
pub fn smooth_projection(
    x: &Tensor,
    x_p: &Tensor,
    w: &Tensor,
    g: &SmoothingKernel,
    orthogonality_floor: f64,
) -> Result<Tensor, AttackError> {
    Ok(project(x, x_p, w, g, orthogonality_floor)?.r)
}

pub(crate) fn project(
    x: &Tensor,
    x_p: &Tensor,
    w: &Tensor,
    g: &SmoothingKernel,
    orthogonality_floor: f64,
) -> Result<Projection, AttackError> {
    x.check_same_shape(x_p)?;
    x.check_same_shape(w)?;
    let w_norm = w.norm_l2();
    if w_norm == 0.0 {
        return Err(AttackError::Orthogonal("zero boundary normal".into()));
    }
    let w_tilde = convolve2d(w, g)?;
    let denominator = w.dot(&w_tilde)?;
    let w_tilde_norm = w_tilde.norm_l2();
    if !(denominator.abs() >= orthogonality_floor * w_norm * w_tilde_norm) {
        return Err(AttackError::Orthogonal(format!(
            "cos(w, g*w) = {:.3e} is below the floor {orthogonality_floor:e}",
            denominator / (w_norm * w_tilde_norm)
        )));
    }
    let offset = x_p.sub(x)?;
    let rho = w.dot(&offset)? / denominator;
    let r = w_tilde.scale(rho);
    record_residual(x, x_p, w, &r, w_norm * offset.norm_l2());
    Ok(Projection { r, rho, w_tilde })
}

fn record_residual(x: &Tensor, x_p: &Tensor, w: &Tensor, r: &Tensor, scale: f64) {
    let residual: f64 = w
        .data()
        .iter()
        .zip(x.data())
        .zip(r.data())
        .zip(x_p.data())
        .map(|(((wi, xi), ri), pi)| wi * ((xi + ri) - pi))
        .sum();
    CALLS.fetch_add(1, Ordering::Relaxed);
    if residual.abs() > HYPERPLANE_TOLERANCE * scale {
        VIOLATIONS.fetch_add(1, Ordering::Relaxed);
    }
    let relative = if scale > 0.0 { residual.abs() / scale } else { 0.0 };
    if relative.is_finite() {
        WORST.fetch_max(relative.to_bits(), Ordering::Relaxed);
    }
}
