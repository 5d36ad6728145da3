use super::AttackError;
use crate::conv::convolve_planes;
use crate::kernel::SmoothingKernel;
use crate::tensor::{settle_into_unit_range, Tensor};

/// Out-of-range excess below which the iteration stops and the remainder
/// is snapped away.
pub const CLIP_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct ClipResult {
    pub r: Tensor,
    pub iterations: usize,
}

/// Pulls `x + r` back into `[0, 1]` by subtracting smoothed violation
/// masks, scaled by the worst violation, until it is within tolerance;
/// the sub-tolerance remainder is then snapped so `x + r` lies in `[0, 1]`
/// exactly.
pub fn smooth_clip(
    x: &Tensor,
    r: &Tensor,
    g: &SmoothingKernel,
    eps: f64,
    max_iters: usize,
) -> Result<ClipResult, AttackError> {
    x.check_same_shape(r)?;
    x.ensure_finite()?;
    r.ensure_finite()?;
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(AttackError::InvalidConfig(format!("clip step must be positive, got {eps}")));
    }
    let (c, h, w) = x.image_dims()?;
    let n = x.len();
    let xs = x.data();
    let mut r = r.clone();
    let mut mask = vec![0.0; n];
    let mut hi_mask = vec![0.0; n];
    let mut lo_mask = vec![0.0; n];
    let mut iterations = 0;
    loop {
        let rs = r.data();
        let (mut hi, mut lo) = (f64::NEG_INFINITY, f64::INFINITY);
        for (xi, ri) in xs.iter().zip(rs) {
            let v = xi + ri;
            hi = hi.max(v);
            lo = lo.min(v);
        }
        if hi <= 1.0 + CLIP_TOLERANCE && lo >= -CLIP_TOLERANCE {
            settle_into_unit_range(xs, r.data_mut());
            return Ok(ClipResult { r, iterations });
        }
        if iterations >= max_iters {
            return Err(AttackError::ClipFailure {
                iterations,
                excess: (hi - 1.0).max(-lo),
            });
        }
        let above = hi > 1.0;
        let below = lo < 0.0;
        if above {
            for ((m, xi), ri) in mask.iter_mut().zip(xs).zip(rs) {
                *m = if xi + ri - 1.0 > 0.0 { 1.0 } else { 0.0 };
            }
            convolve_planes(&mask, c, h, w, g, &mut hi_mask);
        }
        if below {
            for ((m, xi), ri) in mask.iter_mut().zip(xs).zip(rs) {
                *m = if -(xi + ri) > 0.0 { 1.0 } else { 0.0 };
            }
            convolve_planes(&mask, c, h, w, g, &mut lo_mask);
        }
        let rs = r.data_mut();
        if above {
            let s = eps * (hi - 1.0);
            rs.iter_mut().zip(&hi_mask).for_each(|(ri, m)| *ri -= s * m);
        }
        if below {
            let s = eps * lo;
            rs.iter_mut().zip(&lo_mask).for_each(|(ri, m)| *ri -= s * m);
        }
        iterations += 1;
    }
}

/// Per-pixel truncation `clamp(x + r, 0, 1) − x`.
pub fn hard_clip(x: &Tensor, r: &Tensor) -> Result<Tensor, AttackError> {
    x.check_same_shape(r)?;
    let mut out = r.clone();
    settle_into_unit_range(x.data(), out.data_mut());
    Ok(out)
}
