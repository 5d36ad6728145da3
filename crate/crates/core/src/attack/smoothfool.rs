use super::clip::smooth_clip;
use super::deepfool::{self, normal_and_gap};
use super::projection::project;
use super::{check_unit_range, AttackConfig, AttackError, AttackOutcome, AttackStatus, IterationRecord};
use crate::metrics::roughness;
use crate::net::Network;
use crate::tensor::{settle_into_unit_range, Tensor};

struct Step {
    r: Tensor,
    deepfool_iterations: usize,
    clip_iterations: usize,
}

/// Iterated smooth projections until the predicted label changes.
///
/// Each iteration runs DeepFool from the current iterate, linearizes the
/// boundary at its endpoint, moves along `g * w` onto that hyperplane
/// (scaled by `1 + overshoot`) and repairs the range with SmoothClip.
/// Subroutine failures end the run with the matching status and the
/// perturbation accumulated so far.
pub fn smoothfool(net: &Network, x: &Tensor, cfg: &AttackConfig) -> Result<AttackOutcome, AttackError> {
    cfg.validate()?;
    check_unit_range(x)?;
    net.check_input(x)?;
    let original = net.predict(x)?;
    let mut r_tot = Tensor::zeros(x.shape());
    let mut x_i = x.clone();
    let mut records: Vec<IterationRecord> = Vec::new();
    let mut inner = 0;
    let mut clip_total = 0;
    let status = loop {
        if net.predict(&x_i)? != original {
            break AttackStatus::Success;
        }
        if records.len() >= cfg.max_outer_iters {
            break AttackStatus::MaxIters;
        }
        let step = match step(net, &x_i, original, cfg) {
            Ok(s) => s,
            Err(e) => match e.status() {
                Some(status) => {
                    if let AttackError::ClipFailure { iterations, .. } = e {
                        clip_total += iterations;
                    }
                    break status;
                }
                None => return Err(e),
            },
        };
        inner += step.deepfool_iterations;
        clip_total += step.clip_iterations;
        let before = r_tot.clone();
        r_tot.axpy(1.0, &step.r)?;
        if cfg.clip_enabled {
            settle_into_unit_range(x.data(), r_tot.data_mut());
        }
        x_i = x.add(&r_tot)?;
        // the increment actually applied, so the records sum to r_tot
        let applied = r_tot.sub(&before)?;
        records.push(IterationRecord {
            roughness: roughness(&applied, &cfg.roughness_kernel)?,
            step: applied,
        });
    };
    let adversarial_label = net.predict(&x_i)?;
    Ok(AttackOutcome {
        perturbation: r_tot,
        adversarial_image: x_i,
        original_label: original,
        adversarial_label,
        outer_iterations: records.len(),
        per_iteration: records,
        status,
        inner_iterations: inner,
        clip_iterations: clip_total,
    })
}

fn step(net: &Network, x_i: &Tensor, original: usize, cfg: &AttackConfig) -> Result<Step, AttackError> {
    let df = deepfool::run(net, x_i, cfg.candidates, cfg.deepfool_overshoot, cfg.max_deepfool_iters)?;
    let (w, gap) = normal_and_gap(net, &df.x_p, original, df.new_label)?;
    // with a margin, the anchor is the first-order boundary point (DeepFool's
    // endpoint moved back by the remaining logit gap) pushed `margin` past it
    let mut anchor = df.x_p.clone();
    if let Some(margin) = cfg.boundary_margin {
        let norm = w.norm_l2();
        anchor.axpy((margin - gap / norm) / norm, &w)?;
    }
    let projection = project(x_i, &anchor, &w, &cfg.kernel, cfg.orthogonality_floor)?;
    let mut r = projection.r.scale(1.0 + cfg.overshoot);
    let mut clip_iterations = 0;
    if cfg.clip_enabled {
        let clipped = smooth_clip(x_i, &r, &cfg.kernel, cfg.clip_step, cfg.max_clip_iters)?;
        r = clipped.r;
        clip_iterations = clipped.iterations;
    }
    Ok(Step {
        r,
        deepfool_iterations: df.iterations,
        clip_iterations,
    })
}
