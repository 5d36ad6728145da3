use super::{check_unit_range, AttackConfig, AttackError, AttackOutcome, AttackStatus, IterationRecord};
use crate::metrics::roughness;
use crate::net::{argmax, Network};
use crate::tensor::Tensor;

/// Extra length added to every DeepFool step so that iterates cross the
/// linearized boundary instead of landing on it.
const MIN_STEP: f64 = 1e-4;

/// Normals shorter than this are treated as degenerate.
pub(crate) const NORMAL_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct DeepFoolResult {
    /// `x + (1 + overshoot) * r_p`.
    pub x_p: Tensor,
    /// Accumulated steps without the overshoot factor.
    pub r_p: Tensor,
    pub original_label: usize,
    pub new_label: usize,
    pub iterations: usize,
}

/// l2 DeepFool over the `candidates` highest-scoring classes at `x`.
pub fn deepfool_l2(
    net: &Network,
    x: &Tensor,
    candidates: usize,
    overshoot: f64,
    max_iters: usize,
) -> Result<DeepFoolResult, AttackError> {
    check_unit_range(x)?;
    if candidates < 2 {
        return Err(AttackError::InvalidConfig(format!("candidates must be at least 2, got {candidates}")));
    }
    if !(overshoot >= 0.0 && overshoot.is_finite()) {
        return Err(AttackError::InvalidConfig(format!("overshoot must be nonnegative, got {overshoot}")));
    }
    run(net, x, candidates, overshoot, max_iters)
}

pub(crate) fn run(
    net: &Network,
    x: &Tensor,
    candidates: usize,
    overshoot: f64,
    max_iters: usize,
) -> Result<DeepFoolResult, AttackError> {
    let trace = net.trace(x)?;
    let logits = trace.logits();
    let original = argmax(logits);
    let mut order: Vec<usize> = (0..logits.len()).collect();
    // stable sort keeps the lowest index first among equal logits
    order.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]));
    order.truncate(candidates.min(logits.len()));
    debug_assert_eq!(order[0], original);
    drop(trace);

    let mut r_tot = Tensor::zeros(x.shape());
    let mut x_i = x.clone();
    let mut iterations = 0;
    loop {
        let trace = net.trace(&x_i)?;
        let logits = trace.logits();
        let label = argmax(logits);
        if label != original {
            return Ok(DeepFoolResult {
                x_p: x_i,
                r_p: r_tot,
                original_label: original,
                new_label: label,
                iterations,
            });
        }
        if iterations >= max_iters {
            return Err(AttackError::MaxIters { iterations });
        }
        let grads = trace.logit_gradients(&order);
        let mut best: Option<(f64, Tensor)> = None;
        for (j, &k) in order.iter().enumerate().skip(1) {
            let w = grads[j].sub(&grads[0])?;
            let norm = w.norm_l2();
            if norm < NORMAL_FLOOR {
                continue;
            }
            let distance = (logits[k] - logits[original]).abs() / norm;
            if best.as_ref().is_none_or(|(d, _)| distance < *d) {
                best = Some((distance, w.scale(1.0 / norm)));
            }
        }
        let Some((distance, direction)) = best else {
            return Err(AttackError::Orthogonal(
                "every candidate gradient difference vanishes".into(),
            ));
        };
        r_tot.axpy(distance + MIN_STEP, &direction)?;
        x_i = x.clone();
        x_i.axpy(1.0 + overshoot, &r_tot)?;
        iterations += 1;
    }
}

/// `∇f_new(x_p) − ∇f_original(x_p)`.
pub fn boundary_normal(net: &Network, x_p: &Tensor, original_label: usize, new_label: usize) -> Result<Tensor, AttackError> {
    Ok(normal_and_gap(net, x_p, original_label, new_label)?.0)
}

/// The boundary normal together with `f_new(x_p) − f_original(x_p)`.
pub(crate) fn normal_and_gap(
    net: &Network,
    x_p: &Tensor,
    original_label: usize,
    new_label: usize,
) -> Result<(Tensor, f64), AttackError> {
    if original_label == new_label {
        return Err(AttackError::InvalidConfig(format!(
            "boundary normal needs two different labels, got {new_label} twice"
        )));
    }
    net.check_class(original_label)?;
    net.check_class(new_label)?;
    let trace = net.trace(x_p)?;
    let gap = trace.logits()[new_label] - trace.logits()[original_label];
    let grads = trace.logit_gradients(&[new_label, original_label]);
    let w = grads[0].sub(&grads[1])?;
    if w.norm_l2() < NORMAL_FLOOR {
        return Err(AttackError::Orthogonal(format!(
            "degenerate boundary normal between classes {original_label} and {new_label}"
        )));
    }
    Ok((w, gap))
}

/// DeepFool packaged as an outcome; the perturbation is the overshot step
/// `x_p − x` and is not range-repaired.
pub fn deepfool_attack(net: &Network, x: &Tensor, cfg: &AttackConfig) -> Result<AttackOutcome, AttackError> {
    cfg.validate()?;
    let original_label = net.predict(x)?;
    match deepfool_l2(net, x, cfg.candidates, cfg.deepfool_overshoot, cfg.max_deepfool_iters) {
        Ok(df) => {
            let perturbation = df.x_p.sub(x)?;
            let record = IterationRecord {
                roughness: roughness(&perturbation, &cfg.roughness_kernel)?,
                step: perturbation.clone(),
            };
            Ok(AttackOutcome {
                adversarial_image: df.x_p,
                perturbation,
                original_label,
                adversarial_label: df.new_label,
                outer_iterations: 1,
                per_iteration: vec![record],
                status: AttackStatus::Success,
                inner_iterations: df.iterations,
                clip_iterations: 0,
            })
        }
        Err(e) => match e.status() {
            Some(status) => Ok(AttackOutcome {
                perturbation: Tensor::zeros(x.shape()),
                adversarial_image: x.clone(),
                original_label,
                adversarial_label: original_label,
                outer_iterations: 0,
                per_iteration: Vec::new(),
                status,
                inner_iterations: match e {
                    AttackError::MaxIters { iterations } => iterations,
                    _ => 0,
                },
                clip_iterations: 0,
            }),
            None => Err(e),
        },
    }
}
