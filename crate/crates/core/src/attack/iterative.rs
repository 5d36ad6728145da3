use super::clip::hard_clip;
use super::{check_unit_range, AttackError, AttackOutcome, AttackStatus, IterationRecord};
use crate::conv::{convolve2d, convolve2d_adjoint};
use crate::kernel::SmoothingKernel;
use crate::metrics::roughness;
use crate::net::{argmax, cross_entropy, Network};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct IsConfig {
    /// Weight of the roughness penalty.
    pub lambda_s: f64,
    pub iters: usize,
    /// Initial learning rate.
    pub lr0: f64,
    /// Learning-rate factor applied every `decay_every` steps.
    pub decay: f64,
    pub decay_every: usize,
    pub beta1: f64,
    pub beta2: f64,
    /// Kept far below the input gradients of a saturated softmax, which
    /// reach 1e-13 per pixel; a larger value shrinks those steps to nothing.
    pub adam_eps: f64,
}

impl Default for IsConfig {
    fn default() -> Self {
        Self {
            lambda_s: 0.1,
            iters: 1000,
            lr0: 1e-3,
            decay: 0.5,
            decay_every: 100,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-30,
        }
    }
}

impl IsConfig {
    pub fn validate(&self) -> Result<(), AttackError> {
        let ok = self.lambda_s >= 0.0
            && self.lambda_s.is_finite()
            && self.lr0 > 0.0
            && self.lr0.is_finite()
            && self.decay > 0.0
            && self.decay <= 1.0
            && self.decay_every > 0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.adam_eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(AttackError::InvalidConfig(format!("invalid IS configuration {self:?}")))
        }
    }

    fn learning_rate(&self, step: usize) -> f64 {
        self.lr0 * self.decay.powi((step / self.decay_every) as i32)
    }
}

/// Penalty baseline: minimizes `−CE(f(x + r), label) + λ_s·Ω(r; h)` with
/// Adam under a step-decayed learning rate, truncating `x + r` to `[0, 1]`
/// after every step. Returns the first iterate whose prediction differs
/// from `label`.
pub fn iterative_smooth_baseline(
    net: &Network,
    x: &Tensor,
    label: usize,
    h: &SmoothingKernel,
    cfg: &IsConfig,
) -> Result<AttackOutcome, AttackError> {
    cfg.validate()?;
    check_unit_range(x)?;
    net.check_input(x)?;
    net.check_class(label)?;
    let original_label = net.predict(x)?;
    let n = x.len();
    let mut r = Tensor::zeros(x.shape());
    let mut m = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut step = 0;
    let (status, adversarial_label) = loop {
        let x_adv = x.add(&r)?;
        let trace = net.trace(&x_adv)?;
        let predicted = argmax(trace.logits());
        if predicted != label {
            break (AttackStatus::Success, predicted);
        }
        if step >= cfg.iters {
            break (AttackStatus::MaxIters, predicted);
        }
        let (_, dlogits) = cross_entropy(trace.logits(), label);
        let ce_grad = trace.seed_gradient(&dlogits);
        let penalty_grad = if cfg.lambda_s > 0.0 && !h.is_identity() {
            // ∇Ω = 2 (I − H)ᵀ (I − H) r
            let residual = r.sub(&convolve2d(&r, h)?)?;
            let back = residual.sub(&convolve2d_adjoint(&residual, h)?)?;
            Some(back.scale(2.0 * cfg.lambda_s))
        } else {
            None
        };
        let t = (step + 1) as i32;
        let lr = cfg.learning_rate(step);
        let correction1 = 1.0 - cfg.beta1.powi(t);
        let correction2 = 1.0 - cfg.beta2.powi(t);
        let rs = r.data_mut();
        for i in 0..n {
            let mut g = -ce_grad.data()[i];
            if let Some(p) = &penalty_grad {
                g += p.data()[i];
            }
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = m[i] / correction1;
            let v_hat = v[i] / correction2;
            rs[i] -= lr * m_hat / (v_hat.sqrt() + cfg.adam_eps);
        }
        r = hard_clip(x, &r)?;
        step += 1;
    };
    let per_iteration = if step == 0 {
        Vec::new()
    } else {
        vec![IterationRecord {
            roughness: roughness(&r, h)?,
            step: r.clone(),
        }]
    };
    Ok(AttackOutcome {
        adversarial_image: x.add(&r)?,
        perturbation: r,
        original_label,
        adversarial_label,
        outer_iterations: per_iteration.len(),
        per_iteration,
        status,
        inner_iterations: step,
        clip_iterations: 0,
    })
}
