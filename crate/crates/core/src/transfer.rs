//! Black-box transfer: perturbations found on a source network, rescaled
//! to an l∞ budget, evaluated on a target network.

use serde::{Deserialize, Serialize};

use crate::attack::{smoothfool, AttackConfig, AttackError};
use crate::net::{LabeledDataset, Network};
use crate::tensor::Tensor;

/// `r` scaled so that `‖r‖∞ = budget` (zero stays zero).
pub fn rescale_linf(r: &Tensor, budget: f64) -> Tensor {
    let peak = r.norm_linf();
    if peak == 0.0 {
        return r.clone();
    }
    r.scale(budget / peak)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    /// Samples both networks classify correctly.
    pub eligible: usize,
    /// Eligible samples the attack fooled on the source network.
    pub source_fooled: usize,
    /// Of those, samples the target misclassifies after rescaling.
    pub transferred: usize,
    /// `transferred / source_fooled` (0 when nothing was fooled).
    pub rate: f64,
    pub linf_budget: f64,
}

/// Attacks `source` on each sample, rescales successful perturbations to
/// `linf_budget` and checks whether `target` misclassifies `clamp(x + r)`.
pub fn transfer_rate(
    source: &Network,
    target: &Network,
    data: &LabeledDataset,
    cfg: &AttackConfig,
    linf_budget: f64,
) -> Result<TransferReport, AttackError> {
    if !(linf_budget > 0.0 && linf_budget <= 1.0) {
        return Err(AttackError::InvalidConfig(format!("l∞ budget must lie in (0, 1], got {linf_budget}")));
    }
    let (mut eligible, mut fooled, mut transferred) = (0, 0, 0);
    for (x, label) in data.iter() {
        if source.predict(x)? != label || target.predict(x)? != label {
            continue;
        }
        eligible += 1;
        let outcome = smoothfool(source, x, cfg)?;
        if !outcome.is_success() {
            continue;
        }
        fooled += 1;
        let scaled = rescale_linf(&outcome.perturbation, linf_budget);
        let x_adv = x.add(&scaled)?.clamp(0.0, 1.0);
        if target.predict(&x_adv)? != label {
            transferred += 1;
        }
    }
    Ok(TransferReport {
        eligible,
        source_fooled: fooled,
        transferred,
        rate: if fooled == 0 { 0.0 } else { transferred as f64 / fooled as f64 },
        linf_budget,
    })
}
