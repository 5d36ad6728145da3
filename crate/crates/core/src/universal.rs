//! Smooth universal perturbations: one `v`, confined to the l∞ ball of
//! radius `xi`, that changes the prediction of most samples.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attack::{smooth_clip, smoothfool, AttackConfig, AttackError};
use crate::kernel::SmoothingKernel;
use crate::net::{NetError, Network};
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum UapError {
    #[error("invalid UAP configuration: {0}")]
    InvalidConfig(String),
    #[error("no samples")]
    Empty,
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Attack(#[from] AttackError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct UapConfig {
    /// l∞ radius in pixel units.
    pub xi: f64,
    /// Target fooling fraction.
    pub tau: f64,
    /// SmoothClip step in the normalized `[0, 1]` ball coordinates.
    pub clip_eps: f64,
    pub max_clip_iters: usize,
    /// Kernel of the ball confinement.
    pub kernel: SmoothingKernel,
    pub max_passes: usize,
    /// Seed of the per-pass sample order.
    pub seed: u64,
    pub attack: AttackConfig,
}

impl Default for UapConfig {
    fn default() -> Self {
        let attack = AttackConfig::default();
        Self {
            xi: 10.0 / 255.0,
            tau: 0.9,
            clip_eps: 0.1,
            max_clip_iters: 100_000,
            kernel: attack.kernel.clone(),
            max_passes: 10,
            seed: 0,
            attack,
        }
    }
}

impl UapConfig {
    pub fn validate(&self) -> Result<(), UapError> {
        if !(self.xi > 0.0 && self.xi <= 1.0) {
            return Err(UapError::InvalidConfig(format!("xi must lie in (0, 1], got {}", self.xi)));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(UapError::InvalidConfig(format!("tau must lie in (0, 1], got {}", self.tau)));
        }
        if !(self.clip_eps > 0.0) || self.max_clip_iters == 0 || self.max_passes == 0 {
            return Err(UapError::InvalidConfig(
                "clip_eps, max_clip_iters and max_passes must be positive".into(),
            ));
        }
        self.attack.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UapDiagnostics {
    pub attacks_run: usize,
    /// Samples whose inner attack did not succeed.
    pub attack_failures: usize,
    /// Updates dropped because the ball confinement did not converge.
    pub clip_failures: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UniversalPerturbation {
    pub v: Tensor,
    pub achieved_rate: f64,
    pub passes: usize,
    /// Fooling fraction after each pass.
    pub per_pass_rates: Vec<f64>,
    pub below_target: bool,
    pub diagnostics: UapDiagnostics,
}

/// Fraction of samples whose prediction on `clamp(x + v)` differs from the
/// prediction on `x`.
pub fn evaluate_uap(net: &Network, v: &Tensor, data: &[Tensor]) -> Result<f64, UapError> {
    if data.is_empty() {
        return Err(UapError::Empty);
    }
    let clean: Vec<usize> = data.iter().map(|x| net.predict(x)).collect::<Result<_, _>>()?;
    rate_against(net, v, data, &clean)
}

fn rate_against(net: &Network, v: &Tensor, data: &[Tensor], clean: &[usize]) -> Result<f64, UapError> {
    let mut changed = 0;
    for (x, &c) in data.iter().zip(clean) {
        if net.predict(&perturbed(x, v)?)? != c {
            changed += 1;
        }
    }
    Ok(changed as f64 / data.len() as f64)
}

fn perturbed(x: &Tensor, v: &Tensor) -> Result<Tensor, TensorError> {
    Ok(x.add(v)?.clamp(0.0, 1.0))
}

/// Accumulates smooth per-sample perturbations into `v`, confining it to
/// the ball after every update by mapping `v → (v/ξ + 1)/2`, smooth
/// clipping against a zero image and mapping back.
///
/// Stops once the fooling fraction reaches `tau` or after `max_passes`;
/// in the latter case the best `v` seen is returned and flagged.
pub fn compute_uap(net: &Network, data: &[Tensor], cfg: &UapConfig) -> Result<UniversalPerturbation, UapError> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(UapError::Empty);
    }
    for x in data {
        net.check_input(x)?;
    }
    let clean: Vec<usize> = data.iter().map(|x| net.predict(x)).collect::<Result<_, _>>()?;
    let shape = data[0].shape().to_vec();
    let zero = Tensor::zeros(&shape);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut v = Tensor::zeros(&shape);
    let mut rate = 0.0;
    let mut best = (rate, v.clone());
    let mut per_pass_rates = Vec::new();
    let mut diagnostics = UapDiagnostics {
        attacks_run: 0,
        attack_failures: 0,
        clip_failures: 0,
    };
    while rate < cfg.tau && per_pass_rates.len() < cfg.max_passes {
        order.shuffle(&mut rng);
        for &i in &order {
            let base = perturbed(&data[i], &v)?;
            if net.predict(&base)? != clean[i] {
                continue;
            }
            diagnostics.attacks_run += 1;
            let outcome = smoothfool(net, &base, &cfg.attack)?;
            if !outcome.is_success() {
                diagnostics.attack_failures += 1;
                continue;
            }
            let candidate = v.add(&outcome.perturbation)?;
            let u = candidate.map(|t| (t / cfg.xi + 1.0) * 0.5);
            match smooth_clip(&zero, &u, &cfg.kernel, cfg.clip_eps, cfg.max_clip_iters) {
                Ok(c) => v = c.r.map(|t| (2.0 * t - 1.0) * cfg.xi),
                Err(AttackError::ClipFailure { .. }) => diagnostics.clip_failures += 1,
                Err(e) => return Err(e.into()),
            }
        }
        rate = rate_against(net, &v, data, &clean)?;
        per_pass_rates.push(rate);
        log::debug!("uap pass {}: rate {rate:.4}", per_pass_rates.len());
        if rate > best.0 || per_pass_rates.len() == 1 {
            best = (rate, v.clone());
        }
    }
    let (achieved_rate, v) = if rate >= cfg.tau { (rate, v) } else { best };
    Ok(UniversalPerturbation {
        v,
        achieved_rate,
        passes: per_pass_rates.len(),
        below_target: achieved_rate < cfg.tau,
        per_pass_rates,
        diagnostics,
    })
}
