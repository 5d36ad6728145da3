//! Per-sample attack fan-out and the raw outcome records every table is
//! derived from.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use smoothfool::attack::{deepfool_attack, iterative_smooth_baseline, smoothfool, AttackConfig, AttackOutcome, AttackStatus, IsConfig};
use smoothfool::metrics::{normalized_roughness, roughness};
use smoothfool::{LabeledDataset, Network, SmoothingKernel, Tensor};

use crate::config::Method;
use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeRecord {
    pub index: usize,
    pub label: usize,
    pub clean_prediction: usize,
    pub correctly_classified: bool,
    /// `None` for misclassified samples, which are not attacked.
    pub status: Option<AttackStatus>,
    pub adversarial_label: Option<usize>,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub clip_iterations: usize,
    pub l2: Option<f64>,
    pub linf: Option<f64>,
    /// Roughness under the configured `h`.
    pub omega: Option<f64>,
    pub omega_n: Option<f64>,
    /// Stored perturbation, relative to the run directory.
    pub perturbation_file: Option<String>,
}

impl OutcomeRecord {
    pub fn fooled(&self) -> bool {
        self.status == Some(AttackStatus::Success)
    }
}

pub struct Attacker<'a> {
    pub net: &'a Network,
    pub method: Method,
    pub attack: AttackConfig,
    pub is: IsConfig,
    pub h: SmoothingKernel,
}

impl Attacker<'_> {
    pub fn run(&self, x: &Tensor, label: usize) -> Result<AttackOutcome, CliError> {
        Ok(match self.method {
            Method::Smoothfool => smoothfool(self.net, x, &self.attack)?,
            Method::Deepfool => deepfool_attack(self.net, x, &self.attack)?,
            Method::Is => iterative_smooth_baseline(self.net, x, label, &self.h, &self.is)?,
        })
    }

    /// Attacks each selected sample the network classifies correctly.
    ///
    /// Results come back in `indices` order whatever the thread count.
    pub fn run_all(
        &self,
        data: &LabeledDataset,
        indices: &[usize],
        pool: &rayon::ThreadPool,
    ) -> Result<Vec<(OutcomeRecord, Option<Tensor>)>, CliError> {
        pool.install(|| indices.par_iter().map(|&i| self.one(data, i)).collect())
    }

    fn one(&self, data: &LabeledDataset, index: usize) -> Result<(OutcomeRecord, Option<Tensor>), CliError> {
        let (x, label) = (data.image(index), data.label(index));
        let clean = self.net.predict(x)?;
        let mut record = OutcomeRecord {
            index,
            label,
            clean_prediction: clean,
            correctly_classified: clean == label,
            status: None,
            adversarial_label: None,
            outer_iterations: 0,
            inner_iterations: 0,
            clip_iterations: 0,
            l2: None,
            linf: None,
            omega: None,
            omega_n: None,
            perturbation_file: None,
        };
        if clean != label {
            return Ok((record, None));
        }
        let outcome = self.run(x, label)?;
        record.status = Some(outcome.status);
        record.adversarial_label = Some(outcome.adversarial_label);
        record.outer_iterations = outcome.outer_iterations;
        record.inner_iterations = outcome.inner_iterations;
        record.clip_iterations = outcome.clip_iterations;
        let r = outcome.perturbation;
        if r.norm_sq() > 0.0 {
            record.l2 = Some(r.norm_l2());
            record.linf = Some(r.norm_linf());
            record.omega = Some(roughness(&r, &self.h)?);
            record.omega_n = Some(normalized_roughness(&r, &self.h)?);
        }
        log::debug!("sample {index}: {}", outcome.status);
        Ok((record, Some(r)))
    }
}

pub fn thread_pool(workers: usize) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Config(format!("workers: {e}")))
}
