//! Flat experiment configuration. Every key is also a command-line flag
//! (`sigma_g_px` becomes `--sigma-g-px`); flags override the file, which
//! overrides the defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use smoothfool::attack::{AttackConfig, IsConfig};
use smoothfool::universal::UapConfig;
use smoothfool::{KernelKind, SmoothingKernel};

use crate::error::CliError;

/// Environment variable naming the default output root.
pub const OUT_DIR_ENV: &str = "SMOOTHFOOL_OUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Smoothfool,
    Deepfool,
    Is,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub mnist_dir: PathBuf,
    pub split: Split,
    pub first_index: usize,
    pub samples: usize,
    /// Draw `samples` random indices with this seed instead of a prefix.
    pub sample_seed: Option<u64>,

    pub fixture: String,
    pub model_path: Option<PathBuf>,
    pub fixture_cache_dir: PathBuf,
    pub target_fixture: String,
    pub target_model_path: Option<PathBuf>,

    /// Layer descriptor for `train` when no fixture recipe is wanted.
    pub architecture: Option<String>,
    pub epochs: Option<usize>,
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub momentum: Option<f64>,
    pub init_seed: Option<u64>,

    pub method: Method,
    pub sigma_g_px: f64,
    /// Explicit kernel such as `uniform:5`; replaces `sigma_g_px`.
    pub kernel: Option<String>,
    pub clip_step: f64,
    pub clip_enabled: bool,
    pub overshoot: f64,
    pub deepfool_overshoot: f64,
    pub boundary_margin_l2: Option<f64>,
    pub candidates: usize,
    pub max_outer_iters: usize,
    pub max_deepfool_iters: usize,
    pub max_clip_iters: usize,
    pub orthogonality_floor: f64,

    pub sigma_h_px: f64,
    pub sigmas_px: Vec<f64>,
    pub a_levels_pct: Vec<f64>,

    pub lambda_s: f64,
    pub is_iters: usize,
    pub is_learning_rate: f64,
    pub is_decay: f64,
    pub is_decay_every: usize,

    pub xi_linf: f64,
    pub tau: f64,
    pub uap_clip_step: f64,
    pub uap_max_clip_iters: usize,
    pub uap_max_passes: usize,

    pub linf_budget_255: f64,

    /// Output of an earlier `attack-batch` run, read by `metrics`.
    pub input_dir: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub save_perturbations: bool,
    pub seed: u64,
    pub workers: usize,
}

impl Default for Config {
    fn default() -> Self {
        let attack = AttackConfig::default();
        let is = IsConfig::default();
        let uap = UapConfig::default();
        Self {
            mnist_dir: PathBuf::from("data/mnist"),
            split: Split::Test,
            first_index: 0,
            samples: 100,
            sample_seed: None,
            fixture: "fc2".into(),
            model_path: None,
            fixture_cache_dir: PathBuf::from("data/fixtures"),
            target_fixture: "lenet".into(),
            target_model_path: None,
            architecture: None,
            epochs: None,
            learning_rate: None,
            batch_size: None,
            momentum: None,
            init_seed: None,
            method: Method::Smoothfool,
            sigma_g_px: 2.0,
            kernel: None,
            clip_step: attack.clip_step,
            clip_enabled: attack.clip_enabled,
            overshoot: attack.overshoot,
            deepfool_overshoot: attack.deepfool_overshoot,
            boundary_margin_l2: attack.boundary_margin,
            candidates: attack.candidates,
            max_outer_iters: attack.max_outer_iters,
            max_deepfool_iters: attack.max_deepfool_iters,
            max_clip_iters: attack.max_clip_iters,
            orthogonality_floor: attack.orthogonality_floor,
            sigma_h_px: 1.0,
            sigmas_px: vec![0.5, 1.0, 2.0, 4.0, 8.0],
            a_levels_pct: vec![100.0, 90.0],
            lambda_s: is.lambda_s,
            is_iters: is.iters,
            is_learning_rate: is.lr0,
            is_decay: is.decay,
            is_decay_every: is.decay_every,
            xi_linf: uap.xi,
            tau: uap.tau,
            uap_clip_step: uap.clip_eps,
            uap_max_clip_iters: uap.max_clip_iters,
            uap_max_passes: uap.max_passes,
            linf_budget_255: 16.0,
            input_dir: None,
            output_dir: None,
            save_perturbations: true,
            seed: 0,
            workers: 1,
        }
    }
}

/// Every configuration key with its flag help text.
pub const KEYS: &[(&str, &str)] = &[
    ("mnist_dir", "directory holding the MNIST IDX files"),
    ("split", "dataset split: test or train"),
    ("first_index", "first sample index of the selection"),
    ("samples", "number of samples to process"),
    ("sample_seed", "pick random samples with this seed instead of a prefix"),
    ("fixture", "fixture recipe of the model: fc2 or lenet"),
    ("model_path", "weights file (SFW1) overriding the fixture"),
    ("fixture_cache_dir", "cache directory of trained fixtures"),
    ("target_fixture", "fixture recipe of the transfer target"),
    ("target_model_path", "weights file of the transfer target"),
    ("architecture", "layer descriptor to train instead of a fixture recipe"),
    ("epochs", "training epochs"),
    ("learning_rate", "training learning rate"),
    ("batch_size", "training mini-batch size"),
    ("momentum", "training momentum"),
    ("init_seed", "seed of the weight initialization"),
    ("method", "attack of attack-batch: smoothfool, deepfool or is"),
    ("sigma_g_px", "standard deviation of the gaussian smoothing kernel g, in pixels"),
    ("kernel", "explicit smoothing kernel, e.g. uniform:5, linear:5, gaussian:2, identity"),
    ("clip_step", "SmoothClip step size"),
    ("clip_enabled", "repair the range with SmoothClip"),
    ("overshoot", "inflation of the projection scale"),
    ("deepfool_overshoot", "overshoot of the inner DeepFool runs"),
    ("boundary_margin_l2", "anchor at the linearized boundary plus this l2 margin"),
    ("candidates", "competitor classes considered by DeepFool"),
    ("max_outer_iters", "outer iteration cap"),
    ("max_deepfool_iters", "DeepFool iteration cap"),
    ("max_clip_iters", "SmoothClip iteration cap"),
    ("orthogonality_floor", "minimum cosine between w and the smoothed normal"),
    ("sigma_h_px", "standard deviation of the roughness kernel h, in pixels"),
    ("sigmas_px", "sigma_g values of a sweep"),
    ("a_levels_pct", "fooling-rate levels reported by a sweep, in percent"),
    ("lambda_s", "roughness weight of the iterative smooth baseline"),
    ("is_iters", "iterations of the iterative smooth baseline"),
    ("is_learning_rate", "initial learning rate of the iterative smooth baseline"),
    ("is_decay", "learning-rate decay factor of the iterative smooth baseline"),
    ("is_decay_every", "iterations between learning-rate decays"),
    ("xi_linf", "l-infinity radius of the universal perturbation, pixel units"),
    ("tau", "target fooling fraction of the universal perturbation"),
    ("uap_clip_step", "SmoothClip step of the ball confinement"),
    ("uap_max_clip_iters", "SmoothClip cap of the ball confinement"),
    ("uap_max_passes", "passes over the data of the universal perturbation"),
    ("linf_budget_255", "l-infinity transfer budget on the 0-255 scale"),
    ("input_dir", "attack-batch output read by metrics"),
    ("output_dir", "output directory (default: $SMOOTHFOOL_OUT_DIR/<command> or runs/<command>)"),
    ("save_perturbations", "store each perturbation of attack-batch as an SFT1 tensor"),
    ("seed", "seed of randomized steps"),
    ("workers", "worker threads of batch commands"),
];

impl Config {
    /// Reads a TOML file of flat keys.
    pub fn from_file(path: &Path) -> Result<toml::Table, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        text.parse::<toml::Table>()
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Builds a config from a table of keys on top of the defaults.
    pub fn from_table(mut table: toml::Table) -> Result<Config, CliError> {
        let defaults = toml::Table::try_from(Config::default()).expect("defaults serialize");
        for (key, value) in table.iter_mut() {
            // `sigma_g_px = 3` means 3.0
            if let (Some(toml::Value::Float(_)), toml::Value::Integer(i)) = (defaults.get(key), &*value) {
                *value = toml::Value::Float(*i as f64);
            }
            if let (Some(toml::Value::Array(d)), toml::Value::Array(items)) = (defaults.get(key), &mut *value) {
                if d.first().is_some_and(toml::Value::is_float) {
                    for item in items.iter_mut() {
                        if let toml::Value::Integer(i) = item {
                            *item = toml::Value::Float(*i as f64);
                        }
                    }
                }
            }
            if FLOAT_OPTIONS.contains(&key.as_str()) {
                if let toml::Value::Integer(i) = value {
                    *value = toml::Value::Float(*i as f64);
                }
            }
        }
        let cfg: Config = table.try_into().map_err(|e: toml::de::Error| CliError::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.samples == 0 {
            return bad("samples must be positive".into());
        }
        if self.workers == 0 {
            return bad("workers must be positive".into());
        }
        if !(self.sigma_h_px > 0.0) {
            return bad(format!("sigma_h_px must be positive, got {}", self.sigma_h_px));
        }
        if self.kernel.is_none() && !(self.sigma_g_px > self.sigma_h_px) {
            return bad(format!(
                "sigma_g_px ({}) must exceed sigma_h_px ({}): g has to be smoother than h",
                self.sigma_g_px, self.sigma_h_px
            ));
        }
        if let Some(k) = &self.kernel {
            let kernel: SmoothingKernel = k.parse().map_err(|e| CliError::Config(format!("kernel: {e}")))?;
            if let (KernelKind::Gaussian, Some(s)) = (kernel.kind(), kernel.sigma()) {
                if !(s > self.sigma_h_px) {
                    return bad(format!("kernel sigma ({s}) must exceed sigma_h_px ({})", self.sigma_h_px));
                }
            }
        }
        if self.sigmas_px.is_empty() || self.sigmas_px.windows(2).any(|w| w[1] <= w[0]) || self.sigmas_px[0] <= 0.0 {
            return bad("sigmas_px must be positive and strictly increasing".into());
        }
        if self.a_levels_pct.iter().any(|a| !(0.0..=100.0).contains(a)) {
            return bad("a_levels_pct must lie in [0, 100]".into());
        }
        if !(self.linf_budget_255 > 0.0 && self.linf_budget_255 <= 255.0) {
            return bad(format!("linf_budget_255 must lie in (0, 255], got {}", self.linf_budget_255));
        }
        self.attack_config()?;
        self.is_config().validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.uap_config()?;
        Ok(())
    }

    pub fn kernel(&self) -> Result<SmoothingKernel, CliError> {
        match &self.kernel {
            Some(k) => k.parse().map_err(|e| CliError::Config(format!("kernel: {e}"))),
            None => SmoothingKernel::gaussian(self.sigma_g_px).map_err(|e| CliError::Config(format!("sigma_g_px: {e}"))),
        }
    }

    pub fn roughness_kernel(&self) -> Result<SmoothingKernel, CliError> {
        SmoothingKernel::gaussian(self.sigma_h_px).map_err(|e| CliError::Config(format!("sigma_h_px: {e}")))
    }

    pub fn attack_config(&self) -> Result<AttackConfig, CliError> {
        let cfg = AttackConfig {
            kernel: self.kernel()?,
            roughness_kernel: self.roughness_kernel()?,
            clip_step: self.clip_step,
            clip_enabled: self.clip_enabled,
            overshoot: self.overshoot,
            deepfool_overshoot: self.deepfool_overshoot,
            boundary_margin: self.boundary_margin_l2,
            candidates: self.candidates,
            max_outer_iters: self.max_outer_iters,
            max_deepfool_iters: self.max_deepfool_iters,
            max_clip_iters: self.max_clip_iters,
            orthogonality_floor: self.orthogonality_floor,
        };
        cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn is_config(&self) -> IsConfig {
        IsConfig {
            lambda_s: self.lambda_s,
            iters: self.is_iters,
            lr0: self.is_learning_rate,
            decay: self.is_decay,
            decay_every: self.is_decay_every,
            ..IsConfig::default()
        }
    }

    pub fn uap_config(&self) -> Result<UapConfig, CliError> {
        let attack = self.attack_config()?;
        let cfg = UapConfig {
            xi: self.xi_linf,
            tau: self.tau,
            clip_eps: self.uap_clip_step,
            max_clip_iters: self.uap_max_clip_iters,
            kernel: attack.kernel.clone(),
            max_passes: self.uap_max_passes,
            seed: self.seed,
            attack,
        };
        cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    /// Explicit `output_dir`, else `$SMOOTHFOOL_OUT_DIR/<command>`, else
    /// `runs/<command>`.
    pub fn resolve_output_dir(&self, command: &str) -> PathBuf {
        match &self.output_dir {
            Some(dir) => dir.clone(),
            None => match std::env::var_os(OUT_DIR_ENV) {
                Some(root) => PathBuf::from(root).join(command),
                None => PathBuf::from("runs").join(command),
            },
        }
    }
}

/// Optional keys holding reals, which have no default value to infer from.
const FLOAT_OPTIONS: &[&str] = &["learning_rate", "momentum", "boundary_margin_l2"];

/// Parses a flag value as a TOML value, falling back to a plain string.
pub fn parse_flag_value(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("single key"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_default_key_is_listed() {
        let table = toml::Table::try_from(Config::default()).unwrap();
        for key in table.keys() {
            assert!(KEYS.iter().any(|(k, _)| k == key), "{key} missing from KEYS");
        }
    }

    #[test]
    fn every_listed_key_is_accepted() {
        let samples: Vec<(&str, toml::Value)> = vec![
            ("sample_seed", 3.into()),
            ("model_path", "m.sfw".into()),
            ("target_model_path", "t.sfw".into()),
            ("architecture", "input:1x2x2;flatten;dense:4:2".into()),
            ("epochs", 1.into()),
            ("learning_rate", 0.1.into()),
            ("batch_size", 8.into()),
            ("momentum", 0.5.into()),
            ("init_seed", 1.into()),
            ("kernel", "uniform:5".into()),
            ("boundary_margin_l2", 0.into()),
            ("input_dir", "runs/x".into()),
            ("output_dir", "runs/y".into()),
        ];
        let defaults = toml::Table::try_from(Config::default()).unwrap();
        for (key, _) in KEYS {
            let mut table = toml::Table::new();
            let value = match defaults.get(*key) {
                Some(v) => v.clone(),
                None => samples.iter().find(|(k, _)| k == key).expect("sample value").1.clone(),
            };
            table.insert(key.to_string(), value);
            Config::from_table(table).unwrap_or_else(|e| panic!("{key}: {e}"));
        }
    }

    #[test]
    fn integers_coerce_to_reals() {
        let mut table = toml::Table::new();
        table.insert("sigma_g_px".into(), 3.into());
        table.insert("sigmas_px".into(), toml::Value::Array(vec![1.into(), 2.5.into()]));
        let cfg = Config::from_table(table).unwrap();
        assert_eq!(cfg.sigma_g_px, 3.0);
        assert_eq!(cfg.sigmas_px, vec![1.0, 2.5]);
    }

    #[test]
    fn smoothing_must_exceed_roughness_scale() {
        let mut table = toml::Table::new();
        table.insert("sigma_g_px".into(), 1.0.into());
        table.insert("sigma_h_px".into(), 1.0.into());
        assert!(matches!(Config::from_table(table), Err(CliError::Config(_))));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut table = toml::Table::new();
        table.insert("sigma_g".into(), 2.0.into());
        assert!(Config::from_table(table).is_err());
    }

    #[test]
    fn flag_values_parse_as_toml() {
        assert_eq!(parse_flag_value("3"), toml::Value::Integer(3));
        assert_eq!(parse_flag_value("[1, 2]"), toml::Value::Array(vec![1.into(), 2.into()]));
        assert_eq!(parse_flag_value("true"), toml::Value::Boolean(true));
        assert_eq!(parse_flag_value("data/mnist"), toml::Value::String("data/mnist".into()));
        assert_eq!(parse_flag_value("uniform:5"), toml::Value::String("uniform:5".into()));
    }
}
