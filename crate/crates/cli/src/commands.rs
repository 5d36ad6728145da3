use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use smoothfool::attack::{AttackConfig, AttackStatus};
use smoothfool::data::{load_mnist_idx, mnist_paths};
use smoothfool::fixture::{load_or_train, Recipe};
use smoothfool::metrics::{sigma_at_rate, FoolingReport, RoughnessReport, SigmaAtRate, StatusCounts};
use smoothfool::net::{load_weights, save_weights, write_weights};
use smoothfool::transfer::{transfer_rate, TransferReport};
use smoothfool::universal::compute_uap;
use smoothfool::{LabeledDataset, Network, SmoothingKernel, Tensor};

use crate::batch::{thread_pool, Attacker, OutcomeRecord};
use crate::config::{Config, Method, Split};
use crate::error::CliError;
use crate::export::{export_image, ImageMode};

pub const OUTCOMES_FILE: &str = "outcomes.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub role: String,
    /// Fixture name or weights path.
    pub source: String,
    pub descriptor: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    config: serde_json::Value,
    models: &'a [ModelInfo],
    outputs: &'a [String],
    wall_time_s: f64,
}

/// A command's output directory and the files written to it.
pub struct Run {
    command: &'static str,
    pub cfg: Config,
    pub dir: PathBuf,
    started: Instant,
    outputs: Vec<String>,
    models: Vec<ModelInfo>,
}

impl Run {
    pub fn new(command: &'static str, cfg: Config) -> Result<Self, CliError> {
        let dir = cfg.resolve_output_dir(command);
        fs::create_dir_all(&dir).map_err(|e| CliError::data(dir.display(), e))?;
        Ok(Run {
            command,
            cfg,
            dir,
            started: Instant::now(),
            outputs: Vec::new(),
            models: Vec::new(),
        })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.outputs.push(name.to_string());
        self.dir.join(name)
    }

    fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.path(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| CliError::data(parent.display(), e))?;
        }
        fs::write(&path, bytes).map_err(|e| CliError::data(path.display(), e))
    }

    fn write_json(&mut self, name: &str, value: &impl Serialize) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Numeric(e.to_string()))?;
        text.push('\n');
        self.write_bytes(name, text.as_bytes())
    }

    fn write_jsonl<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<(), CliError> {
        let mut text = String::new();
        for row in rows {
            text.push_str(&serde_json::to_string(row).map_err(|e| CliError::Numeric(e.to_string()))?);
            text.push('\n');
        }
        self.write_bytes(name, text.as_bytes())
    }

    fn write_csv<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<(), CliError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in rows {
            w.serialize(row).map_err(|e| CliError::Numeric(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Numeric(e.to_string()))?;
        self.write_bytes(name, &bytes)
    }

    fn write_tensor(&mut self, name: &str, t: &Tensor) -> Result<(), CliError> {
        let mut bytes = Vec::new();
        t.write_to(&mut bytes)?;
        self.write_bytes(name, &bytes)
    }

    fn write_image(&mut self, name: &str, t: &Tensor, mode: ImageMode) -> Result<(), CliError> {
        let path = self.path(name);
        export_image(t, &path, mode).map_err(|e| CliError::Data(e.to_string()))
    }

    /// Writes the manifest; call last.
    pub fn finish(mut self) -> Result<PathBuf, CliError> {
        let mut config = serde_json::to_value(&self.cfg).map_err(|e| CliError::Numeric(e.to_string()))?;
        // the manifest sits in the output directory, so its own location is
        // not part of the experiment
        if let Some(map) = config.as_object_mut() {
            map.remove("output_dir");
        }
        let outputs = std::mem::take(&mut self.outputs);
        let manifest = Manifest {
            command: self.command,
            version: env!("CARGO_PKG_VERSION"),
            seed: self.cfg.seed,
            config,
            models: &self.models,
            outputs: &outputs,
            wall_time_s: self.started.elapsed().as_secs_f64(),
        };
        let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Numeric(e.to_string()))?;
        text.push('\n');
        let path = self.dir.join(MANIFEST_FILE);
        let mut file = fs::File::create(&path).map_err(|e| CliError::data(path.display(), e))?;
        file.write_all(text.as_bytes()).map_err(|e| CliError::data(path.display(), e))?;
        log::info!("wrote {}", self.dir.display());
        Ok(self.dir)
    }
}

pub fn load_split(cfg: &Config, split: Split) -> Result<LabeledDataset, CliError> {
    let (images, labels) = mnist_paths(&cfg.mnist_dir, split == Split::Train);
    Ok(load_mnist_idx(images, labels)?)
}

fn sha256_hex(net: &Network) -> Result<String, CliError> {
    let mut bytes = Vec::new();
    write_weights(net, &mut bytes)?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

fn load_model(run: &mut Run, role: &str, path: Option<&Path>, fixture: &str) -> Result<Network, CliError> {
    let cfg = &run.cfg;
    let (net, source) = match path {
        Some(p) => (load_weights(p).map_err(|e| CliError::data(p.display(), e))?, p.display().to_string()),
        None => {
            let recipe = Recipe::by_name(fixture)?;
            let net = load_or_train(&recipe, &cfg.mnist_dir, &cfg.fixture_cache_dir, false)?;
            (net, format!("fixture:{fixture}"))
        }
    };
    run.models.push(ModelInfo {
        role: role.to_string(),
        source,
        descriptor: net.descriptor(),
        sha256: sha256_hex(&net)?,
    });
    Ok(net)
}

fn source_model(run: &mut Run) -> Result<Network, CliError> {
    let (path, fixture) = (run.cfg.model_path.clone(), run.cfg.fixture.clone());
    load_model(run, "model", path.as_deref(), &fixture)
}

/// The configured sample indices: a prefix from `first_index`, or a seeded
/// random draw when `sample_seed` is set.
pub fn select(cfg: &Config, len: usize) -> Result<Vec<usize>, CliError> {
    match cfg.sample_seed {
        Some(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Ok(rand::seq::index::sample(&mut rng, len, cfg.samples.min(len)).into_vec())
        }
        None => {
            if cfg.first_index >= len {
                return Err(CliError::Config(format!("first_index {} beyond the {len} samples", cfg.first_index)));
            }
            Ok((cfg.first_index..(cfg.first_index + cfg.samples).min(len)).collect())
        }
    }
}

fn attacker<'a>(cfg: &Config, net: &'a Network, method: Method, attack: AttackConfig) -> Result<Attacker<'a>, CliError> {
    Ok(Attacker {
        net,
        method,
        attack,
        is: cfg.is_config(),
        h: cfg.roughness_kernel()?,
    })
}

#[derive(Debug, Serialize)]
struct TrainSummary {
    descriptor: String,
    recipe: String,
    init_seed: u64,
    epochs: usize,
    learning_rate: f64,
    batch_size: usize,
    momentum: f64,
    seed: u64,
    epoch_losses: Vec<f64>,
    train_accuracy: f64,
    test_accuracy: Option<f64>,
}

pub fn train(cfg: Config) -> Result<PathBuf, CliError> {
    let mut run = Run::new("train", cfg)?;
    let cfg = run.cfg.clone();
    let mut recipe = match &cfg.architecture {
        None => Recipe::by_name(&cfg.fixture)?,
        Some(descriptor) => {
            let (shape, specs) = Network::parse_descriptor(descriptor)?;
            if shape != smoothfool::net::fixtures::MNIST_SHAPE {
                return Err(CliError::Config(format!("architecture input must be 1x28x28, got {shape:?}")));
            }
            Recipe {
                name: "custom",
                specs,
                init_seed: 0,
                train: Default::default(),
            }
        }
    };
    recipe.init_seed = cfg.init_seed.unwrap_or(recipe.init_seed);
    let t = &mut recipe.train;
    t.epochs = cfg.epochs.unwrap_or(t.epochs);
    t.learning_rate = cfg.learning_rate.unwrap_or(t.learning_rate);
    t.batch_size = cfg.batch_size.unwrap_or(t.batch_size);
    t.momentum = cfg.momentum.unwrap_or(t.momentum);
    let train_set = load_split(&cfg, Split::Train)?;
    let test_set = load_split(&cfg, Split::Test)?;
    let (net, report) = recipe.train(&train_set, Some(&test_set))?;
    let path = run.path("model.sfw");
    save_weights(&net, &path).map_err(|e| CliError::data(path.display(), e))?;
    run.models.push(ModelInfo {
        role: "trained".into(),
        source: "model.sfw".into(),
        descriptor: net.descriptor(),
        sha256: sha256_hex(&net)?,
    });
    let summary = TrainSummary {
        descriptor: net.descriptor(),
        recipe: recipe.name.to_string(),
        init_seed: recipe.init_seed,
        epochs: recipe.train.epochs,
        learning_rate: recipe.train.learning_rate,
        batch_size: recipe.train.batch_size,
        momentum: recipe.train.momentum,
        seed: recipe.train.seed,
        epoch_losses: report.epoch_losses,
        train_accuracy: report.train_accuracy,
        test_accuracy: report.test_accuracy,
    };
    run.write_json("train.json", &summary)?;
    run.finish()
}

#[derive(Debug, Serialize)]
struct SingleOutcome {
    #[serde(flatten)]
    record: OutcomeRecord,
    kernel: String,
    step_roughness: Vec<f64>,
}

/// Attacks sample `first_index`; a run that does not fool the network
/// still writes its artifacts, then reports a numeric failure.
pub fn attack(cfg: Config) -> Result<PathBuf, CliError> {
    let mut run = Run::new("attack", cfg)?;
    let cfg = run.cfg.clone();
    let net = source_model(&mut run)?;
    let data = load_split(&cfg, cfg.split)?;
    if cfg.first_index >= data.len() {
        return Err(CliError::Config(format!("first_index {} beyond the {} samples", cfg.first_index, data.len())));
    }
    let attack = cfg.attack_config()?;
    let kernel = attack.kernel.to_string();
    let a = attacker(&cfg, &net, cfg.method, attack)?;
    let (i, x) = (cfg.first_index, data.image(cfg.first_index));
    let outcome = a.run(x, data.label(i))?;
    let r = &outcome.perturbation;
    let mut record = OutcomeRecord {
        index: i,
        label: data.label(i),
        clean_prediction: outcome.original_label,
        correctly_classified: outcome.original_label == data.label(i),
        status: Some(outcome.status),
        adversarial_label: Some(outcome.adversarial_label),
        outer_iterations: outcome.outer_iterations,
        inner_iterations: outcome.inner_iterations,
        clip_iterations: outcome.clip_iterations,
        l2: None,
        linf: None,
        omega: None,
        omega_n: None,
        perturbation_file: Some("r.sft".into()),
    };
    if r.norm_sq() > 0.0 {
        record.l2 = Some(r.norm_l2());
        record.linf = Some(r.norm_linf());
        record.omega = Some(smoothfool::metrics::roughness(r, &a.h)?);
        record.omega_n = Some(smoothfool::metrics::normalized_roughness(r, &a.h)?);
    }
    run.write_image("x.pgm", x, ImageMode::Raw)?;
    run.write_image("x_adv.pgm", &outcome.adversarial_image, ImageMode::Raw)?;
    run.write_image("r.pgm", r, ImageMode::MinMax)?;
    run.write_tensor("r.sft", r)?;
    run.write_json(
        "outcome.json",
        &SingleOutcome {
            record,
            kernel,
            step_roughness: outcome.per_iteration.iter().map(|s| s.roughness).collect(),
        },
    )?;
    let status = outcome.status;
    let dir = run.finish()?;
    if status != AttackStatus::Success {
        return Err(CliError::Numeric(format!("attack ended with status {status} (artifacts in {})", dir.display())));
    }
    Ok(dir)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub method: Method,
    pub kernel: String,
    pub attacked: usize,
    pub status_counts: StatusCounts,
    pub fooling: FoolingReport,
    /// Over fooled samples; absent when nothing was fooled.
    pub roughness: Option<RoughnessReport>,
}

#[derive(Debug, Serialize)]
struct ClassRow {
    class: usize,
    correctly_classified: usize,
    fooled: usize,
    fooling_rate: f64,
}

/// Fooling and roughness aggregates of stored records.
pub fn summarize(
    records: &[OutcomeRecord],
    num_classes: usize,
    method: Method,
    kernel: &str,
    sigma_g: Option<f64>,
    sigma_h: f64,
) -> Result<BatchSummary, CliError> {
    let labels: Vec<usize> = records.iter().map(|r| r.label).collect();
    let correct: Vec<bool> = records.iter().map(|r| r.correctly_classified).collect();
    let fooled: Vec<bool> = records.iter().map(OutcomeRecord::fooled).collect();
    let fooling = FoolingReport::from_flags(&labels, num_classes, &correct, &fooled, sigma_g)?;
    let mut status_counts = StatusCounts::default();
    for s in records.iter().filter_map(|r| r.status) {
        status_counts.record(s);
    }
    let successes: Vec<&OutcomeRecord> = records.iter().filter(|r| r.fooled() && r.l2.is_some()).collect();
    let omegas: Vec<f64> = successes.iter().map(|r| r.omega.expect("set with l2")).collect();
    let l2: Vec<f64> = successes.iter().map(|r| r.l2.expect("filtered")).collect();
    let roughness = if omegas.is_empty() {
        None
    } else {
        Some(RoughnessReport::from_measurements(&omegas, &l2, Some(sigma_h))?)
    };
    Ok(BatchSummary {
        method,
        kernel: kernel.to_string(),
        attacked: records.iter().filter(|r| r.status.is_some()).count(),
        status_counts,
        fooling,
        roughness,
    })
}

fn class_rows(f: &FoolingReport) -> Vec<ClassRow> {
    (0..f.per_class.len())
        .map(|c| ClassRow {
            class: c,
            correctly_classified: f.class_counts[c],
            fooled: f.fooled_counts[c],
            fooling_rate: f.per_class[c],
        })
        .collect()
}

fn sigma_of(kernel: &SmoothingKernel) -> Option<f64> {
    if kernel.is_identity() {
        Some(0.0)
    } else {
        kernel.sigma()
    }
}

pub fn attack_batch(cfg: Config, command: &'static str, method: Method) -> Result<PathBuf, CliError> {
    let mut run = Run::new(command, cfg)?;
    let cfg = run.cfg.clone();
    let net = source_model(&mut run)?;
    let data = load_split(&cfg, cfg.split)?;
    let indices = select(&cfg, data.len())?;
    let attack = cfg.attack_config()?;
    let kernel = attack.kernel.clone();
    let a = attacker(&cfg, &net, method, attack)?;
    let results = a.run_all(&data, &indices, &thread_pool(cfg.workers)?)?;
    let mut records = Vec::with_capacity(results.len());
    for (mut record, r) in results {
        if let (true, Some(r)) = (cfg.save_perturbations && record.status.is_some(), r) {
            let name = format!("perturbations/{:05}.sft", record.index);
            run.write_tensor(&name, &r)?;
            record.perturbation_file = Some(name);
        }
        records.push(record);
    }
    let summary = summarize(&records, data.num_classes(), method, &kernel.to_string(), sigma_of(&kernel), cfg.sigma_h_px)?;
    log::info!(
        "fooled {}/{} correctly classified samples",
        summary.status_counts.success,
        summary.attacked
    );
    run.write_jsonl(OUTCOMES_FILE, &records)?;
    run.write_json("summary.json", &summary)?;
    run.write_csv("per_class.csv", &class_rows(&summary.fooling))?;
    run.finish()
}

/// Recomputes the batch aggregates of `input_dir` under the configured
/// `h`, from the stored records and perturbation tensors.
pub fn metrics(cfg: Config) -> Result<PathBuf, CliError> {
    let input = cfg
        .input_dir
        .clone()
        .ok_or_else(|| CliError::Config("metrics needs input_dir (an attack-batch output directory)".into()))?;
    let mut run = Run::new("metrics", cfg)?;
    let cfg = run.cfg.clone();
    let text = fs::read_to_string(input.join(OUTCOMES_FILE)).map_err(|e| CliError::data(input.join(OUTCOMES_FILE).display(), e))?;
    let mut records: Vec<OutcomeRecord> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let record = serde_json::from_str(line).map_err(|e| CliError::Data(format!("{OUTCOMES_FILE} line {}: {e}", n + 1)))?;
        records.push(record);
    }
    let old: BatchSummary = {
        let path = input.join("summary.json");
        let text = fs::read_to_string(&path).map_err(|e| CliError::data(path.display(), e))?;
        serde_json::from_str(&text).map_err(|e| CliError::data(path.display(), e))?
    };
    let h = cfg.roughness_kernel()?;
    for record in records.iter_mut() {
        if let (Some(file), Some(_)) = (&record.perturbation_file, record.l2) {
            let r = Tensor::load(input.join(file)).map_err(|e| CliError::data(input.join(file).display(), e))?;
            record.omega = Some(smoothfool::metrics::roughness(&r, &h)?);
            record.omega_n = Some(smoothfool::metrics::normalized_roughness(&r, &h)?);
        } else if record.l2.is_some() {
            return Err(CliError::Data(format!(
                "sample {} has no stored perturbation; rerun attack-batch with save_perturbations = true",
                record.index
            )));
        }
    }
    let summary = summarize(
        &records,
        old.fooling.per_class.len(),
        old.method,
        &old.kernel,
        old.fooling.sigma_g,
        cfg.sigma_h_px,
    )?;
    run.write_jsonl(OUTCOMES_FILE, &records)?;
    run.write_json("metrics.json", &summary)?;
    run.write_csv("per_class.csv", &class_rows(&summary.fooling))?;
    let rows = match &summary.roughness {
        Some(r) => vec![
            MetricRow::new("omega_bar", r.omega_bar),
            MetricRow::new("omega_bar_n", r.omega_bar_n),
            MetricRow::new("median_omega_n", r.median_omega_n),
            MetricRow {
                metric: "mean_l2".into(),
                value: r.mean_l2,
                value_x1e3: None,
            },
        ],
        None => Vec::new(),
    };
    run.write_csv("roughness.csv", &rows)?;
    run.finish()
}

#[derive(Debug, Serialize)]
struct MetricRow {
    metric: String,
    value: f64,
    value_x1e3: Option<f64>,
}

impl MetricRow {
    fn new(metric: &str, value: f64) -> Self {
        MetricRow {
            metric: metric.into(),
            value,
            value_x1e3: Some(1e3 * value),
        }
    }
}

#[derive(Debug, Serialize)]
struct SweepRecord<'a> {
    sigma_g_px: f64,
    #[serde(flatten)]
    record: &'a OutcomeRecord,
}

#[derive(Debug, Serialize)]
struct SweepRow {
    sigma_g_px: f64,
    fooling_rate: f64,
    omega_bar_x1e3: Option<f64>,
    omega_bar_n_x1e3: Option<f64>,
    mean_l2: Option<f64>,
    success: usize,
    max_iters: usize,
    orthogonal_failure: usize,
    clip_failure: usize,
}

#[derive(Debug, Serialize)]
struct SweepSummary {
    rows: Vec<BatchSummary>,
    sigma_at: Vec<SigmaAtRate>,
}

pub fn sweep(cfg: Config) -> Result<PathBuf, CliError> {
    let mut run = Run::new("sweep", cfg)?;
    let cfg = run.cfg.clone();
    let net = source_model(&mut run)?;
    let data = load_split(&cfg, cfg.split)?;
    let indices = select(&cfg, data.len())?;
    let pool = thread_pool(cfg.workers)?;
    let template = cfg.attack_config()?;
    let mut summaries = Vec::new();
    let mut all_records = Vec::new();
    for &sigma in &cfg.sigmas_px {
        let kernel = SmoothingKernel::gaussian(sigma).map_err(|e| CliError::Config(format!("sigmas_px: {e}")))?;
        let attack = AttackConfig {
            kernel: kernel.clone(),
            ..template.clone()
        };
        let a = attacker(&cfg, &net, Method::Smoothfool, attack)?;
        let records: Vec<OutcomeRecord> = a.run_all(&data, &indices, &pool)?.into_iter().map(|(r, _)| r).collect();
        let summary = summarize(&records, data.num_classes(), Method::Smoothfool, &kernel.to_string(), Some(sigma), cfg.sigma_h_px)?;
        log::info!("sigma_g {sigma}: fooling rate {:.4}", summary.fooling.overall_rate);
        summaries.push(summary);
        all_records.extend(records.into_iter().map(|r| (sigma, r)));
    }
    let rates: Vec<f64> = summaries.iter().map(|s| s.fooling.overall_rate).collect();
    let sigma_at = cfg
        .a_levels_pct
        .iter()
        .map(|a| sigma_at_rate(&cfg.sigmas_px, &rates, a / 100.0))
        .collect();
    let rows: Vec<SweepRow> = summaries
        .iter()
        .zip(&cfg.sigmas_px)
        .map(|(s, &sigma)| SweepRow {
            sigma_g_px: sigma,
            fooling_rate: s.fooling.overall_rate,
            omega_bar_x1e3: s.roughness.as_ref().map(|r| 1e3 * r.omega_bar),
            omega_bar_n_x1e3: s.roughness.as_ref().map(|r| 1e3 * r.omega_bar_n),
            mean_l2: s.roughness.as_ref().map(|r| r.mean_l2),
            success: s.status_counts.success,
            max_iters: s.status_counts.max_iters,
            orthogonal_failure: s.status_counts.orthogonal_failure,
            clip_failure: s.status_counts.clip_failure,
        })
        .collect();
    let records: Vec<SweepRecord> = all_records
        .iter()
        .map(|(sigma, record)| SweepRecord {
            sigma_g_px: *sigma,
            record,
        })
        .collect();
    run.write_jsonl("sweep_records.jsonl", &records)?;
    run.write_csv("sweep.csv", &rows)?;
    run.write_json(
        "sweep.json",
        &SweepSummary {
            rows: summaries,
            sigma_at,
        },
    )?;
    run.finish()
}

#[derive(Debug, Serialize)]
struct UapSummary {
    samples: usize,
    xi_linf: f64,
    tau: f64,
    achieved_rate: f64,
    below_target: bool,
    passes: usize,
    per_pass_rates: Vec<f64>,
    linf: f64,
    l2: f64,
    diagnostics: smoothfool::universal::UapDiagnostics,
}

pub fn uap(cfg: Config) -> Result<PathBuf, CliError> {
    let mut run = Run::new("uap", cfg)?;
    let cfg = run.cfg.clone();
    let net = source_model(&mut run)?;
    let data = load_split(&cfg, cfg.split)?;
    let indices = select(&cfg, data.len())?;
    let images: Vec<Tensor> = indices.iter().map(|&i| data.image(i).clone()).collect();
    let result = compute_uap(&net, &images, &cfg.uap_config()?)?;
    log::info!("universal perturbation fools {:.4} after {} passes", result.achieved_rate, result.passes);
    run.write_tensor("v.sft", &result.v)?;
    run.write_image("v.pgm", &result.v, ImageMode::MinMax)?;
    run.write_json(
        "uap.json",
        &UapSummary {
            samples: images.len(),
            xi_linf: cfg.xi_linf,
            tau: cfg.tau,
            achieved_rate: result.achieved_rate,
            below_target: result.below_target,
            passes: result.passes,
            per_pass_rates: result.per_pass_rates,
            linf: result.v.norm_linf(),
            l2: result.v.norm_l2(),
            diagnostics: result.diagnostics,
        },
    )?;
    run.finish()
}

#[derive(Debug, Serialize)]
struct TransferRow {
    kernel: String,
    eligible: usize,
    source_fooled: usize,
    transferred: usize,
    rate: f64,
    linf_budget: f64,
}

impl TransferRow {
    fn new(kernel: String, r: TransferReport) -> Self {
        TransferRow {
            kernel,
            eligible: r.eligible,
            source_fooled: r.source_fooled,
            transferred: r.transferred,
            rate: r.rate,
            linf_budget: r.linf_budget,
        }
    }
}

/// Attacks the source model with an identity kernel and with the
/// configured kernel, and evaluates both sets on the target.
pub fn transfer(cfg: Config) -> Result<PathBuf, CliError> {
    let mut run = Run::new("transfer", cfg)?;
    let cfg = run.cfg.clone();
    let source = source_model(&mut run)?;
    let target = load_model(&mut run, "target", cfg.target_model_path.as_deref(), &cfg.target_fixture)?;
    let data = load_split(&cfg, cfg.split)?;
    let indices = select(&cfg, data.len())?;
    let subset = data.subset(&indices);
    let smooth = cfg.attack_config()?;
    let rough = AttackConfig {
        kernel: SmoothingKernel::identity(),
        ..smooth.clone()
    };
    let budget = cfg.linf_budget_255 / 255.0;
    let mut rows = Vec::new();
    for attack in [rough, smooth] {
        let report = transfer_rate(&source, &target, &subset, &attack, budget)?;
        log::info!("{}: transfer rate {:.4}", attack.kernel, report.rate);
        rows.push(TransferRow::new(attack.kernel.to_string(), report));
    }
    run.write_csv("transfer.csv", &rows)?;
    run.write_json("transfer.json", &rows)?;
    run.finish()
}
