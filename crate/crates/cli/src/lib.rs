//! Experiment driver: configuration, batch attacks and run artifacts.

pub mod batch;
pub mod commands;
pub mod config;
pub mod error;
pub mod export;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Arg, ArgMatches, Command};

use crate::config::{parse_flag_value, Config, Method, KEYS};
use crate::error::CliError;

/// Subcommands with their one-line descriptions.
pub const COMMANDS: &[(&str, &str)] = &[
    ("train", "train a network on MNIST and save its weights"),
    ("attack", "attack one sample and export images of the result"),
    ("attack-batch", "attack a selection of samples with the configured method"),
    ("baseline-is", "attack a selection with the iterative smooth baseline"),
    ("uap", "compute a smooth universal perturbation"),
    ("sweep", "fooling rate and roughness across smoothing scales"),
    ("metrics", "recompute batch aggregates under the configured roughness kernel"),
    ("transfer", "transfer rate of smooth and unsmoothed perturbations"),
];

fn flag(key: &str) -> String {
    key.replace('_', "-")
}

pub fn command() -> Command {
    let mut cmd = Command::new("smoothfool")
        .version(env!("CARGO_PKG_VERSION"))
        .about("Smooth adversarial perturbation experiments on MNIST")
        .subcommand_required(true)
        .arg_required_else_help(true);
    for (name, about) in COMMANDS {
        let mut sub = Command::new(*name).about(*about).arg(
            Arg::new("config")
                .long("config")
                .value_name("FILE")
                .value_parser(clap::value_parser!(PathBuf))
                .help("TOML file of configuration keys"),
        );
        for (key, help) in KEYS {
            sub = sub.arg(Arg::new(*key).long(flag(key)).value_name("VALUE").help(*help));
        }
        cmd = cmd.subcommand(sub);
    }
    cmd
}

/// Defaults, overridden by the `--config` file, overridden by flags.
pub fn resolve_config(matches: &ArgMatches) -> Result<Config, CliError> {
    let mut table = match matches.get_one::<PathBuf>("config") {
        Some(path) => Config::from_file(path)?,
        None => toml::Table::new(),
    };
    for (key, _) in KEYS {
        if let Some(raw) = matches.get_one::<String>(key) {
            let value = match parse_flag_value(raw) {
                // paths and names stay strings even when they look numeric
                toml::Value::Integer(_) | toml::Value::Float(_) if is_text_key(key) => toml::Value::String(raw.clone()),
                v => v,
            };
            table.insert(key.to_string(), value);
        }
    }
    Config::from_table(table)
}

fn is_text_key(key: &str) -> bool {
    key.ends_with("_dir") || key.ends_with("_path") || matches!(key, "fixture" | "target_fixture" | "architecture" | "kernel")
}

/// Parses `args` and runs the subcommand; returns its output directory.
pub fn run<I, T>(args: I) -> Result<PathBuf, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = command().try_get_matches_from(args).map_err(|e| match e.kind() {
        clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
            let _ = e.print();
            std::process::exit(0);
        }
        _ => CliError::Config(e.to_string()),
    })?;
    let (name, sub) = matches.subcommand().expect("subcommand required");
    let cfg = resolve_config(sub)?;
    match name {
        "train" => commands::train(cfg),
        "attack" => commands::attack(cfg),
        "attack-batch" => {
            let method = cfg.method;
            commands::attack_batch(cfg, "attack-batch", method)
        }
        "baseline-is" => commands::attack_batch(cfg, "baseline-is", Method::Is),
        "uap" => commands::uap(cfg),
        "sweep" => commands::sweep(cfg),
        "metrics" => commands::metrics(cfg),
        "transfer" => commands::transfer(cfg),
        other => unreachable!("unregistered subcommand {other}"),
    }
}
