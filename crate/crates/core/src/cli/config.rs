//! Flat `key = value` run configuration.
//!
//! ```text
//! # comments start with '#'
//! seed = 2022
//! k = 10
//! candidates = lr=0.1, lr=0.01
//! train_path = ../data/toy_train.csv
//! ```
//!
//! Relative paths resolve against the directory holding the config file.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::accountant::{CompositionMethod, DEFAULT_DELTA_SLACK};
use crate::simulation::{UtilityDistribution, DEFAULT_BASE_SEED, DEFAULT_RATIOS};
use crate::utility::Candidate;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: key `{key}` given twice")]
    Duplicate { line: usize, key: String },
    #[error("line {line}, field `{key}`: {reason}")]
    Value {
        line: usize,
        key: String,
        reason: String,
    },
    #[error("field `{key}`: {reason}")]
    Missing { key: String, reason: String },
    #[error("cannot read config {path}: {reason}")]
    Io { path: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainerKind {
    Reference,
    Synthetic,
}

pub const KEYS: &[&str] = &[
    "seed",
    "k",
    "g",
    "u0",
    "eps",
    "eps0",
    "delta",
    "delta_slack",
    "composition",
    "candidates",
    "trainer",
    "train_path",
    "valid_path",
    "out_dir",
    "n_seeds",
    "ratios",
    "n_candidates",
    "utilities",
];

/// Everything the subcommands read from a config file. Unset keys keep the
/// defaults of the shipped simulation setup.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub k: usize,
    pub g: f64,
    pub u0: f64,
    pub eps: f64,
    pub eps0: f64,
    pub delta: f64,
    pub delta_slack: f64,
    pub composition: CompositionMethod,
    pub candidates: Vec<Candidate>,
    pub trainer: TrainerKind,
    pub train_path: Option<PathBuf>,
    pub valid_path: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub n_seeds: usize,
    pub ratios: Vec<u64>,
    pub n_candidates: usize,
    pub utilities: UtilityDistribution,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: DEFAULT_BASE_SEED,
            k: 10,
            g: 0.01,
            u0: 0.0,
            eps: 1.0,
            eps0: 0.1,
            delta: 1e-5,
            delta_slack: DEFAULT_DELTA_SLACK,
            composition: CompositionMethod::Advanced,
            candidates: Vec::new(),
            trainer: TrainerKind::Reference,
            train_path: None,
            valid_path: None,
            out_dir: PathBuf::from("out"),
            n_seeds: 1000,
            ratios: DEFAULT_RATIOS.to_vec(),
            n_candidates: 100,
            utilities: UtilityDistribution::Uniform01,
        }
    }
}

fn parse_num<T: FromStr>(line: usize, key: &str, value: &str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::Value {
        line,
        key: key.into(),
        reason: format!("cannot parse {value:?} as a {}", std::any::type_name::<T>()),
    })
}

fn parse_list<T: FromStr>(line: usize, key: &str, value: &str) -> Result<Vec<T>, ConfigError> {
    split_list(value)
        .into_iter()
        .map(|v| parse_num(line, key, v))
        .collect()
}

fn split_list(value: &str) -> Vec<&str> {
    value
        .split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .collect()
}

fn parse_distribution(line: usize, value: &str) -> Result<UtilityDistribution, ConfigError> {
    let (kind, arg) = match value.split_once(':') {
        Some((kind, arg)) => (kind.trim(), Some(arg.trim())),
        None => (value, None),
    };
    match (kind, arg) {
        ("uniform", None) => Ok(UtilityDistribution::Uniform01),
        ("constant", Some(u)) => Ok(UtilityDistribution::Constant(parse_num(
            line,
            "utilities",
            u,
        )?)),
        ("table", Some(values)) => Ok(UtilityDistribution::FixedTable(parse_list(
            line,
            "utilities",
            values,
        )?)),
        _ => Err(ConfigError::Value {
            line,
            key: "utilities".into(),
            reason: format!("expected uniform, constant:<u> or table:<u1,u2,..>, got {value:?}"),
        }),
    }
}

impl RunConfig {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let mut config = RunConfig::default();
        let mut seen = BTreeSet::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(ConfigError::Syntax {
                    line,
                    text: raw.to_string(),
                });
            };
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(ConfigError::UnknownKey {
                    line,
                    key: key.into(),
                });
            }
            if !seen.insert(key.to_string()) {
                return Err(ConfigError::Duplicate {
                    line,
                    key: key.into(),
                });
            }
            let path = |v: &str| base_dir.join(v);
            match key {
                "seed" => config.seed = parse_num(line, key, value)?,
                "k" => config.k = parse_num(line, key, value)?,
                "g" => config.g = parse_num(line, key, value)?,
                "u0" => config.u0 = parse_num(line, key, value)?,
                "eps" => config.eps = parse_num(line, key, value)?,
                "eps0" => config.eps0 = parse_num(line, key, value)?,
                "delta" => config.delta = parse_num(line, key, value)?,
                "delta_slack" => config.delta_slack = parse_num(line, key, value)?,
                "composition" => {
                    config.composition =
                        value
                            .parse()
                            .map_err(|e: crate::error::Error| ConfigError::Value {
                                line,
                                key: key.into(),
                                reason: e.to_string(),
                            })?
                }
                "candidates" => {
                    config.candidates = split_list(value).into_iter().map(Candidate::new).collect()
                }
                "trainer" => {
                    config.trainer = match value {
                        "reference" => TrainerKind::Reference,
                        "synthetic" => TrainerKind::Synthetic,
                        other => {
                            return Err(ConfigError::Value {
                                line,
                                key: key.into(),
                                reason: format!("expected reference or synthetic, got {other:?}"),
                            })
                        }
                    }
                }
                "train_path" => config.train_path = Some(path(value)),
                "valid_path" => config.valid_path = Some(path(value)),
                "out_dir" => config.out_dir = path(value),
                "n_seeds" => config.n_seeds = parse_num(line, key, value)?,
                "ratios" => config.ratios = parse_list(line, key, value)?,
                "n_candidates" => config.n_candidates = parse_num(line, key, value)?,
                "utilities" => config.utilities = parse_distribution(line, value)?,
                _ => unreachable!("key list checked above"),
            }
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::parse(&text, base)
    }
}
