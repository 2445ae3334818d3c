// SPDX-License-Identifier: Apache-2.0

//! Experiment configuration: schema, defaults and validation.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use igani_core::datasets::{Layout, SyntheticKind};
use igani_core::{Method, TrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

/// Environment variable naming the default output directory.
pub const OUTPUT_DIR_ENV: &str = "IGANI_OUTPUT_DIR";
pub const DEFAULT_OUTPUT_DIR: &str = "igani-output";

fn default_train_fraction() -> f64 {
    0.75
}

fn default_split() -> [f64; 3] {
    [0.1, 0.8, 0.1]
}

fn default_guangzhou() -> Layout {
    Layout::GUANGZHOU
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    /// Generated `t × d` matrix.
    Synthetic {
        generator: SyntheticKind,
        t: usize,
        d: usize,
        #[serde(default)]
        seed: u64,
        #[serde(default = "default_train_fraction")]
        train_fraction: f64,
        #[serde(default = "default_split")]
        split: [f64; 3],
    },
    /// Three generated `t × locations` variables, assembled side by side.
    SyntheticMultiVar {
        generator: SyntheticKind,
        t: usize,
        locations: usize,
        #[serde(default)]
        seed: u64,
    },
    /// A time × feature matrix in CSV or binary form.
    Matrix {
        path: PathBuf,
        #[serde(default = "default_train_fraction")]
        train_fraction: f64,
        #[serde(default = "default_split")]
        split: [f64; 3],
    },
    /// A day × step × location file.
    SingleVar {
        path: PathBuf,
        #[serde(default = "default_guangzhou")]
        layout: Layout,
        #[serde(default = "default_split")]
        split: [f64; 3],
    },
    MultiVar {
        volume: PathBuf,
        occupancy: PathBuf,
        speed: PathBuf,
    },
}

fn default_missing_rate() -> f64 {
    0.2
}

fn default_rates() -> Vec<f64> {
    vec![0.2, 0.5, 0.8]
}

fn default_train_rates() -> Vec<f64> {
    (0..10).map(|k| k as f64 / 10.0).collect()
}

fn default_test_rates() -> Vec<f64> {
    (1..10).map(|k| k as f64 / 10.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskConfig {
    /// Rate used by `train`.
    #[serde(default = "default_missing_rate")]
    pub missing_rate: f64,
    /// Rates of the imputation grid, and per-variable rates of the multi-variable grid.
    #[serde(default = "default_rates")]
    pub rates: Vec<f64>,
    #[serde(default = "default_train_rates")]
    pub train_rates: Vec<f64>,
    #[serde(default = "default_test_rates")]
    pub test_rates: Vec<f64>,
}

impl Default for MaskConfig {
    fn default() -> Self {
        Self {
            missing_rate: default_missing_rate(),
            rates: default_rates(),
            train_rates: default_train_rates(),
            test_rates: default_test_rates(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Imputation,
    Prediction,
    MultiVar,
}

fn default_runs() -> usize {
    2
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationConfig {
    pub experiment: Experiment,
    #[serde(default = "default_runs")]
    pub n_runs: usize,
    /// Adds mean-imputation records to imputation grids.
    #[serde(default = "default_true")]
    pub include_baseline: bool,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            experiment: Experiment::Imputation,
            n_runs: default_runs(),
            include_baseline: true,
        }
    }
}

fn default_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default)]
    pub train: TrainConfig,
    /// Per-method partial overrides of `train`, e.g. `{"gain": {"learning_rate": 1e-4}}`.
    #[serde(default)]
    pub method_overrides: BTreeMap<Method, serde_json::Map<String, Value>>,
    #[serde(default)]
    pub masks: MaskConfig,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Master seed; copied into `train.seed` on resolution.
    #[serde(default)]
    pub seed: u64,
}

fn invalid(path: impl Into<String>, message: impl std::fmt::Display) -> CliError {
    CliError::Invalid(format!("{}: {message}", path.into()))
}

fn check_rate(path: String, rate: f64, allow_zero: bool) -> Result<(), CliError> {
    let lower_ok = if allow_zero { rate >= 0.0 } else { rate > 0.0 };
    if rate.is_finite() && lower_ok && rate < 1.0 {
        Ok(())
    } else {
        let range = if allow_zero { "[0, 1)" } else { "(0, 1)" };
        Err(invalid(path, format!("{rate} must lie in {range}")))
    }
}

fn check_rates(path: &str, rates: &[f64], allow_zero: bool) -> Result<(), CliError> {
    if rates.is_empty() {
        return Err(invalid(path, "must not be empty"));
    }
    for (k, &r) in rates.iter().enumerate() {
        check_rate(format!("{path}[{k}]"), r, allow_zero)?;
    }
    Ok(())
}

fn check_fraction(path: &str, f: f64) -> Result<(), CliError> {
    if f.is_finite() && f > 0.0 && f < 1.0 {
        Ok(())
    } else {
        Err(invalid(path, format!("{f} must lie in (0, 1)")))
    }
}

fn check_split(path: &str, split: &[f64; 3]) -> Result<(), CliError> {
    for (k, &f) in split.iter().enumerate() {
        check_fraction(&format!("{path}[{k}]"), f)?;
    }
    let total: f64 = split.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(invalid(path, format!("fractions sum to {total}, not 1")));
    }
    Ok(())
}

/// Prefixes a core "field: message" validation error with `prefix`.
fn train_error(prefix: &str, e: igani_core::Error) -> CliError {
    match e {
        igani_core::Error::InvalidArgument(msg) => CliError::Invalid(format!("{prefix}.{msg}")),
        other => CliError::Invalid(format!("{prefix}: {other}")),
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| CliError::Invalid(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// With `seed` applied and the override copied into `train.seed`.
    pub fn resolved(mut self, seed_override: Option<u64>) -> Self {
        if let Some(seed) = seed_override {
            self.seed = seed;
        }
        self.train.seed = self.seed;
        self
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.methods.is_empty() {
            return Err(invalid("methods", "must not be empty"));
        }
        self.train.validate().map_err(|e| train_error("train", e))?;
        for method in self.method_overrides.keys() {
            self.train_config(*method)?;
        }
        check_rate("masks.missing_rate".into(), self.masks.missing_rate, false)?;
        check_rates("masks.rates", &self.masks.rates, false)?;
        check_rates("masks.train_rates", &self.masks.train_rates, true)?;
        check_rates("masks.test_rates", &self.masks.test_rates, false)?;
        if self.evaluation.n_runs == 0 {
            return Err(invalid("evaluation.n_runs", "must be at least 1"));
        }
        match &self.dataset {
            DatasetConfig::Synthetic {
                t,
                d,
                train_fraction,
                split,
                ..
            } => {
                if *t < 4 || *d < 2 {
                    return Err(invalid("dataset.t", format!("synthetic data needs t >= 4 and d >= 2, got {t} x {d}")));
                }
                check_fraction("dataset.train_fraction", *train_fraction)?;
                check_split("dataset.split", split)?;
            }
            DatasetConfig::SyntheticMultiVar { t, locations, .. } => {
                if *t < 4 || *locations < 2 {
                    return Err(invalid("dataset.t", format!("synthetic data needs t >= 4 and locations >= 2, got {t} x {locations}")));
                }
            }
            DatasetConfig::Matrix {
                train_fraction,
                split,
                ..
            } => {
                check_fraction("dataset.train_fraction", *train_fraction)?;
                check_split("dataset.split", split)?;
            }
            DatasetConfig::SingleVar { split, .. } => check_split("dataset.split", split)?,
            DatasetConfig::MultiVar { .. } => {}
        }
        let multi = matches!(
            self.dataset,
            DatasetConfig::MultiVar { .. } | DatasetConfig::SyntheticMultiVar { .. }
        );
        if (self.evaluation.experiment == Experiment::MultiVar) != multi {
            return Err(invalid(
                "evaluation.experiment",
                "multi_var experiments need a multi-variable dataset and vice versa",
            ));
        }
        Ok(())
    }

    /// `train` with the method's overrides applied.
    pub fn train_config(&self, method: Method) -> Result<TrainConfig, CliError> {
        let mut cfg = self.train.clone();
        if let Some(over) = self.method_overrides.get(&method) {
            let prefix = format!("method_overrides.{method}");
            let mut base = serde_json::to_value(&cfg).expect("train config serializes");
            for (k, v) in over {
                match (base.get_mut(k), v) {
                    (Some(Value::Object(dst)), Value::Object(src)) => {
                        for (kk, vv) in src {
                            dst.insert(kk.clone(), vv.clone());
                        }
                    }
                    _ => {
                        base[k] = v.clone();
                    }
                }
            }
            cfg = serde_json::from_value(base).map_err(|e| invalid(&prefix, e))?;
            cfg.validate().map_err(|e| train_error(&prefix, e))?;
        }
        cfg.seed = self.seed;
        Ok(cfg)
    }

    /// Output directory: config, then `IGANI_OUTPUT_DIR`, then `igani-output`.
    pub fn output_dir(&self) -> PathBuf {
        self.output_dir.clone().unwrap_or_else(|| {
            std::env::var_os(OUTPUT_DIR_ENV)
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR))
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
