// SPDX-License-Identifier: Apache-2.0

//! Training loops for the adversarial imputers and the short-term predictor.
//!
//! Every run is a pure function of its inputs and [`TrainConfig`]: each source
//! of randomness draws from its own stream forked from `TrainConfig::seed`.

mod gain;
mod igani;
mod misgan;
mod predictor;

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{derive_seed, DataMatrix, MaskMatrix, NoiseDistribution, NoiseSource};
use crate::error::{Error, Result};
use crate::imputer::GenerativeImputer;
use crate::losses::LossValue;
use crate::network::{Architecture, Network};
use crate::optim::OptimizerKind;

pub use gain::{
    gain_discriminator_objective, gain_generator_objective, train_gain, train_gain_with,
};
pub use igani::{igani_generator_objective, train_igani, train_igani_with};
pub use misgan::{
    misgan_data_generator_objective, misgan_imputer_objective, misgan_mask_generator_objective,
    train_misgan, train_misgan_with,
};
pub use predictor::{build_pairs, predictor_objective, train_predictor, PredictorModel};

/// Hyperparameters shared by all trainers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub n_epochs: usize,
    pub critic_updates_base: usize,
    pub critic_updates_epoch_div: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub lambda_gp: f64,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub noise: NoiseDistribution,
    /// Draw fresh `z` for every critic update instead of once per minibatch.
    pub resample_noise_per_critic_update: bool,
    /// Weight of GAIN's observed-entry reconstruction term (0 disables it).
    pub gain_alpha: f64,
    pub misgan_tau: f64,
    /// Weight of the data critic's signal in the MisGAN mask-generator loss.
    pub misgan_mask_alpha: f64,
    /// Updates of each MisGAN critic per generator update.
    pub misgan_critic_updates: usize,
    pub architecture: Architecture,
    pub predictor_epochs: usize,
    pub predictor_learning_rate: f64,
    pub predictor_validation_fraction: f64,
    pub predictor_patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_epochs: 200,
            critic_updates_base: 30,
            critic_updates_epoch_div: 10,
            learning_rate: 1e-4,
            batch_size: 64,
            lambda_gp: 10.0,
            seed: 0,
            optimizer: OptimizerKind::Adam,
            adam_beta1: 0.5,
            adam_beta2: 0.9,
            noise: NoiseDistribution::Uniform01,
            resample_noise_per_critic_update: false,
            gain_alpha: 0.0,
            misgan_tau: 0.0,
            misgan_mask_alpha: 0.2,
            misgan_critic_updates: 5,
            architecture: Architecture::default(),
            predictor_epochs: 100,
            predictor_learning_rate: 1e-3,
            predictor_validation_fraction: 0.1,
            predictor_patience: 10,
        }
    }
}

fn invalid(field: &str, message: impl fmt::Display) -> Error {
    Error::InvalidArgument(format!("{field}: {message}"))
}

impl TrainConfig {
    /// Checks every field; messages start with the offending field name.
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(invalid(name, format!("must be a positive number, got {v}")))
            }
        };
        let at_least_one = |name: &str, v: usize| {
            if v >= 1 {
                Ok(())
            } else {
                Err(invalid(name, "must be at least 1"))
            }
        };
        let unit = |name: &str, v: f64| {
            if (0.0..1.0).contains(&v) {
                Ok(())
            } else {
                Err(invalid(name, format!("must lie in [0, 1), got {v}")))
            }
        };
        let non_negative = |name: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(invalid(
                    name,
                    format!("must be a non-negative number, got {v}"),
                ))
            }
        };
        at_least_one("n_epochs", self.n_epochs)?;
        at_least_one("critic_updates_base", self.critic_updates_base)?;
        at_least_one("critic_updates_epoch_div", self.critic_updates_epoch_div)?;
        positive("learning_rate", self.learning_rate)?;
        at_least_one("batch_size", self.batch_size)?;
        non_negative("lambda_gp", self.lambda_gp)?;
        unit("adam_beta1", self.adam_beta1)?;
        unit("adam_beta2", self.adam_beta2)?;
        non_negative("gain_alpha", self.gain_alpha)?;
        if !self.misgan_tau.is_finite() {
            return Err(invalid("misgan_tau", "must be finite"));
        }
        non_negative("misgan_mask_alpha", self.misgan_mask_alpha)?;
        at_least_one("misgan_critic_updates", self.misgan_critic_updates)?;
        let arch = &self.architecture;
        at_least_one("architecture.generator_hidden", arch.generator_hidden)?;
        at_least_one("architecture.critic_hidden", arch.critic_hidden)?;
        at_least_one("architecture.predictor_hidden", arch.predictor_hidden)?;
        unit("architecture.dropout", arch.dropout)?;
        at_least_one("predictor_epochs", self.predictor_epochs)?;
        positive("predictor_learning_rate", self.predictor_learning_rate)?;
        unit(
            "predictor_validation_fraction",
            self.predictor_validation_fraction,
        )?;
        Ok(())
    }

    /// Critic updates per generator update in `epoch` (0-based).
    pub fn n_du(&self, epoch: usize) -> usize {
        self.critic_updates_base + epoch / self.critic_updates_epoch_div
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn config_hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }

    pub(crate) fn stream(&self, stream: Stream) -> NoiseSource {
        let distribution = match stream {
            Stream::Noise => self.noise,
            _ => NoiseDistribution::Uniform01,
        };
        NoiseSource::new(distribution, derive_seed(self.seed, &[stream as u64]))
    }
}

/// Independent random streams of one training run.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Stream {
    InitGenerator = 1,
    InitCritic = 2,
    Batching = 3,
    Noise = 4,
    Reshuffle = 5,
    Dropout = 6,
    Interpolation = 7,
    Hint = 8,
    InitAuxiliary = 9,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Igani,
    Gain,
    Misgan,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Igani, Method::Gain, Method::Misgan];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Igani => "igani",
            Method::Gain => "gain",
            Method::Misgan => "misgan",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "igani" => Ok(Method::Igani),
            "gain" => Ok(Method::Gain),
            "misgan" => Ok(Method::Misgan),
            other => Err(Error::InvalidArgument(format!("unknown method {other:?}"))),
        }
    }
}

/// Mean of each loss track over one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLosses {
    pub epoch: usize,
    pub losses: Vec<(String, f64)>,
}

impl EpochLosses {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.losses.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }
}

/// A gradient-bearing objective evaluated on one batch.
#[derive(Debug, Clone)]
pub struct Objective {
    pub loss: LossValue,
    /// Gradient for each parameter of the trained network, in parameter order.
    pub grads: Vec<Array2<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateKind {
    Critic,
    Generator,
}

/// One optimizer step, reported before and after it is applied.
pub struct UpdateEvent<'a> {
    pub epoch: usize,
    pub batch: usize,
    pub kind: UpdateKind,
    /// Name of the network being stepped.
    pub network: &'static str,
    /// Critic updates scheduled per generator update at this epoch.
    pub n_du: usize,
    pub networks: &'a [(&'static str, &'a Network)],
}

/// Coordinates of an update, turned into an [`UpdateEvent`] once the networks are borrowed.
#[derive(Clone, Copy)]
struct Step {
    epoch: usize,
    batch: usize,
    kind: UpdateKind,
    network: &'static str,
    n_du: usize,
}

impl Step {
    fn event<'a>(self, networks: &'a [(&'static str, &'a Network)]) -> UpdateEvent<'a> {
        UpdateEvent {
            epoch: self.epoch,
            batch: self.batch,
            kind: self.kind,
            network: self.network,
            n_du: self.n_du,
            networks,
        }
    }
}

/// Hooks into a training run. All methods default to no-ops.
pub trait TrainObserver {
    fn before_update(&mut self, _event: &UpdateEvent<'_>) {}
    fn after_update(&mut self, _event: &UpdateEvent<'_>) {}
    /// Called with the first-pass imputation of each batch used for a generator update.
    fn on_imputed_batch(
        &mut self,
        _x: ArrayView2<'_, f64>,
        _m: ArrayView2<'_, f64>,
        _v: ArrayView2<'_, f64>,
    ) {
    }
    fn on_epoch_end(&mut self, _epoch: usize, _imputer: &GenerativeImputer) {}
}

pub struct NoopObserver;

impl TrainObserver for NoopObserver {}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedImputer {
    pub method: Method,
    /// The imputer network, frozen (dropout off).
    pub imputer: GenerativeImputer,
    /// Method-specific companion networks, frozen.
    pub auxiliaries: Vec<(String, Network)>,
    pub config: TrainConfig,
    pub loss_history: Vec<EpochLosses>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    method: Method,
    config_hash: String,
    config: TrainConfig,
    networks: Vec<String>,
    loss_history: Vec<EpochLosses>,
}

const IMPUTER_STEM: &str = "imputer";

impl TrainedImputer {
    pub fn data_dim(&self) -> usize {
        self.imputer.data_dim()
    }

    pub fn auxiliary(&self, name: &str) -> Option<&Network> {
        self.auxiliaries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, net)| net)
    }

    /// Per-epoch values of one loss track.
    pub fn loss_track(&self, name: &str) -> Vec<f64> {
        self.loss_history
            .iter()
            .filter_map(|e| e.get(name))
            .collect()
    }

    pub fn loss_names(&self) -> Vec<String> {
        self.loss_history
            .first()
            .map(|e| e.losses.iter().map(|(n, _)| n.clone()).collect())
            .unwrap_or_default()
    }

    /// Imputes with explicit noise; returns `v`.
    pub fn impute_with_noise(
        &self,
        x: ArrayView2<'_, f64>,
        m: ArrayView2<'_, f64>,
        z: ArrayView2<'_, f64>,
    ) -> Result<Array2<f64>> {
        let mut unused = NoiseSource::uniform(0);
        Ok(self.imputer.impute_arrays(x, m, z, &mut unused)?.1)
    }

    /// Imputes with noise drawn from the configured distribution under `noise_seed`.
    pub fn impute(&self, x: &DataMatrix, m: &MaskMatrix, noise_seed: u64) -> Result<Array2<f64>> {
        m.ensure_matches(x.dim())?;
        let (rows, cols) = x.dim();
        let z = NoiseSource::new(self.config.noise, noise_seed).sample(rows, cols);
        self.impute_with_noise(x.view(), m.view(), z.view())
    }

    /// Writes `manifest.json` plus one `.bin`/`.json` pair per network into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let hash = self.config.config_hash();
        self.imputer
            .network()
            .save(dir, IMPUTER_STEM, Some(&hash))?;
        for (name, net) in &self.auxiliaries {
            net.save(dir, name, Some(&hash))?;
        }
        let manifest = Manifest {
            method: self.method,
            config_hash: hash,
            config: self.config.clone(),
            networks: self.auxiliaries.iter().map(|(n, _)| n.clone()).collect(),
            loss_history: self.loss_history.clone(),
        };
        fs::write(
            dir.join("manifest.json"),
            serde_json::to_string_pretty(&manifest)?,
        )?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: Manifest = serde_json::from_slice(&fs::read(dir.join("manifest.json"))?)?;
        let imputer = GenerativeImputer::new(Network::load(dir, IMPUTER_STEM)?)?;
        let auxiliaries = manifest
            .networks
            .iter()
            .map(|name| Ok((name.clone(), Network::load(dir, name)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            method: manifest.method,
            imputer: imputer.frozen(),
            auxiliaries,
            config: manifest.config,
            loss_history: manifest.loss_history,
        })
    }

    /// Loss history as CSV with columns `epoch,loss_name,value`.
    pub fn loss_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["epoch", "loss_name", "value"])?;
        for e in &self.loss_history {
            for (name, value) in &e.losses {
                w.write_record([e.epoch.to_string(), name.clone(), value.to_string()])?;
            }
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// Trains `method` on normalized data `x` with observation mask `m`.
pub fn train(
    method: Method,
    x: &DataMatrix,
    m: &MaskMatrix,
    cfg: &TrainConfig,
) -> Result<TrainedImputer> {
    train_with(method, x, m, cfg, &mut NoopObserver)
}

pub fn train_with(
    method: Method,
    x: &DataMatrix,
    m: &MaskMatrix,
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<TrainedImputer> {
    match method {
        Method::Igani => train_igani_with(x, m, cfg, observer),
        Method::Gain => train_gain_with(x, m, cfg, observer),
        Method::Misgan => train_misgan_with(x, m, cfg, observer),
    }
}

fn check_inputs(x: &DataMatrix, m: &MaskMatrix, cfg: &TrainConfig) -> Result<()> {
    cfg.validate()?;
    m.ensure_matches(x.dim())
}

/// Row order for one epoch, split into minibatches (the last may be short).
fn epoch_batches(n: usize, batch_size: usize, rng: &mut NoiseSource) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

fn select_rows(a: ArrayView2<'_, f64>, rows: &[usize]) -> Array2<f64> {
    a.select(Axis(0), rows)
}

fn ensure_finite(
    method: &'static str,
    loss: &'static str,
    value: f64,
    epoch: usize,
    batch: usize,
) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged {
            method,
            loss,
            epoch,
            batch,
        })
    }
}

fn debug_check_observed(x: &Array2<f64>, m: &Array2<f64>, v: &Array2<f64>) {
    debug_assert!(
        ndarray::Zip::from(x)
            .and(m)
            .and(v)
            .all(|&x, &m, &v| m == 0.0 || x.to_bits() == v.to_bits()),
        "imputation changed an observed entry"
    );
}

/// Running per-epoch means, one per named track.
struct LossAccumulator {
    tracks: Vec<(&'static str, f64, usize)>,
}

impl LossAccumulator {
    fn new(names: &[&'static str]) -> Self {
        Self {
            tracks: names.iter().map(|&n| (n, 0.0, 0)).collect(),
        }
    }

    fn push(&mut self, name: &'static str, value: f64) {
        let track = self
            .tracks
            .iter_mut()
            .find(|(n, _, _)| *n == name)
            .expect("declared loss track");
        track.1 += value;
        track.2 += 1;
    }

    fn finish(&mut self, epoch: usize) -> EpochLosses {
        let losses = self
            .tracks
            .iter_mut()
            .map(|(n, sum, count)| {
                let mean = if *count == 0 {
                    0.0
                } else {
                    *sum / *count as f64
                };
                *sum = 0.0;
                *count = 0;
                (n.to_string(), mean)
            })
            .collect();
        EpochLosses { epoch, losses }
    }
}
