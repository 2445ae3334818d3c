// SPDX-License-Identifier: Apache-2.0

//! Imputation metrics, run aggregation and the experiment grids.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use ndarray::{s, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::baselines::MeanImputer;
use crate::data::{
    check_same_dim, derive_seed, fit_normalizer, generate_mcar_mask, reshuffle_mask, transform,
    DataMatrix, Direction, MaskMatrix, NoiseSource, NormalizationStats,
};
use crate::datasets::{MultiVarDataset, SingleVarDataset, VARIABLES};
use crate::error::{Error, Result};
use crate::imputer::GenerativeImputer;
use crate::trainers::{train, train_predictor, Method, TrainConfig, TrainedImputer};

/// Name used for mean-imputation baseline records.
pub const MEAN_BASELINE: &str = "mean";

const TAG_TRAIN: u64 = 0x7472_6169_6e;
const TAG_MASK: u64 = 0x6d61_736b;
const TAG_NOISE: u64 = 0x6e6f_6973_65;
const TAG_TEST_MASK: u64 = 0x7465_7374;

fn rate_tag(rate: f64) -> u64 {
    (rate * 1e6).round() as u64
}

fn method_tag(method: Method) -> u64 {
    Method::ALL.iter().position(|&m| m == method).unwrap_or(0) as u64
}

fn zero_missing(x: &DataMatrix, m: &MaskMatrix) -> Result<DataMatrix> {
    m.ensure_matches(x.dim())?;
    DataMatrix::new(x.values() * m.values()).map(|d| d.with_normalized(x.is_normalized()))
}

fn check_rate(what: &str, rate: f64, allow_zero: bool) -> Result<()> {
    let ok = rate.is_finite() && rate < 1.0 && if allow_zero { rate >= 0.0 } else { rate > 0.0 };
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{what} {rate} out of range")))
    }
}

/// Mean absolute error over the entries with `m == 0`.
pub fn masked_mae(truth: &DataMatrix, imputed: &DataMatrix, m: &MaskMatrix) -> Result<f64> {
    masked_mae_arrays(truth.view(), imputed.view(), m.view())
}

pub fn masked_mae_arrays(
    truth: ArrayView2<'_, f64>,
    imputed: ArrayView2<'_, f64>,
    m: ArrayView2<'_, f64>,
) -> Result<f64> {
    check_same_dim("masked_mae: imputed", truth.dim(), imputed.dim())?;
    check_same_dim("masked_mae: mask", truth.dim(), m.dim())?;
    let (sum, count) = ndarray::Zip::from(&truth)
        .and(&imputed)
        .and(&m)
        .fold((0.0, 0usize), |(s, c), &t, &v, &o| {
            if o == 0.0 {
                (s + (t - v).abs(), c + 1)
            } else {
                (s, c)
            }
        });
    if count == 0 {
        return Err(Error::NoMissingEntries);
    }
    Ok(sum / count as f64)
}

/// Absolute errors at the missing positions of one row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleErrors {
    pub row: usize,
    pub missing_indices: Vec<usize>,
    pub errors: Vec<f64>,
}

pub fn per_sample_errors(
    truth: &DataMatrix,
    imputed: &DataMatrix,
    m: &MaskMatrix,
    row: usize,
) -> Result<SampleErrors> {
    check_same_dim("per_sample_errors: imputed", truth.dim(), imputed.dim())?;
    m.ensure_matches(truth.dim())?;
    if row >= truth.n_samples() {
        return Err(Error::InvalidArgument(format!(
            "row {row} out of range for {} samples",
            truth.n_samples()
        )));
    }
    let (t, v, o) = (
        truth.values().row(row),
        imputed.values().row(row),
        m.values().row(row),
    );
    let missing_indices: Vec<usize> = (0..o.len()).filter(|&j| o[j] == 0.0).collect();
    let errors = missing_indices.iter().map(|&j| (t[j] - v[j]).abs()).collect();
    Ok(SampleErrors {
        row,
        missing_indices,
        errors,
    })
}

/// Sum of `|a_i - a_j|` over ordered pairs `i != j`.
fn pairwise_abs_sum(sorted: &[f64]) -> f64 {
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &v)| (2.0 * i as f64 - n + 1.0) * v)
        .sum::<f64>()
        * 2.0
}

/// One-dimensional energy distance `2E|X-Y| - E|X-X'| - E|Y-Y'|` between two samples.
pub fn energy_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidArgument("energy distance needs two non-empty samples".into()));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("energy distance sample"));
    }
    let sort = |v: &[f64]| {
        let mut v = v.to_vec();
        v.sort_by(f64::total_cmp);
        v
    };
    let (sa, sb) = (sort(a), sort(b));
    let mut joint = [a, b].concat();
    joint.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let within_a = pairwise_abs_sum(&sa);
    let within_b = pairwise_abs_sum(&sb);
    let cross = (pairwise_abs_sum(&joint) - within_a - within_b) / 2.0;
    Ok(2.0 * cross / (na * nb) - within_a / (na * na) - within_b / (nb * nb))
}

/// Energy distance between `v` and `v̂` at the re-masked positions (`m == 1`, `n == 0`)
/// of one imputation round trip with a reshuffled mask `n`.
pub fn reimputation_energy(
    imputer: &GenerativeImputer,
    x: &DataMatrix,
    m: &MaskMatrix,
    noise: &mut NoiseSource,
) -> Result<f64> {
    m.ensure_matches(x.dim())?;
    let frozen = imputer.frozen();
    let (rows, cols) = x.dim();
    let z = noise.sample(rows, cols);
    let n = reshuffle_mask(m, noise);
    let mut unused = NoiseSource::uniform(0);
    let (_, v) = frozen.impute_arrays(x.view(), m.view(), z.view(), &mut unused)?;
    let (_, v_hat) = frozen.impute_arrays(v.view(), n.view(), z.view(), &mut unused)?;
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for ((i, j), &o) in m.values().indexed_iter() {
        if o == 1.0 && n.values()[[i, j]] == 0.0 {
            a.push(v_hat[[i, j]]);
            b.push(v[[i, j]]);
        }
    }
    energy_distance(&a, &b)
}

/// One data point of an experiment table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub method: String,
    pub train_missing_rate: f64,
    pub test_missing_rate: f64,
    pub vmr: Option<f64>,
    pub omr: Option<f64>,
    pub smr: Option<f64>,
    pub variable: Option<String>,
    pub split: String,
    pub mae: f64,
    pub run_id: usize,
    pub seed: u64,
}

impl MetricsRecord {
    pub fn validate(&self) -> Result<()> {
        if self.method.is_empty() || self.split.is_empty() {
            return Err(Error::InvalidArgument("metrics record has empty identifying fields".into()));
        }
        if !(self.mae.is_finite() && self.mae >= 0.0) {
            return Err(Error::InvalidArgument(format!("metrics record mae {} is invalid", self.mae)));
        }
        Ok(())
    }

    fn cell_key(&self) -> CellKey {
        CellKey {
            method: self.method.clone(),
            train_missing_rate: self.train_missing_rate,
            test_missing_rate: self.test_missing_rate,
            vmr: self.vmr,
            omr: self.omr,
            smr: self.smr,
            variable: self.variable.clone(),
            split: self.split.clone(),
        }
    }
}

/// Identifying fields of a record, without run and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellKey {
    pub method: String,
    pub train_missing_rate: f64,
    pub test_missing_rate: f64,
    pub vmr: Option<f64>,
    pub omr: Option<f64>,
    pub smr: Option<f64>,
    pub variable: Option<String>,
    pub split: String,
}

impl CellKey {
    fn sort_key(&self) -> String {
        let r = |v: Option<f64>| v.map_or(String::from("-"), |v| format!("{v:.6}"));
        format!(
            "{}|{:.6}|{:.6}|{}|{}|{}|{}|{}",
            self.method,
            self.train_missing_rate,
            self.test_missing_rate,
            r(self.vmr),
            r(self.omr),
            r(self.smr),
            self.variable.as_deref().unwrap_or("-"),
            self.split
        )
    }
}

/// Mean and sample standard deviation of one cell over runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    #[serde(flatten)]
    pub key: CellKey,
    pub n_runs: usize,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub records: Vec<MetricsRecord>,
}

impl MetricsTable {
    pub fn new(records: Vec<MetricsRecord>) -> Self {
        Self { records }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn extend(&mut self, records: impl IntoIterator<Item = MetricsRecord>) {
        self.records.extend(records);
    }

    /// Groups records by cell, ordered by their identifying fields.
    pub fn aggregate(&self) -> Vec<CellSummary> {
        let mut groups: BTreeMap<String, (CellKey, Vec<f64>)> = BTreeMap::new();
        for r in &self.records {
            let key = r.cell_key();
            groups
                .entry(key.sort_key())
                .or_insert_with(|| (key, Vec::new()))
                .1
                .push(r.mae);
        }
        groups
            .into_values()
            .map(|(key, values)| {
                let n = values.len();
                let mean = values.iter().sum::<f64>() / n as f64;
                let std = if n > 1 {
                    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
                } else {
                    0.0
                };
                CellSummary {
                    key,
                    n_runs: n,
                    mean,
                    std,
                }
            })
            .collect()
    }

    /// Summaries whose run count differs from `n_runs`.
    pub fn incomplete_cells(&self, n_runs: usize) -> Vec<CellSummary> {
        self.aggregate().into_iter().filter(|c| c.n_runs != n_runs).collect()
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        w.write_record(CSV_HEADER)?;
        for r in &self.records {
            w.serialize(r)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        if header != CSV_HEADER {
            return Err(Error::InvalidArgument(format!(
                "metrics CSV header {header:?} does not match {CSV_HEADER:?}"
            )));
        }
        let records = rdr
            .deserialize()
            .collect::<std::result::Result<Vec<MetricsRecord>, _>>()?;
        for r in &records {
            r.validate()?;
        }
        Ok(Self { records })
    }

    pub fn summary_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.aggregate())?)
    }
}

pub const CSV_HEADER: [&str; 11] = [
    "method",
    "train_missing_rate",
    "test_missing_rate",
    "vmr",
    "omr",
    "smr",
    "variable",
    "split",
    "mae",
    "run_id",
    "seed",
];

/// Anything a grid can run; `key` identifies the cell for resumption.
pub trait GridCell: fmt::Debug {
    fn key(&self) -> String;
}

fn cell_error(cell: &dyn GridCell, e: Error) -> Error {
    Error::Cell {
        cell: cell.key(),
        source: Box::new(e),
    }
}

fn training_seed(base: u64, method: Method, rate: f64, run: usize) -> u64 {
    derive_seed(base, &[TAG_TRAIN, method_tag(method), rate_tag(rate), run as u64])
}

fn mask_seed(base: u64, tag: u64, rate: f64, run: usize) -> u64 {
    derive_seed(base, &[tag, rate_tag(rate), run as u64])
}

fn noise_seed(base: u64, method: Method, rate: f64, run: usize, tag: u64) -> u64 {
    derive_seed(base, &[TAG_NOISE, method_tag(method), rate_tag(rate), run as u64, tag])
}

fn trained_for(x: &DataMatrix, m: &MaskMatrix, method: Method, cfg: &TrainConfig, seed: u64) -> Result<TrainedImputer> {
    let cfg = TrainConfig { seed, ..cfg.clone() };
    let hidden = zero_missing(x, m)?;
    train(method, &hidden, m, &cfg)
}

/// Imputation accuracy at matched train/test rates: `(method, rate, run)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImputationCell {
    pub method: Method,
    pub rate: f64,
    pub run: usize,
}

impl GridCell for ImputationCell {
    fn key(&self) -> String {
        format!("imputation/{}/{:.6}/{}", self.method, self.rate, self.run)
    }
}

/// Trains on `train` and measures the masked MAE on `test`, both min-max
/// normalized with statistics of the training portion.
#[derive(Debug, Clone)]
pub struct ImputationGrid {
    pub train: DataMatrix,
    pub test: DataMatrix,
    pub methods: Vec<Method>,
    pub rates: Vec<f64>,
    pub n_runs: usize,
    pub cfg: TrainConfig,
    /// Adds one mean-imputation record per `(rate, run)`.
    pub include_baseline: bool,
}

impl ImputationGrid {
    pub fn new(
        train: &DataMatrix,
        test: &DataMatrix,
        methods: &[Method],
        rates: &[f64],
        n_runs: usize,
        cfg: &TrainConfig,
    ) -> Result<Self> {
        check_same_dim("imputation grid: test", (test.n_samples(), train.n_features()), test.dim())?;
        if rates.is_empty() || methods.is_empty() || n_runs == 0 {
            return Err(Error::InvalidArgument("grid needs methods, rates and runs".into()));
        }
        for &r in rates {
            check_rate("missing rate", r, false)?;
        }
        let stats = fit_normalizer(train, &MaskMatrix::ones(train.n_samples(), train.n_features()))?;
        Ok(Self {
            train: transform(train, &stats, Direction::Forward)?,
            test: transform(test, &stats, Direction::Forward)?,
            methods: methods.to_vec(),
            rates: rates.to_vec(),
            n_runs,
            cfg: cfg.clone(),
            include_baseline: true,
        })
    }

    pub fn cells(&self) -> Vec<ImputationCell> {
        let mut out = Vec::new();
        for &method in &self.methods {
            for &rate in &self.rates {
                for run in 0..self.n_runs {
                    out.push(ImputationCell { method, rate, run });
                }
            }
        }
        out
    }

    pub fn declared_records(&self) -> usize {
        let base = if self.include_baseline { 1 } else { 0 };
        (self.methods.len() + base) * self.rates.len() * self.n_runs
    }

    fn masks(&self, rate: f64, run: usize) -> Result<(MaskMatrix, MaskMatrix)> {
        let (tr, d) = self.train.dim();
        let mut rng = NoiseSource::uniform(mask_seed(self.cfg.seed, TAG_MASK, rate, run));
        let m_train = generate_mcar_mask(tr, d, rate, &mut rng)?;
        let mut rng = NoiseSource::uniform(mask_seed(self.cfg.seed, TAG_TEST_MASK, rate, run));
        let m_test = generate_mcar_mask(self.test.n_samples(), d, rate, &mut rng)?;
        Ok((m_train, m_test))
    }

    fn record(&self, method: &str, rate: f64, run: usize, seed: u64, mae: f64) -> MetricsRecord {
        MetricsRecord {
            method: method.to_string(),
            train_missing_rate: rate,
            test_missing_rate: rate,
            vmr: None,
            omr: None,
            smr: None,
            variable: None,
            split: "test".to_string(),
            mae,
            run_id: run,
            seed,
        }
    }

    /// The trained model with its test-set record.
    pub fn run_cell_model(&self, cell: &ImputationCell) -> Result<(TrainedImputer, MetricsRecord)> {
        let inner = || -> Result<_> {
            let (m_train, m_test) = self.masks(cell.rate, cell.run)?;
            let seed = training_seed(self.cfg.seed, cell.method, cell.rate, cell.run);
            let trained = trained_for(&self.train, &m_train, cell.method, &self.cfg, seed)?;
            let hidden = zero_missing(&self.test, &m_test)?;
            let v = trained.impute(
                &hidden,
                &m_test,
                noise_seed(self.cfg.seed, cell.method, cell.rate, cell.run, 0),
            )?;
            let mae = masked_mae_arrays(self.test.view(), v.view(), m_test.view())?;
            let record = self.record(cell.method.as_str(), cell.rate, cell.run, seed, mae);
            Ok((trained, record))
        };
        inner().map_err(|e| cell_error(cell, e))
    }

    pub fn run_cell(&self, cell: &ImputationCell) -> Result<Vec<MetricsRecord>> {
        Ok(vec![self.run_cell_model(cell)?.1])
    }

    /// Mean-imputation records for every `(rate, run)`.
    pub fn baseline_records(&self) -> Result<Vec<MetricsRecord>> {
        let mut out = Vec::new();
        for &rate in &self.rates {
            for run in 0..self.n_runs {
                let (m_train, m_test) = self.masks(rate, run)?;
                let fitted = MeanImputer::fit(&self.train, &m_train)?;
                let v = fitted.impute(&self.test, &m_test)?;
                let mae = masked_mae(&self.test, &v, &m_test)?;
                out.push(self.record(MEAN_BASELINE, rate, run, 0, mae));
            }
        }
        Ok(out)
    }

    pub fn run(&self) -> Result<MetricsTable> {
        let mut table = MetricsTable::default();
        for cell in self.cells() {
            table.extend(self.run_cell(&cell)?);
        }
        if self.include_baseline {
            table.extend(self.baseline_records()?);
        }
        Ok(table)
    }
}

/// One predictor training: `(method, train_rate, run)`, evaluated at every test rate.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionCell {
    pub method: Method,
    pub train_rate: f64,
    pub run: usize,
}

impl GridCell for PredictionCell {
    fn key(&self) -> String {
        format!("prediction/{}/{:.6}/{}", self.method, self.train_rate, self.run)
    }
}

/// Downstream one-step prediction trained on imputed data.
///
/// Each `(method, rate, run)` imputer is trained once on the imputer-training
/// portion masked at that rate and reused across cells.
#[derive(Clone)]
pub struct PredictionGrid {
    pub methods: Vec<Method>,
    pub train_rates: Vec<f64>,
    pub test_rates: Vec<f64>,
    pub n_runs: usize,
    pub cfg: TrainConfig,
    imputer_train: DataMatrix,
    predictor_train: DataMatrix,
    predictor_test: DataMatrix,
    stats: NormalizationStats,
    cache: HashMap<(Method, u64, usize), TrainedImputer>,
}

impl fmt::Debug for PredictionGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PredictionGrid")
            .field("methods", &self.methods)
            .field("train_rates", &self.train_rates)
            .field("test_rates", &self.test_rates)
            .field("n_runs", &self.n_runs)
            .finish_non_exhaustive()
    }
}

impl PredictionGrid {
    pub fn new(
        dataset: &SingleVarDataset,
        methods: &[Method],
        train_rates: &[f64],
        test_rates: &[f64],
        n_runs: usize,
        cfg: &TrainConfig,
    ) -> Result<Self> {
        let split = dataset
            .split
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("prediction grid needs a split dataset".into()))?;
        if methods.is_empty() || train_rates.is_empty() || test_rates.is_empty() || n_runs == 0 {
            return Err(Error::InvalidArgument("grid needs methods, rates and runs".into()));
        }
        for &r in train_rates {
            check_rate("train missing rate", r, true)?;
        }
        for &r in test_rates {
            check_rate("test missing rate", r, false)?;
        }
        let imputer_train = dataset.portion(&split.imputer_train)?;
        let stats = fit_normalizer(
            &imputer_train,
            &MaskMatrix::ones(imputer_train.n_samples(), imputer_train.n_features()),
        )?;
        let norm = |x: &DataMatrix| transform(x, &stats, Direction::Forward);
        let predictor_train = norm(&dataset.portion(&split.predictor_train)?)?;
        let predictor_test = norm(&dataset.portion(&split.predictor_test)?)?;
        if predictor_test.n_samples() < 2 {
            return Err(Error::InvalidArgument("predictor-test portion needs at least 2 rows".into()));
        }
        Ok(Self {
            methods: methods.to_vec(),
            train_rates: train_rates.to_vec(),
            test_rates: test_rates.to_vec(),
            n_runs,
            cfg: cfg.clone(),
            imputer_train: norm(&imputer_train)?,
            predictor_train,
            predictor_test,
            stats,
            cache: HashMap::new(),
        })
    }

    pub fn stats(&self) -> &NormalizationStats {
        &self.stats
    }

    pub fn cells(&self) -> Vec<PredictionCell> {
        let mut out = Vec::new();
        for &method in &self.methods {
            for &train_rate in &self.train_rates {
                for run in 0..self.n_runs {
                    out.push(PredictionCell {
                        method,
                        train_rate,
                        run,
                    });
                }
            }
        }
        out
    }

    pub fn declared_records(&self) -> usize {
        self.methods.len() * self.train_rates.len() * self.test_rates.len() * self.n_runs
    }

    fn imputer(&mut self, method: Method, rate: f64, run: usize) -> Result<&TrainedImputer> {
        let key = (method, rate_tag(rate), run);
        if !self.cache.contains_key(&key) {
            let (n, d) = self.imputer_train.dim();
            let mut rng = NoiseSource::uniform(mask_seed(self.cfg.seed, TAG_MASK, rate, run));
            let m = generate_mcar_mask(n, d, rate, &mut rng)?;
            let seed = training_seed(self.cfg.seed, method, rate, run);
            let trained = trained_for(&self.imputer_train, &m, method, &self.cfg, seed)?;
            self.cache.insert(key, trained);
        }
        Ok(&self.cache[&key])
    }

    fn imputed(&mut self, method: Method, rate: f64, run: usize, x: &DataMatrix, tag: u64) -> Result<DataMatrix> {
        if rate == 0.0 {
            return Ok(x.clone());
        }
        let (n, d) = x.dim();
        let mut rng = NoiseSource::uniform(mask_seed(self.cfg.seed, tag, rate, run));
        let m = generate_mcar_mask(n, d, rate, &mut rng)?;
        let hidden = zero_missing(x, &m)?;
        let seed = noise_seed(self.cfg.seed, method, rate, run, tag);
        let v = self.imputer(method, rate, run)?.impute(&hidden, &m, seed)?;
        Ok(DataMatrix::new(v)?.with_normalized(true))
    }

    pub fn run_cell(&mut self, cell: &PredictionCell) -> Result<Vec<MetricsRecord>> {
        self.run_cell_inner(cell).map_err(|e| cell_error(cell, e))
    }

    fn run_cell_inner(&mut self, cell: &PredictionCell) -> Result<Vec<MetricsRecord>> {
        let &PredictionCell {
            method,
            train_rate,
            run,
        } = cell;
        let predictor_train = self.predictor_train.clone();
        let series = self.imputed(method, train_rate, run, &predictor_train, TAG_MASK ^ 1)?;
        let seed = training_seed(self.cfg.seed, method, train_rate, run) ^ 0x5052_4544;
        let predictor = train_predictor(&series, &TrainConfig { seed, ..self.cfg.clone() })?;

        let test = self.predictor_test.clone();
        let t = test.n_samples();
        let targets = test.values().slice(s![1.., ..]).to_owned();
        let mut out = Vec::with_capacity(self.test_rates.len());
        for &test_rate in &self.test_rates.clone() {
            let inputs = self.imputed(method, test_rate, run, &test, TAG_TEST_MASK)?;
            let pred = predictor.predict(inputs.values().slice(s![..t - 1, ..]))?;
            let mae = (&pred - &targets).mapv(f64::abs).mean().unwrap_or(0.0);
            out.push(MetricsRecord {
                method: method.as_str().to_string(),
                train_missing_rate: train_rate,
                test_missing_rate: test_rate,
                vmr: None,
                omr: None,
                smr: None,
                variable: None,
                split: "predictor_test".to_string(),
                mae,
                run_id: run,
                seed,
            });
        }
        Ok(out)
    }

    pub fn run(&mut self) -> Result<MetricsTable> {
        let mut table = MetricsTable::default();
        for cell in self.cells() {
            table.extend(self.run_cell(&cell)?);
        }
        Ok(table)
    }
}

pub fn run_prediction_grid(
    dataset: &SingleVarDataset,
    methods: &[Method],
    train_rates: &[f64],
    test_rates: &[f64],
    n_runs: usize,
    cfg: &TrainConfig,
) -> Result<MetricsTable> {
    PredictionGrid::new(dataset, methods, train_rates, test_rates, n_runs, cfg)?.run()
}

/// One multi-variable training: `(method, (VMR, OMR, SMR), run)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiVarCell {
    pub method: Method,
    pub rates: (f64, f64, f64),
    pub run: usize,
}

impl GridCell for MultiVarCell {
    fn key(&self) -> String {
        let (a, b, c) = self.rates;
        format!("multivar/{}/{a:.6}/{b:.6}/{c:.6}/{}", self.method, self.run)
    }
}

/// Per-variable masked MAE over every combination of block missing rates.
#[derive(Debug, Clone)]
pub struct MultiVarGrid {
    pub methods: Vec<Method>,
    pub rates: Vec<f64>,
    pub n_runs: usize,
    pub cfg: TrainConfig,
    dataset: MultiVarDataset,
    train: DataMatrix,
    test: DataMatrix,
}

impl MultiVarGrid {
    pub fn new(
        dataset: &MultiVarDataset,
        methods: &[Method],
        rates: &[f64],
        n_runs: usize,
        cfg: &TrainConfig,
    ) -> Result<Self> {
        if methods.is_empty() || rates.is_empty() || n_runs == 0 {
            return Err(Error::InvalidArgument("grid needs methods, rates and runs".into()));
        }
        for &r in rates {
            check_rate("missing rate", r, false)?;
        }
        let full = &dataset.assembled;
        let train = full.rows(dataset.train.start, dataset.train.end)?;
        let test = full.rows(dataset.test.start, dataset.test.end)?;
        let stats = fit_normalizer(&train, &MaskMatrix::ones(train.n_samples(), train.n_features()))?;
        Ok(Self {
            methods: methods.to_vec(),
            rates: rates.to_vec(),
            n_runs,
            cfg: cfg.clone(),
            dataset: dataset.clone(),
            train: transform(&train, &stats, Direction::Forward)?,
            test: transform(&test, &stats, Direction::Forward)?,
        })
    }

    pub fn cells(&self) -> Vec<MultiVarCell> {
        let mut out = Vec::new();
        for &method in &self.methods {
            for &a in &self.rates {
                for &b in &self.rates {
                    for &c in &self.rates {
                        for run in 0..self.n_runs {
                            out.push(MultiVarCell {
                                method,
                                rates: (a, b, c),
                                run,
                            });
                        }
                    }
                }
            }
        }
        out
    }

    pub fn declared_records(&self) -> usize {
        self.methods.len() * self.rates.len().pow(3) * self.n_runs * VARIABLES.len()
    }

    pub fn run_cell(&mut self, cell: &MultiVarCell) -> Result<Vec<MetricsRecord>> {
        self.run_cell_inner(cell).map_err(|e| cell_error(cell, e))
    }

    fn run_cell_inner(&mut self, cell: &MultiVarCell) -> Result<Vec<MetricsRecord>> {
        let (a, b, c) = cell.rates;
        let tag = rate_tag(a) ^ rate_tag(b).rotate_left(21) ^ rate_tag(c).rotate_left(42);
        let seed_of = |t: u64| derive_seed(self.cfg.seed, &[t, tag, cell.run as u64]);
        let mut rng = NoiseSource::uniform(seed_of(TAG_MASK));
        let m_train = self.dataset.mask(self.train.n_samples(), cell.rates, &mut rng)?;
        let mut rng = NoiseSource::uniform(seed_of(TAG_TEST_MASK));
        let m_test = self.dataset.mask(self.test.n_samples(), cell.rates, &mut rng)?;
        let seed = derive_seed(seed_of(TAG_TRAIN), &[method_tag(cell.method)]);
        let trained = trained_for(&self.train, &m_train, cell.method, &self.cfg, seed)?;
        let hidden = zero_missing(&self.test, &m_test)?;
        let v = trained.impute(&hidden, &m_test, derive_seed(seed, &[TAG_NOISE]))?;
        let mut out = Vec::with_capacity(VARIABLES.len());
        for (k, name) in VARIABLES.iter().enumerate() {
            let cols = self.dataset.block(k);
            let mae = masked_mae_arrays(
                self.test.values().slice(s![.., cols.clone()]),
                v.slice(s![.., cols.clone()]),
                m_test.values().slice(s![.., cols]),
            )?;
            let rate = [a, b, c][k];
            out.push(MetricsRecord {
                method: cell.method.as_str().to_string(),
                train_missing_rate: rate,
                test_missing_rate: rate,
                vmr: Some(a),
                omr: Some(b),
                smr: Some(c),
                variable: Some(name.to_string()),
                split: "test".to_string(),
                mae,
                run_id: cell.run,
                seed,
            });
        }
        Ok(out)
    }

    pub fn run(&mut self) -> Result<MetricsTable> {
        let mut table = MetricsTable::default();
        for cell in self.cells() {
            table.extend(self.run_cell(&cell)?);
        }
        Ok(table)
    }
}

pub fn run_multivar_grid(
    dataset: &MultiVarDataset,
    methods: &[Method],
    rates: &[f64],
    n_runs: usize,
    cfg: &TrainConfig,
) -> Result<MetricsTable> {
    MultiVarGrid::new(dataset, methods, rates, n_runs, cfg)?.run()
}
