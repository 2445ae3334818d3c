// SPDX-License-Identifier: Apache-2.0

//! The `train`, `impute` and `grid` commands.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use igani_core::datasets::{
    assemble_multi_var, complete, load_multi_var, load_single_var, make_synthetic, read_values,
    split_single_var, to_matrix, MultiVarDataset, SingleVarDataset,
};
use igani_core::evaluation::{
    per_sample_errors, ImputationGrid, MetricsRecord, MetricsTable, MultiVarGrid, PredictionGrid,
    GridCell,
};
use igani_core::{
    derive_seed, fit_normalizer, generate_mcar_mask, transform, DataMatrix, Direction, MaskMatrix,
    Method, NoiseSource, NormalizationStats, TrainedImputer,
};
use ndarray::{Array2, Zip};
use sha2::{Digest, Sha256};

use crate::config::{DatasetConfig, Experiment, ExperimentConfig};
use crate::{write_atomic, CliError, CliResult};

pub const RESOLVED_CONFIG: &str = "resolved_config.json";
pub const NORMALIZATION: &str = "normalization.json";
pub const LOSSES: &str = "losses.csv";
const TRAIN_MASK_TAG: u64 = 0x6d61_736b_7472;

fn matrix_from_file(path: &Path) -> CliResult<(DataMatrix, MaskMatrix)> {
    let raw = read_values(path)?;
    let [rows, cols] = raw.shape[..] else {
        return Err(CliError::Data(format!(
            "{}: expected a 2-D matrix, found shape {:?}",
            path.display(),
            raw.shape
        )));
    };
    Ok(to_matrix(&raw.values, rows, cols)?)
}

/// The configured single-variable dataset with its three-way split.
pub fn single_var_dataset(cfg: &ExperimentConfig) -> CliResult<SingleVarDataset> {
    let (ds, split) = match &cfg.dataset {
        DatasetConfig::Synthetic {
            generator,
            t,
            d,
            seed,
            split,
            ..
        } => (make_synthetic(*generator, *t, *d, *seed)?, split),
        DatasetConfig::Matrix { path, split, .. } => {
            let (x, m) = matrix_from_file(path)?;
            let mut ds = SingleVarDataset::from_matrix(complete(&x, &m)?, 0);
            ds.original_mask = m;
            (ds, split)
        }
        DatasetConfig::SingleVar {
            path,
            layout,
            split,
        } => (load_single_var(path, *layout)?, split),
        _ => {
            return Err(CliError::Invalid(
                "dataset: a single-variable dataset is required".into(),
            ))
        }
    };
    Ok(split_single_var(&ds, (split[0], split[1], split[2]))?)
}

pub fn multi_var_dataset(cfg: &ExperimentConfig) -> CliResult<MultiVarDataset> {
    match &cfg.dataset {
        DatasetConfig::SyntheticMultiVar {
            generator,
            t,
            locations,
            seed,
        } => {
            let var = |k: u64| -> CliResult<DataMatrix> {
                Ok(make_synthetic(*generator, *t, *locations, derive_seed(*seed, &[k]))?.matrix)
            };
            Ok(assemble_multi_var(var(0)?, var(1)?, var(2)?)?)
        }
        DatasetConfig::MultiVar {
            volume,
            occupancy,
            speed,
        } => Ok(load_multi_var(volume, occupancy, speed)?),
        _ => Err(CliError::Invalid(
            "dataset: a multi-variable dataset is required".into(),
        )),
    }
}

/// Training and test portions of the imputation experiment.
pub fn imputation_portions(cfg: &ExperimentConfig) -> CliResult<(DataMatrix, DataMatrix)> {
    let fraction = match &cfg.dataset {
        DatasetConfig::Synthetic { train_fraction, .. }
        | DatasetConfig::Matrix { train_fraction, .. } => Some(*train_fraction),
        _ => None,
    };
    let ds = single_var_dataset(cfg)?;
    match fraction {
        Some(f) => {
            let n = ds.matrix.n_samples();
            let cut = ((n as f64 * f).floor() as usize).clamp(1, n - 1);
            Ok((ds.matrix.rows(0, cut)?, ds.matrix.rows(cut, n)?))
        }
        None => {
            let split = ds.split.as_ref().expect("split applied");
            Ok((
                ds.portion(&split.imputer_train)?,
                ds.portion(&split.predictor_test)?,
            ))
        }
    }
}

/// Normalized training data, its mask and the statistics used.
fn training_data(cfg: &ExperimentConfig) -> CliResult<(DataMatrix, MaskMatrix, NormalizationStats)> {
    let rate = cfg.masks.missing_rate;
    let mut rng = NoiseSource::uniform(derive_seed(cfg.seed, &[TRAIN_MASK_TAG]));
    let (x, m) = if cfg.evaluation.experiment == Experiment::MultiVar {
        let mut ds = multi_var_dataset(cfg)?;
        let x = ds.assembled.rows(ds.train.start, ds.train.end)?;
        let m = ds.mask(x.n_samples(), (rate, rate, rate), &mut rng)?;
        (x, m)
    } else {
        let (x, _) = imputation_portions(cfg)?;
        let m = generate_mcar_mask(x.n_samples(), x.n_features(), rate, &mut rng)?;
        (x, m)
    };
    let stats = fit_normalizer(&x, &MaskMatrix::ones(x.n_samples(), x.n_features()))?;
    let xn = transform(&x, &stats, Direction::Forward)?;
    let hidden = DataMatrix::new(xn.values() * m.values())?.with_normalized(true);
    Ok((hidden, m, stats))
}

fn ensure_fresh(dir: &Path, overwrite: bool) -> CliResult<()> {
    if dir.exists() {
        if overwrite {
            fs::remove_dir_all(dir)?;
        } else {
            return Err(CliError::Other(anyhow::anyhow!(
                "{} exists; pass --overwrite to replace it",
                dir.display()
            )));
        }
    }
    Ok(())
}

/// Trains each configured method and writes `<out>/train/<method>/`.
pub fn cmd_train(
    cfg: &ExperimentConfig,
    only: Option<Method>,
    overwrite: bool,
    out: &mut dyn Write,
) -> CliResult<Vec<PathBuf>> {
    let root = cfg.output_dir();
    let (x, m, stats) = training_data(cfg)?;
    fs::create_dir_all(root.join("train"))?;
    write_atomic(&root.join(RESOLVED_CONFIG), cfg.to_json().as_bytes())?;
    let methods: Vec<Method> = match only {
        Some(method) => vec![method],
        None => cfg.methods.clone(),
    };
    let mut written = Vec::new();
    for method in methods {
        let tcfg = cfg.train_config(method)?;
        let trained = igani_core::train(method, &x, &m, &tcfg)?;
        let target = root.join("train").join(method.as_str());
        ensure_fresh(&target, overwrite)?;
        let staging = tempfile::tempdir_in(root.join("train"))?;
        trained.save(staging.path())?;
        fs::write(
            staging.path().join(NORMALIZATION),
            serde_json::to_vec_pretty(&stats).expect("stats serialize"),
        )?;
        fs::write(staging.path().join(LOSSES), trained.loss_csv()?)?;
        fs::rename(staging.keep(), &target)?;
        writeln!(out, "trained {method} {}", target.display())?;
        written.push(target);
    }
    Ok(written)
}

/// Imputes `x` (original units, any values at missing positions) under mask `m`:
/// normalize, impute, map back, then copy the observed entries verbatim.
pub fn impute_matrix(
    trained: &TrainedImputer,
    stats: &NormalizationStats,
    x: &DataMatrix,
    m: &MaskMatrix,
    noise_seed: u64,
) -> CliResult<Array2<f64>> {
    if x.n_features() != trained.data_dim() || stats.dim() != trained.data_dim() {
        return Err(CliError::Data(format!(
            "data has {} features, checkpoint expects {}",
            x.n_features(),
            trained.data_dim()
        )));
    }
    m.ensure_matches(x.dim())?;
    let observed_only = DataMatrix::new(x.values() * m.values())?;
    let xn = transform(&observed_only, stats, Direction::Forward)?;
    let hidden = DataMatrix::new(xn.values() * m.values())?.with_normalized(true);
    let v = trained.impute(&hidden, m, noise_seed)?;
    let mut back = transform(&DataMatrix::new(v)?.with_normalized(true), stats, Direction::Inverse)?
        .into_values();
    Zip::from(&mut back)
        .and(x.values())
        .and(m.values())
        .for_each(|b, &xv, &o| {
            if o == 1.0 {
                *b = xv;
            }
        });
    Ok(back)
}

pub fn matrix_csv(values: &Array2<f64>) -> String {
    let mut s = String::new();
    for row in values.rows() {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}

pub struct ImputeArgs<'a> {
    pub checkpoint: &'a Path,
    pub data: &'a Path,
    pub mask: Option<&'a Path>,
    pub out: &'a Path,
    pub seed: u64,
    /// Complete reference for per-sample errors.
    pub truth: Option<&'a Path>,
    pub errors_out: Option<&'a Path>,
    pub row: Option<usize>,
}

pub fn load_checkpoint(dir: &Path) -> CliResult<(TrainedImputer, NormalizationStats)> {
    let trained = TrainedImputer::load(dir)?;
    let stats: NormalizationStats = serde_json::from_slice(&fs::read(dir.join(NORMALIZATION))?)
        .map_err(|e| CliError::Data(format!("{}: {e}", dir.join(NORMALIZATION).display())))?;
    Ok((trained, stats))
}

pub fn cmd_impute(args: &ImputeArgs<'_>) -> CliResult<()> {
    let (trained, stats) = load_checkpoint(args.checkpoint)?;
    let (x, data_mask) = matrix_from_file(args.data)?;
    let m = match args.mask {
        Some(p) => {
            let (mv, _) = matrix_from_file(p)?;
            let file_mask = MaskMatrix::new(mv.into_values())
                .map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
            file_mask.ensure_matches(x.dim())?;
            let conflict = Zip::from(file_mask.values())
                .and(data_mask.values())
                .fold(false, |acc, &f, &d| acc || (f == 1.0 && d == 0.0));
            if conflict {
                return Err(CliError::Data("mask marks a missing data cell as observed".into()));
            }
            file_mask
        }
        None => data_mask,
    };
    let v = impute_matrix(&trained, &stats, &x, &m, args.seed)?;
    write_atomic(args.out, matrix_csv(&v).as_bytes())?;

    if let (Some(truth), Some(errors_out)) = (args.truth, args.errors_out) {
        let (t, _) = matrix_from_file(truth)?;
        if t.dim() != x.dim() {
            return Err(CliError::Data("truth and data shapes differ".into()));
        }
        let norm = |a: &DataMatrix| transform(a, &stats, Direction::Forward);
        let (tn, vn) = (norm(&t)?, norm(&DataMatrix::new(v)?)?);
        let row = match args.row {
            Some(r) => r,
            None => (0..m.dim().0)
                .find(|&i| m.values().row(i).iter().any(|&o| o == 0.0))
                .unwrap_or(0),
        };
        let e = per_sample_errors(&tn, &vn, &m, row)?;
        let mut s = String::from("method,row,index,error\n");
        for (j, err) in e.missing_indices.iter().zip(&e.errors) {
            s.push_str(&format!("{},{},{},{}\n", trained.method, row, j, err));
        }
        write_atomic(errors_out, s.as_bytes())?;
    }
    Ok(())
}

/// One method's grid.
#[derive(Clone)]
enum MethodGrid {
    Imputation(ImputationGrid),
    Prediction(PredictionGrid),
    MultiVar(MultiVarGrid),
}

impl MethodGrid {
    fn keys(&self) -> Vec<String> {
        match self {
            MethodGrid::Imputation(g) => g.cells().iter().map(GridCell::key).collect(),
            MethodGrid::Prediction(g) => g.cells().iter().map(GridCell::key).collect(),
            MethodGrid::MultiVar(g) => g.cells().iter().map(GridCell::key).collect(),
        }
    }

    fn run(&mut self, index: usize) -> igani_core::Result<Vec<MetricsRecord>> {
        match self {
            MethodGrid::Imputation(g) => {
                let cell = g.cells().swap_remove(index);
                g.run_cell(&cell)
            }
            MethodGrid::Prediction(g) => {
                let cell = g.cells().swap_remove(index);
                g.run_cell(&cell)
            }
            MethodGrid::MultiVar(g) => {
                let cell = g.cells().swap_remove(index);
                g.run_cell(&cell)
            }
        }
    }

    fn declared_records(&self) -> usize {
        match self {
            MethodGrid::Imputation(g) => g.declared_records(),
            MethodGrid::Prediction(g) => g.declared_records(),
            MethodGrid::MultiVar(g) => g.declared_records(),
        }
    }
}

fn build_grids(cfg: &ExperimentConfig) -> CliResult<Vec<MethodGrid>> {
    let runs = cfg.evaluation.n_runs;
    let mut grids = Vec::with_capacity(cfg.methods.len());
    match cfg.evaluation.experiment {
        Experiment::Imputation => {
            let (train, test) = imputation_portions(cfg)?;
            for (k, &method) in cfg.methods.iter().enumerate() {
                let mut g = ImputationGrid::new(
                    &train,
                    &test,
                    &[method],
                    &cfg.masks.rates,
                    runs,
                    &cfg.train_config(method)?,
                )?;
                g.include_baseline = false;
                if k == 0 && cfg.evaluation.include_baseline {
                    g.include_baseline = true;
                }
                grids.push(MethodGrid::Imputation(g));
            }
        }
        Experiment::Prediction => {
            let ds = single_var_dataset(cfg)?;
            for &method in &cfg.methods {
                grids.push(MethodGrid::Prediction(PredictionGrid::new(
                    &ds,
                    &[method],
                    &cfg.masks.train_rates,
                    &cfg.masks.test_rates,
                    runs,
                    &cfg.train_config(method)?,
                )?));
            }
        }
        Experiment::MultiVar => {
            let ds = multi_var_dataset(cfg)?;
            for &method in &cfg.methods {
                grids.push(MethodGrid::MultiVar(MultiVarGrid::new(
                    &ds,
                    &[method],
                    &cfg.masks.rates,
                    runs,
                    &cfg.train_config(method)?,
                )?));
            }
        }
    }
    Ok(grids)
}

#[derive(Debug, Clone, Default)]
pub struct GridOptions {
    pub overwrite: bool,
    /// Stop after this many newly computed cells.
    pub max_cells: Option<usize>,
    pub jobs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum GridOutcome {
    Complete { records: usize, metrics: PathBuf },
    Incomplete { done: usize, total: usize },
}

/// Hash of the resolved configuration (without the output location) and a cell key.
pub fn cell_hash(cfg: &ExperimentConfig, key: &str) -> String {
    let mut c = cfg.clone();
    c.output_dir = None;
    let mut h = Sha256::new();
    h.update(c.to_json().as_bytes());
    h.update(b"\n");
    h.update(key.as_bytes());
    hex::encode(h.finalize())
}

fn read_cell(path: &Path) -> Option<Vec<MetricsRecord>> {
    let text = fs::read_to_string(path).ok()?;
    MetricsTable::from_csv(&text).ok().map(|t| t.records)
}

pub fn cmd_grid(cfg: &ExperimentConfig, opts: &GridOptions, out: &mut dyn Write) -> CliResult<GridOutcome> {
    let root = cfg.output_dir().join("grid");
    let cells_dir = root.join("cells");
    if opts.overwrite && root.exists() {
        fs::remove_dir_all(&root)?;
    }
    fs::create_dir_all(&cells_dir)?;
    write_atomic(&root.join(RESOLVED_CONFIG), cfg.to_json().as_bytes())?;

    let grids = build_grids(cfg)?;
    let mut plan = Vec::new();
    for (g, grid) in grids.iter().enumerate() {
        for (i, key) in grid.keys().into_iter().enumerate() {
            let path = cells_dir.join(format!("{}.csv", cell_hash(cfg, &key)));
            plan.push((g, i, key, path));
        }
    }
    let total = plan.len();
    let pending: Vec<usize> = (0..total).filter(|&k| read_cell(&plan[k].3).is_none()).collect();
    for (k, (_, _, key, _)) in plan.iter().enumerate() {
        if !pending.contains(&k) {
            writeln!(out, "cell {}/{total} cached {key}", k + 1)?;
        }
    }
    let budget = opts.max_cells.unwrap_or(usize::MAX).min(pending.len());
    let todo = &pending[..budget];
    let jobs = opts.jobs.max(1).min(todo.len().max(1));

    let results: Vec<CliResult<Vec<(usize, String)>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..jobs)
            .map(|w| {
                let mut local = grids.clone();
                let plan = &plan;
                scope.spawn(move || -> CliResult<Vec<(usize, String)>> {
                    let mut lines = Vec::new();
                    for &k in todo.iter().skip(w).step_by(jobs) {
                        let (g, i, key, path) = &plan[k];
                        let records = local[*g].run(*i)?;
                        let table = MetricsTable::new(records);
                        write_atomic(path, table.to_csv()?.as_bytes())?;
                        lines.push((k, format!("cell {}/{total} done {key}", k + 1)));
                    }
                    Ok(lines)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("grid worker panicked"))
            .collect()
    });
    let mut lines = Vec::new();
    for r in results {
        lines.extend(r?);
    }
    lines.sort();
    for (_, line) in lines {
        writeln!(out, "{line}")?;
    }

    let remaining = pending.len() - budget;
    if remaining > 0 {
        writeln!(out, "incomplete {}/{total}", total - remaining)?;
        return Ok(GridOutcome::Incomplete {
            done: total - remaining,
            total,
        });
    }

    let mut table = MetricsTable::default();
    for (_, _, key, path) in &plan {
        let records = read_cell(path)
            .ok_or_else(|| CliError::Other(anyhow::anyhow!("cell {key} vanished from {}", path.display())))?;
        table.extend(records);
    }
    if let Some(MethodGrid::Imputation(g)) = grids.first() {
        if g.include_baseline {
            table.extend(g.baseline_records()?);
        }
    }
    let declared: usize = grids.iter().map(MethodGrid::declared_records).sum();
    if table.len() != declared {
        return Err(CliError::Other(anyhow::anyhow!(
            "grid produced {} records, declared {declared}",
            table.len()
        )));
    }
    let metrics = root.join("metrics.csv");
    write_atomic(&metrics, table.to_csv()?.as_bytes())?;
    write_atomic(&root.join("summary.json"), table.summary_json()?.as_bytes())?;
    writeln!(out, "complete {} {}", table.len(), metrics.display())?;
    Ok(GridOutcome::Complete {
        records: table.len(),
        metrics,
    })
}
