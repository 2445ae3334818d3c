// SPDX-License-Identifier: Apache-2.0

//! Dataset loading, splitting and synthetic generation.
//!
//! Two on-disk formats are accepted:
//!
//! * CSV: one row per time point, optional header, `.` decimal separator.
//!   Empty cells and `NaN` mark missing entries.
//! * Raw binary: little-endian `f64` values, row-major, with a JSON sidecar
//!   `<file>.json` holding `{"shape": [...], "order": "row_major"}`. A NaN
//!   value marks a missing entry.
//!
//! Missing entries in loaded data are completed with the iterative imputer
//! and the completed matrix serves as ground truth.

use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};

use ndarray::{concatenate, s, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::baselines::{iterative_impute, DEFAULT_RIDGE, DEFAULT_ROUNDS};
use crate::data::{generate_mcar_mask, DataMatrix, MaskMatrix, NoiseSource};
use crate::error::{Error, Result};

/// Values in file order, with NaN at missing positions.
#[derive(Debug, Clone, PartialEq)]
pub struct RawValues {
    pub values: Vec<f64>,
    /// Shape declared by the file (CSV: rows × columns; binary: sidecar shape).
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BinarySidecar {
    pub shape: Vec<usize>,
    pub order: String,
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".json");
    PathBuf::from(os)
}

fn parse_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Reads a CSV or raw binary file; binary is chosen by a `.bin` extension.
pub fn read_values(path: &Path) -> Result<RawValues> {
    if path.extension().is_some_and(|e| e == "bin") {
        read_binary(path)
    } else {
        read_csv(path)
    }
}

fn read_binary(path: &Path) -> Result<RawValues> {
    let side = sidecar_path(path);
    let sidecar: BinarySidecar = serde_json::from_slice(&fs::read(&side)?)
        .map_err(|e| parse_err(&side, e.to_string()))?;
    if sidecar.order != "row_major" {
        return Err(parse_err(&side, format!("unsupported order {:?}", sidecar.order)));
    }
    let bytes = fs::read(path)?;
    if bytes.len() % 8 != 0 {
        return Err(parse_err(path, "length is not a multiple of 8 bytes"));
    }
    let expected: usize = sidecar.shape.iter().product();
    if bytes.len() / 8 != expected {
        return Err(Error::ElementCount {
            path: path.to_path_buf(),
            expected,
            found: bytes.len() / 8,
        });
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Ok(RawValues {
        values,
        shape: sidecar.shape,
    })
}

fn parse_cell(cell: &str) -> Option<Option<f64>> {
    let t = cell.trim();
    if t.is_empty() || t.eq_ignore_ascii_case("nan") {
        return Some(None);
    }
    t.parse::<f64>().ok().map(Some)
}

fn read_csv(path: &Path) -> Result<RawValues> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(false)
        .from_path(path)?;
    let mut values = Vec::new();
    let mut rows = 0;
    let mut cols = None;
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let parsed: Vec<Option<Option<f64>>> = record.iter().map(parse_cell).collect();
        if parsed.iter().any(Option::is_none) {
            if line == 0 {
                // a non-numeric first row is a header
                continue;
            }
            return Err(parse_err(path, format!("non-numeric cell on line {}", line + 1)));
        }
        cols.get_or_insert(parsed.len());
        values.extend(parsed.into_iter().map(|c| c.flatten().unwrap_or(f64::NAN)));
        rows += 1;
    }
    let cols = cols.ok_or_else(|| parse_err(path, "no data rows"))?;
    Ok(RawValues {
        values,
        shape: vec![rows, cols],
    })
}

/// Splits NaN-marked values into a data matrix (zeros at missing entries) and its mask.
pub fn to_matrix(values: &[f64], rows: usize, cols: usize) -> Result<(DataMatrix, MaskMatrix)> {
    if values.len() != rows * cols {
        return Err(Error::InvalidArgument(format!(
            "{} values cannot form a {rows} x {cols} matrix",
            values.len()
        )));
    }
    if values.iter().any(|v| v.is_infinite()) {
        return Err(Error::NonFinite("input file"));
    }
    let mask = Array2::from_shape_fn((rows, cols), |(i, j)| {
        if values[i * cols + j].is_nan() {
            0.0
        } else {
            1.0
        }
    });
    let data = Array2::from_shape_fn((rows, cols), |(i, j)| {
        let v = values[i * cols + j];
        if v.is_nan() {
            0.0
        } else {
            v
        }
    });
    Ok((DataMatrix::new(data)?, MaskMatrix::new(mask)?))
}

/// Completes originally missing entries with the iterative imputer.
pub fn complete(x: &DataMatrix, m: &MaskMatrix) -> Result<DataMatrix> {
    if m.missing_count() == 0 {
        return Ok(x.clone());
    }
    iterative_impute(x, m, DEFAULT_ROUNDS, DEFAULT_RIDGE)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Layout {
    pub days: usize,
    pub steps_per_day: usize,
    pub locations: usize,
}

impl Layout {
    pub const GUANGZHOU: Layout = Layout {
        days: 61,
        steps_per_day: 144,
        locations: 214,
    };
}

/// Contiguous, time-ordered row ranges.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRanges {
    pub imputer_train: Range<usize>,
    pub predictor_train: Range<usize>,
    pub predictor_test: Range<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SingleVarDataset {
    /// Complete reference matrix, time × location.
    pub matrix: DataMatrix,
    pub time_step_minutes: usize,
    pub split: Option<SplitRanges>,
    /// Entries that were missing in the source file (completed in `matrix`).
    pub original_mask: MaskMatrix,
}

impl SingleVarDataset {
    pub fn from_matrix(matrix: DataMatrix, time_step_minutes: usize) -> Self {
        let (r, c) = matrix.dim();
        Self {
            matrix,
            time_step_minutes,
            split: None,
            original_mask: MaskMatrix::ones(r, c),
        }
    }

    /// Rows of one split portion.
    pub fn portion(&self, range: &Range<usize>) -> Result<DataMatrix> {
        self.matrix.rows(range.start, range.end)
    }
}

/// Loads a day × step × location file into a `(days·steps) × locations` matrix.
pub fn load_single_var(path: &Path, layout: Layout) -> Result<SingleVarDataset> {
    let raw = read_values(path)?;
    let expected = layout.days * layout.steps_per_day * layout.locations;
    if raw.values.len() != expected {
        return Err(Error::ElementCount {
            path: path.to_path_buf(),
            expected,
            found: raw.values.len(),
        });
    }
    let rows = layout.days * layout.steps_per_day;
    let (x, m) = to_matrix(&raw.values, rows, layout.locations)?;
    let matrix = complete(&x, &m)?;
    Ok(SingleVarDataset {
        matrix,
        time_step_minutes: if layout.steps_per_day > 0 {
            1440 / layout.steps_per_day
        } else {
            0
        },
        split: None,
        original_mask: m,
    })
}

/// Boundaries at `floor(n · cumulative fraction)`; the last portion takes the remainder.
pub fn split_boundaries(n: usize, fractions: &[f64]) -> Result<Vec<Range<usize>>> {
    let total: f64 = fractions.iter().sum();
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "split fractions {fractions:?} must lie in [0, 1] and sum to 1"
        )));
    }
    let mut out = Vec::with_capacity(fractions.len());
    let mut start = 0;
    let mut cum = 0.0;
    for (k, f) in fractions.iter().enumerate() {
        cum += f;
        let end = if k + 1 == fractions.len() {
            n
        } else {
            ((n as f64 * cum + 1e-9).floor() as usize).min(n)
        };
        if end <= start {
            return Err(Error::InvalidArgument(format!("split portion {k} of {fractions:?} is empty")));
        }
        out.push(start..end);
        start = end;
    }
    Ok(out)
}

/// Splits into imputer-train / predictor-train / predictor-test portions.
pub fn split_single_var(ds: &SingleVarDataset, fractions: (f64, f64, f64)) -> Result<SingleVarDataset> {
    let r = split_boundaries(ds.matrix.n_samples(), &[fractions.0, fractions.1, fractions.2])?;
    let mut out = ds.clone();
    out.split = Some(SplitRanges {
        imputer_train: r[0].clone(),
        predictor_train: r[1].clone(),
        predictor_test: r[2].clone(),
    });
    Ok(out)
}

pub const VARIABLES: [&str; 3] = ["volume", "occupancy", "speed"];

#[derive(Debug, Clone, PartialEq)]
pub struct MultiVarDataset {
    pub volume: DataMatrix,
    pub occupancy: DataMatrix,
    pub speed: DataMatrix,
    /// `[volume | occupancy | speed]`, width `3L`.
    pub assembled: DataMatrix,
    pub train: Range<usize>,
    pub test: Range<usize>,
    /// Missing rates (VMR, OMR, SMR) of the most recent masking, if any.
    pub per_variable_rates: Option<(f64, f64, f64)>,
}

impl MultiVarDataset {
    pub fn locations(&self) -> usize {
        self.volume.n_features()
    }

    /// Columns of variable `k` (0 volume, 1 occupancy, 2 speed) in the assembled matrix.
    pub fn block(&self, k: usize) -> Range<usize> {
        let l = self.locations();
        k * l..(k + 1) * l
    }

    /// Independent MCAR masks per variable block at rates (VMR, OMR, SMR).
    pub fn mask(&mut self, n_rows: usize, rates: (f64, f64, f64), rng: &mut NoiseSource) -> Result<MaskMatrix> {
        let l = self.locations();
        let blocks = [rates.0, rates.1, rates.2]
            .into_iter()
            .map(|r| generate_mcar_mask(n_rows, l, r, rng).map(MaskMatrix::into_values))
            .collect::<Result<Vec<_>>>()?;
        self.per_variable_rates = Some(rates);
        MaskMatrix::new(concatenate(Axis(1), &[blocks[0].view(), blocks[1].view(), blocks[2].view()]).expect("equal heights"))
    }
}

/// Assembles three `T × L` variables and applies the 85/15 time-ordered split.
pub fn assemble_multi_var(volume: DataMatrix, occupancy: DataMatrix, speed: DataMatrix) -> Result<MultiVarDataset> {
    for (name, v) in [("occupancy", &occupancy), ("speed", &speed)] {
        if v.dim() != volume.dim() {
            return Err(Error::InvalidArgument(format!(
                "{name} has shape {:?}, volume has {:?}",
                v.dim(),
                volume.dim()
            )));
        }
    }
    let assembled = DataMatrix::new(concatenate![Axis(1), *volume.values(), *occupancy.values(), *speed.values()])?;
    let r = split_boundaries(volume.n_samples(), &[0.85, 0.15])?;
    Ok(MultiVarDataset {
        volume,
        occupancy,
        speed,
        assembled,
        train: r[0].clone(),
        test: r[1].clone(),
        per_variable_rates: None,
    })
}

/// Loads three `T × L` files (CSV rows or 2-D binary), completing missing entries per variable.
pub fn load_multi_var(path_volume: &Path, path_occupancy: &Path, path_speed: &Path) -> Result<MultiVarDataset> {
    let load = |p: &Path| -> Result<DataMatrix> {
        let raw = read_values(p)?;
        let (rows, cols) = match raw.shape[..] {
            [r, c] => (r, c),
            _ => return Err(parse_err(p, format!("expected a 2-D matrix, found shape {:?}", raw.shape))),
        };
        let (x, m) = to_matrix(&raw.values, rows, cols)?;
        complete(&x, &m)
    };
    assemble_multi_var(load(path_volume)?, load(path_occupancy)?, load(path_speed)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SyntheticKind {
    /// `A·B + σ·E` with standard-normal `A` (T×rank), `B` (rank×d), `E`.
    LowRank { rank: usize, noise: f64 },
    /// `x_{t+1} = ρ·x_t + noise·ε` per feature, `x_0` standard normal.
    Ar1 { rho: f64, noise: f64 },
    /// i.i.d. `U(0, 1)`.
    Uniform,
}

pub fn make_synthetic(kind: SyntheticKind, t: usize, d: usize, seed: u64) -> Result<SingleVarDataset> {
    if t < 2 || d < 2 {
        return Err(Error::InvalidArgument(format!("synthetic data needs T, d >= 2, got {t} x {d}")));
    }
    let mut rng = NoiseSource::new(crate::data::NoiseDistribution::StandardNormal, seed);
    let values = match kind {
        SyntheticKind::LowRank { rank, noise } => {
            if rank == 0 || rank >= t.min(d) {
                return Err(Error::InvalidArgument(format!(
                    "rank {rank} must lie in [1, min(T, d))"
                )));
            }
            if !(noise.is_finite() && noise >= 0.0) {
                return Err(Error::InvalidArgument(format!("noise {noise} must be non-negative")));
            }
            let a = rng.sample(t, rank);
            let b = rng.sample(rank, d);
            let e = rng.sample(t, d);
            a.dot(&b) + &e.mapv(|v| noise * v)
        }
        SyntheticKind::Ar1 { rho, noise } => {
            if !(rho.abs() < 1.0) {
                return Err(Error::InvalidArgument(format!("|rho| must be below 1, got {rho}")));
            }
            if !(noise.is_finite() && noise >= 0.0) {
                return Err(Error::InvalidArgument(format!("noise {noise} must be non-negative")));
            }
            let mut out = Array2::zeros((t, d));
            let x0 = rng.sample(1, d);
            out.slice_mut(s![0, ..]).assign(&x0.row(0));
            for i in 1..t {
                let eps = rng.sample(1, d);
                for j in 0..d {
                    out[[i, j]] = rho * out[[i - 1, j]] + noise * eps[[0, j]];
                }
            }
            out
        }
        SyntheticKind::Uniform => NoiseSource::uniform(seed).sample(t, d),
    };
    Ok(SingleVarDataset::from_matrix(DataMatrix::new(values)?, 1))
}
