// SPDX-License-Identifier: Apache-2.0

//! Non-adversarial reference imputers.

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::{DataMatrix, MaskMatrix};
use crate::error::{Error, Result};

/// Default ridge strength for [`iterative_impute`] on normalized data.
pub const DEFAULT_RIDGE: f64 = 1e-3;
pub const DEFAULT_ROUNDS: usize = 10;

/// Per-feature means of the observed entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanImputer {
    pub per_feature_mean: Vec<f64>,
}

impl MeanImputer {
    pub fn fit(x: &DataMatrix, m: &MaskMatrix) -> Result<Self> {
        m.ensure_matches(x.dim())?;
        let mut per_feature_mean = Vec::with_capacity(x.n_features());
        for (j, (col, mcol)) in x
            .values()
            .columns()
            .into_iter()
            .zip(m.values().columns())
            .enumerate()
        {
            let (sum, count) = col
                .iter()
                .zip(mcol)
                .filter(|(_, &o)| o == 1.0)
                .fold((0.0, 0usize), |(s, c), (&v, _)| (s + v, c + 1));
            if count == 0 {
                return Err(Error::FullyMissingFeature { feature: j });
            }
            per_feature_mean.push(sum / count as f64);
        }
        Ok(Self { per_feature_mean })
    }

    pub fn impute(&self, x: &DataMatrix, m: &MaskMatrix) -> Result<DataMatrix> {
        mean_impute(x, m, self)
    }
}

/// Copies observed entries and fills missing ones with the fitted means.
pub fn mean_impute(x: &DataMatrix, m: &MaskMatrix, fitted: &MeanImputer) -> Result<DataMatrix> {
    m.ensure_matches(x.dim())?;
    if fitted.per_feature_mean.len() != x.n_features() {
        return Err(Error::shape(
            "mean imputer",
            (x.n_samples(), fitted.per_feature_mean.len()),
            x.dim(),
        ));
    }
    let mut out = x.values().clone();
    for ((i, j), v) in out.indexed_iter_mut() {
        if m.values()[[i, j]] == 0.0 {
            *v = fitted.per_feature_mean[j];
        }
    }
    DataMatrix::new(out).map(|d| d.with_normalized(x.is_normalized()))
}

/// Round-robin ridge regression of each feature on all others, starting from
/// mean imputation. `n_rounds == 0` returns the mean-imputed matrix.
pub fn iterative_impute(x: &DataMatrix, m: &MaskMatrix, n_rounds: usize, ridge: f64) -> Result<DataMatrix> {
    Ok(iterative_impute_trace(x, m, n_rounds, ridge)?.0)
}

/// As [`iterative_impute`], also returning the Frobenius norm of the change made by each round.
pub fn iterative_impute_trace(
    x: &DataMatrix,
    m: &MaskMatrix,
    n_rounds: usize,
    ridge: f64,
) -> Result<(DataMatrix, Vec<f64>)> {
    if !(ridge.is_finite() && ridge > 0.0) {
        return Err(Error::InvalidArgument(format!("ridge must be positive, got {ridge}")));
    }
    let start = MeanImputer::fit(x, m)?.impute(x, m)?;
    let normalized = start.is_normalized();
    let mut cur = start.into_values();
    let (n, d) = cur.dim();
    let mask = m.values();
    let mut changes = Vec::with_capacity(n_rounds);
    if d < 2 {
        changes.resize(n_rounds, 0.0);
        return Ok((DataMatrix::new(cur)?.with_normalized(normalized), changes));
    }
    for _ in 0..n_rounds {
        let mut change = 0.0;
        for j in 0..d {
            let missing: Vec<usize> = (0..n).filter(|&i| mask[[i, j]] == 0.0).collect();
            if missing.is_empty() {
                continue;
            }
            let observed: Vec<usize> = (0..n).filter(|&i| mask[[i, j]] == 1.0).collect();
            let predictions = fit_and_predict(&cur, j, &observed, &missing, ridge)?;
            for (&i, p) in missing.iter().zip(predictions) {
                change += (p - cur[[i, j]]).powi(2);
                cur[[i, j]] = p;
            }
        }
        changes.push(change.sqrt());
    }
    Ok((DataMatrix::new(cur)?.with_normalized(normalized), changes))
}

/// Ridge fit of column `j` on the other columns over `train` rows, with an
/// unpenalized intercept, evaluated at `predict` rows.
fn fit_and_predict(a: &Array2<f64>, j: usize, train: &[usize], predict: &[usize], ridge: f64) -> Result<Vec<f64>> {
    let d = a.ncols();
    let others: Vec<usize> = (0..d).filter(|&k| k != j).collect();
    let p = others.len();
    let nt = train.len() as f64;
    let x_mean: Vec<f64> = others
        .iter()
        .map(|&k| train.iter().map(|&i| a[[i, k]]).sum::<f64>() / nt)
        .collect();
    let y_mean = train.iter().map(|&i| a[[i, j]]).sum::<f64>() / nt;

    let design = DMatrix::from_fn(train.len(), p, |r, c| a[[train[r], others[c]]] - x_mean[c]);
    let target = DVector::from_fn(train.len(), |r, _| a[[train[r], j]] - y_mean);
    let mut gram = design.transpose() * &design;
    for k in 0..p {
        gram[(k, k)] += ridge;
    }
    let rhs = design.transpose() * target;
    let beta = gram
        .cholesky()
        .ok_or_else(|| Error::InvalidArgument("ridge system is not positive definite".into()))?
        .solve(&rhs);
    Ok(predict
        .iter()
        .map(|&i| {
            y_mean
                + others
                    .iter()
                    .enumerate()
                    .map(|(c, &k)| beta[c] * (a[[i, k]] - x_mean[c]))
                    .sum::<f64>()
        })
        .collect())
}
