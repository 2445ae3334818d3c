// SPDX-License-Identifier: Apache-2.0

//! Numeric containers, masks, seeded noise and min-max normalization.
//!
//! Masks follow the convention `1 = observed`, `0 = missing` everywhere in
//! this crate. Missingness is never encoded inside a [`DataMatrix`].

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Samples × features matrix of finite sensor values.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    values: Array2<f64>,
    feature_names: Option<Vec<String>>,
    normalized: bool,
}

impl DataMatrix {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::InvalidArgument(format!(
                "data matrix must be non-empty, got {:?}",
                values.dim()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("data matrix"));
        }
        Ok(Self {
            values,
            feature_names: None,
            normalized: false,
        })
    }

    pub fn with_feature_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.n_features() {
            return Err(Error::InvalidArgument(format!(
                "{} feature names for {} features",
                names.len(),
                self.n_features()
            )));
        }
        self.feature_names = Some(names);
        Ok(self)
    }

    /// Marks the matrix as living in normalized units.
    pub fn with_normalized(mut self, normalized: bool) -> Self {
        self.normalized = normalized;
        self
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    pub fn feature_names(&self) -> Option<&[String]> {
        self.feature_names.as_deref()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn n_samples(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.values.ncols()
    }

    pub fn dim(&self) -> (usize, usize) {
        self.values.dim()
    }

    /// Contiguous block of rows `[start, end)`, keeping names and the normalized flag.
    pub fn rows(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.n_samples() {
            return Err(Error::InvalidArgument(format!(
                "row range {start}..{end} out of bounds for {} rows",
                self.n_samples()
            )));
        }
        Ok(Self {
            values: self.values.slice(s![start..end, ..]).to_owned(),
            feature_names: self.feature_names.clone(),
            normalized: self.normalized,
        })
    }
}

/// Binary observation indicator, `1.0` for observed and `0.0` for missing.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskMatrix {
    values: Array2<f64>,
}

impl MaskMatrix {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::InvalidArgument("mask entries must be 0 or 1".into()));
        }
        Ok(Self { values })
    }

    pub fn ones(rows: usize, cols: usize) -> Self {
        Self {
            values: Array2::ones((rows, cols)),
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            values: Array2::zeros((rows, cols)),
        }
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn dim(&self) -> (usize, usize) {
        self.values.dim()
    }

    pub fn is_observed(&self, row: usize, col: usize) -> bool {
        self.values[[row, col]] == 1.0
    }

    pub fn missing_count(&self) -> usize {
        self.values.iter().filter(|&&v| v == 0.0).count()
    }

    pub fn missing_fraction(&self) -> f64 {
        self.missing_count() as f64 / self.values.len() as f64
    }

    /// `1 - m`, the indicator of missing entries.
    pub fn complement(&self) -> Array2<f64> {
        self.values.mapv(|v| 1.0 - v)
    }

    pub fn rows(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.values.nrows() {
            return Err(Error::InvalidArgument(format!(
                "row range {start}..{end} out of bounds for {} rows",
                self.values.nrows()
            )));
        }
        Ok(Self {
            values: self.values.slice(s![start..end, ..]).to_owned(),
        })
    }

    /// Entry-wise logical AND.
    pub fn and(&self, other: &MaskMatrix) -> Result<Self> {
        check_same_dim("mask and", self.dim(), other.dim())?;
        Ok(Self {
            values: &self.values * &other.values,
        })
    }

    pub fn ensure_matches(&self, dim: (usize, usize)) -> Result<()> {
        check_same_dim("mask", dim, self.dim())
    }
}

pub(crate) fn check_same_dim(
    context: &'static str,
    expected: (usize, usize),
    found: (usize, usize),
) -> Result<()> {
    if expected != found {
        return Err(Error::shape(context, expected, found));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseDistribution {
    #[default]
    Uniform01,
    StandardNormal,
}

/// Seeded random stream. Two sources built from the same seed yield identical draws.
#[derive(Debug, Clone)]
pub struct NoiseSource {
    distribution: NoiseDistribution,
    seed: u64,
    rng: ChaCha8Rng,
}

impl NoiseSource {
    pub fn new(distribution: NoiseDistribution, seed: u64) -> Self {
        Self {
            distribution,
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn uniform(seed: u64) -> Self {
        Self::new(NoiseDistribution::Uniform01, seed)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn distribution(&self) -> NoiseDistribution {
        self.distribution
    }

    /// Independent child stream; depends only on this source's seed and `stream`.
    pub fn fork(&self, stream: u64) -> Self {
        Self::new(self.distribution, derive_seed(self.seed, &[stream]))
    }

    /// Matrix of draws from the configured distribution.
    pub fn sample(&mut self, rows: usize, cols: usize) -> Array2<f64> {
        match self.distribution {
            NoiseDistribution::Uniform01 => {
                Array2::from_shape_simple_fn((rows, cols), || self.rng.random::<f64>())
            }
            NoiseDistribution::StandardNormal => {
                Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(&mut self.rng))
            }
        }
    }

    pub fn uniform01(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    pub fn index(&mut self, upper: usize) -> usize {
        self.rng.random_range(0..upper)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.rng);
    }
}

/// Mixes a base seed with a list of tags (splitmix64 finalizer per step).
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    tags.iter().fold(mix(base), |acc, &t| mix(acc ^ mix(t)))
}

/// MCAR mask: every entry is missing independently with probability `missing_rate`.
pub fn generate_mcar_mask(
    n_samples: usize,
    d: usize,
    missing_rate: f64,
    rng: &mut NoiseSource,
) -> Result<MaskMatrix> {
    if !(0.0..=1.0).contains(&missing_rate) {
        return Err(Error::InvalidArgument(format!(
            "missing rate {missing_rate} outside [0, 1]"
        )));
    }
    let values = Array2::from_shape_simple_fn((n_samples, d), || {
        if rng.uniform01() < missing_rate {
            0.0
        } else {
            1.0
        }
    });
    Ok(MaskMatrix { values })
}

/// Independent uniform permutation of every row; per-row missing counts are preserved.
pub fn reshuffle_mask(m: &MaskMatrix, rng: &mut NoiseSource) -> MaskMatrix {
    let mut values = m.values.clone();
    for mut row in values.axis_iter_mut(Axis(0)) {
        match row.as_slice_mut() {
            Some(slice) => rng.shuffle(slice),
            None => {
                let mut buf = row.to_vec();
                rng.shuffle(&mut buf);
                row.iter_mut().zip(buf).for_each(|(dst, v)| *dst = v);
            }
        }
    }
    MaskMatrix { values }
}

/// Per-feature min/max over observed entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub per_feature_min: Vec<f64>,
    pub per_feature_max: Vec<f64>,
}

impl NormalizationStats {
    pub fn dim(&self) -> usize {
        self.per_feature_min.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

pub fn fit_normalizer(x: &DataMatrix, m: &MaskMatrix) -> Result<NormalizationStats> {
    m.ensure_matches(x.dim())?;
    let d = x.n_features();
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for ((i, j), &v) in x.values.indexed_iter() {
        if m.values[[i, j]] == 1.0 {
            lo[j] = lo[j].min(v);
            hi[j] = hi[j].max(v);
        }
    }
    if let Some(feature) = lo.iter().position(|v| v.is_infinite()) {
        return Err(Error::FullyMissingFeature { feature });
    }
    Ok(NormalizationStats {
        per_feature_min: lo,
        per_feature_max: hi,
    })
}

/// Forward maps to `[0, 1]` (clamping out-of-range values); inverse undoes it.
/// Degenerate features (`max == min`) map to 0 forward and back to `min`.
pub fn transform(
    x: &DataMatrix,
    stats: &NormalizationStats,
    direction: Direction,
) -> Result<DataMatrix> {
    let values = transform_array(x.view(), stats, direction)?;
    Ok(DataMatrix {
        values,
        feature_names: x.feature_names.clone(),
        normalized: direction == Direction::Forward,
    })
}

pub fn transform_array(
    x: ArrayView2<'_, f64>,
    stats: &NormalizationStats,
    direction: Direction,
) -> Result<Array2<f64>> {
    if x.ncols() != stats.dim() {
        return Err(Error::shape(
            "normalization",
            (x.nrows(), stats.dim()),
            x.dim(),
        ));
    }
    let mut out = x.to_owned();
    for (j, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
        let (lo, hi) = (stats.per_feature_min[j], stats.per_feature_max[j]);
        let range = hi - lo;
        match direction {
            Direction::Forward if range > 0.0 => {
                col.mapv_inplace(|v| ((v - lo) / range).clamp(0.0, 1.0))
            }
            Direction::Forward => col.fill(0.0),
            Direction::Inverse => col.mapv_inplace(|v| lo + v * range),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn mcar_extremes() {
        let mut rng = NoiseSource::uniform(1);
        assert_eq!(
            generate_mcar_mask(4, 5, 0.0, &mut rng).unwrap(),
            MaskMatrix::ones(4, 5)
        );
        let mut rng = NoiseSource::uniform(1);
        assert_eq!(
            generate_mcar_mask(4, 5, 1.0, &mut rng).unwrap(),
            MaskMatrix::zeros(4, 5)
        );
    }

    #[test]
    fn mcar_rejects_bad_rate() {
        let mut rng = NoiseSource::uniform(1);
        assert!(generate_mcar_mask(2, 2, 1.2, &mut rng).is_err());
        assert!(generate_mcar_mask(2, 2, -0.1, &mut rng).is_err());
    }

    #[test]
    fn mcar_fraction_by_count() {
        let mut rng = NoiseSource::uniform(7);
        let m = generate_mcar_mask(1000, 214, 0.3, &mut rng).unwrap();
        let frac = m.missing_fraction();
        assert!((frac - 0.3).abs() < 0.02, "{frac}");
    }

    #[test]
    fn mcar_row_counts_follow_binomial() {
        // chi-square goodness of fit of row-wise zero counts against Binomial(d, r)
        let (n, d, r) = (10_000usize, 10usize, 0.3f64);
        let mut rng = NoiseSource::uniform(11);
        let m = generate_mcar_mask(n, d, r, &mut rng).unwrap();
        let mut observed = vec![0usize; d + 1];
        for row in m.values().rows() {
            observed[row.iter().filter(|&&v| v == 0.0).count()] += 1;
        }
        let mut binom = vec![0.0; d + 1];
        for (k, p) in binom.iter_mut().enumerate() {
            let mut c = 1.0;
            for i in 0..k {
                c = c * (d - i) as f64 / (i + 1) as f64;
            }
            *p = c * r.powi(k as i32) * (1.0 - r).powi((d - k) as i32);
        }
        // pool sparse tails so every expected count is >= 5
        let mut cells: Vec<(f64, f64)> = Vec::new();
        let (mut acc_o, mut acc_e) = (0.0, 0.0);
        for k in 0..=d {
            acc_o += observed[k] as f64;
            acc_e += binom[k] * n as f64;
            if acc_e >= 5.0 {
                cells.push((acc_o, acc_e));
                acc_o = 0.0;
                acc_e = 0.0;
            }
        }
        if acc_e > 0.0 {
            let last = cells.last_mut().unwrap();
            last.0 += acc_o;
            last.1 += acc_e;
        }
        let chi2: f64 = cells.iter().map(|(o, e)| (o - e).powi(2) / e).sum();
        let dof = cells.len() - 1;
        // upper 0.001 critical values of chi-square
        let critical = [
            10.83, 13.82, 16.27, 18.47, 20.52, 22.46, 24.32, 26.12, 27.88, 29.59,
        ];
        assert!(chi2 < critical[dof - 1], "chi2 {chi2} with {dof} dof");
    }

    #[test]
    fn reshuffle_constant_row_and_counts() {
        let m = MaskMatrix::new(array![[1.0, 1.0, 1.0]]).unwrap();
        let mut rng = NoiseSource::uniform(3);
        assert_eq!(reshuffle_mask(&m, &mut rng), m);

        let m = MaskMatrix::new(array![
            [1.0, 1.0, 0.0, 0.0],
            [1.0, 1.0, 1.0, 0.0],
            [1.0, 0.0, 0.0, 0.0]
        ])
        .unwrap();
        let n = reshuffle_mask(&m, &mut rng);
        let sums: Vec<f64> = n.values().rows().into_iter().map(|r| r.sum()).collect();
        assert_eq!(sums, vec![2.0, 3.0, 1.0]);
    }

    #[test]
    fn reshuffle_two_entry_row_is_fair() {
        let m = MaskMatrix::new(array![[0.0, 1.0]]).unwrap();
        let trials = 10_000;
        let same = (0..trials)
            .filter(|&seed| {
                let mut rng = NoiseSource::uniform(seed);
                reshuffle_mask(&m, &mut rng) == m
            })
            .count();
        let freq = same as f64 / trials as f64;
        assert!((freq - 0.5).abs() < 0.02, "{freq}");
    }

    #[test]
    fn normalizer_uses_observed_only() {
        let x = DataMatrix::new(array![[2.0], [4.0], [6.0]]).unwrap();
        let all = fit_normalizer(&x, &MaskMatrix::ones(3, 1)).unwrap();
        assert_eq!((all.per_feature_min[0], all.per_feature_max[0]), (2.0, 6.0));
        let m = MaskMatrix::new(array![[1.0], [1.0], [0.0]]).unwrap();
        let part = fit_normalizer(&x, &m).unwrap();
        assert_eq!(
            (part.per_feature_min[0], part.per_feature_max[0]),
            (2.0, 4.0)
        );
    }

    #[test]
    fn normalizer_fails_on_fully_missing_feature() {
        let x = DataMatrix::new(array![[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let m = MaskMatrix::new(array![[1.0, 0.0], [1.0, 0.0]]).unwrap();
        assert!(matches!(
            fit_normalizer(&x, &m),
            Err(Error::FullyMissingFeature { feature: 1 })
        ));
    }

    #[test]
    fn transform_examples() {
        let stats = NormalizationStats {
            per_feature_min: vec![2.0, 5.0],
            per_feature_max: vec![6.0, 5.0],
        };
        let x = DataMatrix::new(array![[4.0, 5.0], [8.0, 5.0]]).unwrap();
        let f = transform(&x, &stats, Direction::Forward).unwrap();
        assert_eq!(f.values(), &array![[0.5, 0.0], [1.0, 0.0]]);
        assert!(f.is_normalized());
        let back = transform(&f, &stats, Direction::Inverse).unwrap();
        assert_eq!(back.values()[[0, 0]], 4.0);
        assert_eq!(back.values()[[0, 1]], 5.0);
        // clamped entry comes back at the range edge
        assert_eq!(back.values()[[1, 0]], 6.0);
    }

    #[test]
    fn data_matrix_rejects_non_finite() {
        assert!(DataMatrix::new(array![[1.0, f64::NAN]]).is_err());
        assert!(DataMatrix::new(Array2::zeros((0, 3))).is_err());
    }

    #[test]
    fn noise_is_reproducible() {
        let a = NoiseSource::new(NoiseDistribution::StandardNormal, 5).sample(3, 4);
        let b = NoiseSource::new(NoiseDistribution::StandardNormal, 5).sample(3, 4);
        assert_eq!(a, b);
        let u = NoiseSource::uniform(5).sample(100, 10);
        assert!(u.iter().all(|&v| (0.0..1.0).contains(&v)));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn transform_round_trip(
                seed in 0u64..1000,
                rows in 1usize..8,
                cols in 1usize..6,
            ) {
                let mut rng = NoiseSource::new(NoiseDistribution::StandardNormal, seed);
                let x = DataMatrix::new(rng.sample(rows, cols).mapv(|v| v * 50.0 + 3.0)).unwrap();
                let stats = fit_normalizer(&x, &MaskMatrix::ones(rows, cols)).unwrap();
                let f = transform(&x, &stats, Direction::Forward).unwrap();
                let back = transform(&f, &stats, Direction::Inverse).unwrap();
                for j in 0..cols {
                    let degenerate = stats.per_feature_max[j] == stats.per_feature_min[j];
                    for i in 0..rows {
                        let expected = if degenerate { stats.per_feature_min[j] } else { x.values()[[i, j]] };
                        prop_assert!((back.values()[[i, j]] - expected).abs() < 1e-9);
                    }
                }
                // inverse then forward on [0, 1]
                let unit = DataMatrix::new(NoiseSource::uniform(seed).sample(rows, cols)).unwrap();
                let inv = transform(&unit, &stats, Direction::Inverse).unwrap();
                let fwd = transform(&inv, &stats, Direction::Forward).unwrap();
                for j in 0..cols {
                    if stats.per_feature_max[j] == stats.per_feature_min[j] { continue; }
                    for i in 0..rows {
                        prop_assert!((fwd.values()[[i, j]] - unit.values()[[i, j]]).abs() < 1e-9);
                    }
                }
            }

            #[test]
            fn reshuffle_preserves_row_weight(seed in 0u64..10_000, rate in 0.0f64..1.0) {
                let mut rng = NoiseSource::uniform(seed);
                let m = generate_mcar_mask(6, 9, rate, &mut rng).unwrap();
                let n = reshuffle_mask(&m, &mut rng);
                for (a, b) in m.values().rows().into_iter().zip(n.values().rows()) {
                    prop_assert_eq!(a.sum(), b.sum());
                }
            }
        }
    }
}
