// SPDX-License-Identifier: Apache-2.0

#![allow(dead_code)]

pub mod oracles;

use std::fs;
use std::path::Path;

use igani_core::datasets::{make_synthetic, SyntheticKind};
use igani_core::{
    build_mlp, fit_normalizer, generate_mcar_mask, transform, Architecture, DataMatrix, Direction,
    GenerativeImputer, LayerSpec, MaskMatrix, Mode, Network, NoiseSource, TrainConfig,
};
use ndarray::Array2;

/// Network with He-uniform weights and small random biases, in eval mode.
pub fn eval_mlp(spec: &[LayerSpec], seed: u64) -> Network {
    let mut net = build_mlp(spec, &mut NoiseSource::uniform(seed)).unwrap();
    let mut rng = NoiseSource::uniform(seed ^ 0xb1a5);
    for p in net.params_mut() {
        if p.nrows() == 1 {
            p.mapv_inplace(|_| 0.2 * (rng.uniform01() - 0.5));
        }
    }
    net.set_mode(Mode::Eval);
    net
}

pub fn tiny_arch() -> Architecture {
    Architecture {
        generator_hidden: 16,
        critic_hidden: 8,
        predictor_hidden: 8,
        dropout: 0.05,
    }
}

pub fn tiny_config(n_epochs: usize) -> TrainConfig {
    TrainConfig {
        n_epochs,
        critic_updates_base: 2,
        critic_updates_epoch_div: 1,
        batch_size: 4,
        misgan_critic_updates: 2,
        predictor_epochs: 5,
        architecture: tiny_arch(),
        ..TrainConfig::default()
    }
}

/// Normalized low-rank data with an MCAR mask; missing entries zeroed in `x`.
pub fn masked_low_rank(t: usize, d: usize, rate: f64, seed: u64) -> (DataMatrix, MaskMatrix, DataMatrix) {
    let ds = make_synthetic(SyntheticKind::LowRank { rank: 2.min(d - 1), noise: 0.05 }, t, d, seed).unwrap();
    let stats = fit_normalizer(&ds.matrix, &ds.original_mask).unwrap();
    let truth = transform(&ds.matrix, &stats, Direction::Forward).unwrap();
    let m = generate_mcar_mask(t, d, rate, &mut NoiseSource::uniform(seed.wrapping_add(1))).unwrap();
    let x = DataMatrix::new(truth.values() * m.values()).unwrap().with_normalized(true);
    (x, m, truth)
}

/// Central finite differences of `loss` over every parameter entry of `net`,
/// compared against `analytic`. Returns the worst relative error.
pub fn fd_check(net: &Network, analytic: &[Array2<f64>], h: f64, mut loss: impl FnMut(&Network) -> f64) -> f64 {
    assert_eq!(analytic.len(), net.params().len());
    let mut worst = 0.0f64;
    for (k, grad) in analytic.iter().enumerate() {
        assert_eq!(grad.dim(), net.params()[k].dim());
        for idx in 0..grad.len() {
            let (r, c) = (idx / grad.ncols(), idx % grad.ncols());
            let mut plus = net.clone();
            plus.params_mut()[k][[r, c]] += h;
            let mut minus = net.clone();
            minus.params_mut()[k][[r, c]] -= h;
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * h);
            let a = grad[[r, c]];
            let scale = a.abs().max(numeric.abs());
            let err = if scale < 1e-7 { (a - numeric).abs() } else { (a - numeric).abs() / scale };
            worst = worst.max(err);
        }
    }
    worst
}

pub fn max_abs(a: &Array2<f64>) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Frozen random ReLU network `d -> h -> d`.
pub fn frozen_imputer(d: usize, seed: u64) -> GenerativeImputer {
    let hidden = if d > 100 { 48 } else { 12 };
    let spec = [
        LayerSpec::dense(d, hidden),
        LayerSpec::Relu,
        LayerSpec::dense(hidden, hidden),
        LayerSpec::Relu,
        LayerSpec::dense(hidden, d),
    ];
    let mut g = build_mlp(&spec, &mut NoiseSource::uniform(seed)).unwrap();
    let mut rng = NoiseSource::uniform(seed ^ 0xface);
    for p in g.params_mut() {
        if p.nrows() == 1 {
            p.mapv_inplace(|_| rng.uniform01() - 0.5);
        }
    }
    g.set_mode(Mode::Eval);
    assert!(g.has_nonlinearity());
    GenerativeImputer::new(g).unwrap()
}

pub fn write_binary(path: &Path, values: &[f64], shape: &[usize]) {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(path, bytes).unwrap();
    let side = format!("{}.json", path.display());
    fs::write(side, serde_json::json!({"shape": shape, "order": "row_major"}).to_string()).unwrap();
}

pub fn write_csv(path: &Path, a: &Array2<f64>) {
    let mut s = String::new();
    for row in a.rows() {
        s.push_str(&row.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(","));
        s.push('\n');
    }
    fs::write(path, s).unwrap();
}
