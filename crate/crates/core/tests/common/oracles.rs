// SPDX-License-Identifier: Apache-2.0

//! Independent scalar-arithmetic oracles for the losses.

use igani_core::losses::GAIN_EPS;
use igani_core::{LayerSpec, Network, NoiseSource};
use ndarray::Array2;

pub const LAMBDA: f64 = 10.0;
pub const H: f64 = 1e-6;

/// Hand-specified `d -> h -> k` ReLU critic held as plain nested vectors.
pub struct ScalarCritic {
    pub w1: Vec<Vec<f64>>,
    pub b1: Vec<f64>,
    pub w2: Vec<Vec<f64>>,
    pub b2: Vec<f64>,
}

impl ScalarCritic {
    pub fn random(d: usize, h: usize, k: usize, seed: u64) -> Self {
        let mut rng = NoiseSource::uniform(seed);
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| 2.0 * rng.uniform01() - 1.0).collect() };
        let w1 = (0..d).map(|_| draw(h)).collect();
        let b1 = draw(h);
        let w2 = (0..h).map(|_| draw(k)).collect();
        let b2 = draw(k);
        Self { w1, b1, w2, b2 }
    }

    pub fn network(&self) -> Network {
        let d = self.w1.len();
        let h = self.b1.len();
        let k = self.b2.len();
        let flat = |rows: &Vec<Vec<f64>>, r: usize, c: usize| {
            Array2::from_shape_vec((r, c), rows.iter().flatten().copied().collect()).unwrap()
        };
        Network::from_params(
            &[LayerSpec::dense(d, h), LayerSpec::Relu, LayerSpec::dense(h, k)],
            vec![
                flat(&self.w1, d, h),
                Array2::from_shape_vec((1, h), self.b1.clone()).unwrap(),
                flat(&self.w2, h, k),
                Array2::from_shape_vec((1, k), self.b2.clone()).unwrap(),
            ],
        )
        .unwrap()
    }

    pub fn pre(&self, y: &[f64]) -> Vec<f64> {
        (0..self.b1.len())
            .map(|j| self.b1[j] + (0..y.len()).map(|i| self.w1[i][j] * y[i]).sum::<f64>())
            .collect()
    }

    /// Mean of the output row.
    pub fn score(&self, y: &[f64]) -> f64 {
        let pre = self.pre(y);
        let k = self.b2.len();
        let mut total = 0.0;
        for c in 0..k {
            let mut out = self.b2[c];
            for (j, p) in pre.iter().enumerate() {
                out += self.w2[j][c] * p.max(0.0);
            }
            total += out;
        }
        total / k as f64
    }

    pub fn input_gradient_norm(&self, y: &[f64]) -> f64 {
        let pre = self.pre(y);
        let k = self.b2.len() as f64;
        let mut sq = 0.0;
        for i in 0..y.len() {
            let mut g = 0.0;
            for (j, p) in pre.iter().enumerate() {
                if *p > 0.0 {
                    g += self.w1[i][j] * self.w2[j].iter().sum::<f64>() / k;
                }
            }
            sq += g * g;
        }
        sq.sqrt()
    }
}

pub fn rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

pub fn critic_oracle(c: &ScalarCritic, v: &[Vec<f64>], v_hat: &[Vec<f64>], t: &[f64]) -> f64 {
    let b = v.len() as f64;
    let mut fake = 0.0;
    let mut real = 0.0;
    let mut pen = 0.0;
    for i in 0..v.len() {
        real += c.score(&v[i]);
        fake += c.score(&v_hat[i]);
        let y: Vec<f64> = (0..v[i].len()).map(|j| t[i] * v_hat[i][j] + (1.0 - t[i]) * v[i][j]).collect();
        pen += (c.input_gradient_norm(&y) - 1.0).powi(2);
    }
    fake / b - real / b + LAMBDA * pen / b
}

pub fn clamp(p: f64) -> f64 {
    p.clamp(GAIN_EPS, 1.0 - GAIN_EPS)
}

pub fn discriminator_oracle(m_hat: &Array2<f64>, m: &Array2<f64>) -> f64 {
    let mut total = 0.0;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            let p = clamp(m_hat[[i, j]]);
            total += m[[i, j]] * p.ln() + (1.0 - m[[i, j]]) * (1.0 - p).ln();
        }
    }
    -total / m.nrows() as f64
}

pub fn generator_oracle(m_hat: &Array2<f64>, m: &Array2<f64>) -> f64 {
    let mut total = 0.0;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            total += (1.0 - m[[i, j]]) * clamp(m_hat[[i, j]]).ln();
        }
    }
    -total / m.nrows() as f64
}

/// Score with the per-sample critic convention: mean of the output row.
pub fn score(critic: &Network, y: &Array2<f64>) -> Vec<f64> {
    let out = critic.forward_eval(y.view()).unwrap();
    out.rows().into_iter().map(|r| r.mean().unwrap()).collect()
}

/// λ · mean (‖∇_y D(y)‖ - 1)² with the input gradient taken by central differences.
pub fn penalty_by_finite_differences(critic: &Network, real: &Array2<f64>, fake: &Array2<f64>, t: &[f64], lambda: f64) -> f64 {
    let (b, d) = real.dim();
    let mut total = 0.0;
    for i in 0..b {
        let y: Vec<f64> = (0..d).map(|j| t[i] * fake[[i, j]] + (1.0 - t[i]) * real[[i, j]]).collect();
        let mut sq = 0.0;
        for j in 0..d {
            let mut p = Array2::from_shape_vec((1, d), y.clone()).unwrap();
            let mut q = p.clone();
            p[[0, j]] += H;
            q[[0, j]] -= H;
            let g = (score(critic, &p)[0] - score(critic, &q)[0]) / (2.0 * H);
            sq += g * g;
        }
        total += (sq.sqrt() - 1.0).powi(2);
    }
    lambda * total / b as f64
}

