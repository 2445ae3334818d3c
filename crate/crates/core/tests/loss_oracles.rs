// SPDX-License-Identifier: Apache-2.0

mod common;

use common::oracles::{
    critic_oracle, discriminator_oracle, generator_oracle, rows, ScalarCritic,
};
use igani_core::losses::{
    gain_discriminator_loss, gain_generator_loss, gain_hint, igani_critic_loss, igani_generator_loss, misgan_mask_fn,
    GAIN_EPS,
};
use igani_core::{LayerSpec, MaskMatrix, Network, NoiseSource};
use ndarray::{array, Array2};
use proptest::prelude::*;

#[test]
fn igani_critic_loss_matches_scalar_oracle_on_hand_case() {
    // d = 2, b = 1, one hidden layer of width 2 and a two-wide output.
    let c = ScalarCritic {
        w1: vec![vec![0.5, -1.0], vec![1.5, 0.25]],
        b1: vec![0.1, 0.2],
        w2: vec![vec![1.0, -0.5], vec![0.75, 2.0]],
        b2: vec![0.3, -0.1],
    };
    let v = array![[0.4, 0.9]];
    let v_hat = array![[0.2, 0.6]];
    let seed = 5;
    let t = vec![NoiseSource::uniform(seed).uniform01()];
    let value = igani_critic_loss(&c.network(), &v, &v_hat, &mut NoiseSource::uniform(seed)).unwrap();
    let oracle = critic_oracle(&c, &rows(&v), &rows(&v_hat), &t);
    assert!((value.value - oracle).abs() < 1e-12, "{} vs {oracle}", value.value);
    assert!((value.value - value.components_sum()).abs() < 1e-12);
}

#[test]
fn igani_critic_loss_matches_scalar_oracle_on_random_cases() {
    for seed in 0..200u64 {
        let d = 1 + (seed as usize % 3);
        let b = 1 + (seed as usize / 3 % 2);
        let c = ScalarCritic::random(d, 3, 1 + seed as usize % 3, seed);
        let v = NoiseSource::uniform(seed + 1000).sample(b, d);
        let v_hat = NoiseSource::uniform(seed + 2000).sample(b, d);
        let mut t_rng = NoiseSource::uniform(seed + 3000);
        let t: Vec<f64> = (0..b).map(|_| t_rng.uniform01()).collect();
        let value = igani_critic_loss(&c.network(), &v, &v_hat, &mut NoiseSource::uniform(seed + 3000)).unwrap();
        let oracle = critic_oracle(&c, &rows(&v), &rows(&v_hat), &t);
        assert!((value.value - oracle).abs() < 1e-12, "seed {seed}: {} vs {oracle}", value.value);
    }
}

#[test]
fn igani_generator_loss_matches_scalar_oracle() {
    for seed in 0..200u64 {
        let d = 1 + (seed as usize % 3);
        let b = 1 + (seed as usize / 3 % 2);
        let c = ScalarCritic::random(d, 2, 2, seed + 7);
        let v_hat = NoiseSource::uniform(seed).sample(b, d);
        let value = igani_generator_loss(&c.network(), &v_hat).unwrap().value;
        let oracle = -rows(&v_hat).iter().map(|r| c.score(r)).sum::<f64>() / b as f64;
        assert!((value - oracle).abs() < 1e-12, "seed {seed}");
    }
}

#[test]
fn igani_generator_loss_closed_forms() {
    let constant = Network::from_params(
        &[LayerSpec::dense(3, 1)],
        vec![Array2::zeros((3, 1)), array![[0.8]]],
    )
    .unwrap();
    assert!((igani_generator_loss(&constant, &array![[0.1, 0.2, 0.3]]).unwrap().value + 0.8).abs() < 1e-15);
    let mean = Network::from_params(
        &[LayerSpec::dense(3, 1)],
        vec![Array2::from_elem((3, 1), 1.0 / 3.0), array![[0.0]]],
    )
    .unwrap();
    let v_hat = Array2::from_elem((2, 3), 0.5);
    assert!((igani_generator_loss(&mean, &v_hat).unwrap().value + 0.5).abs() < 1e-15);
}

#[test]
fn gain_losses_hand_cases() {
    let m = MaskMatrix::new(array![[1.0, 0.0]]).unwrap();
    let d = gain_discriminator_loss(&array![[0.9, 0.2]], &m).unwrap().value;
    assert!((d + (0.9f64.ln() + 0.8f64.ln())).abs() < 1e-12);
    let g = gain_generator_loss(&array![[0.3, 0.6]], &m).unwrap().value;
    assert!((g + 0.6f64.ln()).abs() < 1e-12);

    let half = Array2::from_elem((3, 4), 0.5);
    let any = MaskMatrix::new(array![[1.0, 0.0, 1.0, 1.0], [0.0, 0.0, 0.0, 1.0], [1.0, 1.0, 1.0, 1.0]]).unwrap();
    assert!((gain_discriminator_loss(&half, &any).unwrap().value - 4.0 * 2f64.ln()).abs() < 1e-12);

    let perfect = gain_discriminator_loss(any.values(), &any).unwrap().value;
    assert!((perfect - 4.0 * -(1.0 - GAIN_EPS).ln()).abs() < 1e-12);
    assert!(perfect < 1e-5);

    let ones = MaskMatrix::ones(2, 3);
    assert_eq!(gain_generator_loss(&Array2::from_elem((2, 3), 0.2), &ones).unwrap().value, 0.0);
    let fooled = gain_generator_loss(&Array2::from_elem((2, 3), 1.0), &MaskMatrix::zeros(2, 3)).unwrap().value;
    assert!(fooled < 1e-6);
}

#[test]
fn gain_losses_match_scalar_oracles_on_random_cases() {
    let mut rng = NoiseSource::uniform(41);
    for _ in 0..500 {
        let b = 1 + rng.index(2);
        let d = 1 + rng.index(3);
        let m_hat = rng.sample(b, d);
        let m = Array2::from_shape_simple_fn((b, d), || if rng.uniform01() < 0.5 { 0.0 } else { 1.0 });
        let mask = MaskMatrix::new(m.clone()).unwrap();
        let dv = gain_discriminator_loss(&m_hat, &mask).unwrap().value;
        let gv = gain_generator_loss(&m_hat, &mask).unwrap().value;
        assert!((dv - discriminator_oracle(&m_hat, &m)).abs() < 1e-12);
        assert!((gv - generator_oracle(&m_hat, &m)).abs() < 1e-12);
        assert!(dv >= 0.0 && gv >= 0.0);
    }
}

#[test]
fn misgan_mask_fn_matches_scalar_oracle() {
    assert_eq!(misgan_mask_fn(array![[1.0, 2.0]].view(), array![[1.0, 0.0]].view(), 0.5).unwrap(), array![[1.0, 0.5]]);
    let x = array![[3.0, -1.0, 2.0], [0.5, 0.25, 9.0]];
    assert_eq!(misgan_mask_fn(x.view(), Array2::zeros((2, 3)).view(), 0.0).unwrap(), Array2::<f64>::zeros((2, 3)));
    assert_eq!(misgan_mask_fn(x.view(), Array2::ones((2, 3)).view(), 0.0).unwrap(), x);
    let mut rng = NoiseSource::uniform(12);
    for _ in 0..500 {
        let b = 1 + rng.index(2);
        let d = 1 + rng.index(3);
        let x = rng.sample(b, d);
        let m = rng.sample(b, d);
        let tau = rng.uniform01() * 2.0 - 1.0;
        let out = misgan_mask_fn(x.view(), m.view(), tau).unwrap();
        for i in 0..b {
            for j in 0..d {
                let oracle = x[[i, j]] * m[[i, j]] + tau * (1.0 - m[[i, j]]);
                assert!((out[[i, j]] - oracle).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn hint_has_one_half_per_row_with_uniform_position() {
    let m = MaskMatrix::new(array![[1.0, 0.0, 1.0]]).unwrap();
    let mut counts = [0usize; 3];
    let draws = 10_000;
    for seed in 0..draws {
        let h = gain_hint(&m, &mut NoiseSource::uniform(seed)).unwrap().into_values();
        let halves: Vec<usize> = (0..3).filter(|&j| h[[0, j]] == 0.5).collect();
        assert_eq!(halves.len(), 1);
        for j in 0..3 {
            if j != halves[0] {
                assert_eq!(h[[0, j]], m.values()[[0, j]]);
            }
        }
        counts[halves[0]] += 1;
    }
    for c in counts {
        assert!((c as f64 / draws as f64 - 1.0 / 3.0).abs() < 0.02, "{counts:?}");
    }
    let single = gain_hint(&MaskMatrix::ones(5, 1), &mut NoiseSource::uniform(0)).unwrap();
    assert!(single.values().iter().all(|&v| v == 0.5));
}

proptest! {
    #[test]
    fn hint_structure(b in 1usize..8, d in 1usize..10, seed in any::<u64>()) {
        let m = igani_core::generate_mcar_mask(b, d, 0.5, &mut NoiseSource::uniform(seed)).unwrap();
        let h = gain_hint(&m, &mut NoiseSource::uniform(seed ^ 1)).unwrap().into_values();
        for (hr, mr) in h.rows().into_iter().zip(m.values().rows()) {
            let halves = hr.iter().filter(|&&v| v == 0.5).count();
            prop_assert_eq!(halves, 1);
            let differing = hr.iter().zip(mr.iter()).filter(|(a, b)| a != b).count();
            prop_assert_eq!(differing, 1);
        }
    }

    #[test]
    fn critic_loss_decomposes_into_components(seed in any::<u64>(), b in 1usize..5, d in 1usize..4) {
        let c = ScalarCritic::random(d, 3, 2, seed).network();
        let v = NoiseSource::uniform(seed ^ 2).sample(b, d);
        let v_hat = NoiseSource::uniform(seed ^ 3).sample(b, d);
        let loss = igani_critic_loss(&c, &v, &v_hat, &mut NoiseSource::uniform(seed ^ 4)).unwrap();
        prop_assert!((loss.value - loss.components_sum()).abs() < 1e-12);
        prop_assert!(loss.component("penalty_term").unwrap() >= 0.0);
    }
}
