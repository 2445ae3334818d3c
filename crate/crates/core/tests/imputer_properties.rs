// SPDX-License-Identifier: Apache-2.0

mod common;

use common::{frozen_imputer, max_abs};
use igani_core::imputer::{impute_with, invert_with};
use igani_core::{generate_mcar_mask, recover_mask, reshuffle_mask, GenerativeImputer, MaskMatrix, NoiseSource};
use ndarray::{array, Array2, ArrayView2, Zip};
use proptest::prelude::*;

const DIMS: [usize; 3] = [3, 16, 214];

struct Instance {
    x: Array2<f64>,
    m: MaskMatrix,
    z: Array2<f64>,
}

fn instance(b: usize, d: usize, rate: f64, seed: u64) -> Instance {
    let mut rng = NoiseSource::new(igani_core::NoiseDistribution::StandardNormal, seed);
    let x = rng.sample(b, d);
    let m = generate_mcar_mask(b, d, rate, &mut NoiseSource::uniform(seed ^ 1)).unwrap();
    let z = NoiseSource::uniform(seed ^ 2).sample(b, d);
    Instance { x, m, z }
}

fn impute(imp: &GenerativeImputer, inst: &Instance) -> (Array2<f64>, Array2<f64>) {
    imp.impute_arrays(inst.x.view(), inst.m.view(), inst.z.view(), &mut NoiseSource::uniform(0))
        .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1200))]

    #[test]
    fn invert_reconstructs_observed_values_mask_and_noise(
        dim in 0usize..3,
        b in 1usize..6,
        rate in 0.0f64..1.0,
        seed in any::<u64>(),
    ) {
        let d = DIMS[dim];
        let imp = frozen_imputer(d, seed);
        let inst = instance(b, d, rate, seed.wrapping_mul(31));
        let (u, v) = impute(&imp, &inst);
        let (x_obs, m, z_miss) = imp.invert(u.view(), v.view(), 0.0).unwrap();
        prop_assert_eq!(m.values(), inst.m.values());
        let want_x = &inst.x * inst.m.values();
        let want_z = &inst.z * &inst.m.complement();
        prop_assert!(max_abs(&(&x_obs - &want_x)) < 1e-9);
        prop_assert!(max_abs(&(&z_miss - &want_z)) < 1e-9);
    }

    #[test]
    fn imputation_preserves_observed_entries_bitwise(
        dim in 0usize..3,
        b in 1usize..6,
        rate in 0.0f64..1.0,
        seed in any::<u64>(),
    ) {
        let d = DIMS[dim];
        let imp = frozen_imputer(d, seed);
        let inst = instance(b, d, rate, seed);
        let (u, v) = impute(&imp, &inst);
        let mut ok = true;
        Zip::from(&inst.x).and(inst.m.values()).and(&u).and(&v).for_each(|&x, &m, &u, &v| {
            if m == 1.0 && (u.to_bits() != x.to_bits() || v.to_bits() != x.to_bits()) {
                ok = false;
            }
        });
        prop_assert!(ok);
    }

    #[test]
    fn second_imputation_keeps_entries_observed_under_both_masks(
        b in 1usize..8,
        d in 2usize..20,
        rate in 0.05f64..0.95,
        seed in any::<u64>(),
    ) {
        let imp = frozen_imputer(d, seed);
        let inst = instance(b, d, rate, seed);
        let (_, v) = impute(&imp, &inst);
        let n = reshuffle_mask(&inst.m, &mut NoiseSource::uniform(seed ^ 9));
        let z2 = NoiseSource::uniform(seed ^ 10).sample(b, d);
        let (_, v_hat) = imp.impute_arrays(v.view(), n.view(), z2.view(), &mut NoiseSource::uniform(0)).unwrap();
        let both = inst.m.and(&n).unwrap();
        let mut surviving = 0usize;
        let mut n_kept = true;
        for ((i, j), &nv) in n.values().indexed_iter() {
            if nv == 1.0 && v_hat[[i, j]].to_bits() != v[[i, j]].to_bits() {
                n_kept = false;
            }
            if inst.m.values()[[i, j]] == 1.0 && nv == 1.0 && v_hat[[i, j]].to_bits() == inst.x[[i, j]].to_bits() {
                surviving += 1;
            }
        }
        prop_assert!(n_kept);
        prop_assert_eq!(surviving, both.values().sum() as usize);
        for (rm, rn) in inst.m.values().rows().into_iter().zip(n.values().rows()) {
            prop_assert_eq!(rm.sum(), rn.sum());
        }
    }
}

#[test]
fn mask_recovery_is_exact_on_continuous_noise() {
    let trials = 10_000u64;
    let mut failures = 0usize;
    let imps: Vec<GenerativeImputer> = DIMS.iter().map(|&d| frozen_imputer(d, d as u64)).collect();
    for trial in 0..trials {
        let k = (trial % 3) as usize;
        let d = DIMS[k];
        let b = if d > 100 { 1 } else { 2 };
        let inst = instance(b, d, 0.5, 1_000_000 + trial);
        let (u, v) = impute(&imps[k], &inst);
        let recovered = recover_mask(u.view(), v.view(), 0.0).unwrap();
        if recovered != inst.m {
            failures += 1;
        }
    }
    assert_eq!(failures, 0);
}

fn square(u: ArrayView2<'_, f64>) -> Array2<f64> {
    u.mapv(|v| v * v)
}

#[test]
fn engineered_collision_is_misclassified_as_observed() {
    // z = 1 at the missing index is a fixed point of the square map, so u = v there.
    let x = array![[0.3, 0.7, -0.2]];
    let m = array![[1.0, 0.0, 1.0]];
    let z = array![[5.0, 1.0, 5.0]];
    let (u, v) = impute_with(square, x.view(), m.view(), z.view()).unwrap();
    let recovered = recover_mask(u.view(), v.view(), 0.0).unwrap();
    assert_eq!(recovered.values(), &array![[1.0, 1.0, 1.0]]);
    let (x_obs, m_rec, z_miss) = invert_with(&square(u.view()), u.view(), v.view(), 0.0).unwrap();
    assert_eq!(m_rec.values()[[0, 1]], 1.0);
    // The true noise at the collided index is lost and reported as an observed value.
    assert_eq!(z_miss[[0, 1]], 0.0);
    assert_eq!(x_obs[[0, 1]], 1.0);

    // A generic noise value at the same index is recovered correctly.
    let z = array![[5.0, 0.9, 5.0]];
    let (u, v) = impute_with(square, x.view(), m.view(), z.view()).unwrap();
    assert_eq!(recover_mask(u.view(), v.view(), 0.0).unwrap().values(), &m);
}

#[test]
fn worked_example_inverts_by_hand() {
    let x = array![[1.0, 2.0, 3.0]];
    let m = array![[1.0, 0.0, 1.0]];
    let z = array![[9.0, 9.0, 9.0]];
    let (u, v) = impute_with(square, x.view(), m.view(), z.view()).unwrap();
    assert_eq!(u, array![[1.0, 9.0, 3.0]]);
    assert_eq!(v, array![[1.0, 81.0, 3.0]]);
    let (x_obs, m_rec, z_miss) = invert_with(&square(u.view()), u.view(), v.view(), 0.0).unwrap();
    assert_eq!(x_obs, array![[1.0, 0.0, 3.0]]);
    assert_eq!(m_rec.values(), &m);
    assert_eq!(z_miss, array![[0.0, 9.0, 0.0]]);
}

#[test]
fn degenerate_masks() {
    let imp = frozen_imputer(16, 4);
    let x = NoiseSource::uniform(1).sample(3, 16);
    let z = NoiseSource::uniform(2).sample(3, 16);
    let ones = MaskMatrix::ones(3, 16);
    let (u, v) = imp.impute_arrays(x.view(), ones.view(), z.view(), &mut NoiseSource::uniform(0)).unwrap();
    assert_eq!(u, x);
    assert_eq!(v, x);
    let (x_obs, _, z_miss) = imp.invert(u.view(), v.view(), 0.0).unwrap();
    assert_eq!(x_obs, x);
    assert!(z_miss.iter().all(|&e| e == 0.0));
    assert_eq!(recover_mask(u.view(), v.view(), 0.0).unwrap(), ones);

    let zeros = MaskMatrix::zeros(3, 16);
    let (u, v) = imp.impute_arrays(x.view(), zeros.view(), z.view(), &mut NoiseSource::uniform(0)).unwrap();
    assert_eq!(u, z);
    assert_eq!(v, imp.network().forward_eval(z.view()).unwrap());
}

#[test]
fn shape_mismatch_is_rejected() {
    let imp = frozen_imputer(3, 0);
    let x = Array2::zeros((2, 3));
    let bad = Array2::zeros((2, 4));
    assert!(imp.impute_arrays(x.view(), bad.view(), x.view(), &mut NoiseSource::uniform(0)).is_err());
    assert!(imp.impute_arrays(x.view(), x.view(), bad.view(), &mut NoiseSource::uniform(0)).is_err());
    assert!(recover_mask(x.view(), bad.view(), 0.0).is_err());
}
