// SPDX-License-Identifier: Apache-2.0

//! Adversarial objectives.
//!
//! WGAN-GP critics (IGANI and the three MisGAN critics) score each sample by
//! the mean of their output row. The critic minimizes
//! `mean D(fake) - mean D(real) + λ · mean (‖∇_y D(y)‖ - 1)²` with
//! `y = t · fake + (1 - t) · real`, `t ~ U(0, 1)` per sample; the generator
//! minimizes `-mean D(fake)`. For IGANI, `real` is the imputed batch `v` and
//! `fake` the re-imputed batch `v̂`.
//!
//! GAIN's discriminator predicts the mask from the imputed data and the hint
//! and is scored by per-entry cross-entropy.

use ndarray::{Array2, ArrayView2, Axis};

use crate::autograd::{Graph, Var};
use crate::data::{check_same_dim, MaskMatrix, NoiseSource};
use crate::error::{Error, Result};
use crate::network::Network;

pub const DEFAULT_LAMBDA: f64 = 10.0;

/// Clamp applied to predicted mask probabilities before taking logs.
pub const GAIN_EPS: f64 = 1e-7;

/// A loss value together with its named additive components.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub components: Vec<(&'static str, f64)>,
}

impl LossValue {
    fn single(name: &'static str, value: f64) -> Self {
        Self {
            value,
            components: vec![(name, value)],
        }
    }

    pub fn component(&self, name: &str) -> Option<f64> {
        self.components
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, v)| *v)
    }

    pub fn components_sum(&self) -> f64 {
        self.components.iter().map(|(_, v)| v).sum()
    }
}

/// GAIN hint: the mask with one uniformly chosen entry per row set to 0.5.
#[derive(Debug, Clone, PartialEq)]
pub struct HintMatrix {
    values: Array2<f64>,
}

impl HintMatrix {
    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }
}

pub fn gain_hint(m: &MaskMatrix, rng: &mut NoiseSource) -> Result<HintMatrix> {
    let d = m.dim().1;
    if d == 0 {
        return Err(Error::InvalidArgument(
            "hint needs at least one feature".into(),
        ));
    }
    let mut values = m.values().clone();
    for mut row in values.axis_iter_mut(Axis(0)) {
        row[rng.index(d)] = 0.5;
    }
    Ok(HintMatrix { values })
}

/// `x ⊙ m + τ (1 - m)`; `m` may be a soft mask.
pub fn misgan_mask_fn(
    x: ArrayView2<'_, f64>,
    m: ArrayView2<'_, f64>,
    tau: f64,
) -> Result<Array2<f64>> {
    check_same_dim("mask function", x.dim(), m.dim())?;
    Ok(&x * &m + &m.mapv(|v| tau * (1.0 - v)))
}

pub(crate) fn misgan_mask_fn_graph(graph: &mut Graph, x: Var, m: Var, tau: f64) -> Var {
    let kept = graph.mul(x, m);
    let neg = graph.scale(m, -tau);
    let fill = graph.shift(neg, tau);
    graph.add(kept, fill)
}

/// Per-sample critic score (`b × 1`): the mean of the critic's output row.
pub(crate) fn critic_scores(
    graph: &mut Graph,
    critic: &Network,
    params: &[Var],
    input: Var,
    rng: &mut NoiseSource,
) -> Var {
    let out = critic.forward_graph(graph, params, input, rng);
    let width = graph.shape(out).1;
    let sums = graph.sum_cols(out);
    graph.scale(sums, 1.0 / width as f64)
}

pub(crate) fn gradient_penalty_graph(
    graph: &mut Graph,
    critic: &Network,
    params: &[Var],
    real: Var,
    fake: Var,
    t: &[f64],
    lambda: f64,
    rng: &mut NoiseSource,
) -> Var {
    let (b, d) = graph.shape(real);
    debug_assert_eq!(t.len(), b);
    let tcol = Array2::from_shape_vec((b, 1), t.to_vec()).expect("one t per sample");
    let tb = tcol.broadcast((b, d)).unwrap().to_owned();
    let y = if graph.requires_grad(real) || graph.requires_grad(fake) {
        let omt = graph.constant(tb.mapv(|v| 1.0 - v));
        let tv = graph.constant(tb);
        let a = graph.mul(tv, fake);
        let c = graph.mul(omt, real);
        graph.add(a, c)
    } else {
        let value = &tb * graph.value(fake) + &tb.mapv(|v| 1.0 - v) * graph.value(real);
        graph.leaf(value)
    };
    let scores = critic_scores(graph, critic, params, y, rng);
    let total = graph.sum_all(scores);
    // rows are independent, so the gradient of the sum holds every per-sample input gradient
    let grad_y = graph.grad(total, &[y])[0];
    let norms = graph.row_norm(grad_y);
    let dev = graph.shift(norms, -1.0);
    let sq = graph.mul(dev, dev);
    let mean = graph.mean_all(sq);
    graph.scale(mean, lambda)
}

pub(crate) struct WganCriticTerms {
    pub loss: Var,
    pub wasserstein: Var,
    pub penalty: Var,
}

pub(crate) fn wgan_critic_graph(
    graph: &mut Graph,
    critic: &Network,
    params: &[Var],
    real: Var,
    fake: Var,
    t: &[f64],
    lambda: f64,
    rng: &mut NoiseSource,
) -> WganCriticTerms {
    let real_scores = critic_scores(graph, critic, params, real, rng);
    let fake_scores = critic_scores(graph, critic, params, fake, rng);
    let real_mean = graph.mean_all(real_scores);
    let fake_mean = graph.mean_all(fake_scores);
    let wasserstein = graph.sub(fake_mean, real_mean);
    let penalty = gradient_penalty_graph(graph, critic, params, real, fake, t, lambda, rng);
    let loss = graph.add(wasserstein, penalty);
    WganCriticTerms {
        loss,
        wasserstein,
        penalty,
    }
}

pub(crate) fn wgan_generator_graph(
    graph: &mut Graph,
    critic: &Network,
    params: &[Var],
    fake: Var,
    rng: &mut NoiseSource,
) -> Var {
    let scores = critic_scores(graph, critic, params, fake, rng);
    let mean = graph.mean_all(scores);
    graph.scale(mean, -1.0)
}

fn check_batches(real: &Array2<f64>, fake: &Array2<f64>, critic: &Network) -> Result<()> {
    check_same_dim("critic batches", real.dim(), fake.dim())?;
    check_same_dim("critic input", (real.nrows(), critic.in_dim()), real.dim())
}

fn sample_t(b: usize, rng: &mut NoiseSource) -> Vec<f64> {
    (0..b).map(|_| rng.uniform01()).collect()
}

fn eval_rng() -> NoiseSource {
    NoiseSource::uniform(0)
}

/// Gradient penalty with `t ~ U(0, 1)` per sample and `λ = 10`.
pub fn gradient_penalty(
    critic: &Network,
    real: &Array2<f64>,
    fake: &Array2<f64>,
    rng: &mut NoiseSource,
) -> Result<LossValue> {
    let t = sample_t(real.nrows(), rng);
    gradient_penalty_with_t(critic, real, fake, &t, DEFAULT_LAMBDA)
}

/// Gradient penalty with explicit interpolation weights.
pub fn gradient_penalty_with_t(
    critic: &Network,
    real: &Array2<f64>,
    fake: &Array2<f64>,
    t: &[f64],
    lambda: f64,
) -> Result<LossValue> {
    check_batches(real, fake, critic)?;
    if t.len() != real.nrows() {
        return Err(Error::InvalidArgument(format!(
            "{} interpolation weights for {} samples",
            t.len(),
            real.nrows()
        )));
    }
    let mut graph = Graph::new();
    let params = critic.bind(&mut graph, false);
    let r = graph.constant(real.clone());
    let f = graph.constant(fake.clone());
    let pen = gradient_penalty_graph(
        &mut graph,
        critic,
        &params,
        r,
        f,
        t,
        lambda,
        &mut eval_rng(),
    );
    Ok(LossValue::single("penalty_term", graph.scalar(pen)))
}

/// IGANI critic loss on imputed `v` and re-imputed `v_hat`, `λ = 10`.
pub fn igani_critic_loss(
    critic: &Network,
    v: &Array2<f64>,
    v_hat: &Array2<f64>,
    rng: &mut NoiseSource,
) -> Result<LossValue> {
    let t = sample_t(v.nrows(), rng);
    Ok(critic_loss_with_grads(critic, v, v_hat, &t, DEFAULT_LAMBDA)?.0)
}

/// WGAN-GP critic loss and its gradient with respect to every critic parameter.
pub fn critic_loss_with_grads(
    critic: &Network,
    real: &Array2<f64>,
    fake: &Array2<f64>,
    t: &[f64],
    lambda: f64,
) -> Result<(LossValue, Vec<Array2<f64>>)> {
    check_batches(real, fake, critic)?;
    let mut graph = Graph::new();
    let params = critic.bind(&mut graph, true);
    let r = graph.constant(real.clone());
    let f = graph.constant(fake.clone());
    let terms = wgan_critic_graph(
        &mut graph,
        critic,
        &params,
        r,
        f,
        t,
        lambda,
        &mut eval_rng(),
    );
    let grads = graph.grad(terms.loss, &params);
    let value = LossValue {
        value: graph.scalar(terms.loss),
        components: vec![
            ("wasserstein_term", graph.scalar(terms.wasserstein)),
            ("penalty_term", graph.scalar(terms.penalty)),
        ],
    };
    Ok((
        value,
        grads.iter().map(|g| graph.value(*g).clone()).collect(),
    ))
}

/// `-mean D(v_hat)`.
pub fn igani_generator_loss(critic: &Network, v_hat: &Array2<f64>) -> Result<LossValue> {
    check_same_dim(
        "critic input",
        (v_hat.nrows(), critic.in_dim()),
        v_hat.dim(),
    )?;
    let mut graph = Graph::new();
    let params = critic.bind(&mut graph, false);
    let f = graph.constant(v_hat.clone());
    let loss = wgan_generator_graph(&mut graph, critic, &params, f, &mut eval_rng());
    Ok(LossValue::single("generator_term", graph.scalar(loss)))
}

fn check_probabilities(m_hat: &Array2<f64>, m: &MaskMatrix) -> Result<()> {
    check_same_dim("predicted mask", m.dim(), m_hat.dim())?;
    if m_hat.iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite("predicted mask"));
    }
    Ok(())
}

pub(crate) fn gain_discriminator_graph(graph: &mut Graph, m_hat: Var, m: &Array2<f64>) -> Var {
    let b = m.nrows() as f64;
    let p = graph.clamp(m_hat, GAIN_EPS, 1.0 - GAIN_EPS);
    let log_p = graph.log(p);
    let neg = graph.scale(p, -1.0);
    let q = graph.shift(neg, 1.0);
    let log_q = graph.log(q);
    let mv = graph.constant(m.clone());
    let miss = graph.constant(m.mapv(|v| 1.0 - v));
    let a = graph.mul(mv, log_p);
    let c = graph.mul(miss, log_q);
    let s = graph.add(a, c);
    let total = graph.sum_all(s);
    graph.scale(total, -1.0 / b)
}

pub(crate) fn gain_generator_graph(graph: &mut Graph, m_hat: Var, m: &Array2<f64>) -> Var {
    let b = m.nrows() as f64;
    let p = graph.clamp(m_hat, GAIN_EPS, 1.0 - GAIN_EPS);
    let log_p = graph.log(p);
    let miss = graph.constant(m.mapv(|v| 1.0 - v));
    let s = graph.mul(miss, log_p);
    let total = graph.sum_all(s);
    graph.scale(total, -1.0 / b)
}

/// `-mean_b Σ_i [m_i log m̂_i + (1 - m_i) log(1 - m̂_i)]`, with `m̂` clamped to `[ε, 1 - ε]`.
pub fn gain_discriminator_loss(m_hat: &Array2<f64>, m: &MaskMatrix) -> Result<LossValue> {
    check_probabilities(m_hat, m)?;
    let mut graph = Graph::new();
    let p = graph.constant(m_hat.clone());
    let loss = gain_discriminator_graph(&mut graph, p, m.values());
    Ok(LossValue::single("cross_entropy", graph.scalar(loss)))
}

/// `-mean_b Σ_i (1 - m_i) log m̂_i`: only missing positions contribute.
pub fn gain_generator_loss(m_hat: &Array2<f64>, m: &MaskMatrix) -> Result<LossValue> {
    check_probabilities(m_hat, m)?;
    let mut graph = Graph::new();
    let p = graph.constant(m_hat.clone());
    let loss = gain_generator_graph(&mut graph, p, m.values());
    Ok(LossValue::single("adversarial_term", graph.scalar(loss)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{build_mlp, LayerSpec};
    use ndarray::array;

    fn linear_critic(d: usize, weight: f64, bias: f64) -> Network {
        Network::from_params(
            &[LayerSpec::dense(d, 1)],
            vec![
                Array2::from_elem((d, 1), weight),
                Array2::from_elem((1, 1), bias),
            ],
        )
        .unwrap()
    }

    #[test]
    fn unit_norm_critic_has_no_penalty() {
        let d = 5;
        let critic = linear_critic(d, 1.0 / (d as f64).sqrt(), 0.0);
        let mut rng = NoiseSource::uniform(3);
        let real = rng.sample(8, d);
        let fake = rng.sample(8, d);
        let pen = gradient_penalty(&critic, &real, &fake, &mut rng).unwrap();
        assert!(pen.value.abs() < 1e-12, "{}", pen.value);
    }

    #[test]
    fn constant_critic_penalty_is_lambda() {
        let critic = linear_critic(4, 0.0, 2.5);
        let mut rng = NoiseSource::uniform(3);
        let real = rng.sample(6, 4);
        let fake = rng.sample(6, 4);
        let pen = gradient_penalty(&critic, &real, &fake, &mut rng).unwrap();
        assert!((pen.value - 10.0).abs() < 1e-12);

        let loss = igani_critic_loss(&critic, &real, &fake, &mut rng).unwrap();
        assert!((loss.value - 10.0).abs() < 1e-12);
        assert_eq!(loss.component("wasserstein_term"), Some(0.0));

        let gen = igani_generator_loss(&critic, &fake).unwrap();
        assert!((gen.value + 2.5).abs() < 1e-15);
    }

    #[test]
    fn identical_batches_cancel() {
        let d = 3;
        let critic = linear_critic(d, 1.0 / (d as f64).sqrt(), 0.7);
        let v = NoiseSource::uniform(1).sample(4, d);
        let loss = igani_critic_loss(&critic, &v, &v, &mut NoiseSource::uniform(2)).unwrap();
        assert!(loss.value.abs() < 1e-12);
    }

    #[test]
    fn mean_critic_generator_loss() {
        let d = 4;
        let critic = Network::from_params(
            &[LayerSpec::dense(d, d)],
            vec![Array2::eye(d), Array2::zeros((1, d))],
        )
        .unwrap();
        let v_hat = Array2::from_elem((3, d), 0.5);
        let loss = igani_generator_loss(&critic, &v_hat).unwrap();
        assert!((loss.value + 0.5).abs() < 1e-15);
    }

    #[test]
    fn hint_structure() {
        let mut rng = NoiseSource::uniform(4);
        let m = MaskMatrix::new(array![[1.0], [0.0]]).unwrap();
        let h = gain_hint(&m, &mut rng).unwrap();
        assert_eq!(h.values(), &array![[0.5], [0.5]]);

        let m = crate::data::generate_mcar_mask(50, 7, 0.4, &mut rng).unwrap();
        let h = gain_hint(&m, &mut rng).unwrap();
        for (hr, mr) in h.values().rows().into_iter().zip(m.values().rows()) {
            assert_eq!(hr.iter().filter(|&&v| v == 0.5).count(), 1);
            for (a, b) in hr.iter().zip(mr.iter()) {
                assert!(*a == 0.5 || a == b);
            }
        }
        assert!(gain_hint(&MaskMatrix::ones(2, 0), &mut rng).is_err());
    }

    #[test]
    fn hint_position_is_uniform() {
        let m = MaskMatrix::new(array![[1.0, 0.0, 1.0]]).unwrap();
        let mut counts = [0usize; 3];
        let trials = 10_000;
        let mut rng = NoiseSource::uniform(8);
        for _ in 0..trials {
            let h = gain_hint(&m, &mut rng).unwrap();
            let pos = h.values().iter().position(|&v| v == 0.5).unwrap();
            counts[pos] += 1;
        }
        for c in counts {
            let f = c as f64 / trials as f64;
            assert!((f - 1.0 / 3.0).abs() < 0.02, "{counts:?}");
        }
    }

    #[test]
    fn gain_losses_examples() {
        let m = MaskMatrix::new(array![[1.0, 0.0, 1.0, 0.0]]).unwrap();
        let half = Array2::from_elem((1, 4), 0.5);
        let d = gain_discriminator_loss(&half, &m).unwrap();
        assert!((d.value - 4.0 * 2f64.ln()).abs() < 1e-12);

        let perfect = gain_discriminator_loss(m.values(), &m).unwrap();
        assert!(perfect.value >= 0.0 && perfect.value < 1e-5);

        let all = MaskMatrix::ones(2, 3);
        let g = gain_generator_loss(&Array2::from_elem((2, 3), 0.3), &all).unwrap();
        assert_eq!(g.value, 0.0);

        let nearly_one = Array2::from_elem((1, 4), 1.0 - 1e-9);
        assert!(gain_generator_loss(&nearly_one, &m).unwrap().value < 1e-6);

        let nan = array![[f64::NAN, 0.5, 0.5, 0.5]];
        assert!(gain_discriminator_loss(&nan, &m).is_err());
    }

    #[test]
    fn mask_fn_examples() {
        let x = array![[1.0, 2.0]];
        assert_eq!(
            misgan_mask_fn(x.view(), array![[0.0, 0.0]].view(), 0.0).unwrap(),
            array![[0.0, 0.0]]
        );
        assert_eq!(
            misgan_mask_fn(x.view(), array![[1.0, 1.0]].view(), 0.0).unwrap(),
            x
        );
        assert_eq!(
            misgan_mask_fn(x.view(), array![[1.0, 0.0]].view(), 0.5).unwrap(),
            array![[1.0, 0.5]]
        );
    }

    #[test]
    fn penalty_symmetry_under_swap() {
        let spec = [
            LayerSpec::dense(3, 5),
            LayerSpec::Relu,
            LayerSpec::dense(5, 2),
        ];
        let critic = build_mlp(&spec, &mut NoiseSource::uniform(12)).unwrap();
        let mut rng = NoiseSource::uniform(13);
        let a = rng.sample(6, 3);
        let b = rng.sample(6, 3);
        let t: Vec<f64> = (0..6).map(|_| rng.uniform01()).collect();
        let flipped: Vec<f64> = t.iter().map(|v| 1.0 - v).collect();
        let p1 = gradient_penalty_with_t(&critic, &a, &b, &t, 10.0).unwrap();
        let p2 = gradient_penalty_with_t(&critic, &b, &a, &flipped, 10.0).unwrap();
        assert!((p1.value - p2.value).abs() < 1e-12);
    }

    #[test]
    fn components_sum_to_value() {
        let spec = [
            LayerSpec::dense(3, 4),
            LayerSpec::Relu,
            LayerSpec::dense(4, 3),
        ];
        let critic = build_mlp(&spec, &mut NoiseSource::uniform(1)).unwrap();
        let mut rng = NoiseSource::uniform(2);
        let v = rng.sample(5, 3);
        let vh = rng.sample(5, 3);
        let loss = igani_critic_loss(&critic, &v, &vh, &mut rng).unwrap();
        assert!((loss.value - loss.components_sum()).abs() < 1e-12);
    }

    #[test]
    fn shape_errors() {
        let critic = linear_critic(3, 1.0, 0.0);
        let a = Array2::zeros((2, 3));
        let b = Array2::zeros((3, 3));
        assert!(igani_critic_loss(&critic, &a, &b, &mut NoiseSource::uniform(0)).is_err());
        assert!(igani_generator_loss(&critic, &Array2::zeros((2, 4))).is_err());
        assert!(gain_discriminator_loss(&Array2::zeros((1, 2)), &MaskMatrix::ones(1, 3)).is_err());
    }
}
