// SPDX-License-Identifier: Apache-2.0

//! GAIN: a discriminator predicts the mask from the imputed data and a hint.

use ndarray::{concatenate, Array2, Axis};

use super::{
    check_inputs, debug_check_observed, ensure_finite, epoch_batches, select_rows, LossAccumulator,
    Method, NoopObserver, Objective, Step, Stream, TrainConfig, TrainObserver, TrainedImputer,
    UpdateKind,
};
use crate::autograd::Graph;
use crate::data::{check_same_dim, DataMatrix, MaskMatrix, NoiseSource};
use crate::error::Result;
use crate::imputer::{impute_graph, GenerativeImputer};
use crate::losses::{gain_discriminator_graph, gain_generator_graph, gain_hint, LossValue};
use crate::network::{build_mlp, Mode, Network};
use crate::optim::Optimizer;

const METHOD: &str = "gain";

fn check_discriminator(
    disc: &Network,
    v: &Array2<f64>,
    h: &Array2<f64>,
    m: &Array2<f64>,
) -> Result<()> {
    check_same_dim("gain: hint", v.dim(), h.dim())?;
    check_same_dim("gain: mask", v.dim(), m.dim())?;
    check_same_dim(
        "gain: discriminator input",
        (v.nrows(), disc.in_dim()),
        (v.nrows(), 2 * v.ncols()),
    )
}

/// Discriminator cross-entropy on `D([v, h])`, with gradients for `disc`.
pub fn gain_discriminator_objective(
    disc: &Network,
    v: &Array2<f64>,
    h: &Array2<f64>,
    m: &Array2<f64>,
    rng: &mut NoiseSource,
) -> Result<Objective> {
    check_discriminator(disc, v, h, m)?;
    let mut graph = Graph::new();
    let dp = disc.bind(&mut graph, true);
    let input = graph.constant(concatenate![Axis(1), *v, *h]);
    let m_hat = disc.forward_graph(&mut graph, &dp, input, rng);
    let loss = gain_discriminator_graph(&mut graph, m_hat, m);
    let grads = graph.grad(loss, &dp);
    Ok(Objective {
        loss: LossValue {
            value: graph.scalar(loss),
            components: vec![("cross_entropy", graph.scalar(loss))],
        },
        grads: grads.iter().map(|g| graph.value(*g).clone()).collect(),
    })
}

/// Generator loss on missing positions plus `alpha` times the observed-entry MSE of `g(u)`.
#[allow(clippy::too_many_arguments)]
pub fn gain_generator_objective(
    g: &Network,
    disc: &Network,
    x: &Array2<f64>,
    m: &Array2<f64>,
    h: &Array2<f64>,
    z: &Array2<f64>,
    alpha: f64,
    rng: &mut NoiseSource,
) -> Result<Objective> {
    Ok(generator_step(g, disc, x, m, h, z, alpha, rng)?.0)
}

#[allow(clippy::too_many_arguments)]
fn generator_step(
    g: &Network,
    disc: &Network,
    x: &Array2<f64>,
    m: &Array2<f64>,
    h: &Array2<f64>,
    z: &Array2<f64>,
    alpha: f64,
    rng: &mut NoiseSource,
) -> Result<(Objective, Array2<f64>)> {
    check_same_dim("gain: x", (x.nrows(), g.in_dim()), x.dim())?;
    check_same_dim("gain: noise", x.dim(), z.dim())?;
    check_discriminator(disc, x, h, m)?;
    let mut graph = Graph::new();
    let gp = g.bind(&mut graph, true);
    let dp = disc.bind(&mut graph, false);
    let xv = graph.constant(x.clone());
    let pass = impute_graph(g, &mut graph, &gp, xv, m, z, rng);
    let hv = graph.constant(h.clone());
    let input = graph.concat_cols(&[pass.v, hv]);
    let m_hat = disc.forward_graph(&mut graph, &dp, input, rng);
    let adversarial = gain_generator_graph(&mut graph, m_hat, m);

    let observed = m.sum();
    let mut components = vec![("adversarial_term", graph.scalar(adversarial))];
    let loss = if alpha > 0.0 && observed > 0.0 {
        let diff = graph.sub(pass.gu, xv);
        let mv = graph.constant(m.clone());
        let masked = graph.mul(diff, mv);
        let sq = graph.mul(masked, masked);
        let total = graph.sum_all(sq);
        let recon = graph.scale(total, alpha / observed);
        components.push(("reconstruction_term", graph.scalar(recon)));
        graph.add(adversarial, recon)
    } else {
        adversarial
    };
    let grads = graph.grad(loss, &gp);
    let objective = Objective {
        loss: LossValue {
            value: graph.scalar(loss),
            components,
        },
        grads: grads.iter().map(|g| graph.value(*g).clone()).collect(),
    };
    Ok((objective, graph.value(pass.v).clone()))
}

pub fn train_gain(x: &DataMatrix, m: &MaskMatrix, cfg: &TrainConfig) -> Result<TrainedImputer> {
    train_gain_with(x, m, cfg, &mut NoopObserver)
}

pub fn train_gain_with(
    x: &DataMatrix,
    m: &MaskMatrix,
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<TrainedImputer> {
    check_inputs(x, m, cfg)?;
    let d = x.n_features();
    let arch = &cfg.architecture;
    let mut imputer = GenerativeImputer::new(build_mlp(
        &arch.generator(d),
        &mut cfg.stream(Stream::InitGenerator),
    )?)?;
    let mut disc = build_mlp(
        &arch.gain_discriminator(d),
        &mut cfg.stream(Stream::InitCritic),
    )?;
    let new_opt = |net: &Network| {
        Optimizer::new(
            cfg.optimizer,
            cfg.learning_rate,
            cfg.adam_beta1,
            cfg.adam_beta2,
            net.params(),
        )
    };
    let mut opt_g = new_opt(imputer.network());
    let mut opt_d = new_opt(&disc);

    let mut batching = cfg.stream(Stream::Batching);
    let mut noise = cfg.stream(Stream::Noise);
    let mut dropout = cfg.stream(Stream::Dropout);
    let mut hints = cfg.stream(Stream::Hint);

    let mut acc = LossAccumulator::new(&["discriminator", "generator"]);
    let mut history = Vec::with_capacity(cfg.n_epochs);
    for epoch in 0..cfg.n_epochs {
        for (batch, rows) in epoch_batches(x.n_samples(), cfg.batch_size, &mut batching)
            .into_iter()
            .enumerate()
        {
            let xb = select_rows(x.view(), &rows);
            let mb = MaskMatrix::new(select_rows(m.view(), &rows))?;
            let z = noise.sample(xb.nrows(), d);
            let h = gain_hint(&mb, &mut hints)?.into_values();
            let step = |kind, network| Step {
                epoch,
                batch,
                kind,
                network,
                n_du: 1,
            };

            let (_, v) = imputer.impute_arrays(xb.view(), mb.view(), z.view(), &mut dropout)?;
            observer.before_update(
                &step(UpdateKind::Critic, "discriminator")
                    .event(&[("generator", imputer.network()), ("discriminator", &disc)]),
            );
            let objective = gain_discriminator_objective(&disc, &v, &h, mb.values(), &mut dropout)?;
            ensure_finite(METHOD, "discriminator", objective.loss.value, epoch, batch)?;
            opt_d.step(disc.params_mut(), &objective.grads);
            acc.push("discriminator", objective.loss.value);
            observer.after_update(
                &step(UpdateKind::Critic, "discriminator")
                    .event(&[("generator", imputer.network()), ("discriminator", &disc)]),
            );
            observer.before_update(
                &step(UpdateKind::Generator, "generator")
                    .event(&[("generator", imputer.network()), ("discriminator", &disc)]),
            );
            let (objective, v) = generator_step(
                imputer.network(),
                &disc,
                &xb,
                mb.values(),
                &h,
                &z,
                cfg.gain_alpha,
                &mut dropout,
            )?;
            debug_check_observed(&xb, mb.values(), &v);
            observer.on_imputed_batch(xb.view(), mb.view(), v.view());
            ensure_finite(METHOD, "generator", objective.loss.value, epoch, batch)?;
            opt_g.step(imputer.network_mut().params_mut(), &objective.grads);
            acc.push("generator", objective.loss.value);
            observer.after_update(
                &step(UpdateKind::Generator, "generator")
                    .event(&[("generator", imputer.network()), ("discriminator", &disc)]),
            );
        }
        history.push(acc.finish(epoch));
        observer.on_epoch_end(epoch, &imputer);
    }

    disc.set_mode(Mode::Eval);
    Ok(TrainedImputer {
        method: Method::Gain,
        imputer: imputer.frozen(),
        auxiliaries: vec![("discriminator".to_string(), disc)],
        config: cfg.clone(),
        loss_history: history,
    })
}
