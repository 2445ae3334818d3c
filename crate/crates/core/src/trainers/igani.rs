// SPDX-License-Identifier: Apache-2.0

//! The iterative imputer: every critic update compares an imputation `v`
//! with its re-imputation `v̂` under a reshuffled mask.

use ndarray::Array2;

use super::{
    check_inputs, debug_check_observed, ensure_finite, epoch_batches, select_rows, LossAccumulator,
    NoopObserver, Objective, Step, Stream, TrainConfig, TrainObserver, TrainedImputer, UpdateKind,
};
use crate::autograd::Graph;
use crate::data::{check_same_dim, reshuffle_mask, DataMatrix, MaskMatrix, NoiseSource};
use crate::error::Result;
use crate::imputer::{impute_graph, GenerativeImputer};
use crate::losses::{critic_loss_with_grads, wgan_generator_graph, LossValue};
use crate::network::{build_mlp, Mode, Network};
use crate::optim::Optimizer;

const METHOD: &str = "igani";

/// Generator loss `-mean D(v̂)` with `v = G(x, m, z)` and `v̂ = G(v, n, z)`,
/// differentiated through both imputation passes.
pub fn igani_generator_objective(
    g: &Network,
    critic: &Network,
    x: &Array2<f64>,
    m: &Array2<f64>,
    n: &Array2<f64>,
    z: &Array2<f64>,
    rng: &mut NoiseSource,
) -> Result<Objective> {
    Ok(generator_step(g, critic, x, m, n, z, rng)?.0)
}

fn generator_step(
    g: &Network,
    critic: &Network,
    x: &Array2<f64>,
    m: &Array2<f64>,
    n: &Array2<f64>,
    z: &Array2<f64>,
    rng: &mut NoiseSource,
) -> Result<(Objective, Array2<f64>)> {
    check_same_dim("generator objective: x", (x.nrows(), g.in_dim()), x.dim())?;
    check_same_dim("generator objective: m", x.dim(), m.dim())?;
    check_same_dim("generator objective: n", x.dim(), n.dim())?;
    check_same_dim("generator objective: z", x.dim(), z.dim())?;
    check_same_dim(
        "generator objective: critic",
        (x.nrows(), critic.in_dim()),
        x.dim(),
    )?;
    let mut graph = Graph::new();
    let gp = g.bind(&mut graph, true);
    let dp = critic.bind(&mut graph, false);
    let xv = graph.constant(x.clone());
    let first = impute_graph(g, &mut graph, &gp, xv, m, z, rng);
    let second = impute_graph(g, &mut graph, &gp, first.v, n, z, rng);
    let loss = wgan_generator_graph(&mut graph, critic, &dp, second.v, rng);
    let grads = graph.grad(loss, &gp);
    let objective = Objective {
        loss: LossValue {
            value: graph.scalar(loss),
            components: vec![("generator_term", graph.scalar(loss))],
        },
        grads: grads.iter().map(|v| graph.value(*v).clone()).collect(),
    };
    Ok((objective, graph.value(first.v).clone()))
}

pub fn train_igani(x: &DataMatrix, m: &MaskMatrix, cfg: &TrainConfig) -> Result<TrainedImputer> {
    train_igani_with(x, m, cfg, &mut NoopObserver)
}

pub fn train_igani_with(
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
    let mut critic = build_mlp(&arch.critic(d), &mut cfg.stream(Stream::InitCritic))?;
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
    let mut opt_d = new_opt(&critic);

    let mut batching = cfg.stream(Stream::Batching);
    let mut noise = cfg.stream(Stream::Noise);
    let mut reshuffle = cfg.stream(Stream::Reshuffle);
    let mut dropout = cfg.stream(Stream::Dropout);
    let mut interp = cfg.stream(Stream::Interpolation);

    let mut acc = LossAccumulator::new(&["critic", "generator"]);
    let mut history = Vec::with_capacity(cfg.n_epochs);
    for epoch in 0..cfg.n_epochs {
        let n_du = cfg.n_du(epoch);
        for (batch, rows) in epoch_batches(x.n_samples(), cfg.batch_size, &mut batching)
            .into_iter()
            .enumerate()
        {
            let xb = select_rows(x.view(), &rows);
            let mb = MaskMatrix::new(select_rows(m.view(), &rows))?;
            let (b, _) = xb.dim();
            let mut z = noise.sample(b, d);
            for iter in 0..n_du {
                if iter > 0 && cfg.resample_noise_per_critic_update {
                    z = noise.sample(b, d);
                }
                let (_, v) = imputer.impute_arrays(xb.view(), mb.view(), z.view(), &mut dropout)?;
                let n = reshuffle_mask(&mb, &mut reshuffle);
                let (_, v_hat) =
                    imputer.impute_arrays(v.view(), n.view(), z.view(), &mut dropout)?;
                let t: Vec<f64> = (0..b).map(|_| interp.uniform01()).collect();
                let step = Step {
                    epoch,
                    batch,
                    kind: UpdateKind::Critic,
                    network: "critic",
                    n_du,
                };
                observer.before_update(
                    &step.event(&[("generator", imputer.network()), ("critic", &critic)]),
                );
                let (loss, grads) = critic_loss_with_grads(&critic, &v, &v_hat, &t, cfg.lambda_gp)?;
                ensure_finite(METHOD, "critic", loss.value, epoch, batch)?;
                opt_d.step(critic.params_mut(), &grads);
                acc.push("critic", loss.value);
                observer.after_update(
                    &step.event(&[("generator", imputer.network()), ("critic", &critic)]),
                );
            }

            let n = reshuffle_mask(&mb, &mut reshuffle);
            let step = Step {
                epoch,
                batch,
                kind: UpdateKind::Generator,
                network: "generator",
                n_du,
            };
            observer.before_update(
                &step.event(&[("generator", imputer.network()), ("critic", &critic)]),
            );
            let (objective, v) = generator_step(
                imputer.network(),
                &critic,
                &xb,
                mb.values(),
                n.values(),
                &z,
                &mut dropout,
            )?;
            debug_check_observed(&xb, mb.values(), &v);
            observer.on_imputed_batch(xb.view(), mb.view(), v.view());
            ensure_finite(METHOD, "generator", objective.loss.value, epoch, batch)?;
            opt_g.step(imputer.network_mut().params_mut(), &objective.grads);
            acc.push("generator", objective.loss.value);
            observer.after_update(
                &step.event(&[("generator", imputer.network()), ("critic", &critic)]),
            );
        }
        history.push(acc.finish(epoch));
        observer.on_epoch_end(epoch, &imputer);
    }

    critic.set_mode(Mode::Eval);
    Ok(TrainedImputer {
        method: super::Method::Igani,
        imputer: imputer.frozen(),
        auxiliaries: vec![("critic".to_string(), critic)],
        config: cfg.clone(),
        loss_history: history,
    })
}
