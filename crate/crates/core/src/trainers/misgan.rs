// SPDX-License-Identifier: Apache-2.0

//! MisGAN: a mask generator, a data generator and an imputer, each with its own critic.
//!
//! * `D_m` separates real masks from `G_m` output.
//! * `D_x` separates `f(x, m)` from `f(G_x(ε), G_m(ε'))`, where `f` is the mask function.
//! * `D_i` separates `G_x` output (complete generated data) from imputations.

use ndarray::Array2;

use super::{
    check_inputs, debug_check_observed, ensure_finite, epoch_batches, select_rows, LossAccumulator,
    Method, NoopObserver, Objective, Step, Stream, TrainConfig, TrainObserver, TrainedImputer,
    UpdateKind,
};
use crate::autograd::{Graph, Var};
use crate::data::{check_same_dim, DataMatrix, MaskMatrix, NoiseSource};
use crate::error::Result;
use crate::imputer::{impute_graph, GenerativeImputer};
use crate::losses::{
    critic_loss_with_grads, critic_scores, misgan_mask_fn, misgan_mask_fn_graph,
    wgan_generator_graph, LossValue,
};
use crate::network::{build_mlp, Mode, Network};
use crate::optim::Optimizer;

const METHOD: &str = "misgan";

fn collect(
    graph: &Graph,
    loss: Var,
    grads: &[Var],
    components: Vec<(&'static str, f64)>,
) -> Objective {
    Objective {
        loss: LossValue {
            value: graph.scalar(loss),
            components,
        },
        grads: grads.iter().map(|g| graph.value(*g).clone()).collect(),
    }
}

/// `-mean D_m(G_m(ε)) - alpha · mean D_x(f(x_g, G_m(ε)))`, with gradients for `g_m`.
#[allow(clippy::too_many_arguments)]
pub fn misgan_mask_generator_objective(
    g_m: &Network,
    d_m: &Network,
    d_x: &Network,
    x_g: &Array2<f64>,
    eps: &Array2<f64>,
    tau: f64,
    alpha: f64,
    rng: &mut NoiseSource,
) -> Result<Objective> {
    check_same_dim("misgan: mask noise", (eps.nrows(), g_m.in_dim()), eps.dim())?;
    check_same_dim(
        "misgan: generated data",
        (eps.nrows(), g_m.out_dim()),
        x_g.dim(),
    )?;
    let mut graph = Graph::new();
    let gp = g_m.bind(&mut graph, true);
    let dmp = d_m.bind(&mut graph, false);
    let dxp = d_x.bind(&mut graph, false);
    let input = graph.constant(eps.clone());
    let mask = g_m.forward_graph(&mut graph, &gp, input, rng);
    let mask_term = wgan_generator_graph(&mut graph, d_m, &dmp, mask, rng);
    let xg = graph.constant(x_g.clone());
    let masked = misgan_mask_fn_graph(&mut graph, xg, mask, tau);
    let scores = critic_scores(&mut graph, d_x, &dxp, masked, rng);
    let mean = graph.mean_all(scores);
    let data_term = graph.scale(mean, -alpha);
    let loss = graph.add(mask_term, data_term);
    let grads = graph.grad(loss, &gp);
    let components = vec![
        ("mask_term", graph.scalar(mask_term)),
        ("data_term", graph.scalar(data_term)),
    ];
    Ok(collect(&graph, loss, &grads, components))
}

/// `-mean D_x(f(G_x(ε), m_g))` with the generated mask `m_g` held fixed.
pub fn misgan_data_generator_objective(
    g_x: &Network,
    d_x: &Network,
    m_g: &Array2<f64>,
    eps: &Array2<f64>,
    tau: f64,
    rng: &mut NoiseSource,
) -> Result<Objective> {
    check_same_dim("misgan: data noise", (eps.nrows(), g_x.in_dim()), eps.dim())?;
    check_same_dim(
        "misgan: generated mask",
        (eps.nrows(), g_x.out_dim()),
        m_g.dim(),
    )?;
    let mut graph = Graph::new();
    let gp = g_x.bind(&mut graph, true);
    let dp = d_x.bind(&mut graph, false);
    let input = graph.constant(eps.clone());
    let data = g_x.forward_graph(&mut graph, &gp, input, rng);
    let mask = graph.constant(m_g.clone());
    let masked = misgan_mask_fn_graph(&mut graph, data, mask, tau);
    let loss = wgan_generator_graph(&mut graph, d_x, &dp, masked, rng);
    let grads = graph.grad(loss, &gp);
    let components = vec![("generator_term", graph.scalar(loss))];
    Ok(collect(&graph, loss, &grads, components))
}

/// `-mean D_i(v)` for the imputation `v = G_i(x, m, z)`, with gradients for `g_i`.
pub fn misgan_imputer_objective(
    g_i: &Network,
    d_i: &Network,
    x: &Array2<f64>,
    m: &Array2<f64>,
    z: &Array2<f64>,
    rng: &mut NoiseSource,
) -> Result<Objective> {
    Ok(imputer_step(g_i, d_i, x, m, z, rng)?.0)
}

fn imputer_step(
    g_i: &Network,
    d_i: &Network,
    x: &Array2<f64>,
    m: &Array2<f64>,
    z: &Array2<f64>,
    rng: &mut NoiseSource,
) -> Result<(Objective, Array2<f64>)> {
    check_same_dim("misgan: x", (x.nrows(), g_i.in_dim()), x.dim())?;
    check_same_dim("misgan: mask", x.dim(), m.dim())?;
    check_same_dim("misgan: noise", x.dim(), z.dim())?;
    let mut graph = Graph::new();
    let gp = g_i.bind(&mut graph, true);
    let dp = d_i.bind(&mut graph, false);
    let xv = graph.constant(x.clone());
    let pass = impute_graph(g_i, &mut graph, &gp, xv, m, z, rng);
    let loss = wgan_generator_graph(&mut graph, d_i, &dp, pass.v, rng);
    let grads = graph.grad(loss, &gp);
    let components = vec![("generator_term", graph.scalar(loss))];
    Ok((
        collect(&graph, loss, &grads, components),
        graph.value(pass.v).clone(),
    ))
}

const NAMES: [&str; 6] = [
    "mask_generator",
    "mask_critic",
    "data_generator",
    "data_critic",
    "imputer",
    "imputer_critic",
];

pub fn train_misgan(x: &DataMatrix, m: &MaskMatrix, cfg: &TrainConfig) -> Result<TrainedImputer> {
    train_misgan_with(x, m, cfg, &mut NoopObserver)
}

pub fn train_misgan_with(
    x: &DataMatrix,
    m: &MaskMatrix,
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<TrainedImputer> {
    check_inputs(x, m, cfg)?;
    let d = x.n_features();
    let arch = &cfg.architecture;
    let aux_init = cfg.stream(Stream::InitAuxiliary);
    let critic_init = cfg.stream(Stream::InitCritic);
    let mut g_m = build_mlp(&arch.mask_generator(d), &mut aux_init.fork(0))?;
    let mut g_x = build_mlp(&arch.data_generator(d), &mut aux_init.fork(1))?;
    let mut imputer = GenerativeImputer::new(build_mlp(
        &arch.generator(d),
        &mut cfg.stream(Stream::InitGenerator),
    )?)?;
    let mut d_m = build_mlp(&arch.critic(d), &mut critic_init.fork(0))?;
    let mut d_x = build_mlp(&arch.critic(d), &mut critic_init.fork(1))?;
    let mut d_i = build_mlp(&arch.critic(d), &mut critic_init.fork(2))?;

    let new_opt = |net: &Network| {
        Optimizer::new(
            cfg.optimizer,
            cfg.learning_rate,
            cfg.adam_beta1,
            cfg.adam_beta2,
            net.params(),
        )
    };
    let mut opts: Vec<Optimizer> = [&g_m, &d_m, &g_x, &d_x, imputer.network(), &d_i]
        .into_iter()
        .map(new_opt)
        .collect();

    let mut batching = cfg.stream(Stream::Batching);
    let mut noise = cfg.stream(Stream::Noise);
    let mut dropout = cfg.stream(Stream::Dropout);
    let mut interp = cfg.stream(Stream::Interpolation);
    let tau = cfg.misgan_tau;

    let tracks = [
        "critic_mask",
        "critic_data",
        "critic_imputer",
        "generator_mask",
        "generator_data",
        "generator_imputer",
    ];
    let mut acc = LossAccumulator::new(&tracks);
    let mut history = Vec::with_capacity(cfg.n_epochs);
    for epoch in 0..cfg.n_epochs {
        for (batch, rows) in epoch_batches(x.n_samples(), cfg.batch_size, &mut batching)
            .into_iter()
            .enumerate()
        {
            let xb = select_rows(x.view(), &rows);
            let mb = MaskMatrix::new(select_rows(m.view(), &rows))?;
            let b = xb.nrows();
            let eps_m = noise.sample(b, d);
            let eps_x = noise.sample(b, d);
            let z = noise.sample(b, d);

            let m_g = g_m.forward(eps_m.view(), &mut dropout)?;
            let x_g = g_x.forward(eps_x.view(), &mut dropout)?;
            let (_, v) = imputer.impute_arrays(xb.view(), mb.view(), z.view(), &mut dropout)?;

            macro_rules! nets {
                () => {
                    [
                        (NAMES[0], &g_m),
                        (NAMES[1], &d_m),
                        (NAMES[2], &g_x),
                        (NAMES[3], &d_x),
                        (NAMES[4], imputer.network()),
                        (NAMES[5], &d_i),
                    ]
                };
            }
            let step = |kind, network| Step {
                epoch,
                batch,
                kind,
                network,
                n_du: cfg.misgan_critic_updates,
            };

            let real_masked = misgan_mask_fn(xb.view(), mb.view(), tau)?;
            let fake_masked = misgan_mask_fn(x_g.view(), m_g.view(), tau)?;
            let critic_pairs: [(usize, &'static str, &Array2<f64>, &Array2<f64>); 3] = [
                (1, "critic_mask", mb.values(), &m_g),
                (3, "critic_data", &real_masked, &fake_masked),
                (5, "critic_imputer", &x_g, &v),
            ];
            for _ in 0..cfg.misgan_critic_updates {
                for &(slot, track, real, fake) in &critic_pairs {
                    let t: Vec<f64> = (0..b).map(|_| interp.uniform01()).collect();
                    observer.before_update(&step(UpdateKind::Critic, NAMES[slot]).event(&nets!()));
                    let critic = match slot {
                        1 => &mut d_m,
                        3 => &mut d_x,
                        _ => &mut d_i,
                    };
                    let (loss, grads) =
                        critic_loss_with_grads(critic, real, fake, &t, cfg.lambda_gp)?;
                    ensure_finite(METHOD, track, loss.value, epoch, batch)?;
                    opts[slot].step(critic.params_mut(), &grads);
                    acc.push(track, loss.value);
                    observer.after_update(&step(UpdateKind::Critic, NAMES[slot]).event(&nets!()));
                }
            }

            observer.before_update(&step(UpdateKind::Generator, NAMES[0]).event(&nets!()));
            let objective = misgan_mask_generator_objective(
                &g_m,
                &d_m,
                &d_x,
                &x_g,
                &eps_m,
                tau,
                cfg.misgan_mask_alpha,
                &mut dropout,
            )?;
            ensure_finite(METHOD, "generator_mask", objective.loss.value, epoch, batch)?;
            opts[0].step(g_m.params_mut(), &objective.grads);
            acc.push("generator_mask", objective.loss.value);
            observer.after_update(&step(UpdateKind::Generator, NAMES[0]).event(&nets!()));

            observer.before_update(&step(UpdateKind::Generator, NAMES[2]).event(&nets!()));
            let objective =
                misgan_data_generator_objective(&g_x, &d_x, &m_g, &eps_x, tau, &mut dropout)?;
            ensure_finite(METHOD, "generator_data", objective.loss.value, epoch, batch)?;
            opts[2].step(g_x.params_mut(), &objective.grads);
            acc.push("generator_data", objective.loss.value);
            observer.after_update(&step(UpdateKind::Generator, NAMES[2]).event(&nets!()));

            observer.before_update(&step(UpdateKind::Generator, NAMES[4]).event(&nets!()));
            let (objective, v) =
                imputer_step(imputer.network(), &d_i, &xb, mb.values(), &z, &mut dropout)?;
            debug_check_observed(&xb, mb.values(), &v);
            observer.on_imputed_batch(xb.view(), mb.view(), v.view());
            ensure_finite(
                METHOD,
                "generator_imputer",
                objective.loss.value,
                epoch,
                batch,
            )?;
            opts[4].step(imputer.network_mut().params_mut(), &objective.grads);
            acc.push("generator_imputer", objective.loss.value);
            observer.after_update(&step(UpdateKind::Generator, NAMES[4]).event(&nets!()));
        }
        history.push(acc.finish(epoch));
        observer.on_epoch_end(epoch, &imputer);
    }

    let auxiliaries = [
        (NAMES[0], g_m),
        (NAMES[1], d_m),
        (NAMES[2], g_x),
        (NAMES[3], d_x),
        (NAMES[5], d_i),
    ]
    .into_iter()
    .map(|(name, mut net)| {
        net.set_mode(Mode::Eval);
        (name.to_string(), net)
    })
    .collect();
    Ok(TrainedImputer {
        method: Method::Misgan,
        imputer: imputer.frozen(),
        auxiliaries,
        config: cfg.clone(),
        loss_history: history,
    })
}
