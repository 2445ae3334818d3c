// SPDX-License-Identifier: Apache-2.0

//! One-step-ahead prediction of a complete (already imputed) time series.

use ndarray::{s, Array2, ArrayView2};

use super::{
    ensure_finite, epoch_batches, select_rows, EpochLosses, Objective, Stream, TrainConfig,
};
use crate::autograd::Graph;
use crate::data::{check_same_dim, DataMatrix, NoiseSource};
use crate::error::{Error, Result};
use crate::losses::LossValue;
use crate::network::{build_mlp, Mode, Network};
use crate::optim::Optimizer;

#[derive(Debug, Clone, PartialEq)]
pub struct PredictorModel {
    pub net: Network,
    pub config: TrainConfig,
    /// Epoch whose parameters were kept (lowest validation error).
    pub best_epoch: usize,
    /// Per-epoch `train_mse` and, when a validation slice exists, `validation_mse`.
    pub loss_history: Vec<EpochLosses>,
}

impl PredictorModel {
    /// Predicts `x_{t+1}` for each input row `x_t`.
    pub fn predict(&self, inputs: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.net.forward_eval(inputs)
    }
}

/// Supervised pairs `(x_t, x_{t+1})`: `T - 1` rows each.
pub fn build_pairs(series: &DataMatrix) -> Result<(Array2<f64>, Array2<f64>)> {
    let t = series.n_samples();
    if t < 2 {
        return Err(Error::InvalidArgument(format!(
            "series too short for prediction pairs: {t} time point(s)"
        )));
    }
    let v = series.values();
    Ok((
        v.slice(s![..t - 1, ..]).to_owned(),
        v.slice(s![1.., ..]).to_owned(),
    ))
}

/// Mean squared error over all entries, with gradients for `net`.
pub fn predictor_objective(
    net: &Network,
    inputs: &Array2<f64>,
    targets: &Array2<f64>,
    rng: &mut NoiseSource,
) -> Result<Objective> {
    check_same_dim(
        "predictor: inputs",
        (inputs.nrows(), net.in_dim()),
        inputs.dim(),
    )?;
    check_same_dim(
        "predictor: targets",
        (inputs.nrows(), net.out_dim()),
        targets.dim(),
    )?;
    let mut graph = Graph::new();
    let params = net.bind(&mut graph, true);
    let x = graph.constant(inputs.clone());
    let y = graph.constant(targets.clone());
    let pred = net.forward_graph(&mut graph, &params, x, rng);
    let diff = graph.sub(pred, y);
    let sq = graph.mul(diff, diff);
    let loss = graph.mean_all(sq);
    let grads = graph.grad(loss, &params);
    Ok(Objective {
        loss: LossValue {
            value: graph.scalar(loss),
            components: vec![("mse", graph.scalar(loss))],
        },
        grads: grads.iter().map(|g| graph.value(*g).clone()).collect(),
    })
}

fn mse(net: &Network, inputs: &Array2<f64>, targets: &Array2<f64>) -> Result<f64> {
    let pred = net.forward_eval(inputs.view())?;
    Ok((&pred - targets).mapv(|e| e * e).mean().unwrap_or(0.0))
}

/// Trains the prediction network on `x_t -> x_{t+1}`, early-stopping on the
/// last `predictor_validation_fraction` of the pairs (in time order).
pub fn train_predictor(series: &DataMatrix, cfg: &TrainConfig) -> Result<PredictorModel> {
    cfg.validate()?;
    let (inputs, targets) = build_pairs(series)?;
    let n_pairs = inputs.nrows();
    let mut n_val = (cfg.predictor_validation_fraction * n_pairs as f64).floor() as usize;
    if n_val >= n_pairs {
        n_val = 0;
    }
    let n_train = n_pairs - n_val;
    let (train_x, train_y) = (
        inputs.slice(s![..n_train, ..]),
        targets.slice(s![..n_train, ..]),
    );
    let val = (n_val > 0).then(|| {
        (
            inputs.slice(s![n_train.., ..]).to_owned(),
            targets.slice(s![n_train.., ..]).to_owned(),
        )
    });

    let d = series.n_features();
    let mut net = build_mlp(
        &cfg.architecture.predictor(d),
        &mut cfg.stream(Stream::InitAuxiliary),
    )?;
    let mut opt = Optimizer::new(
        cfg.optimizer,
        cfg.predictor_learning_rate,
        cfg.adam_beta1,
        cfg.adam_beta2,
        net.params(),
    );
    let mut batching = cfg.stream(Stream::Batching);
    let mut dropout = cfg.stream(Stream::Dropout);

    let mut best: Option<(f64, usize, Vec<Array2<f64>>)> = None;
    let mut since_best = 0;
    let mut history = Vec::new();
    for epoch in 0..cfg.predictor_epochs {
        let mut total = 0.0;
        let mut count = 0;
        for (batch, rows) in epoch_batches(n_train, cfg.batch_size, &mut batching)
            .into_iter()
            .enumerate()
        {
            let xb = select_rows(train_x, &rows);
            let yb = select_rows(train_y, &rows);
            let objective = predictor_objective(&net, &xb, &yb, &mut dropout)?;
            ensure_finite("predictor", "mse", objective.loss.value, epoch, batch)?;
            opt.step(net.params_mut(), &objective.grads);
            total += objective.loss.value * rows.len() as f64;
            count += rows.len();
        }
        let mut losses = vec![("train_mse".to_string(), total / count as f64)];
        let score = match &val {
            Some((vx, vy)) => {
                let e = mse(&net, vx, vy)?;
                losses.push(("validation_mse".to_string(), e));
                e
            }
            None => total / count as f64,
        };
        history.push(EpochLosses { epoch, losses });
        if best.as_ref().is_none_or(|(b, _, _)| score < *b) {
            best = Some((score, epoch, net.params().to_vec()));
            since_best = 0;
        } else {
            since_best += 1;
            if val.is_some() && cfg.predictor_patience > 0 && since_best >= cfg.predictor_patience {
                break;
            }
        }
    }
    let (_, best_epoch, params) = best.expect("at least one epoch");
    net.params_mut().clone_from_slice(&params);
    net.set_mode(Mode::Eval);
    Ok(PredictorModel {
        net,
        config: cfg.clone(),
        best_epoch,
        loss_history: history,
    })
}
