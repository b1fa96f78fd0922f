//! Stochastic gradient descent over tape-recorded losses.
//!
//! One optimizer covers every network in this crate: plain SGD with a
//! fixed learning rate, an optional L2 penalty on weights (never biases),
//! optional input dropout, a chronological train/validation split, and
//! best-validation parameter snapshotting with optional early stopping.
//! Training is fully determined by the dataset, the initial parameters,
//! and [`TrainConfig::seed`].

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use thiserror::Error;

use crate::autodiff::{Tape, Var};
use crate::data::SupervisedSet;
use crate::loss::{gpd_nll, gpd_nll_rec, LossError};
use crate::nn::{dropout_mask, Network, NnError, Prediction, Recorded};

/// Default learning rate for squared-error objectives.
pub const DEFAULT_LR_MSE: f64 = 0.01;
/// Default learning rate for the Pareto tail likelihood, smaller because
/// the likelihood surface is stiffer near the support boundary.
pub const DEFAULT_LR_GPD_NLL: f64 = 0.005;

#[derive(Debug, Error, PartialEq)]
pub enum TrainError {
    #[error("bad training configuration: {0}")]
    BadConfig(String),
    #[error("training requires a non-empty dataset")]
    EmptyDataset,
    #[error("loss and model outputs do not match: {0}")]
    LossModelMismatch(&'static str),
    #[error("target {y} at row {index} does not exceed the threshold {threshold}")]
    TargetBelowThreshold { index: usize, y: f64, threshold: f64 },
    #[error("loss became non-finite")]
    NonFiniteLoss,
    #[error("loss diverged at epoch {epoch}")]
    DivergedLoss { epoch: usize },
    #[error(transparent)]
    Network(#[from] NnError),
    #[error(transparent)]
    Loss(#[from] LossError),
}

/// Objective minimized by [`sgd_train`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossKind {
    /// Squared error against a scalar point prediction.
    Mse,
    /// Pareto negative log-likelihood of exceedances over `threshold`;
    /// requires a model that outputs (scale, shape).
    GpdNll { threshold: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// L2 penalty strength on weights; biases are never penalized.
    pub lambda: f64,
    /// Input-feature dropout probability, applied during training only.
    pub p_drop: f64,
    /// Fraction of the dataset held out as the chronological tail.
    pub val_fraction: f64,
    /// Early-stopping patience in epochs; 0 disables early stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: DEFAULT_LR_MSE,
            epochs: 500,
            batch_size: 32,
            lambda: 0.0,
            p_drop: 0.0,
            val_fraction: 0.2,
            patience: 0,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |msg: String| Err(TrainError::BadConfig(msg));
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return bad(format!("learning rate must be finite and >= 0, got {}", self.lr));
        }
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive".into());
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return bad(format!("penalty strength must be finite and >= 0, got {}", self.lambda));
        }
        if !(0.0..1.0).contains(&self.p_drop) {
            return bad(format!("dropout probability must lie in [0, 1), got {}", self.p_drop));
        }
        if !(0.0..=0.5).contains(&self.val_fraction) {
            return bad(format!(
                "validation fraction must lie in [0, 0.5], got {}",
                self.val_fraction
            ));
        }
        Ok(())
    }
}

/// Split with the validation part as the chronological tail:
/// `floor(n * val_fraction)` final rows. Window sets are ordered by base
/// index, so the tail is the most recent data.
pub fn train_val_split(
    set: &SupervisedSet,
    val_fraction: f64,
) -> Result<(SupervisedSet, SupervisedSet), TrainError> {
    if !(0.0..=0.5).contains(&val_fraction) {
        return Err(TrainError::BadConfig(format!(
            "validation fraction must lie in [0, 0.5], got {val_fraction}"
        )));
    }
    if set.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let n_val = (set.len() as f64 * val_fraction).floor() as usize;
    let cut = set.len() - n_val;
    Ok((set.slice(0, cut), set.slice(cut, set.len())))
}

/// Per-epoch record of one [`sgd_train`] run. Losses are data terms only
/// (no penalty), so train and validation columns are comparable.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean per-sample training loss of each epoch, in epoch order.
    pub train_losses: Vec<f64>,
    /// Validation loss after each epoch; empty when `val_fraction` floors
    /// to zero rows.
    pub val_losses: Vec<f64>,
    /// Epoch whose parameters the trained model carries: the earliest
    /// validation minimum, or the last epoch run without validation.
    pub best_epoch: usize,
    pub best_val_loss: Option<f64>,
    pub stopped_early: bool,
}

impl TrainReport {
    pub fn epochs_run(&self) -> usize {
        self.train_losses.len()
    }
}

/// One SGD update on `model` from a single batch; returns the batch mean
/// data term (pre-update). `inputs[i]` pairs with `targets[i]`.
pub fn sgd_step<M: Network>(
    model: &mut M,
    inputs: &[&[f64]],
    targets: &[f64],
    loss: &LossKind,
    lr: f64,
    lambda: f64,
) -> Result<f64, TrainError> {
    let mut tape = Tape::new();
    step_on_tape(model, &mut tape, inputs, targets, loss, lr, lambda)
}

fn step_on_tape<M: Network>(
    model: &mut M,
    tape: &mut Tape,
    inputs: &[&[f64]],
    targets: &[f64],
    loss: &LossKind,
    lr: f64,
    lambda: f64,
) -> Result<f64, TrainError> {
    if inputs.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    if inputs.len() != targets.len() {
        return Err(LossError::DimensionMismatch {
            preds: inputs.len(),
            targets: targets.len(),
        }
        .into());
    }
    tape.clear();
    let mut params = model.params();
    let leaves = tape.leaf_slice(&params);

    let mut sum: Option<Var> = None;
    for (input, &target) in inputs.iter().zip(targets) {
        let term = match (loss, model.forward_rec(tape, &leaves, input)?) {
            (LossKind::Mse, Recorded::Point(p)) => {
                let t = tape.leaf(target);
                let d = tape.sub(p, t);
                tape.mul(d, d)
            }
            (LossKind::GpdNll { threshold }, Recorded::Gpd { sigma, xi }) => {
                gpd_nll_rec(tape, sigma, xi, target, *threshold)
            }
            (LossKind::Mse, Recorded::Gpd { .. }) => {
                return Err(TrainError::LossModelMismatch(
                    "squared error needs a point output, model emits (scale, shape)",
                ))
            }
            (LossKind::GpdNll { .. }, Recorded::Point(_)) => {
                return Err(TrainError::LossModelMismatch(
                    "tail likelihood needs (scale, shape), model emits a point",
                ))
            }
        };
        sum = Some(match sum {
            Some(acc) => tape.add(acc, term),
            None => term,
        });
    }
    let count = tape.leaf(inputs.len() as f64);
    let mean = tape.div(sum.expect("batch is non-empty"), count);

    let objective = if lambda > 0.0 {
        let mask = model.weight_mask();
        let mut sq: Option<Var> = None;
        for (leaf, keep) in leaves.iter().zip(&mask) {
            if *keep {
                let term = tape.mul(*leaf, *leaf);
                sq = Some(match sq {
                    Some(acc) => tape.add(acc, term),
                    None => term,
                });
            }
        }
        match sq {
            Some(total_sq) => {
                let lam = tape.leaf(lambda);
                let penalty = tape.mul(lam, total_sq);
                tape.add(mean, penalty)
            }
            None => mean,
        }
    } else {
        mean
    };

    if tape.check_finite().is_err() {
        return Err(TrainError::NonFiniteLoss);
    }
    let grads = tape.backward(objective);
    for (p, leaf) in params.iter_mut().zip(&leaves) {
        *p -= lr * grads.wrt(*leaf);
    }
    if params.iter().any(|p| !p.is_finite()) {
        return Err(TrainError::NonFiniteLoss);
    }
    model.set_params(&params)?;
    Ok(tape.value(mean))
}

/// Mean data loss of `model` on a plain (no dropout, no penalty) pass.
/// A transient support violation under the tail likelihood yields
/// positive infinity rather than an error, so a bad epoch loses the
/// best-snapshot comparison instead of aborting the run.
fn plain_loss<M: Network>(
    model: &M,
    inputs: &[Vec<f64>],
    targets: &[f64],
    loss: &LossKind,
) -> Result<f64, TrainError> {
    let mut sum = 0.0;
    for (input, &target) in inputs.iter().zip(targets) {
        let term = match (loss, model.predict(input)?) {
            (LossKind::Mse, Prediction::Point(p)) => (p - target) * (p - target),
            (LossKind::GpdNll { threshold }, Prediction::Gpd { sigma, xi }) => {
                match gpd_nll(sigma, xi, target, *threshold) {
                    Ok(v) => v,
                    Err(LossError::OutOfSupport { .. }) => return Ok(f64::INFINITY),
                    Err(e) => return Err(e.into()),
                }
            }
            _ => {
                return Err(TrainError::LossModelMismatch(
                    "model output kind does not match the loss",
                ))
            }
        };
        sum += term;
    }
    Ok(sum / inputs.len() as f64)
}

/// Train `model` by mini-batch SGD.
///
/// Each epoch shuffles the training rows with the seeded generator,
/// walks them in batches (the final batch may be short), and applies one
/// update per batch. After every epoch the validation loss is evaluated
/// with dropout off; the parameters of the best validation epoch
/// (earliest on ties) are restored at the end. With `patience > 0` the
/// run stops once that many consecutive epochs fail to improve.
pub fn sgd_train<M: Network>(
    model: &mut M,
    data: &SupervisedSet,
    loss: &LossKind,
    cfg: &TrainConfig,
) -> Result<TrainReport, TrainError> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    if let LossKind::GpdNll { threshold } = loss {
        for (index, &y) in data.targets.iter().enumerate() {
            if y <= *threshold {
                return Err(TrainError::TargetBelowThreshold {
                    index,
                    y,
                    threshold: *threshold,
                });
            }
        }
    }

    let (train, val) = train_val_split(data, cfg.val_fraction)?;
    let mut rng = StdRng::seed_from_u64(cfg.seed);
    let mut tape = Tape::new();
    let mut order: Vec<usize> = (0..train.len()).collect();

    let mut report = TrainReport {
        train_losses: Vec::with_capacity(cfg.epochs),
        val_losses: Vec::with_capacity(cfg.epochs),
        best_epoch: 0,
        best_val_loss: None,
        stopped_early: false,
    };
    let mut best_params: Option<Vec<f64>> = None;
    let mut epochs_since_best = 0usize;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let mut masked: Vec<Vec<f64>> = Vec::new();
            let mut inputs: Vec<&[f64]> = Vec::with_capacity(chunk.len());
            let mut targets: Vec<f64> = Vec::with_capacity(chunk.len());
            if cfg.p_drop > 0.0 {
                for &i in chunk {
                    let mask = dropout_mask(&mut rng, train.inputs[i].len(), cfg.p_drop)?;
                    masked.push(
                        train.inputs[i]
                            .iter()
                            .zip(&mask)
                            .map(|(x, m)| x * m)
                            .collect(),
                    );
                }
                inputs.extend(masked.iter().map(Vec::as_slice));
            } else {
                inputs.extend(chunk.iter().map(|&i| train.inputs[i].as_slice()));
            }
            targets.extend(chunk.iter().map(|&i| train.targets[i]));

            let batch_mean =
                step_on_tape(model, &mut tape, &inputs, &targets, loss, cfg.lr, cfg.lambda)
                    .map_err(|e| match e {
                        TrainError::NonFiniteLoss => TrainError::DivergedLoss { epoch },
                        other => other,
                    })?;
            epoch_sum += batch_mean * chunk.len() as f64;
        }
        let train_loss = epoch_sum / train.len() as f64;
        if !train_loss.is_finite() {
            return Err(TrainError::DivergedLoss { epoch });
        }
        report.train_losses.push(train_loss);

        if !val.is_empty() {
            let val_loss = plain_loss(model, &val.inputs, &val.targets, loss)?;
            report.val_losses.push(val_loss);
            let improved = match report.best_val_loss {
                None => true,
                Some(best) => val_loss < best,
            };
            if improved {
                report.best_val_loss = Some(val_loss);
                report.best_epoch = epoch;
                best_params = Some(model.params());
                epochs_since_best = 0;
            } else {
                epochs_since_best += 1;
                if cfg.patience > 0 && epochs_since_best >= cfg.patience {
                    report.stopped_early = true;
                    break;
                }
            }
        } else {
            report.best_epoch = epoch;
        }
    }

    if let Some(best) = best_params {
        model.set_params(&best)?;
    }
    Ok(report)
}
