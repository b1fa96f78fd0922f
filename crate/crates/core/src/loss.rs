//! Training objectives: mean squared error, the generalized Pareto
//! negative log-likelihood for exceedances, and the L2 weight penalty.
//!
//! The Pareto NLL exists in two forms that share every operation in the
//! same order: a plain `f64` evaluation and a tape-recorded one, so the
//! value seen during training equals the reported value bit for bit. The
//! branch at |xi| < [`XI_EXP_BRANCH`] freezes the shape's gradient inside
//! that band (the branch treats xi as constant); both gradient checks and
//! the trainer operate away from it.

use thiserror::Error;

use crate::autodiff::{Tape, Var};
use crate::data::SupervisedSet;
use crate::evt::XI_EXP_BRANCH;
use crate::nn::{EvtHead, Network, NnError, Prediction};

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("prediction and target lengths differ: {preds} vs {targets}")]
    DimensionMismatch { preds: usize, targets: usize },
    #[error("loss over an empty batch is undefined")]
    EmptyBatch,
    #[error("scale must be positive and finite, got {0}")]
    InvalidScale(f64),
    #[error("target {y} is outside the support implied by the threshold and parameters")]
    OutOfSupport { y: f64 },
    #[error("batch row {index}: target {y} is outside the conditional support")]
    BatchOutOfSupport { index: usize, y: f64 },
    #[error(transparent)]
    Network(#[from] NnError),
}

/// Mean squared error over aligned prediction/target vectors.
pub fn mse_loss(preds: &[f64], targets: &[f64]) -> Result<f64, LossError> {
    if preds.len() != targets.len() {
        return Err(LossError::DimensionMismatch {
            preds: preds.len(),
            targets: targets.len(),
        });
    }
    if preds.is_empty() {
        return Err(LossError::EmptyBatch);
    }
    let sum: f64 = preds
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok(sum / preds.len() as f64)
}

/// Negative log-likelihood of one exceedance `y > u` under a generalized
/// Pareto tail:
///
/// ```text
/// log sigma + (1/xi + 1) log(1 + xi (y - u) / sigma)     |xi| >= 1e-8
/// log sigma + (y - u) / sigma                            |xi| <  1e-8
/// ```
pub fn gpd_nll(sigma: f64, xi: f64, y: f64, u: f64) -> Result<f64, LossError> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(LossError::InvalidScale(sigma));
    }
    let z = y - u;
    if !z.is_finite() || z <= 0.0 {
        return Err(LossError::OutOfSupport { y });
    }
    if xi.abs() < XI_EXP_BRANCH {
        Ok(sigma.ln() + z / sigma)
    } else {
        let w = 1.0 + xi * z / sigma;
        if w <= 0.0 {
            return Err(LossError::OutOfSupport { y });
        }
        Ok(sigma.ln() + (1.0 / xi + 1.0) * w.ln())
    }
}

/// Records [`gpd_nll`] on the tape with `sigma` and `xi` as recorded
/// inputs. A support violation records a NaN (log of a non-positive
/// number) that `Tape::check_finite` reports; the trainer turns that into
/// an abort instead of clipping.
pub fn gpd_nll_rec(tape: &mut Tape, sigma: Var, xi: Var, y: f64, u: f64) -> Var {
    let z = tape.leaf(y - u);
    let xi_value = tape.value(xi);
    let log_sigma = tape.log(sigma);
    if xi_value.abs() < XI_EXP_BRANCH {
        let ratio = tape.div(z, sigma);
        tape.add(log_sigma, ratio)
    } else {
        let one = tape.leaf(1.0);
        let xi_z = tape.mul(xi, z);
        let scaled = tape.div(xi_z, sigma);
        let w = tape.add(one, scaled);
        let log_w = tape.log(w);
        let inv_xi = tape.div(one, xi);
        let coef = tape.add(inv_xi, one);
        let tail = tape.mul(coef, log_w);
        tape.add(log_sigma, tail)
    }
}

/// Data, penalty, and combined loss of one evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue {
    pub data_term: f64,
    pub penalty: f64,
    pub total: f64,
}

/// `lambda * sum w^2` over the given weight values. Biases are excluded by
/// the caller (see `Network::weight_mask`).
pub fn l2_penalty(weights: &[f64], lambda: f64) -> f64 {
    debug_assert!(lambda >= 0.0, "penalty strength must be nonnegative");
    lambda * weights.iter().map(|w| w * w).sum::<f64>()
}

/// Mean Pareto NLL of an exceedance batch under the head's conditional
/// (scale, shape). No penalty term.
pub fn batch_nll(head: &EvtHead, batch: &SupervisedSet, u: f64) -> Result<LossValue, LossError> {
    if batch.is_empty() {
        return Err(LossError::EmptyBatch);
    }
    let mut total = 0.0;
    for i in 0..batch.len() {
        let (sigma, xi) = match head.predict(&batch.inputs[i])? {
            Prediction::Gpd { sigma, xi } => (sigma, xi),
            Prediction::Point(_) => unreachable!("head emits scale and shape"),
        };
        total += gpd_nll(sigma, xi, batch.targets[i], u).map_err(|e| match e {
            LossError::OutOfSupport { y } => LossError::BatchOutOfSupport { index: i, y },
            other => other,
        })?;
    }
    let data_term = total / batch.len() as f64;
    Ok(LossValue {
        data_term,
        penalty: 0.0,
        total: data_term,
    })
}
