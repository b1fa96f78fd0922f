//! Generalized Pareto analytics for threshold exceedances.
//!
//! A series value `y` above a threshold `u` is modeled by the generalized
//! Pareto distribution with scale `sigma` and shape `xi`:
//!
//! ```text
//! H(y) = 1 - (1 + xi (y - u) / sigma)^(-1/xi)      xi != 0
//! H(y) = 1 - exp(-(y - u) / sigma)                 xi -> 0
//! ```
//!
//! The shape is kept inside (-1, 1): the upper bound keeps the mean finite
//! and matches the tanh link used by the network head, the lower bound
//! keeps the likelihood regular. Shapes within [`XI_EXP_BRANCH`] of zero
//! take the exponential limit so that the density, distribution, and
//! quantile functions stay continuous across the branch switch.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use thiserror::Error;

/// |xi| below this evaluates the exponential-limit branch.
pub const XI_EXP_BRANCH: f64 = 1e-8;

/// Minimum number of exceedances accepted by [`gpd_fit_mle`].
pub const MIN_EXCEEDANCES: usize = 30;

/// Iteration cap for [`gpd_fit_mle`].
pub const MLE_MAX_ITERS: usize = 10_000;

/// Fit stops once the mean negative log-likelihood improves by less than
/// this between accepted steps.
pub const MLE_NLL_TOL: f64 = 1e-10;

#[derive(Debug, Error, PartialEq)]
pub enum EvtError {
    #[error("scale must be positive and finite, got {0}")]
    InvalidScale(f64),
    #[error("shape must lie in (-1, 1), got {0}")]
    InvalidShape(f64),
    #[error("location must be finite, got {0}")]
    InvalidLocation(f64),
    #[error("value {y} lies outside the distribution support")]
    OutOfSupport { y: f64 },
    #[error("probability must lie strictly inside (0, 1), got {0}")]
    InvalidProbability(f64),
    #[error("need at least {needed} exceedances above the threshold, found {got}")]
    InsufficientExceedances { needed: usize, got: usize },
    #[error("maximum-likelihood fit did not converge within {0} iterations")]
    NonConvergence(usize),
}

/// Location, scale, and shape of a generalized Pareto tail. Construction
/// enforces `sigma > 0` and `xi` in (-1, 1), so a value of this type always
/// has a finite mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpdParams {
    u: f64,
    sigma: f64,
    xi: f64,
}

impl GpdParams {
    pub fn new(u: f64, sigma: f64, xi: f64) -> Result<Self, EvtError> {
        if !u.is_finite() {
            return Err(EvtError::InvalidLocation(u));
        }
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(EvtError::InvalidScale(sigma));
        }
        if !(xi.is_finite() && xi > -1.0 && xi < 1.0) {
            return Err(EvtError::InvalidShape(xi));
        }
        Ok(Self { u, sigma, xi })
    }

    pub fn u(&self) -> f64 {
        self.u
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn xi(&self) -> f64 {
        self.xi
    }

    /// Upper end of the support: infinite for `xi >= 0`, `u - sigma/xi`
    /// for negative shapes.
    pub fn support_max(&self) -> f64 {
        if self.xi < 0.0 {
            self.u - self.sigma / self.xi
        } else {
            f64::INFINITY
        }
    }
}

/// Distribution function `P(Y <= y)` for `y` in the support.
pub fn gpd_cdf(p: &GpdParams, y: f64) -> Result<f64, EvtError> {
    let z = y - p.u;
    if !y.is_finite() || z < 0.0 || y > p.support_max() {
        return Err(EvtError::OutOfSupport { y });
    }
    if p.xi.abs() < XI_EXP_BRANCH {
        Ok(1.0 - (-z / p.sigma).exp())
    } else {
        let w = 1.0 + p.xi * z / p.sigma;
        Ok(1.0 - w.powf(-1.0 / p.xi))
    }
}

/// Log-density at `y`. Defined for `u <= y` strictly below the upper
/// support end; the boundary density at `y = u` is `1/sigma`.
pub fn gpd_logpdf(p: &GpdParams, y: f64) -> Result<f64, EvtError> {
    let z = y - p.u;
    if !y.is_finite() || z < 0.0 {
        return Err(EvtError::OutOfSupport { y });
    }
    if p.xi.abs() < XI_EXP_BRANCH {
        Ok(-p.sigma.ln() - z / p.sigma)
    } else {
        let w = 1.0 + p.xi * z / p.sigma;
        if w <= 0.0 {
            return Err(EvtError::OutOfSupport { y });
        }
        Ok(-p.sigma.ln() - (1.0 / p.xi + 1.0) * w.ln())
    }
}

/// Expected value `u + sigma / (1 - xi)`; finite because construction
/// bounds `xi < 1`.
pub fn gpd_mean(p: &GpdParams) -> f64 {
    p.u + p.sigma / (1.0 - p.xi)
}

/// Inverse distribution function for `q` strictly inside (0, 1).
pub fn gpd_quantile(p: &GpdParams, q: f64) -> Result<f64, EvtError> {
    if !(q > 0.0 && q < 1.0) {
        return Err(EvtError::InvalidProbability(q));
    }
    if p.xi.abs() < XI_EXP_BRANCH {
        Ok(p.u - p.sigma * (1.0 - q).ln())
    } else {
        Ok(p.u + p.sigma / p.xi * ((1.0 - q).powf(-p.xi) - 1.0))
    }
}

/// One inverse-CDF draw from the given RNG.
pub fn gpd_draw<R: Rng + ?Sized>(p: &GpdParams, rng: &mut R) -> f64 {
    // random::<f64>() yields [0, 1); redraw the measure-zero 0 so the
    // quantile argument stays strictly inside (0, 1).
    let q = loop {
        let r = rng.random::<f64>();
        if r > 0.0 {
            break r;
        }
    };
    gpd_quantile(p, q).expect("draw lies in (0, 1)")
}

/// `n` seeded inverse-CDF draws. The same seed reproduces the same vector.
pub fn gpd_sample(p: &GpdParams, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = StdRng::seed_from_u64(seed);
    (0..n).map(|_| gpd_draw(p, &mut rng)).collect()
}

/// Indices and values of entries strictly above the threshold, in order.
pub fn extract_exceedances(values: &[f64], u: f64) -> (Vec<usize>, Vec<f64>) {
    let mut indices = Vec::new();
    let mut kept = Vec::new();
    for (i, &y) in values.iter().enumerate() {
        if y > u {
            indices.push(i);
            kept.push(y);
        }
    }
    (indices, kept)
}

/// Result of a direct maximum-likelihood fit over exceedances.
#[derive(Debug, Clone, Copy)]
pub struct GpdFit {
    pub params: GpdParams,
    /// Mean negative log-likelihood per exceedance at the optimum.
    pub mean_nll: f64,
    pub n_exceedances: usize,
    pub iterations: usize,
}

/// Fits (sigma, xi) by gradient descent with backtracking line search on
/// the mean negative log-likelihood, in the unconstrained coordinates
/// `sigma = softplus(a)`, `xi = tanh(t)`. Needs at least
/// [`MIN_EXCEEDANCES`] samples strictly above `u`; stops when an accepted
/// step improves the objective by less than [`MLE_NLL_TOL`].
pub fn gpd_fit_mle(samples: &[f64], u: f64) -> Result<GpdFit, EvtError> {
    let (_, exceed) = extract_exceedances(samples, u);
    if exceed.len() < MIN_EXCEEDANCES {
        return Err(EvtError::InsufficientExceedances {
            needed: MIN_EXCEEDANCES,
            got: exceed.len(),
        });
    }
    let z: Vec<f64> = exceed.iter().map(|y| y - u).collect();

    // Method-of-moments start, nudged until the whole sample is in support.
    let n = z.len() as f64;
    let mean = z.iter().sum::<f64>() / n;
    let var = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let mut xi0 = if var > 0.0 {
        (0.5 * (1.0 - mean * mean / var)).clamp(-0.5, 0.5)
    } else {
        0.0
    };
    let mut sigma0 = (mean * (1.0 - xi0)).max(1e-12);
    while !mean_nll_gpd(&z, sigma0, xi0).is_finite() {
        sigma0 *= 2.0;
        xi0 *= 0.5;
    }

    let mut a = softplus_inv(sigma0);
    let mut t = xi0.atanh();
    let (mut f, mut ga, mut gt) = nll_value_grad(&z, a, t);
    let mut step = 1.0_f64;
    for iter in 1..=MLE_MAX_ITERS {
        let grad_sq = ga * ga + gt * gt;
        let mut eta = step;
        let mut accepted = false;
        for _ in 0..60 {
            let (a2, t2) = (a - eta * ga, t - eta * gt);
            let f2 = mean_nll_gpd(&z, softplus(a2), t2.tanh());
            if f2.is_finite() && f2 <= f - 1e-4 * eta * grad_sq {
                let improved = f - f2;
                a = a2;
                t = t2;
                let (nf, nga, ngt) = nll_value_grad(&z, a, t);
                f = nf;
                ga = nga;
                gt = ngt;
                step = (eta * 1.5).min(1.0);
                accepted = true;
                if improved < MLE_NLL_TOL {
                    return Ok(finish(u, a, t, f, z.len(), iter));
                }
                break;
            }
            eta *= 0.5;
        }
        if !accepted {
            // No descent direction left at line-search resolution.
            return Ok(finish(u, a, t, f, z.len(), iter));
        }
    }
    Err(EvtError::NonConvergence(MLE_MAX_ITERS))
}

fn finish(u: f64, a: f64, t: f64, mean_nll: f64, n: usize, iterations: usize) -> GpdFit {
    let params = GpdParams::new(u, softplus(a), t.tanh())
        .expect("softplus/tanh keep parameters in range");
    GpdFit {
        params,
        mean_nll,
        n_exceedances: n,
        iterations,
    }
}

/// Mean negative log-likelihood of excesses `z >= 0`; +inf outside support.
fn mean_nll_gpd(z: &[f64], sigma: f64, xi: f64) -> f64 {
    let n = z.len() as f64;
    let mut total = 0.0;
    if xi.abs() < XI_EXP_BRANCH {
        for &zi in z {
            total += sigma.ln() + zi / sigma;
        }
    } else {
        for &zi in z {
            let w = 1.0 + xi * zi / sigma;
            if w <= 0.0 {
                return f64::INFINITY;
            }
            total += sigma.ln() + (1.0 / xi + 1.0) * w.ln();
        }
    }
    total / n
}

/// Value and gradient of the mean NLL in unconstrained coordinates
/// (a, t) with sigma = softplus(a), xi = tanh(t). Hand-derived:
///
/// ```text
/// dl/dsigma = 1/sigma - (1 + xi) z / (sigma^2 w)
/// dl/dxi    = -ln(w)/xi^2 + (1/xi + 1) z / (sigma w)       w = 1 + xi z / sigma
/// ```
///
/// with the xi -> 0 limits `1/sigma - z/sigma^2` and `z/sigma - z^2/(2 sigma^2)`.
fn nll_value_grad(z: &[f64], a: f64, t: f64) -> (f64, f64, f64) {
    let sigma = softplus(a);
    let xi = t.tanh();
    let n = z.len() as f64;
    let mut f = 0.0;
    let mut d_sigma = 0.0;
    let mut d_xi = 0.0;
    if xi.abs() < XI_EXP_BRANCH {
        for &zi in z {
            f += sigma.ln() + zi / sigma;
            d_sigma += 1.0 / sigma - zi / (sigma * sigma);
            d_xi += zi / sigma - zi * zi / (2.0 * sigma * sigma);
        }
    } else {
        for &zi in z {
            let w = 1.0 + xi * zi / sigma;
            if w <= 0.0 {
                return (f64::INFINITY, 0.0, 0.0);
            }
            f += sigma.ln() + (1.0 / xi + 1.0) * w.ln();
            d_sigma += 1.0 / sigma - (1.0 + xi) * zi / (sigma * sigma * w);
            d_xi += -w.ln() / (xi * xi) + (1.0 / xi + 1.0) * zi / (sigma * w);
        }
    }
    let chain_a = crate::autodiff::sigmoid(a);
    let chain_t = 1.0 - xi * xi;
    (f / n, d_sigma * chain_a / n, d_xi * chain_t / n)
}

fn softplus(x: f64) -> f64 {
    crate::autodiff::softplus(x)
}

/// Inverse of softplus: a with softplus(a) = x, stable for large x.
fn softplus_inv(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp_m1().ln()
    }
}
