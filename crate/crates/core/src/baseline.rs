//! Seasonal regression baseline: ordinary least squares on Fourier
//! features (plus optional exogenous predictors) with AR(2) errors.
//!
//! Estimation is two-stage: stage 1 regresses the series on an intercept,
//! interleaved sin/cos harmonics, and any exogenous columns; stage 2 fits
//! an AR(2) to the stage-1 residuals by conditional least squares.
//! Forecasts add the AR residual recursion to the deterministic component,
//! with 95% intervals from the accumulated psi-weight variance.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum BaselineError {
    #[error("invalid seasonal specification: {0}")]
    BadSpec(String),
    #[error("series too short: need at least {needed} observations, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("design matrix is singular; features are collinear")]
    SingularDesign,
    #[error("exogenous features: expected {expected} rows of width {width}, got {got}")]
    ExogShape {
        expected: usize,
        width: usize,
        got: usize,
    },
}

/// One block of seasonal features: `harmonics` sin/cos pairs of period
/// `period` samples (24 = daily on hourly data, 168 = weekly).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FourierSpec {
    pub harmonics: usize,
    pub period: usize,
}

impl FourierSpec {
    pub fn new(harmonics: usize, period: usize) -> Result<Self, BaselineError> {
        let spec = FourierSpec { harmonics, period };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), BaselineError> {
        if self.harmonics == 0 {
            return Err(BaselineError::BadSpec(
                "need at least one harmonic".into(),
            ));
        }
        if self.period < 2 {
            return Err(BaselineError::BadSpec(format!(
                "period must be at least 2 samples, got {}",
                self.period
            )));
        }
        if 2 * self.harmonics >= self.period {
            return Err(BaselineError::BadSpec(format!(
                "{} harmonics alias within period {}",
                self.harmonics, self.period
            )));
        }
        Ok(())
    }

    /// Number of feature columns this block contributes.
    pub fn width(&self) -> usize {
        2 * self.harmonics
    }
}

/// `[sin(2 pi k t / m), cos(2 pi k t / m)]` for `k = 1..=harmonics`,
/// interleaved in that order.
pub fn fourier_features(t: f64, spec: &FourierSpec) -> Vec<f64> {
    let mut row = Vec::with_capacity(spec.width());
    for k in 1..=spec.harmonics {
        let arg = 2.0 * std::f64::consts::PI * k as f64 * t / spec.period as f64;
        row.push(arg.sin());
        row.push(arg.cos());
    }
    row
}

/// Concatenated feature blocks for every spec, without the intercept.
pub fn fourier_row(t: f64, specs: &[FourierSpec]) -> Vec<f64> {
    specs
        .iter()
        .flat_map(|spec| fourier_features(t, spec))
        .collect()
}

/// Fitted seasonal-regression model with AR(2) errors. The sample clock
/// is the index into the series the model was fit on: feature phases are
/// anchored at index 0 and `fit_len` marks the first out-of-sample index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FourierArModel {
    pub specs: Vec<FourierSpec>,
    pub intercept: f64,
    /// Coefficients aligned with [`fourier_row`].
    pub fourier_coef: Vec<f64>,
    pub exog_coef: Vec<f64>,
    /// AR(2) error coefficients (phi1, phi2), strictly stationary.
    pub phi: (f64, f64),
    /// Innovation variance of the AR(2) recursion.
    pub resid_var: f64,
    pub fit_len: usize,
    /// Stage-1 residuals at the end of the fit, ordered
    /// (second-newest, newest).
    pub last_resid: (f64, f64),
}

impl FourierArModel {
    /// Intercept plus seasonal component at sample index `t` (exogenous
    /// terms excluded).
    pub fn deterministic_at(&self, t: f64) -> f64 {
        self.intercept + dot(&self.fourier_coef, &fourier_row(t, &self.specs))
    }

    /// Stage-1 residuals of `values` indexed from sample 0 of the fit
    /// clock.
    pub fn residuals(
        &self,
        values: &[f64],
        exog: Option<&[Vec<f64>]>,
    ) -> Result<Vec<f64>, BaselineError> {
        let exog = check_exog(exog, &self.exog_coef, values.len())?;
        Ok(values
            .iter()
            .enumerate()
            .map(|(t, &y)| {
                let e = exog.map_or(0.0, |rows| dot(&self.exog_coef, &rows[t]));
                y - self.deterministic_at(t as f64) - e
            })
            .collect())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_exog<'a>(
    exog: Option<&'a [Vec<f64>]>,
    coef: &[f64],
    expected: usize,
) -> Result<Option<&'a [Vec<f64>]>, BaselineError> {
    match exog {
        None if coef.is_empty() => Ok(None),
        None => Err(BaselineError::ExogShape {
            expected,
            width: coef.len(),
            got: 0,
        }),
        Some(rows) => {
            if rows.len() != expected || rows.iter().any(|r| r.len() != coef.len()) {
                return Err(BaselineError::ExogShape {
                    expected,
                    width: coef.len(),
                    got: rows.len(),
                });
            }
            Ok(Some(rows))
        }
    }
}

/// Gaussian elimination with partial pivoting; `None` when the system is
/// singular relative to its magnitude.
fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    let scale = a
        .iter()
        .flatten()
        .fold(0.0_f64, |m, v| m.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| {
            a[i][col]
                .abs()
                .partial_cmp(&a[j][col].abs())
                .expect("pivot magnitudes are finite")
        })?;
        if a[pivot][col].abs() <= 1e-12 * scale {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for col in (0..n).rev() {
        let mut s = b[col];
        for k in col + 1..n {
            s -= a[col][k] * x[k];
        }
        x[col] = s / a[col][col];
    }
    Some(x)
}

fn stationary(phi: (f64, f64)) -> bool {
    const MARGIN: f64 = 1e-9;
    phi.0 + phi.1 < 1.0 - MARGIN && phi.1 - phi.0 < 1.0 - MARGIN && phi.1.abs() < 1.0 - MARGIN
}

/// Two-stage fit: OLS of `values` on `[1, fourier blocks, exog]`, then
/// conditional least squares AR(2) on the residuals. Sample `t` of
/// `values` is feature clock `t`.
pub fn fit_fourier_ar(
    values: &[f64],
    specs: &[FourierSpec],
    exog: Option<&[Vec<f64>]>,
) -> Result<FourierArModel, BaselineError> {
    for spec in specs {
        spec.validate()?;
    }
    let total_harmonics: usize = specs.iter().map(|s| s.harmonics).sum();
    let n_exog = exog.map_or(0, |rows| rows.first().map_or(0, Vec::len));
    let needed = 4 * total_harmonics + 2 * n_exog + 10;
    if values.len() < needed {
        return Err(BaselineError::TooShort {
            needed,
            got: values.len(),
        });
    }
    if let Some(rows) = exog {
        if rows.len() != values.len() || rows.iter().any(|r| r.len() != n_exog) {
            return Err(BaselineError::ExogShape {
                expected: values.len(),
                width: n_exog,
                got: rows.len(),
            });
        }
    }

    // Stage 1: accumulate the normal equations X'X beta = X'y.
    let p = 1 + 2 * total_harmonics + n_exog;
    let mut xtx = vec![vec![0.0; p]; p];
    let mut xty = vec![0.0; p];
    let mut row = Vec::with_capacity(p);
    for (t, &y) in values.iter().enumerate() {
        row.clear();
        row.push(1.0);
        row.extend(fourier_row(t as f64, specs));
        if let Some(rows) = exog {
            row.extend(&rows[t]);
        }
        for i in 0..p {
            for j in i..p {
                xtx[i][j] += row[i] * row[j];
            }
            xty[i] += row[i] * y;
        }
    }
    for i in 0..p {
        for j in 0..i {
            xtx[i][j] = xtx[j][i];
        }
    }
    let beta = solve_linear(xtx, xty).ok_or(BaselineError::SingularDesign)?;
    let intercept = beta[0];
    let fourier_coef = beta[1..1 + 2 * total_harmonics].to_vec();
    let exog_coef = beta[1 + 2 * total_harmonics..].to_vec();

    let mut model = FourierArModel {
        specs: specs.to_vec(),
        intercept,
        fourier_coef,
        exog_coef,
        phi: (0.0, 0.0),
        resid_var: 0.0,
        fit_len: values.len(),
        last_resid: (0.0, 0.0),
    };
    let resid = model.residuals(values, exog)?;
    let n = resid.len();

    // Stage 2: conditional least squares for e_t on (e_{t-1}, e_{t-2}).
    // A numerically dead residual (perfect stage-1 fit) or a singular
    // lag system degrades to independent errors rather than failing.
    let energy: f64 = resid.iter().map(|e| e * e).sum();
    let mut phi = (0.0, 0.0);
    if energy > 1e-18 * n as f64 {
        let (mut s11, mut s12, mut s22, mut b1, mut b2) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for t in 2..n {
            let (e0, e1, e2) = (resid[t], resid[t - 1], resid[t - 2]);
            s11 += e1 * e1;
            s12 += e1 * e2;
            s22 += e2 * e2;
            b1 += e0 * e1;
            b2 += e0 * e2;
        }
        let det = s11 * s22 - s12 * s12;
        if det.abs() > 1e-12 * s11.max(s22).powi(2).max(f64::MIN_POSITIVE) {
            phi = (
                (b1 * s22 - b2 * s12) / det,
                (b2 * s11 - b1 * s12) / det,
            );
            while !stationary(phi) {
                phi.0 *= 0.995;
                phi.1 *= 0.995 * 0.995;
            }
        }
    }
    model.phi = phi;

    let mut innov_sq = 0.0;
    for t in 2..n {
        let eps = resid[t] - phi.0 * resid[t - 1] - phi.1 * resid[t - 2];
        innov_sq += eps * eps;
    }
    model.resid_var = innov_sq / (n - 2) as f64;
    model.last_resid = (resid[n - 2], resid[n - 1]);
    Ok(model)
}

/// Pick the harmonic count `K in 1..=k_max` for period `m` minimizing
/// one-step-ahead squared error on the chronological tail
/// (`max(1, floor(n * holdout))` samples); ties break toward smaller `K`.
pub fn select_k(
    values: &[f64],
    m: usize,
    k_max: usize,
    holdout: f64,
) -> Result<usize, BaselineError> {
    if k_max == 0 {
        return Err(BaselineError::BadSpec("k_max must be at least 1".into()));
    }
    FourierSpec::new(k_max, m)?;
    if !(holdout > 0.0 && holdout <= 0.5) {
        return Err(BaselineError::BadSpec(format!(
            "holdout fraction must lie in (0, 0.5], got {holdout}"
        )));
    }
    let n = values.len();
    let n_hold = ((n as f64 * holdout).floor() as usize).max(1);
    let n_fit = n.saturating_sub(n_hold);
    let needed = 4 * k_max + 10;
    if n_fit < needed {
        return Err(BaselineError::TooShort {
            needed: needed + n_hold,
            got: n,
        });
    }

    let mut best = (1, f64::INFINITY);
    for k in 1..=k_max {
        let spec = [FourierSpec { harmonics: k, period: m }];
        let model = fit_fourier_ar(&values[..n_fit], &spec, None)?;
        let resid = model.residuals(values, None)?;
        let mut sq = 0.0;
        for t in n_fit..n {
            let pred = model.deterministic_at(t as f64)
                + model.phi.0 * resid[t - 1]
                + model.phi.1 * resid[t - 2];
            sq += (values[t] - pred) * (values[t] - pred);
        }
        let mse = sq / n_hold as f64;
        if mse < best.1 {
            best = (k, mse);
        }
    }
    Ok(best.0)
}

/// One forecast step: point and 95% interval bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForecastStep {
    pub point: f64,
    pub lo95: f64,
    pub hi95: f64,
}

/// Forecast `h` steps starting at sample index `t_next` on the model's
/// feature clock, continuing the AR(2) recursion from `last_resid`
/// ordered (second-newest, newest). Interval half-widths come from the
/// psi-weight variance recursion, so they are nondecreasing in horizon.
pub fn forecast_from(
    model: &FourierArModel,
    t_next: usize,
    last_resid: (f64, f64),
    h: usize,
    future_exog: Option<&[Vec<f64>]>,
) -> Result<Vec<ForecastStep>, BaselineError> {
    if h == 0 {
        return Err(BaselineError::BadSpec("horizon must be at least 1".into()));
    }
    let exog = check_exog(future_exog, &model.exog_coef, h)?;
    let (phi1, phi2) = model.phi;
    let (mut older, mut newer) = last_resid;
    // psi weights: psi_0 = 1, psi_1 = phi1, psi_j = phi1 psi_{j-1} + phi2 psi_{j-2}.
    let (mut psi_prev2, mut psi_prev1) = (0.0, 1.0);
    let mut var_sum = 0.0;
    let mut out = Vec::with_capacity(h);
    for j in 0..h {
        let e_hat = phi1 * newer + phi2 * older;
        older = newer;
        newer = e_hat;
        let t = (t_next + j) as f64;
        let mut point = model.deterministic_at(t) + e_hat;
        if let Some(rows) = exog {
            point += dot(&model.exog_coef, &rows[j]);
        }
        var_sum += psi_prev1 * psi_prev1;
        let half = 1.96 * (model.resid_var * var_sum).sqrt();
        out.push(ForecastStep {
            point,
            lo95: point - half,
            hi95: point + half,
        });
        let psi_next = phi1 * psi_prev1 + phi2 * psi_prev2;
        psi_prev2 = psi_prev1;
        psi_prev1 = psi_next;
    }
    Ok(out)
}

/// Forecast `h` steps past the end of the fitting sample.
pub fn forecast_fourier_ar(
    model: &FourierArModel,
    last_resid: (f64, f64),
    h: usize,
    future_exog: Option<&[Vec<f64>]>,
) -> Result<Vec<ForecastStep>, BaselineError> {
    forecast_from(model, model.fit_len, last_resid, h, future_exog)
}
