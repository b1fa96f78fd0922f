//! Forecasting library for hourly series with heavy-tailed peaks.
//!
//! The pieces fit together like this: [`data`] turns an hourly series into
//! lagged supervised windows, [`nn`] defines small networks whose forward
//! passes can be recorded on the [`autodiff`] tape, [`loss`] provides the
//! squared-error and generalized-Pareto objectives, [`trainer`] runs plain
//! SGD over recorded graphs, [`evt`] holds the Pareto tail analytics and a
//! direct maximum-likelihood fitter, [`baseline`] is a Fourier-plus-AR(2)
//! reference model, [`eval`] computes overall and peak metrics, and
//! [`bundle`] serializes trained models for the CLI.

pub mod autodiff;
pub mod baseline;
pub mod bundle;
pub mod data;
pub mod eval;
pub mod evt;
pub mod loss;
pub mod nn;
pub mod trainer;
