//! Model persistence: one JSON document per trained model.
//!
//! A bundle carries everything needed to reproduce forward passes bit
//! for bit: architecture, flattened parameters in row-major layer order,
//! the input normalizer, and the training configuration echo. Field
//! order is fixed by this struct and floats serialize as their shortest
//! round-trip decimal form, so serialize -> deserialize -> serialize is
//! byte-identical.

use std::fs;
use std::path::Path;

use rand::rngs::StdRng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baseline::FourierArModel;
use crate::data::{write_atomic, Normalizer};
use crate::nn::{Activation, EvtHead, LstmModel, Mlp, Network, NnError};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed bundle: {0}")]
    Json(#[from] serde_json::Error),
    #[error("bundle schema version {found} is not supported (expected {SCHEMA_VERSION})")]
    SchemaVersion { found: u32 },
    #[error("bundle stores {got} weights, architecture needs {expected}")]
    InconsistentWeights { expected: usize, got: usize },
    #[error("inconsistent bundle: {0}")]
    BadArchitecture(String),
    #[error(transparent)]
    Network(#[from] NnError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    MlpMse,
    LstmMse,
    EvtHead,
    FourierAr,
}

impl ModelKind {
    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::MlpMse => "mlp_mse",
            ModelKind::LstmMse => "lstm_mse",
            ModelKind::EvtHead => "evt_head",
            ModelKind::FourierAr => "fourier_ar",
        }
    }
}

/// Training configuration echoed into the artifact for provenance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainEcho {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lambda: f64,
    pub p_drop: f64,
    pub val_fraction: f64,
    pub patience: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub schema_version: u32,
    pub model_kind: ModelKind,
    /// Input window length for network models; 0 for the seasonal model.
    pub lags: usize,
    /// Forecast horizon in hours the targets were built with; 0 for the
    /// seasonal model, which forecasts recursively.
    pub horizon: usize,
    /// Hidden widths: per layer for the perceptron, the cell size for
    /// the recurrent model, the backbone width for the tail head.
    pub hidden: Vec<usize>,
    /// Hidden activation names where the architecture has a choice.
    pub activations: Vec<String>,
    /// Flattened parameters in row-major layer order; empty for the
    /// seasonal model.
    pub weights: Vec<f64>,
    pub fourier: Option<FourierArModel>,
    /// Input transform fit on the training split.
    pub normalizer: Option<Normalizer>,
    /// Exceedance threshold for the tail model.
    pub threshold: Option<f64>,
    pub seed: u64,
    pub train: Option<TrainEcho>,
}

/// A model rebuilt from its bundle.
#[derive(Debug, Clone)]
pub enum AnyModel {
    Mlp(Mlp),
    Lstm(LstmModel),
    Evt(EvtHead),
    Fourier(FourierArModel),
}

impl ModelBundle {
    pub fn from_mlp(
        model: &Mlp,
        lags: usize,
        horizon: usize,
        normalizer: Normalizer,
        seed: u64,
        train: TrainEcho,
    ) -> Self {
        let hidden = model.layers[..model.layers.len() - 1]
            .iter()
            .map(|l| l.n_out())
            .collect();
        let activations = model
            .layers
            .iter()
            .map(|l| l.activation.name().to_string())
            .collect();
        ModelBundle {
            schema_version: SCHEMA_VERSION,
            model_kind: ModelKind::MlpMse,
            lags,
            horizon,
            hidden,
            activations,
            weights: model.params(),
            fourier: None,
            normalizer: Some(normalizer),
            threshold: None,
            seed,
            train: Some(train),
        }
    }

    pub fn from_lstm(
        model: &LstmModel,
        horizon: usize,
        normalizer: Normalizer,
        seed: u64,
        train: TrainEcho,
    ) -> Self {
        ModelBundle {
            schema_version: SCHEMA_VERSION,
            model_kind: ModelKind::LstmMse,
            lags: model.window,
            horizon,
            hidden: vec![model.cell.hidden_size],
            activations: vec![],
            weights: model.params(),
            fourier: None,
            normalizer: Some(normalizer),
            threshold: None,
            seed,
            train: Some(train),
        }
    }

    pub fn from_evt(
        model: &EvtHead,
        horizon: usize,
        threshold: f64,
        normalizer: Normalizer,
        seed: u64,
        train: TrainEcho,
    ) -> Self {
        let hidden = model.backbone.layers[..model.backbone.layers.len() - 1]
            .iter()
            .map(|l| l.n_out())
            .collect();
        let activations = model
            .backbone
            .layers
            .iter()
            .map(|l| l.activation.name().to_string())
            .collect();
        ModelBundle {
            schema_version: SCHEMA_VERSION,
            model_kind: ModelKind::EvtHead,
            lags: model.input_len(),
            horizon,
            hidden,
            activations,
            weights: model.params(),
            fourier: None,
            normalizer: Some(normalizer),
            threshold: Some(threshold),
            seed,
            train: Some(train),
        }
    }

    pub fn from_fourier(model: &FourierArModel, seed: u64) -> Self {
        ModelBundle {
            schema_version: SCHEMA_VERSION,
            model_kind: ModelKind::FourierAr,
            lags: 0,
            horizon: 0,
            hidden: vec![],
            activations: vec![],
            weights: vec![],
            fourier: Some(model.clone()),
            normalizer: None,
            threshold: None,
            seed,
            train: None,
        }
    }

    /// Rebuild the stored model. Parameter counts are validated against
    /// the architecture before loading.
    pub fn instantiate(&self) -> Result<AnyModel, BundleError> {
        match self.model_kind {
            ModelKind::MlpMse => Ok(AnyModel::Mlp(self.build_mlp()?)),
            ModelKind::LstmMse => {
                let hidden = self.single_hidden()?;
                let mut rng = StdRng::seed_from_u64(0);
                let mut model = LstmModel::seeded(self.lags, hidden, &mut rng);
                self.load_weights(&mut model)?;
                Ok(AnyModel::Lstm(model))
            }
            ModelKind::EvtHead => {
                let hidden = self.single_hidden()?;
                let mut rng = StdRng::seed_from_u64(0);
                let mut model = EvtHead::seeded(self.lags, hidden, &mut rng)?;
                self.load_weights(&mut model)?;
                Ok(AnyModel::Evt(model))
            }
            ModelKind::FourierAr => match &self.fourier {
                Some(model) => Ok(AnyModel::Fourier(model.clone())),
                None => Err(BundleError::BadArchitecture(
                    "seasonal bundle is missing its coefficient block".into(),
                )),
            },
        }
    }

    fn build_mlp(&self) -> Result<Mlp, BundleError> {
        let mut sizes = Vec::with_capacity(self.hidden.len() + 2);
        sizes.push(self.lags);
        sizes.extend(&self.hidden);
        sizes.push(1);
        let hidden_act = match self.activations.first() {
            Some(name) => Activation::from_name(name).ok_or_else(|| {
                BundleError::BadArchitecture(format!("unknown activation '{name}'"))
            })?,
            None => Activation::Identity,
        };
        let mut rng = StdRng::seed_from_u64(0);
        let mut model = Mlp::seeded(&sizes, hidden_act, &mut rng)?;
        self.load_weights(&mut model)?;
        Ok(model)
    }

    fn single_hidden(&self) -> Result<usize, BundleError> {
        match self.hidden.as_slice() {
            [h] => Ok(*h),
            other => Err(BundleError::BadArchitecture(format!(
                "expected exactly one hidden width, got {other:?}"
            ))),
        }
    }

    fn load_weights<M: Network>(&self, model: &mut M) -> Result<(), BundleError> {
        if self.weights.len() != model.param_count() {
            return Err(BundleError::InconsistentWeights {
                expected: model.param_count(),
                got: self.weights.len(),
            });
        }
        model.set_params(&self.weights)?;
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("bundle serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, BundleError> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let found = value
            .get("schema_version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| BundleError::BadArchitecture("missing schema_version".into()))?;
        if found != u64::from(SCHEMA_VERSION) {
            return Err(BundleError::SchemaVersion { found: found as u32 });
        }
        Ok(serde_json::from_value(value)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), BundleError> {
        write_atomic(path, self.to_json().as_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, BundleError> {
        ModelBundle::from_json(&fs::read_to_string(path)?)
    }
}
