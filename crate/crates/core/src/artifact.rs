//! Self-contained JSON model files.
//!
//! A model file stores the training data on the standardized scale together
//! with the hyperparameters and, for EP tiers, the converged site parameters.
//! Loading rebuilds the posterior from these, so predictions after a round
//! trip are bitwise identical to those of the in-memory model.

use std::fs;
use std::path::Path;

use faer::{Mat, MatRef};
use log::warn;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datasets::Standardization;
use crate::ep::{EpConfig, EpState, JointPosterior, SiteSet};
use crate::error::{Error, Result};
use crate::gp_exact::ExactGp;
use crate::model_select::{unpack, EpFit, Fit, FittedModel, Hyper, Tier};
use crate::predict::PredictiveResult;

pub const FORMAT: &str = "hetgp-model";
pub const SCHEMA_VERSION: u32 = 1;

/// SHA-256 over the shape, then the inputs column by column, then the
/// targets, all as little-endian `f64`.
pub fn fingerprint(x: MatRef<'_, f64>, y: &[f64]) -> String {
    let mut h = Sha256::new();
    h.update((x.nrows() as u64).to_le_bytes());
    h.update((x.ncols() as u64).to_le_bytes());
    for j in 0..x.ncols() {
        for i in 0..x.nrows() {
            h.update(x[(i, j)].to_le_bytes());
        }
    }
    for v in y {
        h.update(v.to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingData {
    pub rows: usize,
    pub cols: usize,
    pub fingerprint: String,
    /// Row-major inputs on the standardized scale.
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpSummary {
    pub config: EpConfig,
    pub sites: SiteSet,
    pub iterations: usize,
    pub converged: bool,
    pub log_z_ep: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub format: String,
    pub schema_version: u32,
    pub library_version: String,
    pub model_kind: Tier,
    pub ard: bool,
    pub parameter_names: Vec<String>,
    /// Log-space hyperparameters and latent means, in `parameter_names` order.
    pub hyperparameters: Vec<f64>,
    pub log_evidence: f64,
    pub ep: Option<EpSummary>,
    pub standardization: Standardization,
    pub training: TrainingData,
}

impl ModelArtifact {
    /// Package a fit made on standardized data `(x, y)`.
    pub fn new(fit: &Fit, ard: bool, standardization: Standardization, x: MatRef<'_, f64>, y: &[f64]) -> Self {
        let tier = fit.model.tier();
        let ep = match &fit.model {
            FittedModel::Gp(_) => None,
            FittedModel::Ep(e) => Some(EpSummary {
                config: e.config.clone(),
                sites: e.state.sites.clone(),
                iterations: e.state.iterations,
                converged: e.state.converged,
                log_z_ep: e.state.log_z_ep,
            }),
        };
        Self {
            format: FORMAT.into(),
            schema_version: SCHEMA_VERSION,
            library_version: env!("CARGO_PKG_VERSION").into(),
            model_kind: tier,
            ard,
            parameter_names: tier.parameter_names(x.ncols(), ard),
            hyperparameters: fit.params.clone(),
            log_evidence: fit.model.log_evidence(),
            ep,
            standardization,
            training: TrainingData {
                rows: x.nrows(),
                cols: x.ncols(),
                fingerprint: fingerprint(x, y),
                x: (0..x.nrows()).map(|i| (0..x.ncols()).map(|j| x[(i, j)]).collect()).collect(),
                y: y.to_vec(),
            },
        }
    }

    pub fn converged(&self) -> bool {
        self.ep.as_ref().is_none_or(|e| e.converged)
    }

    fn training_x(&self) -> Result<Mat<f64>> {
        let t = &self.training;
        if t.x.len() != t.rows || t.y.len() != t.rows || t.x.iter().any(|r| r.len() != t.cols) {
            return Err(Error::Schema(format!("training data does not have the declared {} x {} shape", t.rows, t.cols)));
        }
        Ok(Mat::from_fn(t.rows, t.cols, |i, j| t.x[i][j]))
    }

    fn check(&self) -> Result<()> {
        if self.format != FORMAT {
            return Err(Error::Schema(format!("not a model file (format {:?})", self.format)));
        }
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Schema(format!("unsupported schema version {}", self.schema_version)));
        }
        let d = self.training.cols;
        if self.standardization.x_mean.len() != d || self.standardization.x_sd.len() != d {
            return Err(Error::Schema("standardization does not match the input dimension".into()));
        }
        if self.ep.is_some() == (self.model_kind == Tier::Gp) {
            return Err(Error::Schema("EP section must be present exactly for EP model kinds".into()));
        }
        Ok(())
    }

    /// Rebuild the fitted model on the standardized scale.
    pub fn to_model(&self) -> Result<FittedModel> {
        self.check()?;
        let x = self.training_x()?;
        let y = &self.training.y;
        if fingerprint(x.as_ref(), y) != self.training.fingerprint {
            warn!("training data fingerprint mismatch; the model file may have been edited");
        }
        let n_ls = if self.ard { self.training.cols } else { 1 };
        let hyper = unpack(self.model_kind, n_ls, &self.hyperparameters).map_err(|e| Error::Schema(e.to_string()))?;
        match (hyper, &self.ep) {
            (Hyper::Gp { kernel, log_noise_variance }, None) => Ok(FittedModel::Gp(ExactGp::fit(x.as_ref(), y, kernel, log_noise_variance)?)),
            (Hyper::Ep(model), Some(ep)) => {
                if ep.sites.len() != self.training.rows {
                    return Err(Error::Schema("site count does not match the training rows".into()));
                }
                let (v, t) = model.priors(x.as_ref())?;
                let posterior = JointPosterior::compute(v, t, &ep.sites)?;
                let state = EpState {
                    sites: ep.sites.clone(),
                    posterior,
                    log_z_ep: ep.log_z_ep,
                    iterations: ep.iterations,
                    converged: ep.converged,
                    history: Vec::new(),
                    skipped: Vec::new(),
                };
                Ok(FittedModel::Ep(EpFit { model, config: ep.config.clone(), x, y: y.clone(), state }))
            }
            _ => Err(Error::Schema("model kind and EP section disagree".into())),
        }
    }

    /// Predictions at inputs on the original scale, returned on the original scale.
    pub fn predict(&self, xs: &Mat<f64>) -> Result<Vec<PredictiveResult>> {
        if xs.ncols() != self.training.cols {
            return Err(Error::input(format!("model expects {} input columns, got {}", self.training.cols, xs.ncols())));
        }
        let model = self.to_model()?;
        predict_original(&model, &self.standardization, xs)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let a: Self = serde_json::from_str(s).map_err(|e| Error::Schema(e.to_string()))?;
        a.check()?;
        Ok(a)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

/// Predict with a model fit on standardized data, taking and returning
/// original-scale values.
pub fn predict_original(model: &FittedModel, t: &Standardization, xs: &Mat<f64>) -> Result<Vec<PredictiveResult>> {
    let p = model.predict(t.transform_x(xs).as_ref())?;
    Ok(p.iter().map(|p| t.inverse_prediction(p)).collect())
}
