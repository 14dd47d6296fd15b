//! JSON experiment configuration.
//!
//! Every key is optional; missing keys take the defaults below and unknown
//! keys are rejected. Layers merge key by key: defaults, then the file, then
//! explicit overrides (the CLI's flags).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::geometry::LatentVector;
use crate::model::{ModelKind, ModelSpec};
use crate::params::HyperParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub model: ModelKind,
    pub d_w: usize,
    /// Defaults to `d_w`.
    pub d_e: Option<usize>,
    /// MLP hidden width.
    pub hidden: usize,
    pub model_seed: u64,

    pub n_id: usize,
    pub n_var: usize,
    /// Size of a synthetic training set drawn when no `training` file is given.
    pub n_tr: Option<usize>,
    pub seed: u64,
    pub sigma_init: f64,
    /// Pull-back centre; the origin when absent.
    pub w_avg: Option<Vec<f64>>,

    #[serde(flatten)]
    pub params: HyperParams,

    /// Reject / erosion threshold, radians. Falls back to `d0_e / d0_factor`.
    pub ict: Option<f64>,
    pub max_attempts: u64,
    /// Erosion uses `d0_e / d0_factor` as its threshold when `ict` is unset.
    pub d0_factor: f64,
    pub ridge: f64,
    pub n_bins: usize,

    /// Ensemble to resume (langevin) or to process (erode, stats).
    pub input: Option<PathBuf>,
    /// Reference ensemble for dispersion and disco.
    pub reference: Option<PathBuf>,
    pub covariates: Option<PathBuf>,
    /// Embeddings container of the training set.
    pub training: Option<PathBuf>,
    /// Variation set for stats.
    pub variations: Option<PathBuf>,
    /// Labelled latents JSON for fit-directions.
    pub labeled: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::Linear,
            d_w: 16,
            d_e: None,
            hidden: 32,
            model_seed: 0,
            n_id: 128,
            n_var: 64,
            n_tr: None,
            seed: 0,
            sigma_init: 1.0,
            w_avg: None,
            params: HyperParams::default(),
            ict: None,
            max_attempts: 1_000_000,
            d0_factor: 1.0,
            ridge: 1e-3,
            n_bins: 64,
            input: None,
            reference: None,
            covariates: None,
            training: None,
            variations: None,
            labeled: None,
        }
    }
}

/// Every key the configuration accepts.
pub fn known_keys() -> Vec<String> {
    match serde_json::to_value(ExperimentConfig::default()) {
        Ok(Value::Object(m)) => m.keys().cloned().collect(),
        _ => unreachable!("config serialises to an object"),
    }
}

fn object(text: &str) -> Result<Map<String, Value>> {
    match serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid JSON: {e}")))? {
        Value::Object(m) => Ok(m),
        _ => Err(Error::Config("configuration must be a JSON object".into())),
    }
}

fn check_keys(m: &Map<String, Value>) -> Result<()> {
    let known = known_keys();
    let unknown: Vec<&str> = m.keys().filter(|k| !known.contains(k)).map(String::as_str).collect();
    if unknown.is_empty() {
        Ok(())
    } else {
        Err(Error::Config(format!("unknown key(s): {}", unknown.join(", "))))
    }
}

impl ExperimentConfig {
    /// Merges `file` (a JSON object, if any) and `overrides` over the defaults
    /// and validates the result.
    pub fn from_layers(file: Option<&str>, overrides: Map<String, Value>) -> Result<Self> {
        let mut merged = match file {
            Some(text) => object(text)?,
            None => Map::new(),
        };
        check_keys(&merged)?;
        check_keys(&overrides)?;
        merged.extend(overrides);
        let config: ExperimentConfig =
            serde_json::from_value(Value::Object(merged)).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.model_spec().validate().map_err(|e| Error::Config(e.to_string()))?;
        let positive = [("n_id", self.n_id), ("n_var", self.n_var), ("n_bins", self.n_bins)];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.n_tr == Some(0) {
            return Err(Error::Config("n_tr must be at least 1 when set".into()));
        }
        if !(self.sigma_init.is_finite() && self.sigma_init >= 0.0) {
            return Err(Error::Config(format!(
                "sigma_init must be finite and >= 0, got {}",
                self.sigma_init
            )));
        }
        if !(self.d0_factor.is_finite() && self.d0_factor > 0.0) {
            return Err(Error::Config(format!(
                "d0_factor must be positive, got {}",
                self.d0_factor
            )));
        }
        if !(self.ridge.is_finite() && self.ridge > 0.0) {
            return Err(Error::Config(format!("ridge must be positive, got {}", self.ridge)));
        }
        if let Some(ict) = self.ict {
            if !(ict.is_finite() && ict >= 0.0) {
                return Err(Error::Config(format!("ict must be finite and >= 0, got {ict}")));
            }
        }
        if let Some(w) = &self.w_avg {
            if w.len() != self.d_w {
                return Err(Error::Config(format!(
                    "w_avg has length {}, d_w is {}",
                    w.len(),
                    self.d_w
                )));
            }
            if w.iter().any(|x| !x.is_finite()) {
                return Err(Error::Config("w_avg has non-finite components".into()));
            }
        }
        Ok(())
    }

    pub fn model_spec(&self) -> ModelSpec {
        ModelSpec {
            kind: self.model,
            d_w: self.d_w,
            d_e: self.d_e.unwrap_or(self.d_w),
            seed: self.model_seed,
            hidden: (self.model == ModelKind::Mlp).then_some(self.hidden),
        }
    }

    pub fn w_avg(&self) -> LatentVector {
        self.w_avg
            .clone()
            .map_or_else(|| LatentVector::zeros(self.d_w), LatentVector)
    }

    /// Compact JSON with sorted keys; feeding it back reproduces `self`.
    pub fn to_canonical_json(&self) -> String {
        let value = serde_json::to_value(self).expect("config serialises");
        serde_json::to_string(&value).expect("value serialises")
    }
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    ExperimentConfig::from_layers(Some(text), Map::new())
}

pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}
