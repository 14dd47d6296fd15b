use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Every constant of the Langevin, Dispersion and DisCo algorithms.
///
/// Defaults are the published baseline values. `k_tr`, `d_tr` (training-set
/// repulsion) and `dt_cap` (upper bound on the adaptive time-step) have no
/// published default; `d_tr = 0` disables training repulsion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperParams {
    /// Viscosity. Fixed at 1; the other constants absorb it.
    pub mu: f64,
    /// Embedding contact coefficient.
    pub k_e: f64,
    /// Embedding contact distance, radians.
    pub d0_e: f64,
    /// Latent pull-back coefficient.
    pub k_w: f64,
    /// Langevin noise magnitude.
    pub eta0: f64,
    /// Fraction of the minimal latent separation a particle may move per step.
    pub tau: f64,
    pub n_iter: usize,
    /// Dispersion latent contact coefficient.
    pub k_w_disp: f64,
    /// Dispersion latent contact distance.
    pub d0_w: f64,
    /// Dispersion embedding tether coefficient.
    pub k_e_disp: f64,
    /// Dispersion latent pull-back coefficient.
    pub k_w_tilde: f64,
    pub eta0_tilde: f64,
    /// Dispersion fixed time-step.
    pub dt_tilde: f64,
    pub n_iter_disp: usize,
    /// Variation initialisation noise scale.
    pub xi0: f64,
    /// DisCo covariate weight range.
    pub lambda0: f64,
    /// Training-set repulsion coefficient.
    pub k_tr: f64,
    /// Training-set repulsion distance, radians.
    pub d_tr: f64,
    pub dt_cap: f64,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            mu: 1.0,
            k_e: 1.0,
            d0_e: 1.4,
            k_w: 0.1,
            eta0: 0.01,
            tau: 0.3,
            n_iter: 100,
            k_w_disp: 1.0,
            d0_w: 12.0,
            k_e_disp: 1.0,
            k_w_tilde: 1.0,
            eta0_tilde: 0.01,
            dt_tilde: 0.05,
            n_iter_disp: 20,
            xi0: 0.2,
            lambda0: 1.0,
            k_tr: 1.0,
            d_tr: 0.0,
            dt_cap: 1.0,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("k_e", self.k_e),
            ("k_w", self.k_w),
            ("eta0", self.eta0),
            ("k_w_disp", self.k_w_disp),
            ("d0_w", self.d0_w),
            ("k_e_disp", self.k_e_disp),
            ("k_w_tilde", self.k_w_tilde),
            ("eta0_tilde", self.eta0_tilde),
            ("dt_tilde", self.dt_tilde),
            ("xi0", self.xi0),
            ("lambda0", self.lambda0),
            ("k_tr", self.k_tr),
            ("d_tr", self.d_tr),
        ];
        for (name, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if self.mu != 1.0 {
            return Err(Error::Config(format!("mu is fixed at 1.0, got {}", self.mu)));
        }
        if !(self.d0_e > 0.0 && self.d0_e <= PI) {
            return Err(Error::Config(format!("d0_e must lie in (0, pi], got {}", self.d0_e)));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::Config(format!("tau must lie in (0, 1], got {}", self.tau)));
        }
        if !(self.dt_cap > 0.0 && self.dt_cap.is_finite()) {
            return Err(Error::Config(format!("dt_cap must be positive, got {}", self.dt_cap)));
        }
        Ok(())
    }
}
