//! Differentiable latent → embedding maps.
//!
//! Three analytic models stand in for a generator followed by a recognition
//! network. Each exposes a forward pass and a vector-Jacobian product; nothing
//! downstream ever needs a full Jacobian.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{EmbeddingVector, LatentVector};
use crate::rng::{NoiseDomain, NoiseStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Identity,
    Linear,
    Mlp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub d_w: usize,
    pub d_e: usize,
    pub seed: u64,
    /// Hidden width; only meaningful for [`ModelKind::Mlp`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden: Option<usize>,
}

impl ModelSpec {
    pub fn new(kind: ModelKind, d_w: usize, d_e: usize, seed: u64) -> Self {
        Self {
            kind,
            d_w,
            d_e,
            seed,
            hidden: None,
        }
    }

    pub fn mlp(d_w: usize, hidden: usize, d_e: usize, seed: u64) -> Self {
        Self {
            kind: ModelKind::Mlp,
            d_w,
            d_e,
            seed,
            hidden: Some(hidden),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_w == 0 || self.d_e == 0 {
            return Err(Error::Spec("d_w and d_e must be positive".into()));
        }
        match self.kind {
            ModelKind::Identity if self.d_w != self.d_e => Err(Error::Spec(format!(
                "identity model needs d_w == d_e, got {} and {}",
                self.d_w, self.d_e
            ))),
            ModelKind::Mlp if !matches!(self.hidden, Some(h) if h > 0) => {
                Err(Error::Spec("mlp model needs a positive hidden width".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn build(&self) -> Result<EmbeddingModel> {
        build_model(self)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Weights {
    Identity,
    /// Row-major `d_e × d_w`.
    Linear(Vec<f64>),
    Mlp {
        /// Row-major `hidden × d_w`.
        w1: Vec<f64>,
        b1: Vec<f64>,
        /// Row-major `d_e × hidden`.
        w2: Vec<f64>,
        b2: Vec<f64>,
    },
}

/// An immutable, seeded embedding map.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel {
    spec: ModelSpec,
    weights: Weights,
}

fn gaussian_block(seed: u64, block: u64, len: usize, fan_in: usize) -> Vec<f64> {
    let scale = 1.0 / (fan_in as f64).sqrt();
    NoiseStream::new(seed, NoiseDomain::ModelWeights)
        .normal_vector(block, 0, len)
        .into_iter()
        .map(|x| x * scale)
        .collect()
}

/// Builds the model described by `spec`.
///
/// Weights are `N(0, 1/fan_in)` draws from the `ModelWeights` stream of
/// `spec.seed`: block 0 holds the linear matrix; blocks 1–4 hold the MLP's
/// first weight matrix, first bias, second weight matrix and second bias, with
/// fan-in `d_w` for the first layer and `hidden` for the second.
pub fn build_model(spec: &ModelSpec) -> Result<EmbeddingModel> {
    spec.validate()?;
    let (d_w, d_e, seed) = (spec.d_w, spec.d_e, spec.seed);
    let weights = match spec.kind {
        ModelKind::Identity => Weights::Identity,
        ModelKind::Linear => Weights::Linear(gaussian_block(seed, 0, d_e * d_w, d_w)),
        ModelKind::Mlp => {
            let h = spec.hidden.expect("validated");
            Weights::Mlp {
                w1: gaussian_block(seed, 1, h * d_w, d_w),
                b1: gaussian_block(seed, 2, h, d_w),
                w2: gaussian_block(seed, 3, d_e * h, h),
                b2: gaussian_block(seed, 4, d_e, h),
            }
        }
    };
    Ok(EmbeddingModel {
        spec: spec.clone(),
        weights,
    })
}

fn matvec(m: &[f64], cols: usize, x: &[f64]) -> Vec<f64> {
    m.chunks_exact(cols)
        .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

/// `mᵀ·y` for row-major `m` with `cols` columns.
fn matvec_t(m: &[f64], cols: usize, y: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; cols];
    for (row, &yi) in m.chunks_exact(cols).zip(y) {
        for (o, &a) in out.iter_mut().zip(row) {
            *o += a * yi;
        }
    }
    out
}

impl EmbeddingModel {
    /// Linear model with an explicit matrix, bypassing the seeded draw.
    #[cfg(test)]
    pub(crate) fn linear_from_matrix(d_w: usize, d_e: usize, rows: Vec<f64>) -> Self {
        assert_eq!(rows.len(), d_w * d_e);
        Self {
            spec: ModelSpec::new(ModelKind::Linear, d_w, d_e, 0),
            weights: Weights::Linear(rows),
        }
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn d_w(&self) -> usize {
        self.spec.d_w
    }

    pub fn d_e(&self) -> usize {
        self.spec.d_e
    }

    fn check_latent(&self, w: &[f64]) -> Result<()> {
        if w.len() != self.spec.d_w {
            return Err(Error::Shape(format!(
                "latent has length {}, model expects d_w = {}",
                w.len(),
                self.spec.d_w
            )));
        }
        Ok(())
    }

    pub fn embed(&self, w: &LatentVector) -> Result<EmbeddingVector> {
        self.check_latent(w)?;
        let out = match &self.weights {
            Weights::Identity => w.0.clone(),
            Weights::Linear(a) => matvec(a, self.spec.d_w, w),
            Weights::Mlp { w1, b1, w2, b2 } => {
                let hidden = self.hidden_activations(w1, b1, w);
                let mut e = matvec(w2, hidden.len(), &hidden);
                for (x, b) in e.iter_mut().zip(b2) {
                    *x += b;
                }
                e
            }
        };
        if out.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric("embedding has non-finite components".into()));
        }
        Ok(EmbeddingVector(out))
    }

    fn hidden_activations(&self, w1: &[f64], b1: &[f64], w: &[f64]) -> Vec<f64> {
        let mut h = matvec(w1, self.spec.d_w, w);
        for (x, b) in h.iter_mut().zip(b1) {
            *x = (*x + b).tanh();
        }
        h
    }

    /// Vector-Jacobian product `uᵀ·J(w)` of the embedding map at `w`.
    pub fn pullback(&self, w: &LatentVector, cotangent: &[f64]) -> Result<LatentVector> {
        self.check_latent(w)?;
        if cotangent.len() != self.spec.d_e {
            return Err(Error::Shape(format!(
                "cotangent has length {}, model expects d_e = {}",
                cotangent.len(),
                self.spec.d_e
            )));
        }
        let out = match &self.weights {
            Weights::Identity => cotangent.to_vec(),
            Weights::Linear(a) => matvec_t(a, self.spec.d_w, cotangent),
            Weights::Mlp { w1, b1, w2, .. } => {
                let hidden = self.hidden_activations(w1, b1, w);
                let mut back = matvec_t(w2, hidden.len(), cotangent);
                for (g, a) in back.iter_mut().zip(&hidden) {
                    *g *= 1.0 - a * a;
                }
                matvec_t(w1, self.spec.d_w, &back)
            }
        };
        Ok(LatentVector(out))
    }
}
