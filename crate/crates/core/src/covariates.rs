//! Latent attribute directions and DisCo mixing weights.
//!
//! A direction is the normal of a ridge-regularised least-squares classifier
//! fitted on latents labelled ±1, normalised to unit length. Any linear
//! separator would do; this one has a closed form and no solver tolerances.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::geometry::LatentVector;
use crate::rng::{NoiseDomain, NoiseStream};

/// Unit-norm latent directions with one name each.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateBasis {
    directions: Vec<LatentVector>,
    names: Vec<String>,
}

impl CovariateBasis {
    pub fn new(directions: Vec<LatentVector>, names: Vec<String>) -> Result<Self> {
        if directions.is_empty() {
            return Err(Error::Shape("covariate basis needs at least one direction".into()));
        }
        if directions.len() != names.len() {
            return Err(Error::Shape(format!(
                "{} directions but {} names",
                directions.len(),
                names.len()
            )));
        }
        let d = directions[0].len();
        for (i, v) in directions.iter().enumerate() {
            if v.len() != d {
                return Err(Error::Shape(format!(
                    "direction {i} has length {}, expected {d}",
                    v.len()
                )));
            }
            let n = v.norm();
            if !n.is_finite() || (n - 1.0).abs() > 1e-12 {
                return Err(Error::Domain(format!("direction {i} has norm {n}, expected 1")));
            }
        }
        Ok(Self { directions, names })
    }

    pub fn directions(&self) -> &[LatentVector] {
        &self.directions
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }

    pub fn d_w(&self) -> usize {
        self.directions[0].len()
    }
}

/// Latents with binary attribute labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledLatents {
    latents: Vec<LatentVector>,
    labels: Vec<i8>,
}

impl LabeledLatents {
    /// Labels must be `-1` or `+1`, and both must occur.
    pub fn new(latents: Vec<LatentVector>, labels: Vec<i8>) -> Result<Self> {
        if latents.len() != labels.len() {
            return Err(Error::Shape(format!(
                "{} latents but {} labels",
                latents.len(),
                labels.len()
            )));
        }
        if latents.is_empty() {
            return Err(Error::Shape("no labelled latents".into()));
        }
        if let Some(bad) = labels.iter().position(|&y| y != 1 && y != -1) {
            return Err(Error::Domain(format!(
                "label {bad} is {}, expected -1 or +1",
                labels[bad]
            )));
        }
        if !(labels.contains(&1) && labels.contains(&-1)) {
            return Err(Error::Domain("labels contain a single class".into()));
        }
        let d = latents[0].len();
        if let Some(bad) = latents.iter().position(|w| w.len() != d) {
            return Err(Error::Shape(format!(
                "latent {bad} has length {}, expected {d}",
                latents[bad].len()
            )));
        }
        Ok(Self { latents, labels })
    }

    pub fn latents(&self) -> &[LatentVector] {
        &self.latents
    }

    pub fn labels(&self) -> &[i8] {
        &self.labels
    }
}

/// Solves `(XᵀX + ridge·I) v = Xᵀy` on centred latents and returns `v / |v|`.
pub fn fit_direction(data: &LabeledLatents, ridge: f64) -> Result<LatentVector> {
    if !(ridge > 0.0 && ridge.is_finite()) {
        return Err(Error::Config(format!("ridge must be positive, got {ridge}")));
    }
    let n = data.latents.len();
    let d = data.latents[0].len();
    let mut centre = vec![0.0; d];
    for w in &data.latents {
        for (c, x) in centre.iter_mut().zip(w.iter()) {
            *c += x;
        }
    }
    for c in &mut centre {
        *c /= n as f64;
    }
    let x = DMatrix::from_fn(n, d, |i, j| data.latents[i][j] - centre[j]);
    let y = DVector::from_iterator(n, data.labels.iter().map(|&l| f64::from(l)));
    let gram = x.transpose() * &x + DMatrix::identity(d, d) * ridge;
    let rhs = x.transpose() * y;
    let v = gram
        .cholesky()
        .ok_or_else(|| Error::Numeric("regularised normal equations are not positive definite".into()))?
        .solve(&rhs);
    let len = v.norm();
    if !(len > 0.0 && len.is_finite()) {
        return Err(Error::Numeric(format!("fitted direction has norm {len}")));
    }
    Ok(LatentVector(v.iter().map(|x| x / len).collect()))
}

/// `k` weights uniform on `[-lambda0, lambda0]` for variation `variation` of identity `identity`.
pub fn sample_mixing_weights(lambda0: f64, k: usize, seed: u64, identity: u64, variation: u64) -> Vec<f64> {
    if lambda0 == 0.0 {
        return vec![0.0; k];
    }
    NoiseStream::new(seed, NoiseDomain::MixingWeights).symmetric_uniform_vector(identity, variation, k, lambda0)
}
