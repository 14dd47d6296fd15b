//! Intra-class variations: Dispersion and its DisCo initialisation.
//!
//! Variations of one identity repel each other in latent space, are tethered
//! to the identity's reference embedding, and are pulled toward `w_avg`.
//! Identities never interact, so each one is integrated independently with a
//! fixed time-step.

use rayon::prelude::*;

use super::{mean, IdentityEnsemble, RunTrace, TraceRecord};
use crate::covariates::{sample_mixing_weights, CovariateBasis};
use crate::error::{Error, Result};
use crate::geometry::{distances_with_norms, euclidean, norm, EmbeddingVector, LatentVector};
use crate::losses::DispersionTerms;
use crate::model::EmbeddingModel;
use crate::params::HyperParams;
use crate::rng::{NoiseDomain, NoiseStream};

/// `n_id × n_var` variation latents tied to a reference ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationSet {
    /// `variations[a][alpha]`.
    pub variations: Vec<Vec<LatentVector>>,
    pub reference: IdentityEnsemble,
    /// Embedding of each reference latent, captured when the set was created.
    pub reference_embeddings: Vec<EmbeddingVector>,
    /// Stable identity keys for the noise streams. They travel with the
    /// identities, so reordering identities does not change anyone's noise.
    pub identity_ids: Vec<u64>,
    pub params: HyperParams,
    pub seed: u64,
    pub iterations_done: u64,
}

impl VariationSet {
    pub fn n_id(&self) -> usize {
        self.variations.len()
    }

    pub fn n_var(&self) -> usize {
        self.variations.first().map_or(0, |v| v.len())
    }

    pub fn validate(&self) -> Result<()> {
        self.reference.validate()?;
        let n = self.n_id();
        if self.reference.len() != n || self.reference_embeddings.len() != n || self.identity_ids.len() != n {
            return Err(Error::Shape(format!(
                "variation set has {n} identities but {} references, {} reference embeddings, {} ids",
                self.reference.len(),
                self.reference_embeddings.len(),
                self.identity_ids.len()
            )));
        }
        let d_w = self.reference.d_w();
        let n_var = self.n_var();
        for (a, vars) in self.variations.iter().enumerate() {
            if vars.len() != n_var {
                return Err(Error::Shape(format!(
                    "identity {a} has {} variations, expected {n_var}",
                    vars.len()
                )));
            }
            if vars.iter().any(|w| w.len() != d_w) {
                return Err(Error::Shape(format!("identity {a} has a variation of wrong length")));
            }
        }
        Ok(())
    }

    /// Reorders identities; `order[i]` is the old index placed at position `i`.
    pub fn permuted(&self, order: &[usize]) -> VariationSet {
        VariationSet {
            variations: order.iter().map(|&i| self.variations[i].clone()).collect(),
            reference: self.reference.select(order),
            reference_embeddings: order.iter().map(|&i| self.reference_embeddings[i].clone()).collect(),
            identity_ids: order.iter().map(|&i| self.identity_ids[i]).collect(),
            ..self.clone()
        }
    }
}

fn noise_slot(identity: u64, variation: usize) -> u64 {
    assert!(
        identity < 1 << 32 && (variation as u64) < 1 << 32,
        "noise slot out of range"
    );
    (identity << 32) | variation as u64
}

fn base_variations(reference: &IdentityEnsemble, n_var: usize, xi0: f64, seed: u64) -> Result<VariationSet> {
    if n_var == 0 {
        return Err(Error::Config("n_var must be at least 1".into()));
    }
    reference.validate()?;
    let model = reference.model_spec.build()?;
    let reference_embeddings = reference
        .latents
        .iter()
        .map(|w| model.embed(w))
        .collect::<Result<Vec<_>>>()?;
    let stream = NoiseStream::new(seed, NoiseDomain::VariationInit);
    let d_w = reference.d_w();
    let variations = reference
        .latents
        .iter()
        .enumerate()
        .map(|(a, w_ref)| {
            (0..n_var)
                .map(|alpha| {
                    if xi0 == 0.0 {
                        return w_ref.clone();
                    }
                    let xi = stream.normal_vector(a as u64, alpha as u64, d_w);
                    LatentVector(w_ref.iter().zip(xi).map(|(w, x)| w + xi0 * x).collect())
                })
                .collect()
        })
        .collect();
    Ok(VariationSet {
        variations,
        reference: reference.clone(),
        reference_embeddings,
        identity_ids: (0..reference.len() as u64).collect(),
        params: reference.params.clone(),
        seed,
        iterations_done: 0,
    })
}

/// Each variation starts at its reference latent plus `xi0`-scaled Gaussian noise.
///
/// The set inherits the reference's hyperparameters; override `params` before
/// running Dispersion if needed.
pub fn init_variations(reference: &IdentityEnsemble, n_var: usize, xi0: f64, seed: u64) -> Result<VariationSet> {
    base_variations(reference, n_var, xi0, seed)
}

/// Dispersion initialisation plus a random mix of covariate directions with
/// weights uniform on `[-lambda0, lambda0]`.
///
/// With `lambda0 = 0` this is exactly [`init_variations`].
pub fn disco_init(
    reference: &IdentityEnsemble,
    n_var: usize,
    xi0: f64,
    lambda0: f64,
    covariates: &CovariateBasis,
    seed: u64,
) -> Result<VariationSet> {
    let d_w = reference.d_w();
    if let Some(bad) = covariates.directions().iter().position(|v| v.len() != d_w) {
        return Err(Error::Shape(format!(
            "covariate direction {bad} has length {}, latents have d_w = {d_w}",
            covariates.directions()[bad].len()
        )));
    }
    let mut set = base_variations(reference, n_var, xi0, seed)?;
    if lambda0 == 0.0 {
        return Ok(set);
    }
    let k = covariates.len();
    for (a, vars) in set.variations.iter_mut().enumerate() {
        for (alpha, w) in vars.iter_mut().enumerate() {
            let weights = sample_mixing_weights(lambda0, k, seed, a as u64, alpha as u64);
            for (lambda, dir) in weights.iter().zip(covariates.directions()) {
                for (x, v) in w.iter_mut().zip(dir.iter()) {
                    *x += lambda * v;
                }
            }
        }
    }
    Ok(set)
}

struct IdentityStep {
    next: Vec<LatentVector>,
    embedding_distance_sum: f64,
    embedding_pairs: usize,
    latent_distance_sum: f64,
    contacts: usize,
    contact_force_sum: f64,
    restoring_force_sum: f64,
}

#[allow(clippy::too_many_arguments)]
fn step_identity(
    vars: &[LatentVector],
    reference: &EmbeddingVector,
    identity: u64,
    model: &EmbeddingModel,
    params: &HyperParams,
    w_avg: &LatentVector,
    stream: &NoiseStream,
    iteration: u64,
) -> Result<IdentityStep> {
    let terms = DispersionTerms::evaluate(vars, reference, model, params, w_avg)?;
    let total = terms.total();
    if let Some(alpha) = total.gradients.iter().position(|g| g.iter().any(|x| !x.is_finite())) {
        return Err(Error::Numeric(format!(
            "non-finite dispersion gradient at iteration {iteration}, identity {identity}, variation {alpha}"
        )));
    }

    let norms: Vec<f64> = terms.embeddings.iter().map(|e| norm(e)).collect();
    let emb = distances_with_norms(&terms.embeddings, &norms);
    let mut latent_distance_sum = 0.0;
    for a in 0..vars.len() {
        for b in (a + 1)..vars.len() {
            latent_distance_sum += euclidean(&vars[a], &vars[b]);
        }
    }
    let restoring_force_sum = terms
        .tether
        .gradients
        .iter()
        .zip(&terms.pullback.gradients)
        .map(|(t, p)| {
            t.iter()
                .zip(p.iter())
                .map(|(x, y)| (x + y) * (x + y))
                .sum::<f64>()
                .sqrt()
        })
        .sum();

    let dt = params.dt_tilde;
    let eta = params.eta0_tilde * dt.sqrt();
    let next = vars
        .iter()
        .zip(&total.gradients)
        .enumerate()
        .map(|(alpha, (w, g))| {
            let mut x: Vec<f64> = w.iter().zip(g.iter()).map(|(w, g)| w - dt * g).collect();
            if params.eta0_tilde != 0.0 {
                let zeta = stream.normal_vector(iteration, noise_slot(identity, alpha), w.len());
                for (xi, z) in x.iter_mut().zip(zeta) {
                    *xi += eta * z;
                }
            }
            LatentVector(x)
        })
        .collect();

    Ok(IdentityStep {
        next,
        embedding_distance_sum: emb.pairs().map(|(_, _, d)| d).sum(),
        embedding_pairs: emb.pair_count(),
        latent_distance_sum,
        contacts: terms.latent_granular.contact_count,
        contact_force_sum: terms.latent_granular.gradients.iter().map(|g| g.norm()).sum(),
        restoring_force_sum,
    })
}

/// One fixed-step Dispersion iteration over every identity.
pub fn dispersion_step(set: &mut VariationSet, model: &EmbeddingModel) -> Result<TraceRecord> {
    if model.spec() != &set.reference.model_spec {
        return Err(Error::Spec("model does not match the variation set's reference".into()));
    }
    let iteration = set.iterations_done;
    let stream = NoiseStream::new(set.seed, NoiseDomain::DispersionNoise);
    let params = &set.params;
    let w_avg = &set.reference.w_avg;
    let steps = set
        .variations
        .par_iter()
        .zip(set.reference_embeddings.par_iter())
        .zip(set.identity_ids.par_iter())
        .map(|((vars, e_ref), &id)| step_identity(vars, e_ref, id, model, params, w_avg, &stream, iteration))
        .collect::<Result<Vec<_>>>()?;

    let n_var = set.n_var();
    let mut acc = (0.0, 0usize, 0.0, 0usize, 0.0, 0.0);
    for s in &steps {
        acc.0 += s.embedding_distance_sum;
        acc.1 += s.embedding_pairs;
        acc.2 += s.latent_distance_sum;
        acc.3 += s.contacts;
        acc.4 += s.contact_force_sum;
        acc.5 += s.restoring_force_sum;
    }
    let particles = steps.len() * n_var;
    let record = TraceRecord {
        iteration,
        mean_embedding_distance: mean(acc.0, acc.1),
        mean_latent_distance: mean(acc.2, acc.1),
        mean_contact_force: mean(acc.4, particles),
        mean_pullback_force: mean(acc.5, particles),
        contact_ratio: mean(acc.3 as f64, acc.1),
        dt: params.dt_tilde,
    };

    set.variations = steps.into_iter().map(|s| s.next).collect();
    set.iterations_done += 1;
    Ok(record)
}

/// Runs `set.params.n_iter_disp` Dispersion iterations, appending to `trace`.
pub fn run_dispersion(set: &mut VariationSet, model: &EmbeddingModel, trace: &mut RunTrace) -> Result<()> {
    set.validate()?;
    set.params.validate()?;
    for _ in 0..set.params.n_iter_disp {
        let record = dispersion_step(set, model)?;
        trace.records.push(record);
    }
    Ok(())
}
