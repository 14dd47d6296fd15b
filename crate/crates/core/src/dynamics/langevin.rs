//! Overdamped Langevin packing of identity latents.
//!
//! Each iteration embeds every latent once, evaluates the repulsion and
//! pull-back gradients against those frozen embeddings, picks a time-step so
//! that no latent moves further than `tau` times the closest latent pair, and
//! takes an Euler–Maruyama step
//!
//! ```text
//! w ← w − δt·∇L + η0·√δt·ζ
//! ```
//!
//! with `ζ` drawn from the counter-based stream at `(iteration, particle)`.

use rayon::prelude::*;

use super::{mean, RunTrace, TraceRecord};
use crate::error::{Error, Result};
use crate::geometry::{latent_pair_distances, LatentVector};
use crate::losses::{LangevinTerms, TrainingSetEmbeddings};
use crate::model::{EmbeddingModel, ModelSpec};
use crate::params::HyperParams;
use crate::rng::{NoiseDomain, NoiseStream};

/// A population of identity latents plus everything needed to continue its run.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentityEnsemble {
    pub latents: Vec<LatentVector>,
    pub model_spec: ModelSpec,
    pub params: HyperParams,
    /// Keys the Langevin noise stream.
    pub seed: u64,
    pub iterations_done: u64,
    /// Centre of the pull-back force.
    pub w_avg: LatentVector,
}

impl IdentityEnsemble {
    pub fn len(&self) -> usize {
        self.latents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.latents.is_empty()
    }

    pub fn d_w(&self) -> usize {
        self.model_spec.d_w
    }

    pub fn validate(&self) -> Result<()> {
        if self.latents.is_empty() {
            return Err(Error::Shape("ensemble has no latents".into()));
        }
        let d = self.d_w();
        if self.w_avg.len() != d {
            return Err(Error::Shape(format!(
                "w_avg has length {}, expected {d}",
                self.w_avg.len()
            )));
        }
        for (i, w) in self.latents.iter().enumerate() {
            if w.len() != d {
                return Err(Error::Shape(format!("latent {i} has length {}, expected {d}", w.len())));
            }
            if w.iter().any(|x| !x.is_finite()) {
                return Err(Error::Numeric(format!("latent {i} has non-finite components")));
            }
        }
        Ok(())
    }

    /// The sub-ensemble made of `indices`, in the given order.
    pub fn select(&self, indices: &[usize]) -> IdentityEnsemble {
        IdentityEnsemble {
            latents: indices.iter().map(|&i| self.latents[i].clone()).collect(),
            ..self.clone()
        }
    }
}

/// Draws `n_id` latents i.i.d. from `N(0, sigma_init² I)`.
///
/// Uses default hyperparameters and the origin as `w_avg`; callers override
/// the public fields as needed.
pub fn langevin_init(n_id: usize, model_spec: &ModelSpec, seed: u64, sigma_init: f64) -> Result<IdentityEnsemble> {
    if n_id == 0 {
        return Err(Error::Config("n_id must be at least 1".into()));
    }
    model_spec.validate()?;
    let stream = NoiseStream::new(seed, NoiseDomain::LangevinInit);
    let d_w = model_spec.d_w;
    let latents = (0..n_id as u64)
        .map(|a| {
            LatentVector(
                stream
                    .normal_vector(a, 0, d_w)
                    .into_iter()
                    .map(|x| x * sigma_init)
                    .collect(),
            )
        })
        .collect();
    Ok(IdentityEnsemble {
        latents,
        model_spec: model_spec.clone(),
        params: HyperParams::default(),
        seed,
        iterations_done: 0,
        w_avg: LatentVector::zeros(d_w),
    })
}

/// Time-step that bounds the largest move by `tau` times the closest latent pair.
///
/// The pair distance is floored at `1e-9`; a vanishing gradient (below `1e-12`)
/// or an oversized step returns `dt_cap`.
pub fn adaptive_timestep(min_latent_pair_distance: f64, max_gradient_norm: f64, tau: f64, dt_cap: f64) -> f64 {
    if max_gradient_norm < 1e-12 {
        return dt_cap;
    }
    let dt = tau * min_latent_pair_distance.max(1e-9) / max_gradient_norm;
    if dt.is_nan() || dt > dt_cap {
        dt_cap
    } else {
        dt
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSize {
    /// Bounded by the closest-pair rule of [`adaptive_timestep`].
    Adaptive,
    Fixed(f64),
}

fn check_model(ensemble: &IdentityEnsemble, model: &EmbeddingModel) -> Result<()> {
    if model.spec() != &ensemble.model_spec {
        return Err(Error::Spec(format!(
            "model {:?} does not match the ensemble's {:?}",
            model.spec(),
            ensemble.model_spec
        )));
    }
    Ok(())
}

pub fn langevin_step(
    ensemble: &mut IdentityEnsemble,
    model: &EmbeddingModel,
    training: Option<&TrainingSetEmbeddings>,
) -> Result<TraceRecord> {
    langevin_step_with(ensemble, model, training, StepSize::Adaptive)
}

/// One Langevin iteration. On error the ensemble is left untouched.
pub fn langevin_step_with(
    ensemble: &mut IdentityEnsemble,
    model: &EmbeddingModel,
    training: Option<&TrainingSetEmbeddings>,
    step: StepSize,
) -> Result<TraceRecord> {
    check_model(ensemble, model)?;
    let iteration = ensemble.iterations_done;
    let params = &ensemble.params;
    let terms = LangevinTerms::evaluate(&ensemble.latents, model, params, &ensemble.w_avg, training)?;
    let total = terms.total();
    for (a, g) in total.gradients.iter().enumerate() {
        if g.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite gradient at iteration {iteration}, particle {a}"
            )));
        }
    }

    let latent_pairs = latent_pair_distances(&ensemble.latents);
    let min_pair = latent_pairs.iter().copied().fold(f64::INFINITY, f64::min);
    let dt = match step {
        StepSize::Adaptive => adaptive_timestep(min_pair, total.max_gradient_norm(), params.tau, params.dt_cap),
        StepSize::Fixed(dt) => dt,
    };

    let embedding_pairs = terms.distances.pair_count();
    let record = TraceRecord {
        iteration,
        mean_embedding_distance: mean(terms.distances.pairs().map(|(_, _, d)| d).sum(), embedding_pairs),
        mean_latent_distance: mean(latent_pairs.iter().sum(), latent_pairs.len()),
        mean_contact_force: terms.granular.mean_gradient_norm(),
        mean_pullback_force: terms.pullback.mean_gradient_norm(),
        contact_ratio: mean(terms.granular.contact_count as f64, embedding_pairs),
        dt,
    };

    let eta = params.eta0 * dt.sqrt();
    let stream = NoiseStream::new(ensemble.seed, NoiseDomain::LangevinNoise);
    let updated: Vec<LatentVector> = ensemble
        .latents
        .par_iter()
        .zip(total.gradients.par_iter())
        .enumerate()
        .map(|(a, (w, g))| {
            let mut next: Vec<f64> = w.iter().zip(g.iter()).map(|(x, gx)| x - dt * gx).collect();
            if params.eta0 != 0.0 {
                let zeta = stream.normal_vector(iteration, a as u64, w.len());
                for (x, z) in next.iter_mut().zip(zeta) {
                    *x += eta * z;
                }
            }
            LatentVector(next)
        })
        .collect();
    if let Some(a) = updated.iter().position(|w| w.iter().any(|x| !x.is_finite())) {
        return Err(Error::Numeric(format!(
            "non-finite latent after update at iteration {iteration}, particle {a}"
        )));
    }

    ensemble.latents = updated;
    ensemble.iterations_done += 1;
    Ok(record)
}

/// Runs `ensemble.params.n_iter` adaptive iterations, appending to `trace`.
///
/// Records from completed iterations stay in `trace` if a later one fails.
pub fn run_langevin(
    ensemble: &mut IdentityEnsemble,
    model: &EmbeddingModel,
    training: Option<&TrainingSetEmbeddings>,
    trace: &mut RunTrace,
) -> Result<()> {
    run_langevin_with(ensemble, model, training, StepSize::Adaptive, trace)
}

pub fn run_langevin_with(
    ensemble: &mut IdentityEnsemble,
    model: &EmbeddingModel,
    training: Option<&TrainingSetEmbeddings>,
    step: StepSize,
    trace: &mut RunTrace,
) -> Result<()> {
    ensemble.validate()?;
    ensemble.params.validate()?;
    for _ in 0..ensemble.params.n_iter {
        let record = langevin_step_with(ensemble, model, training, step)?;
        trace.records.push(record);
    }
    Ok(())
}
