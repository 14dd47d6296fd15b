//! Loss terms and their gradients with respect to latent vectors.
//!
//! Embedding-space terms follow a two-pass scheme: all embeddings are computed
//! once and held constant, then each particle's gradient is the contraction of
//! its partner sum with the model's pull-back at that particle. Because a
//! pairwise distance depends on `w_a` only through `e_a`, this is the exact
//! gradient of the full symmetric loss.
//!
//! Every per-particle partner sum runs in ascending partner index, so results
//! do not depend on how particles are spread over threads.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{
    accumulate_angle_grad, angle_with_norms, checked_norms, distances_with_norms, euclidean, norm, DistanceMatrix,
    EmbeddingVector, LatentVector,
};
use crate::model::EmbeddingModel;
use crate::params::HyperParams;
use crate::rng::{NoiseDomain, NoiseStream};

/// Separations below this are treated as coincident; they carry no force.
pub const COINCIDENT_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct LossResult {
    pub value: f64,
    pub gradients: Vec<LatentVector>,
    /// Number of particle pairs inside the contact distance.
    pub contact_count: usize,
}

impl LossResult {
    pub fn zero(n: usize, dim: usize) -> Self {
        Self {
            value: 0.0,
            gradients: vec![LatentVector::zeros(dim); n],
            contact_count: 0,
        }
    }

    /// Component-wise sum; keeps `self.contact_count`.
    fn accumulate(&mut self, other: &LossResult) {
        self.value += other.value;
        for (g, o) in self.gradients.iter_mut().zip(&other.gradients) {
            for (x, y) in g.iter_mut().zip(o.iter()) {
                *x += y;
            }
        }
    }

    pub fn max_gradient_norm(&self) -> f64 {
        self.gradients.iter().map(|g| g.norm()).fold(0.0, f64::max)
    }

    pub fn mean_gradient_norm(&self) -> f64 {
        if self.gradients.is_empty() {
            return 0.0;
        }
        self.gradients.iter().map(|g| g.norm()).sum::<f64>() / self.gradients.len() as f64
    }
}

/// Embeddings of a reference population (e.g. a generator's training set).
///
/// These are constants: no gradient ever flows into them.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSetEmbeddings {
    embeddings: Vec<EmbeddingVector>,
    labels: Option<Vec<String>>,
    norms: Vec<f64>,
}

impl TrainingSetEmbeddings {
    pub fn new(embeddings: Vec<EmbeddingVector>, labels: Option<Vec<String>>) -> Result<Self> {
        let norms = checked_norms(&embeddings)?;
        if let Some(l) = &labels {
            if l.len() != embeddings.len() {
                return Err(Error::Shape(format!(
                    "{} labels for {} training embeddings",
                    l.len(),
                    embeddings.len()
                )));
            }
        }
        Ok(Self {
            embeddings,
            labels,
            norms,
        })
    }

    /// Embeddings of `n` latents drawn from `N(0, sigma² I)`, a stand-in for a
    /// generator's training population.
    pub fn synthetic(model: &EmbeddingModel, n: usize, seed: u64, sigma: f64) -> Result<Self> {
        let stream = NoiseStream::new(seed, NoiseDomain::TrainingSet);
        let embeddings = (0..n as u64)
            .map(|t| {
                let w = LatentVector(
                    stream
                        .normal_vector(t, 0, model.d_w())
                        .into_iter()
                        .map(|x| x * sigma)
                        .collect(),
                );
                model.embed(&w)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(embeddings, None)
    }

    pub fn embeddings(&self) -> &[EmbeddingVector] {
        &self.embeddings
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    pub fn len(&self) -> usize {
        self.embeddings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.embeddings.first().map(|e| e.len())
    }

    pub(crate) fn norms(&self) -> &[f64] {
        &self.norms
    }
}

/// A batch of embeddings with their norms, computed once per iteration.
pub(crate) struct EmbeddedBatch {
    pub embeddings: Vec<EmbeddingVector>,
    pub norms: Vec<f64>,
}

impl EmbeddedBatch {
    pub fn new(latents: &[LatentVector], model: &EmbeddingModel) -> Result<Self> {
        let embeddings = latents.par_iter().map(|w| model.embed(w)).collect::<Result<Vec<_>>>()?;
        let norms = checked_norms(&embeddings)?;
        Ok(Self { embeddings, norms })
    }

    pub fn distances(&self) -> DistanceMatrix {
        distances_with_norms(&self.embeddings, &self.norms)
    }
}

fn check_latents(latents: &[LatentVector], dim: usize) -> Result<()> {
    for (i, w) in latents.iter().enumerate() {
        if w.len() != dim {
            return Err(Error::Shape(format!(
                "latent {i} has length {}, expected {dim}",
                w.len()
            )));
        }
    }
    Ok(())
}

/// Pull an embedding cotangent back to the latent, skipping the work when it is zero.
fn pull_back(model: &EmbeddingModel, w: &LatentVector, cot: Vec<f64>, touched: bool) -> Result<LatentVector> {
    if touched {
        model.pullback(w, &cot)
    } else {
        Ok(LatentVector::zeros(w.len()))
    }
}

pub(crate) fn granular_from_batch(
    latents: &[LatentVector],
    model: &EmbeddingModel,
    batch: &EmbeddedBatch,
    distances: &DistanceMatrix,
    k_e: f64,
    d0_e: f64,
) -> Result<LossResult> {
    let n = latents.len();
    let d_e = model.d_e();
    let gradients = (0..n)
        .into_par_iter()
        .map(|a| {
            let mut cot = vec![0.0; d_e];
            let mut touched = false;
            for (b, &d) in distances.row(a).iter().enumerate() {
                if b != a && d < d0_e {
                    let e = &batch.embeddings;
                    accumulate_angle_grad(
                        &e[a],
                        &e[b],
                        batch.norms[a],
                        batch.norms[b],
                        -k_e * (d0_e - d),
                        &mut cot,
                    );
                    touched = true;
                }
            }
            pull_back(model, &latents[a], cot, touched)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut value = 0.0;
    let mut contact_count = 0;
    for (_, _, d) in distances.pairs() {
        if d < d0_e {
            value += (d0_e - d) * (d0_e - d);
            contact_count += 1;
        }
    }
    Ok(LossResult {
        value: 0.5 * k_e * value,
        gradients,
        contact_count,
    })
}

/// Granular repulsion between identity embeddings.
///
/// Every pair closer than `d0_e` contributes `(k_e / 2)·(d0_e − d)²`.
pub fn granular_embedding_loss(
    latents: &[LatentVector],
    model: &EmbeddingModel,
    k_e: f64,
    d0_e: f64,
) -> Result<LossResult> {
    check_latents(latents, model.d_w())?;
    if latents.is_empty() {
        return Err(Error::Shape("granular loss needs at least one latent".into()));
    }
    let batch = EmbeddedBatch::new(latents, model)?;
    let distances = batch.distances();
    granular_from_batch(latents, model, &batch, &distances, k_e, d0_e)
}

/// Quadratic attraction of every latent toward `w_avg`.
pub fn latent_pullback_loss(latents: &[LatentVector], w_avg: &LatentVector, k_w: f64) -> Result<LossResult> {
    check_latents(latents, w_avg.len())?;
    let mut value = 0.0;
    let gradients = latents
        .iter()
        .map(|w| {
            let diff: Vec<f64> = w.iter().zip(w_avg.iter()).map(|(x, c)| x - c).collect();
            value += diff.iter().map(|x| x * x).sum::<f64>();
            LatentVector(diff.into_iter().map(|x| k_w * x).collect())
        })
        .collect();
    Ok(LossResult {
        value: 0.5 * k_w * value,
        gradients,
        contact_count: 0,
    })
}

/// Granular repulsion among the variations of one identity, in latent space.
pub fn dispersion_latent_granular(variations: &[LatentVector], k_w_disp: f64, d0_w: f64) -> Result<LossResult> {
    let n = variations.len();
    let dim = variations.first().map_or(0, |v| v.len());
    check_latents(variations, dim)?;

    let mut value = 0.0;
    let mut contact_count = 0;
    for a in 0..n {
        for b in (a + 1)..n {
            let r = euclidean(&variations[a], &variations[b]);
            if r < d0_w {
                value += (d0_w - r) * (d0_w - r);
                contact_count += 1;
            }
        }
    }

    let gradients = (0..n)
        .map(|a| {
            let mut g = vec![0.0; dim];
            for b in 0..n {
                if b == a {
                    continue;
                }
                let r = euclidean(&variations[a], &variations[b]);
                if r < d0_w && r >= COINCIDENT_EPS {
                    let scale = -k_w_disp * (d0_w - r) / r;
                    for ((o, x), y) in g.iter_mut().zip(variations[a].iter()).zip(variations[b].iter()) {
                        *o += scale * (x - y);
                    }
                }
            }
            LatentVector(g)
        })
        .collect();

    Ok(LossResult {
        value: 0.5 * k_w_disp * value,
        gradients,
        contact_count,
    })
}

fn tether_from_batch(
    variations: &[LatentVector],
    model: &EmbeddingModel,
    batch: &EmbeddedBatch,
    reference: &EmbeddingVector,
    ref_norm: f64,
    k_e_disp: f64,
) -> Result<LossResult> {
    let mut value = 0.0;
    let gradients = variations
        .iter()
        .enumerate()
        .map(|(a, w)| {
            let e = &batch.embeddings[a];
            let d = angle_with_norms(e, reference, batch.norms[a], ref_norm);
            value += d * d;
            let mut cot = vec![0.0; e.len()];
            accumulate_angle_grad(e, reference, batch.norms[a], ref_norm, k_e_disp * d, &mut cot);
            model.pullback(w, &cot)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LossResult {
        value: 0.5 * k_e_disp * value,
        gradients,
        contact_count: 0,
    })
}

fn reference_norm(reference: &EmbeddingVector, model: &EmbeddingModel) -> Result<f64> {
    if reference.len() != model.d_e() {
        return Err(Error::Shape(format!(
            "reference embedding has length {}, model expects d_e = {}",
            reference.len(),
            model.d_e()
        )));
    }
    let n = norm(reference);
    if n == 0.0 {
        return Err(Error::Domain("reference embedding has zero norm".into()));
    }
    Ok(n)
}

/// Spring tying each variation's embedding to a fixed reference embedding.
pub fn embedding_tether_loss(
    variations: &[LatentVector],
    reference: &EmbeddingVector,
    model: &EmbeddingModel,
    k_e_disp: f64,
) -> Result<LossResult> {
    check_latents(variations, model.d_w())?;
    let ref_norm = reference_norm(reference, model)?;
    let batch = EmbeddedBatch::new(variations, model)?;
    tether_from_batch(variations, model, &batch, reference, ref_norm, k_e_disp)
}

pub(crate) fn training_from_batch(
    latents: &[LatentVector],
    model: &EmbeddingModel,
    batch: &EmbeddedBatch,
    training: &TrainingSetEmbeddings,
    k_tr: f64,
    d_tr: f64,
) -> Result<LossResult> {
    if training.is_empty() {
        if k_tr > 0.0 && d_tr > 0.0 {
            log::warn!("training repulsion requested with an empty training set; term is zero");
        }
        return Ok(LossResult::zero(latents.len(), model.d_w()));
    }
    if training.dim() != Some(model.d_e()) {
        return Err(Error::Shape(format!(
            "training embeddings have length {}, model expects d_e = {}",
            training.dim().unwrap_or(0),
            model.d_e()
        )));
    }
    let tr = training.embeddings();
    let tr_norms = training.norms();
    let per_particle = latents
        .par_iter()
        .enumerate()
        .map(|(a, w)| {
            let e = &batch.embeddings[a];
            let mut cot = vec![0.0; e.len()];
            let mut value = 0.0;
            let mut touched = false;
            for (t, tn) in tr.iter().zip(tr_norms) {
                let d = angle_with_norms(e, t, batch.norms[a], *tn);
                if d < d_tr {
                    value += (d_tr - d) * (d_tr - d);
                    accumulate_angle_grad(e, t, batch.norms[a], *tn, -k_tr * (d_tr - d), &mut cot);
                    touched = true;
                }
            }
            Ok((value, pull_back(model, w, cot, touched)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut value = 0.0;
    let mut gradients = Vec::with_capacity(latents.len());
    for (v, g) in per_particle {
        value += v;
        gradients.push(g);
    }
    Ok(LossResult {
        value: 0.5 * k_tr * value,
        gradients,
        contact_count: 0,
    })
}

/// Repulsion of synthetic embeddings away from training-set embeddings.
///
/// `contact_count` is always zero here; it counts identity pairs only.
pub fn training_repulsion_loss(
    latents: &[LatentVector],
    model: &EmbeddingModel,
    training: &TrainingSetEmbeddings,
    k_tr: f64,
    d_tr: f64,
) -> Result<LossResult> {
    if d_tr < 0.0 {
        return Err(Error::Config(format!("d_tr must be >= 0, got {d_tr}")));
    }
    check_latents(latents, model.d_w())?;
    let batch = EmbeddedBatch::new(latents, model)?;
    training_from_batch(latents, model, &batch, training, k_tr, d_tr)
}

/// The separate pieces of the Langevin objective at one state.
pub(crate) struct LangevinTerms {
    pub distances: DistanceMatrix,
    pub granular: LossResult,
    pub pullback: LossResult,
    pub training: Option<LossResult>,
}

impl LangevinTerms {
    pub fn evaluate(
        latents: &[LatentVector],
        model: &EmbeddingModel,
        params: &HyperParams,
        w_avg: &LatentVector,
        training: Option<&TrainingSetEmbeddings>,
    ) -> Result<Self> {
        check_latents(latents, model.d_w())?;
        if w_avg.len() != model.d_w() {
            return Err(Error::Shape(format!(
                "w_avg has length {}, model expects d_w = {}",
                w_avg.len(),
                model.d_w()
            )));
        }
        let batch = EmbeddedBatch::new(latents, model)?;
        let distances = batch.distances();
        let granular = granular_from_batch(latents, model, &batch, &distances, params.k_e, params.d0_e)?;
        let pullback = latent_pullback_loss(latents, w_avg, params.k_w)?;
        let training = training
            .map(|t| training_from_batch(latents, model, &batch, t, params.k_tr, params.d_tr))
            .transpose()?;
        Ok(Self {
            distances,
            granular,
            pullback,
            training,
        })
    }

    pub fn total(&self) -> LossResult {
        let mut total = self.granular.clone();
        total.accumulate(&self.pullback);
        if let Some(t) = &self.training {
            total.accumulate(t);
        }
        total
    }
}

/// Granular repulsion + latent pull-back (+ training repulsion when given).
pub fn total_langevin_loss(
    latents: &[LatentVector],
    model: &EmbeddingModel,
    params: &HyperParams,
    w_avg: &LatentVector,
    training: Option<&TrainingSetEmbeddings>,
) -> Result<LossResult> {
    Ok(LangevinTerms::evaluate(latents, model, params, w_avg, training)?.total())
}

/// The pieces of the Dispersion objective for one identity.
pub(crate) struct DispersionTerms {
    pub embeddings: Vec<EmbeddingVector>,
    pub latent_granular: LossResult,
    pub tether: LossResult,
    pub pullback: LossResult,
}

impl DispersionTerms {
    pub fn evaluate(
        variations: &[LatentVector],
        reference: &EmbeddingVector,
        model: &EmbeddingModel,
        params: &HyperParams,
        w_avg: &LatentVector,
    ) -> Result<Self> {
        check_latents(variations, model.d_w())?;
        let ref_norm = reference_norm(reference, model)?;
        let batch = EmbeddedBatch::new(variations, model)?;
        let latent_granular = dispersion_latent_granular(variations, params.k_w_disp, params.d0_w)?;
        let tether = tether_from_batch(variations, model, &batch, reference, ref_norm, params.k_e_disp)?;
        let pullback = latent_pullback_loss(variations, w_avg, params.k_w_tilde)?;
        Ok(Self {
            embeddings: batch.embeddings,
            latent_granular,
            tether,
            pullback,
        })
    }

    pub fn total(&self) -> LossResult {
        let mut total = self.latent_granular.clone();
        total.accumulate(&self.tether);
        total.accumulate(&self.pullback);
        total
    }
}

/// Latent granular repulsion + embedding tether + latent pull-back toward `w_avg`.
pub fn total_dispersion_loss(
    variations: &[LatentVector],
    reference: &EmbeddingVector,
    model: &EmbeddingModel,
    params: &HyperParams,
    w_avg: &LatentVector,
) -> Result<LossResult> {
    Ok(DispersionTerms::evaluate(variations, reference, model, params, w_avg)?.total())
}
