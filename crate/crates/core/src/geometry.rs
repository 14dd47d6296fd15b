//! Angular metric on the embedding space and its gradient.
//!
//! Distances are the angle between two embeddings, `arccos(a·b / |a||b|)`. The
//! cosine is clamped to `[-1 + COS_CLAMP, 1 - COS_CLAMP]` first, so identical
//! directions report roughly `4.5e-4` rather than exactly zero, and the
//! gradient is defined to vanish once the clamp is active.

use std::ops::{Deref, DerefMut};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::EmbeddingModel;

/// Clamp margin applied to the cosine before `arccos`.
pub const COS_CLAMP: f64 = 1e-7;

macro_rules! real_vector {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Default)]
        pub struct $name(pub Vec<f64>);

        impl $name {
            pub fn zeros(dim: usize) -> Self {
                Self(vec![0.0; dim])
            }

            pub fn dim(&self) -> usize {
                self.0.len()
            }

            pub fn norm(&self) -> f64 {
                norm(&self.0)
            }

            pub fn into_inner(self) -> Vec<f64> {
                self.0
            }
        }

        impl Deref for $name {
            type Target = [f64];
            fn deref(&self) -> &[f64] {
                &self.0
            }
        }

        impl DerefMut for $name {
            fn deref_mut(&mut self) -> &mut [f64] {
                &mut self.0
            }
        }

        impl AsRef<[f64]> for $name {
            fn as_ref(&self) -> &[f64] {
                &self.0
            }
        }

        impl From<Vec<f64>> for $name {
            fn from(v: Vec<f64>) -> Self {
                Self(v)
            }
        }

        impl<const N: usize> From<[f64; N]> for $name {
            fn from(v: [f64; N]) -> Self {
                Self(v.to_vec())
            }
        }
    };
}

real_vector!(
    /// A point in the latent space of the embedding map.
    LatentVector
);
real_vector!(
    /// A point in the embedding space, where identity similarity is an angle.
    EmbeddingVector
);

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

pub(crate) fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn check_pair(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "embedding lengths differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Domain("zero-norm embedding".into()));
    }
    Ok((na, nb))
}

/// Raw, unclamped cosine given precomputed norms.
#[inline]
fn cosine(a: &[f64], b: &[f64], na: f64, nb: f64) -> f64 {
    dot(a, b) / (na * nb)
}

#[inline]
fn clamp_cos(s: f64) -> f64 {
    s.clamp(-1.0 + COS_CLAMP, 1.0 - COS_CLAMP)
}

/// Angle with norms already known. Both must be positive.
#[inline]
pub(crate) fn angle_with_norms(a: &[f64], b: &[f64], na: f64, nb: f64) -> f64 {
    clamp_cos(cosine(a, b, na, nb)).acos()
}

/// Adds `scale * ∂d(a, b)/∂a` into `out`.
///
/// Leaves `out` untouched when the cosine sits on the clamp.
pub(crate) fn accumulate_angle_grad(a: &[f64], b: &[f64], na: f64, nb: f64, scale: f64, out: &mut [f64]) {
    let s = cosine(a, b, na, nb);
    if s >= 1.0 - COS_CLAMP || s <= -1.0 + COS_CLAMP {
        return;
    }
    let factor = -scale / (1.0 - s * s).sqrt();
    let inv_ab = 1.0 / (na * nb);
    let s_over_aa = s / (na * na);
    for ((o, &ai), &bi) in out.iter_mut().zip(a).zip(b) {
        *o += factor * (bi * inv_ab - s_over_aa * ai);
    }
}

/// Angle between two embeddings, in `[0, π]`.
pub fn angular_distance(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    let (na, nb) = check_pair(a, b)?;
    Ok(angle_with_norms(a, b, na, nb))
}

/// Gradient of [`angular_distance`] with respect to `a`.
///
/// The result is orthogonal to `a`. It is the zero vector whenever the cosine
/// reaches the clamp bound.
pub fn angular_distance_grad(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<EmbeddingVector> {
    let (na, nb) = check_pair(a, b)?;
    let mut out = vec![0.0; a.len()];
    accumulate_angle_grad(a, b, na, nb, 1.0, &mut out);
    Ok(EmbeddingVector(out))
}

/// Dense symmetric matrix of pairwise distances.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DistanceMatrix {
    pub(crate) fn from_upper(n: usize, rows: Vec<Vec<f64>>) -> Self {
        let mut data = vec![0.0; n * n];
        for (a, row) in rows.into_iter().enumerate() {
            for (offset, d) in row.into_iter().enumerate() {
                let b = a + 1 + offset;
                data[a * n + b] = d;
                data[b * n + a] = d;
            }
        }
        Self { n, data }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.data[a * self.n + b]
    }

    pub fn row(&self, a: usize) -> &[f64] {
        &self.data[a * self.n..(a + 1) * self.n]
    }

    /// Iterates `(a, b, d_ab)` over unordered pairs with `a < b`.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |a| ((a + 1)..self.n).map(move |b| (a, b, self.get(a, b))))
    }

    pub fn pair_count(&self) -> usize {
        self.n * self.n.saturating_sub(1) / 2
    }
}

/// Norms of a batch of embeddings, rejecting zero vectors by index.
pub(crate) fn checked_norms(embeddings: &[EmbeddingVector]) -> Result<Vec<f64>> {
    let dim = embeddings.first().map_or(0, |e| e.len());
    embeddings
        .iter()
        .enumerate()
        .map(|(i, e)| {
            if e.len() != dim {
                return Err(Error::Shape(format!(
                    "embedding {i} has length {}, expected {dim}",
                    e.len()
                )));
            }
            let n = norm(e);
            if n == 0.0 {
                Err(Error::Domain(format!("embedding {i} has zero norm")))
            } else {
                Ok(n)
            }
        })
        .collect()
}

pub(crate) fn distances_with_norms(embeddings: &[EmbeddingVector], norms: &[f64]) -> DistanceMatrix {
    let n = embeddings.len();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|a| {
            ((a + 1)..n)
                .map(|b| angle_with_norms(&embeddings[a], &embeddings[b], norms[a], norms[b]))
                .collect()
        })
        .collect();
    DistanceMatrix::from_upper(n, rows)
}

/// All pairwise angular distances, with an exactly zero diagonal.
pub fn pairwise_distances(embeddings: &[EmbeddingVector]) -> Result<DistanceMatrix> {
    if embeddings.is_empty() {
        return Err(Error::Shape("pairwise_distances needs at least one embedding".into()));
    }
    let norms = checked_norms(embeddings)?;
    Ok(distances_with_norms(embeddings, &norms))
}

/// Pairwise Euclidean distances between latents, `a < b`, packed row by row.
pub(crate) fn latent_pair_distances(latents: &[LatentVector]) -> Vec<f64> {
    let n = latents.len();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|a| ((a + 1)..n).map(|b| euclidean(&latents[a], &latents[b])).collect())
        .collect();
    rows.into_iter().flatten().collect()
}

/// Identity-aware distance between two latents: the angle between their embeddings.
pub fn latent_identity_distance(w_a: &LatentVector, w_b: &LatentVector, model: &EmbeddingModel) -> Result<f64> {
    angular_distance(&model.embed(w_a)?, &model.embed(w_b)?)
}
