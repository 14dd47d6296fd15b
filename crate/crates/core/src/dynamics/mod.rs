//! Stochastic integrators for identity packing and intra-class dispersion.

mod dispersion;
mod langevin;

pub use dispersion::{disco_init, dispersion_step, init_variations, run_dispersion, VariationSet};
pub use langevin::{
    adaptive_timestep, langevin_init, langevin_step, langevin_step_with, run_langevin, run_langevin_with,
    IdentityEnsemble, StepSize,
};

use crate::rng::{NoiseDomain, NoiseStream};

/// Standard normal vector for one particle at one iteration of a Langevin run.
pub fn draw_noise(seed: u64, iteration: u64, particle: u64, dim: usize) -> Vec<f64> {
    NoiseStream::new(seed, NoiseDomain::LangevinNoise).normal_vector(iteration, particle, dim)
}

/// Per-iteration observables, taken on the state entering the iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    /// Absolute iteration index (counts across resumed runs).
    pub iteration: u64,
    pub mean_embedding_distance: f64,
    pub mean_latent_distance: f64,
    /// Mean norm of the repulsive (contact) gradient per particle.
    pub mean_contact_force: f64,
    /// Mean norm of the restoring gradient per particle: latent pull-back for
    /// Langevin, pull-back plus embedding tether for Dispersion.
    pub mean_pullback_force: f64,
    /// Fraction of pairs inside the contact distance.
    pub contact_ratio: f64,
    /// Time-step used for the update.
    pub dt: f64,
}

impl TraceRecord {
    pub const COLUMNS: [&'static str; 7] = [
        "iteration",
        "mean_embedding_distance",
        "mean_latent_distance",
        "mean_contact_force",
        "mean_pullback_force",
        "contact_ratio",
        "dt",
    ];

    pub fn to_row(&self) -> [f64; 7] {
        [
            self.iteration as f64,
            self.mean_embedding_distance,
            self.mean_latent_distance,
            self.mean_contact_force,
            self.mean_pullback_force,
            self.contact_ratio,
            self.dt,
        ]
    }

    pub fn from_row(row: [f64; 7]) -> Self {
        Self {
            iteration: row[0] as u64,
            mean_embedding_distance: row[1],
            mean_latent_distance: row[2],
            mean_contact_force: row[3],
            mean_pullback_force: row[4],
            contact_ratio: row[5],
            dt: row[6],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_row().iter().all(|x| x.is_finite())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunTrace {
    pub records: Vec<TraceRecord>,
}

impl RunTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

fn mean(sum: f64, count: usize) -> f64 {
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}
