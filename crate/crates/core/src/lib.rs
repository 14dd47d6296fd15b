//! Packing identity latents so that their embeddings stay apart.
//!
//! Identities are particles in a latent space `W`. A differentiable model maps
//! each one to an embedding in `E`, where similarity is the angle between
//! vectors. Overdamped Langevin dynamics with granular contact forces push
//! embeddings apart while a pull-back spring keeps latents near a centre.
//! Dispersion and DisCo then grow intra-class variations around each identity.
//!
//! All randomness comes from counter-based streams and all reductions have a
//! fixed order, so a run is bit-reproducible for any number of worker threads.

pub mod analysis;
pub mod covariates;
pub mod dynamics;
pub mod error;
pub mod geometry;
pub mod io;
pub mod losses;
pub mod model;
pub mod params;
pub mod rng;
pub mod sampling;

pub use error::{Error, Result};
pub use geometry::{EmbeddingVector, LatentVector};
pub use model::{build_model, EmbeddingModel, ModelKind, ModelSpec};
pub use params::HyperParams;
