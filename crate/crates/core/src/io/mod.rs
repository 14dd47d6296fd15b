//! Persistence: the binary artifact container and experiment configuration.

mod config;
mod container;

pub use config::{known_keys, load_config, parse_config, ExperimentConfig};
pub use container::{
    from_bytes, read_container, read_covariates, read_embeddings, read_ensemble, read_trace, read_variations, to_bytes,
    write_container, Artifact, ArtifactKind, FitInfo, MAGIC, VERSION,
};
