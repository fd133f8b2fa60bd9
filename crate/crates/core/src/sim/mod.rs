//! Synthetic worlds and detector dynamics for desk-scale harvesting runs.

mod config;
mod dynamics;
mod experiment;
mod world;

pub use config::{
    Dynamics, KindSpec, Mixture, ProposalKind, QualityShape, SimConfig, DEFAULT_SIM_CONFIG_TOML,
    SIM_CONFIG_VERSION,
};
pub use dynamics::{context_term, expected_score, quality_of, score_proposals, shape, DetectorState};
pub use experiment::{run_experiment, run_in_world, ExperimentOutcome};
pub use world::{generate_world, image_id, SimImage, SimProposal, SyntheticWorld};
