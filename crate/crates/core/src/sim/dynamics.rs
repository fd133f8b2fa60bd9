//! Detector score dynamics.
//!
//! A proposal's score is its initial response plus three moving parts:
//! a generalization term that grows with the detector's global ability and
//! the proposal's quality, an overfit accumulator that only grows when the
//! proposal itself is trained on, and a context term that lifts non-trivial
//! proposals while the detector is weak and pushes low-quality ones down once
//! it is strong. Every term is non-decreasing in quality.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::config::{Dynamics, QualityShape};
use super::world::SyntheticWorld;
use crate::error::{Error, Result};
use crate::ossh::Phase;
use crate::seedmine::{ImageId, ProposalId};

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorState {
    pub ability: f64,
    /// Per image, per proposal.
    pub overfit: Vec<Vec<f64>>,
    pub epoch: u32,
}

impl DetectorState {
    pub fn new(world: &SyntheticWorld) -> Self {
        Self {
            ability: 0.0,
            overfit: world
                .images
                .iter()
                .map(|img| vec![0.0; img.proposals.len()])
                .collect(),
            epoch: 0,
        }
    }

    /// Applies one training step on `positives` of `image`, given as
    /// `(proposal, quality)`. Empty positives leave the state unchanged.
    pub fn train_step(&mut self, dynamics: &Dynamics, image: usize, positives: &[(ProposalId, f64)]) {
        if positives.is_empty() {
            return;
        }
        let mean_shape =
            positives.iter().map(|&(_, q)| shape(dynamics, q)).sum::<f64>() / positives.len() as f64;
        self.ability += dynamics.growth_rate * mean_shape;
        for &(id, _) in positives {
            self.overfit[image][id as usize] += dynamics.overfit_gain;
        }
    }

    /// Functional form of [`DetectorState::train_step`].
    pub fn trained(&self, dynamics: &Dynamics, image: usize, positives: &[(ProposalId, f64)]) -> Self {
        let mut next = self.clone();
        next.train_step(dynamics, image, positives);
        next
    }
}

pub fn shape(dynamics: &Dynamics, quality: f64) -> f64 {
    match dynamics.shape {
        QualityShape::Identity => quality,
        QualityShape::Step => {
            if quality >= dynamics.step_at {
                1.0
            } else {
                0.0
            }
        }
    }
}

pub fn context_term(dynamics: &Dynamics, quality: f64, ability: f64) -> f64 {
    let threshold = dynamics.context_threshold;
    let mut term = 0.0;
    if quality >= dynamics.rise_min_quality {
        term += dynamics.context_rise * ability.min(threshold);
    }
    if quality < dynamics.decay_max_quality {
        term -= dynamics.context_decay * (ability - threshold).max(0.0);
    }
    term
}

/// Noise-free score before clamping.
pub fn expected_score(dynamics: &Dynamics, base: f64, quality: f64, ability: f64, overfit: f64) -> f64 {
    base + dynamics.generalization_gain * ability * shape(dynamics, quality)
        + overfit
        + context_term(dynamics, quality, ability)
}

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent noise stream per (master seed, image, epoch, phase), so the
/// value a proposal sees never depends on evaluation order.
fn noise_stream(seed: u64, image: usize, epoch: u32, phase: Phase) -> ChaCha8Rng {
    let phase_tag = match phase {
        Phase::Pre => 1u64,
        Phase::Post => 2u64,
    };
    let mut key = mix(seed ^ 0x5e_ed0f_0551);
    for part in [image as u64, epoch as u64, phase_tag] {
        key = mix(key ^ part.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    }
    ChaCha8Rng::seed_from_u64(key)
}

/// Scores every proposal of `image` in id order, clamped to `[0, 1]`.
pub fn score_proposals(
    world: &SyntheticWorld,
    dynamics: &Dynamics,
    state: &DetectorState,
    image: &ImageId,
    phase: Phase,
) -> Result<Vec<(ProposalId, f64)>> {
    let index = world.index_of(image)?;
    Ok(score_image(world, dynamics, state, index, phase))
}

pub(crate) fn score_image(
    world: &SyntheticWorld,
    dynamics: &Dynamics,
    state: &DetectorState,
    index: usize,
    phase: Phase,
) -> Vec<(ProposalId, f64)> {
    let img = &world.images[index];
    let mut rng = noise_stream(world.seed, index, state.epoch, phase);
    img.proposals
        .iter()
        .map(|p| {
            let z: f64 = StandardNormal.sample(&mut rng);
            let noise = if dynamics.noise_sigma > 0.0 {
                dynamics.noise_sigma * z
            } else {
                0.0
            };
            let raw = expected_score(
                dynamics,
                p.base_score,
                p.quality,
                state.ability,
                state.overfit[index][p.id as usize],
            ) + noise;
            (p.id, raw.clamp(0.0, 1.0))
        })
        .collect()
}

/// Quality of `proposal` in `image`, for building training positives.
pub fn quality_of(world: &SyntheticWorld, image: usize, proposal: ProposalId) -> Result<f64> {
    world.images[image]
        .proposals
        .get(proposal as usize)
        .map(|p| p.quality)
        .ok_or_else(|| Error::NotInPool {
            image: world.images[image].id.to_string(),
            proposal,
        })
}
