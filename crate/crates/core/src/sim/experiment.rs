use std::collections::{BTreeMap, BTreeSet};

use super::config::SimConfig;
use super::dynamics::{quality_of, score_image, DetectorState};
use super::world::{generate_world, SyntheticWorld};
use crate::error::{Error, Result};
use crate::eval::{corloc, EvalReport, Localization};
use crate::ossh::{
    best_post_score, epoch_schedule, harvest, label_augmentation, negative_rejection, Action, OsshConfig,
    OsshLedger, Phase, SelectionRecord,
};
use crate::seedmine::{mine_seed, CandidatePool, ImageId, ProposalId};

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutcome {
    /// CorLoc of the final selection per image.
    pub report: EvalReport,
    /// CorLoc of the seeds alone.
    pub seed_report: EvalReport,
    pub seeds: BTreeMap<ImageId, ProposalId>,
    /// Every harvest decision in execution order.
    pub selections: Vec<SelectionRecord>,
    pub final_selection: BTreeMap<ImageId, ProposalId>,
    pub rejected: BTreeSet<ImageId>,
    pub ledger: OsshLedger,
    pub final_ability: f64,
}

impl ExperimentOutcome {
    pub fn corloc(&self) -> f64 {
        self.report.average
    }
}

fn localize(world: &SyntheticWorld, selection: &BTreeMap<ImageId, ProposalId>) -> Result<Vec<Localization>> {
    selection
        .iter()
        .map(|(image, &pid)| {
            let index = world.index_of(image)?;
            Ok(Localization {
                image_id: image.clone(),
                class: world.class.clone(),
                bbox: world.images[index].proposals[pid as usize].bbox,
            })
        })
        .collect()
}

/// Seeds, then the scheduled train/harvest loop, then CorLoc of the final
/// selections. Deterministic in `(sim_config, ossh_config, total_epochs, seed)`.
pub fn run_experiment(
    sim_config: &SimConfig,
    ossh_config: &OsshConfig,
    total_epochs: u32,
    seed: u64,
) -> Result<ExperimentOutcome> {
    let world = generate_world(sim_config, seed)?;
    run_in_world(&world, sim_config, ossh_config, total_epochs)
}

pub fn run_in_world(
    world: &SyntheticWorld,
    sim_config: &SimConfig,
    ossh_config: &OsshConfig,
    total_epochs: u32,
) -> Result<ExperimentOutcome> {
    let dynamics = &sim_config.dynamics;
    let mut config = ossh_config.clone();
    config.validate()?;
    let image_ids: BTreeSet<ImageId> = world.images.iter().map(|i| i.id.clone()).collect();
    config.resolve_order(&image_ids)?;

    let mut pools: Vec<CandidatePool> = Vec::with_capacity(world.images.len());
    let mut current: BTreeMap<ImageId, ProposalId> = BTreeMap::new();
    for index in 0..world.images.len() {
        let outcome = mine_seed(&world.proposals(index), &world.class, &sim_config.seeding)?;
        current.insert(world.images[index].id.clone(), outcome.seed.proposal_id);
        pools.push(outcome.pool);
    }
    let seeds = current.clone();

    let mut state = DetectorState::new(world);
    let mut ledger = OsshLedger::new();
    let mut selections = Vec::new();
    let mut rejected = BTreeSet::new();
    let nr_epoch = config.nr_epoch();

    for epoch in 1..=total_epochs {
        state.epoch = epoch;
        let plan = epoch_schedule(&config, total_epochs, &rejected)?;
        for step in plan.iter().filter(|s| s.epoch == epoch) {
            if step.action == Action::SkipRejected {
                continue;
            }
            let index = world.index_of(&step.image_id)?;
            let pool = &pools[index];
            let pool_ids: BTreeSet<ProposalId> = pool.ids().collect();

            let pre = score_image(world, dynamics, &state, index, Phase::Pre);
            ledger.record_visit(
                &step.image_id,
                epoch,
                Phase::Pre,
                pre.into_iter().filter(|(id, _)| pool_ids.contains(id)),
            )?;

            if step.action == Action::Harvest {
                let record = harvest(&ledger, pool, epoch, &config)?;
                current.insert(step.image_id.clone(), record.proposal_id);
                selections.push(record);
            }

            let selected = current[&step.image_id];
            let augmentation = label_augmentation(pool, selected, &config)?;
            let positives = augmentation
                .positives
                .iter()
                .map(|&id| Ok((id, quality_of(world, index, id)?)))
                .collect::<Result<Vec<_>>>()?;
            state.train_step(dynamics, index, &positives);

            let post = score_image(world, dynamics, &state, index, Phase::Post);
            ledger.record_visit(
                &step.image_id,
                epoch,
                Phase::Post,
                post.into_iter().filter(|(id, _)| pool_ids.contains(id)),
            )?;
        }

        if nr_epoch == Some(epoch) {
            let mut best = BTreeMap::new();
            for image in config.image_order.iter().filter(|i| !rejected.contains(*i)) {
                let index = world.index_of(image)?;
                best.insert(image.clone(), best_post_score(&ledger, &pools[index], epoch)?);
            }
            rejected.extend(negative_rejection(&best, config.nr_fraction)?);
        }
    }

    if state.ability < 0.0 || !state.ability.is_finite() {
        return Err(Error::Invariant(format!("ability became {}", state.ability)));
    }
    let annotations = world.annotations();
    let report = corloc(&localize(world, &current)?, &annotations, 0.5)?;
    let seed_report = corloc(&localize(world, &seeds)?, &annotations, 0.5)?;
    Ok(ExperimentOutcome {
        report,
        seed_report,
        seeds,
        selections,
        final_selection: current,
        rejected,
        ledger,
        final_ability: state.ability,
    })
}
