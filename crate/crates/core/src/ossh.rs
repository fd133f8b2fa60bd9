//! Online supportive sample harvesting.
//!
//! Scores are recorded per image visit: `pre` right before the detector
//! trains on the image in an epoch, `post` right after. The relative
//! improvement of a proposal entering epoch `t + 1` is
//! `pre(t + 1) - post(t)`, the gain it collected while the detector trained
//! on every other image.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::iou;
use crate::seedmine::{CandidatePool, ImageId, ProposalId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Pre,
    Post,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Pre => "pre",
            Phase::Post => "post",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LedgerKey {
    pub image_id: ImageId,
    pub proposal_id: ProposalId,
    pub epoch: u32,
    pub phase: Phase,
}

impl fmt::Display for LedgerKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "(image {}, proposal {}, epoch {}, {})",
            self.image_id, self.proposal_id, self.epoch, self.phase
        )
    }
}

type ImageEntries = BTreeMap<(ProposalId, u32, Phase), f64>;

/// Score store keyed by (image, proposal, epoch, phase).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OsshLedger {
    images: BTreeMap<ImageId, ImageEntries>,
    len: usize,
}

impl OsshLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn insert(&mut self, key: LedgerKey, score: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::ScoreOutOfRange {
                score,
                context: format!("ledger entry {key}"),
            });
        }
        if key.epoch == 0 {
            return Err(Error::Invariant(format!("ledger epoch must be >= 1 in {key}")));
        }
        let slot = self.images.entry(key.image_id.clone()).or_default();
        if slot.contains_key(&(key.proposal_id, key.epoch, key.phase)) {
            return Err(Error::DuplicateLedgerEntry(key));
        }
        slot.insert((key.proposal_id, key.epoch, key.phase), score);
        self.len += 1;
        Ok(())
    }

    /// Records the scores of one image visit in a single pass.
    pub fn record_visit(
        &mut self,
        image: &ImageId,
        epoch: u32,
        phase: Phase,
        scores: impl IntoIterator<Item = (ProposalId, f64)>,
    ) -> Result<()> {
        let key = |proposal_id| LedgerKey {
            image_id: image.clone(),
            proposal_id,
            epoch,
            phase,
        };
        if epoch == 0 {
            return Err(Error::Invariant(format!(
                "ledger epoch must be >= 1 in {}",
                key(0)
            )));
        }
        if !self.images.contains_key(image) {
            self.images.insert(image.clone(), BTreeMap::new());
        }
        let slot = self.images.get_mut(image).expect("inserted above");
        for (proposal_id, score) in scores {
            if !(0.0..=1.0).contains(&score) {
                return Err(Error::ScoreOutOfRange {
                    score,
                    context: format!("ledger entry {}", key(proposal_id)),
                });
            }
            if slot.insert((proposal_id, epoch, phase), score).is_some() {
                return Err(Error::DuplicateLedgerEntry(key(proposal_id)));
            }
            self.len += 1;
        }
        Ok(())
    }

    pub fn get(&self, image: &ImageId, proposal: ProposalId, epoch: u32, phase: Phase) -> Option<f64> {
        self.images
            .get(image)
            .and_then(|m| m.get(&(proposal, epoch, phase)))
            .copied()
    }

    pub fn require(&self, image: &ImageId, proposal: ProposalId, epoch: u32, phase: Phase) -> Result<f64> {
        self.get(image, proposal, epoch, phase).ok_or_else(|| {
            Error::MissingLedgerEntry(LedgerKey {
                image_id: image.clone(),
                proposal_id: proposal,
                epoch,
                phase,
            })
        })
    }

    /// All entries in key order.
    pub fn iter(&self) -> impl Iterator<Item = (LedgerKey, f64)> + '_ {
        self.images.iter().flat_map(|(image, entries)| {
            entries.iter().map(move |(&(proposal_id, epoch, phase), &score)| {
                (
                    LedgerKey {
                        image_id: image.clone(),
                        proposal_id,
                        epoch,
                        phase,
                    },
                    score,
                )
            })
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HarvestMode {
    /// Largest relative improvement across other images' training.
    #[default]
    Ri,
    /// Largest current score, the static baseline.
    Absolute,
}

impl fmt::Display for HarvestMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HarvestMode::Ri => "ri",
            HarvestMode::Absolute => "absolute",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OsshConfig {
    pub mode: HarvestMode,
    pub harvest_epochs: BTreeSet<u32>,
    pub nr_fraction: f64,
    /// Epoch after which negative rejection runs; defaults to the last
    /// harvest epoch.
    pub nr_after_epoch: Option<u32>,
    pub positive_iou: f64,
    pub negative_iou_range: [f64; 2],
    /// Training order, identical in every epoch. Empty means ascending image id.
    pub image_order: Vec<ImageId>,
}

impl Default for OsshConfig {
    fn default() -> Self {
        Self {
            mode: HarvestMode::Ri,
            harvest_epochs: BTreeSet::from([2, 3, 4]),
            nr_fraction: 0.1,
            nr_after_epoch: None,
            positive_iou: 0.5,
            negative_iou_range: [0.1, 0.5],
            image_order: Vec::new(),
        }
    }
}

impl OsshConfig {
    pub fn validate(&self) -> Result<()> {
        if self.harvest_epochs.iter().any(|&e| e < 2) {
            return Err(Error::config(
                "harvest_epochs",
                "epoch 1 trains on seeds; harvest epochs start at 2",
            ));
        }
        if !(0.0..1.0).contains(&self.nr_fraction) {
            return Err(Error::config("nr_fraction", "must lie in [0, 1)"));
        }
        if self.nr_after_epoch == Some(0) {
            return Err(Error::config("nr_after_epoch", "must be at least 1"));
        }
        if !(self.positive_iou > 0.0 && self.positive_iou <= 1.0) {
            return Err(Error::config("positive_iou", "must lie in (0, 1]"));
        }
        let [low, high] = self.negative_iou_range;
        if !(0.0 <= low && low <= high && high <= self.positive_iou) {
            return Err(Error::config(
                "negative_iou_range",
                "need 0 <= low <= high <= positive_iou",
            ));
        }
        let unique: BTreeSet<_> = self.image_order.iter().collect();
        if unique.len() != self.image_order.len() {
            return Err(Error::config("image_order", "contains duplicate image ids"));
        }
        Ok(())
    }

    /// Epoch after which negative rejection is applied, if it runs at all.
    pub fn nr_epoch(&self) -> Option<u32> {
        if self.nr_fraction == 0.0 {
            return None;
        }
        self.nr_after_epoch
            .or_else(|| self.harvest_epochs.iter().next_back().copied())
    }

    /// Fills an empty order with `images` sorted ascending, otherwise checks
    /// that the configured order is a permutation of `images`.
    pub fn resolve_order(&mut self, images: &BTreeSet<ImageId>) -> Result<()> {
        if self.image_order.is_empty() {
            self.image_order = images.iter().cloned().collect();
            return Ok(());
        }
        let configured: BTreeSet<_> = self.image_order.iter().cloned().collect();
        if configured.len() != self.image_order.len() || &configured != images {
            return Err(Error::config(
                "image_order",
                "must be a permutation of the training images",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionRecord {
    pub image_id: ImageId,
    pub epoch: u32,
    pub proposal_id: ProposalId,
    pub criterion_value: f64,
    pub mode: HarvestMode,
}

pub fn relative_improvement(
    ledger: &OsshLedger,
    image: &ImageId,
    proposal: ProposalId,
    t: u32,
) -> Result<f64> {
    let after = ledger.require(image, proposal, t, Phase::Post)?;
    let before_next = ledger.require(image, proposal, t + 1, Phase::Pre)?;
    Ok(before_next - after)
}

/// Picks the positive sample of `pool` for harvest epoch `epoch`.
///
/// Ties on the criterion go to the higher `pre` score, then the lower id.
pub fn harvest(
    ledger: &OsshLedger,
    pool: &CandidatePool,
    epoch: u32,
    config: &OsshConfig,
) -> Result<SelectionRecord> {
    if !config.harvest_epochs.contains(&epoch) {
        return Err(Error::config(
            "harvest_epochs",
            format!("epoch {epoch} is not a harvest epoch"),
        ));
    }
    let image = &pool.image_id;
    let mut best: Option<(f64, f64, ProposalId)> = None;
    for id in pool.ids() {
        let pre = ledger.require(image, id, epoch, Phase::Pre)?;
        let criterion = match config.mode {
            HarvestMode::Ri => relative_improvement(ledger, image, id, epoch - 1)?,
            HarvestMode::Absolute => pre,
        };
        let better = match best {
            None => true,
            Some((c, p, bid)) => criterion
                .total_cmp(&c)
                .then(pre.total_cmp(&p))
                .then(bid.cmp(&id))
                .is_gt(),
        };
        if better {
            best = Some((criterion, pre, id));
        }
    }
    let (criterion_value, _, proposal_id) = best.ok_or_else(|| Error::NoProposals {
        image: image.to_string(),
    })?;
    Ok(SelectionRecord {
        image_id: image.clone(),
        epoch,
        proposal_id,
        criterion_value,
        mode: config.mode,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Augmentation {
    pub positives: Vec<ProposalId>,
    pub negatives: Vec<ProposalId>,
    pub ignored: Vec<ProposalId>,
}

/// Splits the pool by overlap with the selected proposal.
pub fn label_augmentation(
    pool: &CandidatePool,
    selected: ProposalId,
    config: &OsshConfig,
) -> Result<Augmentation> {
    let anchor = pool.get(selected).ok_or_else(|| Error::NotInPool {
        image: pool.image_id.to_string(),
        proposal: selected,
    })?;
    let [neg_low, neg_high] = config.negative_iou_range;
    let mut out = Augmentation::default();
    for p in &pool.proposals {
        let overlap = iou(&anchor.bbox, &p.bbox);
        if overlap >= config.positive_iou {
            out.positives.push(p.proposal_id);
        } else if overlap >= neg_low && overlap < neg_high {
            out.negatives.push(p.proposal_id);
        } else {
            out.ignored.push(p.proposal_id);
        }
    }
    Ok(out)
}

/// The `floor(fraction * n)` images with the lowest best scores. Equal scores
/// reject the lower image id first.
pub fn negative_rejection(best_scores: &BTreeMap<ImageId, f64>, fraction: f64) -> Result<BTreeSet<ImageId>> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::config("nr_fraction", "must lie in [0, 1)"));
    }
    let count = (fraction * best_scores.len() as f64).floor() as usize;
    let mut ranked: Vec<(&ImageId, f64)> = best_scores.iter().map(|(k, &v)| (k, v)).collect();
    ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(b.0)));
    Ok(ranked.into_iter().take(count).map(|(k, _)| k.clone()).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    UseSeed,
    Harvest,
    /// Train on the most recent selection.
    Reuse,
    SkipRejected,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlanStep {
    pub epoch: u32,
    pub image_id: ImageId,
    pub action: Action,
}

/// Expands the per-epoch plan over `config.image_order`.
///
/// Images in `rejected` are skipped in every epoch after the rejection epoch.
pub fn epoch_schedule(
    config: &OsshConfig,
    total_epochs: u32,
    rejected: &BTreeSet<ImageId>,
) -> Result<Vec<PlanStep>> {
    config.validate()?;
    if total_epochs == 0 {
        return Err(Error::config("total_epochs", "must be at least 1"));
    }
    let nr_epoch = config.nr_epoch();
    let mut plan = Vec::with_capacity(total_epochs as usize * config.image_order.len());
    for epoch in 1..=total_epochs {
        for image in &config.image_order {
            let action = if epoch == 1 {
                Action::UseSeed
            } else if nr_epoch.is_some_and(|e| epoch > e) && rejected.contains(image) {
                Action::SkipRejected
            } else if config.harvest_epochs.contains(&epoch) {
                Action::Harvest
            } else {
                Action::Reuse
            };
            plan.push(PlanStep {
                epoch,
                image_id: image.clone(),
                action,
            });
        }
    }
    Ok(plan)
}

/// Best post-training score of `pool` in `epoch`, the quantity negative
/// rejection ranks images by.
pub fn best_post_score(ledger: &OsshLedger, pool: &CandidatePool, epoch: u32) -> Result<f64> {
    let mut best = f64::NEG_INFINITY;
    for id in pool.ids() {
        best = best.max(ledger.require(&pool.image_id, id, epoch, Phase::Post)?);
    }
    if pool.is_empty() {
        return Err(Error::NoProposals {
            image: pool.image_id.to_string(),
        });
    }
    Ok(best)
}

/// Augmentation labels around one harvested selection.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Partition {
    pub image_id: ImageId,
    pub epoch: u32,
    pub selected: ProposalId,
    pub positives: Vec<ProposalId>,
    pub negatives: Vec<ProposalId>,
    pub ignored: Vec<ProposalId>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Replay {
    /// Harvest decisions in plan order.
    pub selections: Vec<SelectionRecord>,
    pub partitions: Vec<Partition>,
    pub rejected: BTreeSet<ImageId>,
}

/// Re-runs the harvest plan over a recorded ledger.
///
/// Runs through the last harvest epoch or the rejection epoch, whichever is
/// later. Negative rejection uses [`best_post_score`].
pub fn replay(ledger: &OsshLedger, pools: &[CandidatePool], config: &OsshConfig) -> Result<Replay> {
    let mut config = config.clone();
    config.validate()?;
    let mut by_image = BTreeMap::new();
    for pool in pools {
        if by_image.insert(pool.image_id.clone(), pool).is_some() {
            return Err(Error::Invariant(format!("two pools for image {}", pool.image_id)));
        }
    }
    let images: BTreeSet<ImageId> = by_image.keys().cloned().collect();
    config.resolve_order(&images)?;
    let nr_epoch = config.nr_epoch();
    let last = config
        .harvest_epochs
        .iter()
        .next_back()
        .copied()
        .max(nr_epoch)
        .unwrap_or(0);

    let mut out = Replay::default();
    for epoch in 2..=last {
        let plan = epoch_schedule(&config, epoch, &out.rejected)?;
        for step in plan
            .iter()
            .filter(|s| s.epoch == epoch && s.action == Action::Harvest)
        {
            let pool = by_image[&step.image_id];
            let record = harvest(ledger, pool, epoch, &config)?;
            let labels = label_augmentation(pool, record.proposal_id, &config)?;
            out.partitions.push(Partition {
                image_id: step.image_id.clone(),
                epoch,
                selected: record.proposal_id,
                positives: labels.positives,
                negatives: labels.negatives,
                ignored: labels.ignored,
            });
            out.selections.push(record);
        }
        if nr_epoch == Some(epoch) {
            let best = rejection_candidates(ledger, &config, &by_image, &out.rejected, epoch)?;
            out.rejected
                .extend(negative_rejection(&best, config.nr_fraction)?);
        }
    }
    Ok(out)
}

fn rejection_candidates(
    ledger: &OsshLedger,
    config: &OsshConfig,
    pools: &BTreeMap<ImageId, &CandidatePool>,
    rejected: &BTreeSet<ImageId>,
    epoch: u32,
) -> Result<BTreeMap<ImageId, f64>> {
    config
        .image_order
        .iter()
        .filter(|i| !rejected.contains(*i))
        .map(|i| Ok((i.clone(), best_post_score(ledger, pools[i], epoch)?)))
        .collect()
}
