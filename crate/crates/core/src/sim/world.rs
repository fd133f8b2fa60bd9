use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{KindSpec, ProposalKind, SimConfig};
use crate::error::{Error, Result};
use crate::eval::{Annotation, GroundTruth};
use crate::geometry::{iou, BBox};
use crate::seedmine::{ImageId, Proposal, ProposalId};

const BACKGROUND_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct SimProposal {
    pub id: ProposalId,
    pub bbox: BBox,
    pub kind: ProposalKind,
    /// IoU with the image's ground truth.
    pub quality: f64,
    /// Initial class response, also the detector's score offset.
    pub base_score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimImage {
    pub id: ImageId,
    pub ground_truth: BBox,
    pub proposals: Vec<SimProposal>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticWorld {
    pub class: String,
    pub seed: u64,
    pub images: Vec<SimImage>,
}

impl SyntheticWorld {
    pub fn index_of(&self, image: &ImageId) -> Result<usize> {
        self.images
            .binary_search_by(|img| img.id.cmp(image))
            .map_err(|_| Error::UnknownImage(image.to_string()))
    }

    /// Proposals of one image with their initial responses.
    pub fn proposals(&self, image: usize) -> Vec<Proposal> {
        let img = &self.images[image];
        img.proposals
            .iter()
            .map(|p| Proposal {
                image_id: img.id.clone(),
                proposal_id: p.id,
                bbox: p.bbox,
                scores: BTreeMap::from([(self.class.clone(), p.base_score)]),
            })
            .collect()
    }

    pub fn annotations(&self) -> Vec<Annotation> {
        self.images
            .iter()
            .map(|img| Annotation {
                image_id: img.id.clone(),
                objects: vec![GroundTruth {
                    class: self.class.clone(),
                    bbox: img.ground_truth,
                    difficult: false,
                }],
            })
            .collect()
    }
}

pub fn image_id(index: usize) -> ImageId {
    ImageId(format!("sim{index:05}"))
}

/// Generates a world. Deterministic in `(config, seed)`.
pub fn generate_world(config: &SimConfig, seed: u64) -> Result<SyntheticWorld> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fractions = ProposalKind::ALL.map(|k| config.mixture.get(k).fraction);
    let kinds = WeightedIndex::new(fractions).map_err(|e| Error::config("mixture", e.to_string()))?;

    let [width, height] = config.image_size;
    let [side_lo, side_hi] = config.object_size;
    let mut images = Vec::with_capacity(config.num_images);
    for index in 0..config.num_images {
        let w = rng.random_range(side_lo..=side_hi);
        let h = rng.random_range(side_lo..=side_hi);
        let x1 = rng.random_range(0.0..=width - w);
        let y1 = rng.random_range(0.0..=height - h);
        let gt = BBox::new(x1, y1, x1 + w, y1 + h)?;

        let mut proposals = Vec::with_capacity(config.proposals_per_image);
        for id in 0..config.proposals_per_image {
            let kind = ProposalKind::ALL[kinds.sample(&mut rng)];
            let spec = config.mixture.get(kind);
            let bbox = match kind {
                ProposalKind::Tight => {
                    let q = target_quality(&mut rng, spec);
                    if rng.random_bool(0.5) {
                        enclosing(&mut rng, &gt, q)?
                    } else {
                        inner(&mut rng, &gt, q)?
                    }
                }
                ProposalKind::Context => {
                    let q = target_quality(&mut rng, spec);
                    enclosing(&mut rng, &gt, q)?
                }
                ProposalKind::Part => {
                    let q = target_quality(&mut rng, spec);
                    inner(&mut rng, &gt, q)?
                }
                ProposalKind::Background => background(&mut rng, &gt, spec, config)?,
            };
            let base_score = rng.random_range(spec.score[0]..=spec.score[1]);
            proposals.push(SimProposal {
                id: id as ProposalId,
                bbox,
                kind,
                quality: iou(&bbox, &gt),
                base_score,
            });
        }
        images.push(SimImage {
            id: image_id(index),
            ground_truth: gt,
            proposals,
        });
    }
    Ok(SyntheticWorld {
        class: config.class.clone(),
        seed,
        images,
    })
}

fn target_quality(rng: &mut impl Rng, spec: &KindSpec) -> f64 {
    rng.random_range(spec.iou[0]..spec.iou[1])
}

/// Splits an area ratio into per-axis factors without extreme aspect changes.
fn axis_factors(rng: &mut impl Rng, ratio: f64) -> (f64, f64) {
    let share = rng.random_range(0.25..=0.75);
    (ratio.powf(share), ratio.powf(1.0 - share))
}

/// A box containing `gt` whose IoU with it is `q`.
fn enclosing(rng: &mut impl Rng, gt: &BBox, q: f64) -> Result<BBox> {
    let (sx, sy) = axis_factors(rng, 1.0 / q);
    let (w, h) = (gt.width() * sx, gt.height() * sy);
    let x1 = gt.x1() - rng.random_range(0.0..=w - gt.width());
    let y1 = gt.y1() - rng.random_range(0.0..=h - gt.height());
    BBox::new(x1, y1, x1 + w, y1 + h)
}

/// A box inside `gt` whose IoU with it is `q`.
fn inner(rng: &mut impl Rng, gt: &BBox, q: f64) -> Result<BBox> {
    let (sx, sy) = axis_factors(rng, q);
    let (w, h) = (gt.width() * sx, gt.height() * sy);
    let x1 = gt.x1() + rng.random_range(0.0..=gt.width() - w);
    let y1 = gt.y1() + rng.random_range(0.0..=gt.height() - h);
    BBox::new(x1, y1, x1 + w, y1 + h)
}

fn background(rng: &mut impl Rng, gt: &BBox, spec: &KindSpec, config: &SimConfig) -> Result<BBox> {
    let [width, height] = config.image_size;
    let [side_lo, side_hi] = config.object_size;
    for _ in 0..BACKGROUND_ATTEMPTS {
        let w = rng.random_range(side_lo..=side_hi);
        let h = rng.random_range(side_lo..=side_hi);
        let x1 = rng.random_range(0.0..=width - w);
        let y1 = rng.random_range(0.0..=height - h);
        let candidate = BBox::new(x1, y1, x1 + w, y1 + h)?;
        let q = iou(&candidate, gt);
        if q >= spec.iou[0] && q < spec.iou[1] {
            return Ok(candidate);
        }
    }
    Err(Error::config(
        "mixture.background.iou",
        "no background box found in range; widen it or enlarge the image",
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::config::SimConfig;

    fn small() -> SimConfig {
        SimConfig {
            num_images: 20,
            proposals_per_image: 30,
            ..SimConfig::default()
        }
    }

    #[test]
    fn deterministic_in_seed() {
        let config = small();
        assert_eq!(
            generate_world(&config, 7).unwrap(),
            generate_world(&config, 7).unwrap()
        );
        assert_ne!(
            generate_world(&config, 7).unwrap(),
            generate_world(&config, 8).unwrap()
        );
    }

    #[test]
    fn qualities_follow_kind_ranges() {
        let config = small();
        let world = generate_world(&config, 3).unwrap();
        for img in &world.images {
            assert_eq!(img.proposals.len(), config.proposals_per_image);
            for p in &img.proposals {
                let spec = config.mixture.get(p.kind);
                assert!(
                    p.quality >= spec.iou[0] - 1e-9 && p.quality < spec.iou[1] + 1e-9,
                    "{p:?}"
                );
                assert!((p.quality - iou(&p.bbox, &img.ground_truth)).abs() == 0.0);
                match p.kind {
                    ProposalKind::Context => assert!(p.bbox.contains(&img.ground_truth)),
                    ProposalKind::Part => assert!(img.ground_truth.contains(&p.bbox)),
                    _ => {}
                }
            }
        }
    }

    #[test]
    fn all_tight_mixture() {
        let mut config = small();
        config.mixture.tight.fraction = 1.0;
        config.mixture.context.fraction = 0.0;
        config.mixture.part.fraction = 0.0;
        config.mixture.background.fraction = 0.0;
        let world = generate_world(&config, 11).unwrap();
        let low = config.mixture.tight.iou[0];
        assert!(world
            .images
            .iter()
            .flat_map(|i| &i.proposals)
            .all(|p| p.kind == ProposalKind::Tight && p.quality >= low - 1e-9));
    }

    #[test]
    fn index_lookup() {
        let world = generate_world(&small(), 1).unwrap();
        assert_eq!(world.index_of(&image_id(5)).unwrap(), 5);
        assert!(matches!(
            world.index_of(&ImageId::new("nope")),
            Err(Error::UnknownImage(_))
        ));
    }
}
