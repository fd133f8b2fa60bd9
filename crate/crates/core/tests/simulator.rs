use wslmine::ossh::{HarvestMode, OsshConfig, Phase};
use wslmine::sim::{generate_world, run_experiment, ProposalKind, SimConfig};

const FRACTION_TOLERANCE: f64 = 0.05;

#[test]
fn proposal_qualities_follow_the_mixture() {
    let config = SimConfig::default();
    let world = generate_world(&config, 42).unwrap();
    let proposals: Vec<_> = world.images.iter().flat_map(|i| &i.proposals).collect();
    assert_eq!(proposals.len(), 10_000);
    let n = proposals.len() as f64;

    for kind in ProposalKind::ALL {
        let spec = config.mixture.get(kind);
        let of_kind: Vec<_> = proposals.iter().filter(|p| p.kind == kind).collect();
        let share = of_kind.len() as f64 / n;
        assert!(
            (share - spec.fraction).abs() <= FRACTION_TOLERANCE,
            "{kind:?}: {share}"
        );
        for p in of_kind {
            assert!(
                spec.iou[0] <= p.quality && p.quality <= spec.iou[1],
                "{kind:?}: {}",
                p.quality
            );
        }
    }

    let share = |pred: &dyn Fn(f64) -> bool| proposals.iter().filter(|p| pred(p.quality)).count() as f64 / n;
    let fraction = |k| config.mixture.get(k).fraction;
    let bins = [
        (share(&|q| q >= 0.6), fraction(ProposalKind::Tight)),
        (share(&|q| q < 0.1), fraction(ProposalKind::Background)),
        (
            share(&|q| (0.1..0.6).contains(&q)),
            fraction(ProposalKind::Context) + fraction(ProposalKind::Part),
        ),
    ];
    for (got, want) in bins {
        assert!((got - want).abs() <= FRACTION_TOLERANCE, "{got} vs {want}");
    }
}

/// Training on a poor seed lifts it more within an epoch than the score it
/// keeps into the next one, which is the gap harvesting exploits.
#[test]
fn poor_seeds_gain_more_from_training_than_they_keep() {
    let config = SimConfig::default();
    let ossh = OsshConfig {
        mode: HarvestMode::Ri,
        harvest_epochs: Default::default(),
        ..OsshConfig::default()
    };
    let world = generate_world(&config, 42).unwrap();
    let out = run_experiment(&config, &ossh, 5, 42).unwrap();
    let quality = |image: &wslmine::ImageId, id: u32| {
        world.images[world.index_of(image).unwrap()].proposals[id as usize].quality
    };

    let (worst_image, worst_id) = out
        .seeds
        .iter()
        .min_by(|a, b| quality(a.0, *a.1).total_cmp(&quality(b.0, *b.1)))
        .unwrap();
    assert!(quality(worst_image, *worst_id) < 0.5);

    let t = 4;
    let gaps = |image, id| {
        let get = |epoch, phase| out.ledger.require(image, id, epoch, phase).unwrap();
        let in_epoch = get(t, Phase::Post) - get(t, Phase::Pre);
        let carried = get(t + 1, Phase::Pre) - get(t, Phase::Post);
        (in_epoch, carried)
    };
    let (in_epoch, carried) = gaps(worst_image, *worst_id);
    assert!(in_epoch > carried, "{in_epoch} vs {carried}");

    let poor: Vec<_> = out.seeds.iter().filter(|(i, &p)| quality(i, p) < 0.5).collect();
    assert!(!poor.is_empty());
    let mean =
        |f: fn((f64, f64)) -> f64| poor.iter().map(|(i, &p)| f(gaps(i, p))).sum::<f64>() / poor.len() as f64;
    assert!(mean(|g| g.0) > mean(|g| g.1));
}
