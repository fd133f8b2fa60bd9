use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;

use wslmine::eval::{corloc, voc_ap, Annotation, ApMethod, ApOptions, Detection, GroundTruth, Localization};
use wslmine::formats::{parse_lines, read_ledger, write_ledger, write_lines, LedgerRecord, ProposalRecord};
use wslmine::ossh::{
    epoch_schedule, harvest, label_augmentation, negative_rejection, relative_improvement, Action,
    HarvestMode, OsshConfig, OsshLedger, Phase, SelectionRecord,
};
use wslmine::seedmine::{
    aggregate_image_score, build_graph, dense_subgraph, select_seed, top_candidates, SubgraphOutput,
};
use wslmine::sim::{expected_score, DetectorState, SimConfig};
use wslmine::{iou, nms, BBox, CandidatePool, ImageId, Proposal, ProposalId, ScoredBox, ThresholdMode};

fn arb_box() -> impl Strategy<Value = BBox> {
    (0.0..100.0f64, 0.0..100.0f64, 0.5..60.0f64, 0.5..60.0f64)
        .prop_map(|(x, y, w, h)| BBox::new(x, y, x + w, y + h).unwrap())
}

fn arb_int_box() -> impl Strategy<Value = BBox> {
    (0..20i32, 0..20i32, 1..12i32, 1..12i32)
        .prop_map(|(x, y, w, h)| BBox::new(x as f64, y as f64, (x + w) as f64, (y + h) as f64).unwrap())
}

fn proposals(boxes: &[BBox], scores: &[f64]) -> Vec<Proposal> {
    boxes
        .iter()
        .zip(scores)
        .enumerate()
        .map(|(i, (b, &s))| {
            Proposal::new(
                ImageId::new("img"),
                i as ProposalId,
                *b,
                BTreeMap::from([("cat".to_owned(), s)]),
            )
            .unwrap()
        })
        .collect()
}

fn arb_proposals(max: usize) -> impl Strategy<Value = Vec<Proposal>> {
    prop::collection::vec((arb_int_box(), 0u32..=8), 1..max).prop_map(|v| {
        let (boxes, scores): (Vec<BBox>, Vec<f64>) = v.into_iter().map(|(b, s)| (b, s as f64 / 8.0)).unzip();
        proposals(&boxes, &scores)
    })
}

fn pool_of(props: Vec<Proposal>) -> CandidatePool {
    let n = props.len();
    top_candidates(&props, "cat", n).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn iou_is_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
        let v = iou(&a, &b);
        prop_assert_eq!(v, iou(&b, &a));
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert_eq!(iou(&a, &a), 1.0);
    }

    #[test]
    fn iou_one_only_for_equal_boxes(a in arb_int_box(), b in arb_int_box()) {
        prop_assert_eq!(iou(&a, &b) == 1.0, a == b);
    }

    #[test]
    fn iou_shrinks_with_nested_growth(
        a in arb_box(),
        g1 in (0.0..20.0f64, 0.0..20.0f64, 0.0..20.0f64, 0.0..20.0f64),
        g2 in (0.0..20.0f64, 0.0..20.0f64, 0.0..20.0f64, 0.0..20.0f64),
    ) {
        let grow = |r: &BBox, g: (f64, f64, f64, f64)| {
            BBox::new(r.x1() - g.0, r.y1() - g.1, r.x2() + g.2, r.y2() + g.3).unwrap()
        };
        let b = grow(&a, g1);
        let c = grow(&b, g2);
        prop_assert!(iou(&a, &b) >= iou(&a, &c));
    }

    #[test]
    fn nms_keeps_a_descending_subset(
        boxes in prop::collection::vec(arb_box(), 0..30),
        thr in 0.1..1.0f64,
    ) {
        // Distinct scores so the order is strict.
        let input: Vec<ScoredBox> = boxes
            .iter()
            .enumerate()
            .map(|(i, b)| ScoredBox { id: i as u32, bbox: *b, score: 1.0 / (1.0 + i as f64) })
            .collect();
        let kept = nms(&input, thr, ThresholdMode::Inclusive);
        prop_assert!(kept.iter().all(|k| input.contains(k)));
        prop_assert!(kept.windows(2).all(|w| w[0].score > w[1].score));
        for (i, a) in kept.iter().enumerate() {
            for b in &kept[i + 1..] {
                prop_assert!(iou(&a.bbox, &b.bbox) < thr);
            }
        }
        let distinct: BTreeSet<[u64; 4]> = boxes.iter().map(|b| b.to_array().map(f64::to_bits)).collect();
        if distinct.len() == boxes.len() {
            prop_assert_eq!(nms(&input, 1.0, ThresholdMode::Inclusive).len(), input.len());
        }
    }

    #[test]
    fn aggregate_is_the_argmax_score(props in arb_proposals(20), rot in 0usize..20) {
        let best = props.iter().map(|p| p.scores["cat"]).fold(f64::MIN, f64::max);
        let mut rotated = props.clone();
        rotated.rotate_left(rot % props.len());
        prop_assert_eq!(aggregate_image_score(&props, "cat").unwrap(), best);
        prop_assert_eq!(aggregate_image_score(&rotated, "cat").unwrap(), best);
    }

    #[test]
    fn dense_subgraph_is_an_independent_subset(props in arb_proposals(25), k in 1usize..6, thr in 0.2..0.9f64) {
        let pool = pool_of(props);
        let graph = build_graph(&pool, thr, ThresholdMode::Inclusive);
        let picked = dense_subgraph(&graph, k, SubgraphOutput::Selected);
        let pruned = dense_subgraph(&graph, k, SubgraphOutput::Pruned);
        let all: BTreeSet<ProposalId> = pool.ids().collect();
        prop_assert!(picked.is_subset(&pruned));
        prop_assert!(pruned.is_subset(&all));
        for a in &picked {
            for b in &picked {
                let (ia, ib) = (graph.index_of(*a).unwrap(), graph.index_of(*b).unwrap());
                prop_assert!(a == b || !graph.has_edge(ia, ib));
            }
        }
        // Whatever is left unpruned is at most k nodes.
        prop_assert!(all.len() - pruned.len() <= k);
    }

    #[test]
    fn seed_ignores_storage_order(props in arb_proposals(20), k in 1usize..5, rot in 0usize..20) {
        let pool = pool_of(props.clone());
        let graph = build_graph(&pool, 0.5, ThresholdMode::Inclusive);
        let nodes = dense_subgraph(&graph, k, SubgraphOutput::Selected);
        let seed = select_seed(&pool, &nodes).unwrap().proposal_id;

        let mut shuffled = pool.clone();
        shuffled.proposals.rotate_left(rot % props.len());
        shuffled.proposals.reverse();
        prop_assert_eq!(select_seed(&shuffled, &nodes).unwrap().proposal_id, seed);
    }

    #[test]
    fn ri_harvest_is_the_brute_force_argmax(
        scores in prop::collection::vec((0u32..=64, 0u32..=64), 1..15),
        shift in 0u32..=64,
    ) {
        let img = ImageId::new("img");
        let boxes: Vec<BBox> = (0..scores.len()).map(|i| BBox::new(20.0 * i as f64, 0.0, 20.0 * i as f64 + 10.0, 10.0).unwrap()).collect();
        let pool = pool_of(proposals(&boxes, &vec![0.5; boxes.len()]));
        let build = |c: u32| {
            let mut ledger = OsshLedger::new();
            ledger.record_visit(&img, 1, Phase::Post, scores.iter().enumerate().map(|(i, s)| (i as u32, (s.0 + c) as f64 / 128.0))).unwrap();
            ledger.record_visit(&img, 2, Phase::Pre, scores.iter().enumerate().map(|(i, s)| (i as u32, (s.1 + c) as f64 / 128.0))).unwrap();
            ledger
        };
        let cfg = OsshConfig { harvest_epochs: BTreeSet::from([2]), ..OsshConfig::default() };
        let ledger = build(0);
        let picked = harvest(&ledger, &pool, 2, &cfg).unwrap();

        let ris: Vec<f64> = (0..scores.len() as u32).map(|i| relative_improvement(&ledger, &img, i, 1).unwrap()).collect();
        let best = ris.iter().cloned().fold(f64::MIN, f64::max);
        prop_assert_eq!(picked.criterion_value, best);
        let tied: Vec<u32> = (0..scores.len() as u32).filter(|&i| ris[i as usize] == best).collect();
        let top_pre = tied.iter().map(|&i| scores[i as usize].1).max().unwrap();
        let want = tied.into_iter().find(|&i| scores[i as usize].1 == top_pre).unwrap();
        prop_assert_eq!(picked.proposal_id, want);

        let shifted = harvest(&build(shift), &pool, 2, &cfg).unwrap();
        prop_assert_eq!(shifted.proposal_id, picked.proposal_id);
    }

    #[test]
    fn augmentation_partitions_the_pool(props in arb_proposals(30), pick in 0usize..30) {
        let pool = pool_of(props);
        let selected = pool.proposals[pick % pool.len()].proposal_id;
        let aug = label_augmentation(&pool, selected, &OsshConfig::default()).unwrap();
        let mut all: Vec<ProposalId> = aug.positives.iter().chain(&aug.negatives).chain(&aug.ignored).copied().collect();
        all.sort_unstable();
        let mut ids: Vec<ProposalId> = pool.ids().collect();
        ids.sort_unstable();
        prop_assert_eq!(all, ids);
        prop_assert!(aug.positives.contains(&selected));
    }

    #[test]
    fn negative_rejection_size_is_floor(
        scores in prop::collection::vec(0u32..10, 0..60),
        fraction in 0.0..0.99f64,
    ) {
        let map: BTreeMap<ImageId, f64> = scores
            .iter()
            .enumerate()
            .map(|(i, &s)| (ImageId::new(format!("i{i:03}")), s as f64 / 10.0))
            .collect();
        let rejected = negative_rejection(&map, fraction).unwrap();
        prop_assert_eq!(rejected.len(), (fraction * map.len() as f64).floor() as usize);
        let worst_kept = map.iter().filter(|(k, _)| !rejected.contains(*k)).map(|(_, &v)| v).fold(f64::MAX, f64::min);
        prop_assert!(rejected.iter().all(|r| map[r] <= worst_kept));
    }

    #[test]
    fn schedule_visits_each_live_image_once_per_epoch(
        n in 1usize..20,
        epochs in 1u32..6,
        harvest_epochs in prop::collection::btree_set(2u32..6, 0..4),
        rejected_mask in prop::collection::vec(any::<bool>(), 20),
    ) {
        let order: Vec<ImageId> = (0..n).rev().map(|i| ImageId::new(format!("i{i}"))).collect();
        let config = OsshConfig { harvest_epochs, image_order: order.clone(), ..OsshConfig::default() };
        let rejected: BTreeSet<ImageId> = order.iter().zip(&rejected_mask).filter(|(_, &m)| m).map(|(i, _)| i.clone()).collect();
        let plan = epoch_schedule(&config, epochs, &rejected).unwrap();
        for epoch in 1..=epochs {
            let steps: Vec<_> = plan.iter().filter(|s| s.epoch == epoch).collect();
            let ids: Vec<ImageId> = steps.iter().map(|s| s.image_id.clone()).collect();
            prop_assert_eq!(&ids, &order);
            let live: Vec<_> = steps.iter().filter(|s| s.action != Action::SkipRejected).collect();
            let after_nr = config.nr_epoch().is_some_and(|e| epoch > e);
            let expected_live = if after_nr { n - rejected.len() } else { n };
            prop_assert_eq!(live.len(), expected_live);
        }
    }

    #[test]
    fn ap_and_corloc_are_order_invariant(
        dets in prop::collection::vec((0usize..4, arb_int_box(), 1u32..100), 0..20),
        rot in 0usize..20,
    ) {
        let anns: Vec<Annotation> = (0..4)
            .map(|i| Annotation {
                image_id: ImageId::new(format!("im{i}")),
                objects: vec![GroundTruth { class: "cat".into(), bbox: BBox::new(2.0 * i as f64, 3.0, 12.0, 14.0).unwrap(), difficult: false }],
            })
            .collect();
        let dets: Vec<Detection> = dets
            .into_iter()
            .map(|(i, b, c)| Detection { image_id: ImageId::new(format!("im{i}")), class: "cat".into(), bbox: b, confidence: c as f64 / 100.0 })
            .collect();
        let mut rotated = dets.clone();
        let len = rotated.len().max(1);
        rotated.rotate_left(rot % len);
        for method in [ApMethod::ElevenPoint, ApMethod::Continuous] {
            let opts = ApOptions { method, ..ApOptions::default() };
            let ap = voc_ap(&dets, &anns, "cat", &opts).unwrap().ap;
            prop_assert!((0.0..=1.0).contains(&ap));
            prop_assert_eq!(voc_ap(&rotated, &anns, "cat", &opts).unwrap().ap, ap);

            let mut with_fp = dets.clone();
            with_fp.push(Detection { image_id: ImageId::new("im0"), class: "cat".into(), bbox: BBox::new(80.0, 80.0, 90.0, 90.0).unwrap(), confidence: 0.0 });
            prop_assert!(voc_ap(&with_fp, &anns, "cat", &opts).unwrap().ap <= ap);
        }
        let locs: Vec<Localization> = wslmine::eval::most_confident(&dets);
        let mut rev = locs.clone();
        rev.reverse();
        let c = corloc(&locs, &anns, 0.5).unwrap();
        prop_assert!((0.0..=1.0).contains(&c.average));
        prop_assert_eq!(corloc(&rev, &anns, 0.5).unwrap(), c);
    }

    #[test]
    fn expected_score_is_monotone_in_quality(
        q1 in 0.0..=1.0f64,
        q2 in 0.0..=1.0f64,
        ability in 0.0..10.0f64,
        base in 0.0..0.3f64,
        overfit in 0.0..0.5f64,
    ) {
        let d = SimConfig::default().dynamics;
        let (lo, hi) = if q1 <= q2 { (q1, q2) } else { (q2, q1) };
        prop_assert!(expected_score(&d, base, lo, ability, overfit) <= expected_score(&d, base, hi, ability, overfit));
    }

    #[test]
    fn ability_never_decreases(steps in prop::collection::vec(prop::collection::vec(0.0..=1.0f64, 0..5), 1..20)) {
        let config = SimConfig { num_images: 1, proposals_per_image: 5, ..SimConfig::default() };
        let world = wslmine::sim::generate_world(&config, 1).unwrap();
        let mut state = DetectorState::new(&world);
        for qs in steps {
            let before = state.ability;
            let positives: Vec<(ProposalId, f64)> = qs.iter().enumerate().map(|(i, &q)| (i as u32, q)).collect();
            state.train_step(&config.dynamics, 0, &positives);
            prop_assert!(state.ability >= before);
        }
    }

    #[test]
    fn proposal_records_round_trip(
        recs in prop::collection::vec((0u32..1000, arb_box(), prop::collection::btree_map("[a-z]{1,6}", 0.0..=1.0f64, 0..4)), 0..10),
    ) {
        let records: Vec<ProposalRecord> = recs
            .into_iter()
            .map(|(id, b, scores)| ProposalRecord { image_id: ImageId::new(format!("img{}", id % 7)), proposal_id: id, bbox: b.to_array(), scores })
            .collect();
        let text = write_lines(&records);
        let back: Vec<ProposalRecord> = parse_lines(&text).unwrap();
        prop_assert_eq!(&back, &records);
        prop_assert_eq!(write_lines(&back), text);
    }

    #[test]
    fn ledger_and_selections_round_trip(
        entries in prop::collection::btree_map((0u8..5, 0u32..20, 1u32..6, any::<bool>()), 0.0..=1.0f64, 0..40),
        picks in prop::collection::vec((0u8..5, 1u32..6, 0u32..20, -1.0..1.0f64, any::<bool>()), 0..10),
    ) {
        let mut ledger = OsshLedger::new();
        for (&(img, prop_id, epoch, pre), &score) in &entries {
            let phase = if pre { Phase::Pre } else { Phase::Post };
            ledger.record_visit(&ImageId::new(format!("i{img}")), epoch, phase, [(prop_id, score)]).unwrap();
        }
        let text = write_ledger(&ledger);
        let back = read_ledger(&text).unwrap();
        prop_assert_eq!(&back, &ledger);
        prop_assert_eq!(write_ledger(&back), text.clone());
        prop_assert_eq!(parse_lines::<LedgerRecord>(&text).unwrap().len(), ledger.len());

        let selections: Vec<SelectionRecord> = picks
            .into_iter()
            .map(|(img, epoch, proposal_id, criterion_value, ri)| SelectionRecord {
                image_id: ImageId::new(format!("i{img}")),
                epoch,
                proposal_id,
                criterion_value,
                mode: if ri { HarvestMode::Ri } else { HarvestMode::Absolute },
            })
            .collect();
        let text = write_lines(&selections);
        prop_assert_eq!(parse_lines::<SelectionRecord>(&text).unwrap(), selections);
    }
}
