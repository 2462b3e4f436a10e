mod common;

use std::collections::{BTreeSet, HashSet};

use common::{random_corpora, record, Shape};
use fuzz_divide::cfg::{build_cfg, deepest_leaf, depth_map};
use fuzz_divide::corpus::{ContentHash, InstanceCorpus};
use fuzz_divide::coverage::{EdgeKey, EdgeSet, SeedTrace};
use fuzz_divide::distributor::{
    distribute, pick_seed_for_leaf, verify_properties, DistributionReport, DistributionResult,
};
use proptest::prelude::*;

/// Replays the shared-edge loop through the public leaf and seed choosers.
fn replay(result: &DistributionResult, corpora: &[InstanceCorpus]) {
    let mut cfg = build_cfg(&result.overlap);
    let depths = depth_map(&cfg);
    for pick in &result.picks {
        assert_eq!(deepest_leaf(&cfg, &depths), Some(pick.leaf));
        let chosen = pick_seed_for_leaf(&cfg, pick.leaf, &corpora[pick.instance]).unwrap();
        assert_eq!(chosen.name, pick.seed);
        let expect: EdgeSet = chosen
            .trace
            .edges()
            .intersection(cfg.edges())
            .copied()
            .collect();
        assert_eq!(expect, pick.removed);
        cfg.remove_edges(&pick.removed);
    }
    assert!(cfg.edges().is_empty(), "loop stopped with edges left");
}

/// Tail phase recomputed from its definition.
fn expected_tail(result: &DistributionResult, corpora: &[InstanceCorpus]) -> Vec<Vec<String>> {
    corpora
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let mut covered: HashSet<EdgeKey> = result.assigned[i]
                .iter()
                .flat_map(|n| c.get(n).unwrap().trace.edges().iter().copied())
                .collect();
            let mut order: Vec<_> = c.seeds.iter().collect();
            order.sort_by_key(|s| std::cmp::Reverse(s.birth));
            let mut kept = Vec::new();
            for s in order {
                let e = s.trace.edges();
                if e.iter().any(|x| !result.overlap.contains(x))
                    && e.iter().any(|x| !covered.contains(x))
                {
                    covered.extend(e.iter().copied());
                    kept.push(s.name.clone());
                }
            }
            kept
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn invariants_hold(seed in any::<u64>(), n in prop::sample::select(vec![1usize, 2, 3, 4, 8])) {
        let mut rng = common::rng(seed);
        let corpora = random_corpora(&mut rng, Shape { instances: n, max_seeds: 30, max_edges: 80 });
        let result = distribute(&corpora, seed).unwrap();
        let props = verify_properties(&result, &corpora).unwrap();
        prop_assert!(props.p1_ok && props.p2_ok);

        // Completeness, independently.
        let mut allowed = EdgeSet::new();
        for (i, c) in corpora.iter().enumerate() {
            for name in result.allowed(i) {
                allowed.extend(c.get(name).unwrap().trace.edges().iter().copied());
            }
        }
        prop_assert_eq!(&allowed, &common::all_edges(&corpora));

        // Disjointness, independently.
        let mut union = BTreeSet::new();
        let total: usize = result.picks.iter().map(|p| p.removed.len()).sum();
        for p in &result.picks {
            union.extend(p.removed.iter().copied());
        }
        prop_assert_eq!(union.len(), total);
        prop_assert_eq!(&union.into_iter().collect::<EdgeSet>(), &result.overlap);

        replay(&result, &corpora);
        prop_assert_eq!(result.preserved.clone(), expected_tail(&result, &corpora));
        prop_assert_eq!(result.draws.iter().sum::<u64>(), result.picks.len() as u64);
        prop_assert_eq!(result.clone(), distribute(&corpora, seed).unwrap());
    }
}

#[test]
fn empty_instance_is_never_drawn() {
    let mut rng = common::rng(5);
    let mut corpora = random_corpora(
        &mut rng,
        Shape {
            instances: 3,
            max_seeds: 20,
            max_edges: 40,
        },
    );
    corpora[1] = InstanceCorpus::new(1, Vec::new()).unwrap();
    for s in 0..20 {
        let r = distribute(&corpora, s).unwrap();
        assert_eq!(r.draws[1], 0);
        assert_eq!(r.allowed_count(1), 0);
        assert!(verify_properties(&r, &corpora).unwrap().p2_ok);
    }
}

#[test]
fn empty_traces_are_excluded() {
    let mut blank = record(0, 9, vec![EdgeKey::new(1, 2, 0)]);
    blank.trace = SeedTrace::from_edges(Vec::new()).unwrap();
    blank.content_hash = ContentHash::of(b"blank");
    let corpora = vec![
        InstanceCorpus::new(0, vec![record(0, 0, vec![EdgeKey::new(1, 2, 0)]), blank]).unwrap(),
        InstanceCorpus::new(1, vec![record(1, 0, vec![EdgeKey::new(1, 2, 0)])]).unwrap(),
    ];
    let r = distribute(&corpora, 0).unwrap();
    assert_eq!(r.excluded, vec![(0, "id:000009,src:000000".to_string())]);
    assert!(verify_properties(&r, &corpora).unwrap().p2_ok);
}

#[test]
fn report_round_trips_as_json() {
    let mut rng = common::rng(77);
    let corpora = random_corpora(
        &mut rng,
        Shape {
            instances: 2,
            max_seeds: 15,
            max_edges: 30,
        },
    );
    let r = distribute(&corpora, 3).unwrap();
    let json: serde_json::Value =
        serde_json::from_str(&DistributionReport::new(&r, &corpora).to_json()).unwrap();
    assert_eq!(json["schema_version"], "1");
    assert_eq!(json["rng_seed"], 3);
    assert_eq!(json["picks"].as_array().unwrap().len(), r.picks.len());
    assert_eq!(json["instances"].as_array().unwrap().len(), 2);
}

mod scenario {
    use super::*;
    use common::nine_block::{corpora, keys, S3};

    fn name(b: u64) -> String {
        format!("id:{b:06},src:000000")
    }

    #[test]
    fn hand_simulated_assignment() {
        let corpora = corpora();
        let mut seen = BTreeSet::new();
        for rng_seed in 0..64 {
            let r = distribute(&corpora, rng_seed).unwrap();
            assert_eq!(r.overlap.len(), 8);
            assert!(!r.overlap.contains(&EdgeKey::new(2, 7, 0)));
            assert_eq!(r.picks.len(), 2);

            // Leaves 6 and 8 both sit at depth 5; the smaller id goes first.
            let first = &r.picks[0];
            assert_eq!(first.leaf.0, 6);
            assert_eq!(first.removed, keys(S3).into_iter().collect());
            assert_eq!(first.seed, name(if first.instance == 0 { 2 } else { 0 }));

            // S2 and S4 tie on the two remaining edges; the younger wins.
            let second = &r.picks[1];
            assert_eq!(second.leaf.0, 8);
            assert_eq!(
                second.removed,
                keys(&[(3, 4, 0), (4, 8, 0)]).into_iter().collect()
            );
            assert_eq!(second.seed, name(if second.instance == 0 { 3 } else { 2 }));

            assert!(!r.assigned[0].contains(&name(1)));
            assert!(!r.assigned[1].contains(&name(1)));
            assert_eq!(r.preserved, vec![vec![name(0)], vec![]]);
            assert!(verify_properties(&r, &corpora).unwrap().p2_ok);
            seen.insert((first.instance, second.instance));
        }
        assert_eq!(seen.len(), 4, "every draw combination occurs");
    }
}
