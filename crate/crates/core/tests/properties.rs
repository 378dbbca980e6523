use proptest::prelude::*;

use onoma::channel_geometry::{ChannelGain, Luminaire, Receiver, RoomConfig, Vec3};
use onoma::multicell::{
    associate_users, classify_area, coverage_set, handover_count, AssociationPolicy, CellLayout,
    EdgeDetection, FovPolicy,
};
use onoma::pairing::{group_max_disparity, pair_max_disparity, pair_random, PairingStrategy};
use onoma::power_allocation::{sort_users, Objective, Strategy as Alloc};
use onoma::sim::ScenarioConfig;

fn gains(v: &[f64]) -> Vec<ChannelGain> {
    v.iter().map(|&x| ChannelGain::new(x).unwrap()).collect()
}

fn strategy() -> impl Strategy<Value = Alloc> {
    prop_oneof![
        (0.05f64..0.95).prop_map(|alpha| Alloc::Fpa { alpha }),
        Just(Alloc::Grpa),
        prop_oneof![Just(Objective::SumRate), Just(Objective::MaxMinRate)].prop_map(|objective| {
            Alloc::Optimal {
                objective,
                grid_points: 21,
                min_rates: Vec::new(),
            }
        }),
    ]
}

fn grid_layout() -> CellLayout {
    let room = RoomConfig::new(4.0, 4.0, 3.0, 0.85).unwrap();
    let leds = [(1.0, 1.0), (3.0, 1.0), (1.0, 3.0), (3.0, 3.0)]
        .iter()
        .enumerate()
        .map(|(i, &(x, y))| {
            Luminaire::new(Vec3::new(x, y, 3.0), 30.0, 1.0)
                .unwrap()
                .with_group((i % 2) as u8)
        })
        .collect();
    CellLayout::new(room, leds, true).unwrap()
}

fn receiver() -> Receiver {
    Receiver::new(Vec3::new(0.0, 0.0, 0.85), 45.0, 1e-4, 1e-14)
        .unwrap()
        .with_fov_settings(25.0, 45.0)
        .unwrap()
}

const THRESHOLD: f64 = 2.8e-6;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn allocations_conserve_power(
        g in prop::collection::vec(0.01f64..1.0, 1..6),
        s in strategy(),
        total in 0.01f64..100.0,
        noise in 1e-4f64..1.0,
    ) {
        let sorted = sort_users(&gains(&g)).unwrap();
        let pv = s.allocate(&sorted, noise, total).unwrap();
        let sum: f64 = pv.powers().iter().sum();
        prop_assert!(((sum - total) / total).abs() <= 1e-12);
        prop_assert!(pv.powers().iter().all(|&p| p > 0.0));
    }

    #[test]
    fn pairing_partitions_users(
        g in prop::collection::vec(0.01f64..1.0, 1..10),
        size in 2usize..4,
        seed in any::<u64>(),
    ) {
        let gv = gains(&g);
        for plan in [
            group_max_disparity(&gv, size).unwrap(),
            PairingStrategy::Random.plan(&gv, size, seed).unwrap(),
            pair_random(&gv, seed),
        ] {
            let mut seen: Vec<usize> = plan.groups.iter().flatten().copied().collect();
            seen.sort_unstable();
            prop_assert_eq!(seen, (0..g.len()).collect::<Vec<_>>());
            prop_assert!(plan.validate(g.len(), plan.groups.len()).is_ok());
            let total: f64 = plan.resource_fractions().iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn max_disparity_pairs_ignore_input_order(
        g in prop::collection::hash_set(1u32..1000, 2..9),
        rot in 0usize..9,
    ) {
        let base: Vec<f64> = g.into_iter().map(|v| v as f64 / 1000.0).collect();
        let mut shifted = base.clone();
        shifted.rotate_left(rot % base.len());
        let canonical = |v: &[f64]| {
            let mut groups: Vec<Vec<u64>> = pair_max_disparity(&gains(v))
                .groups
                .iter()
                .map(|grp| {
                    let mut ids: Vec<u64> = grp.iter().map(|&u| (v[u] * 1000.0).round() as u64).collect();
                    ids.sort_unstable();
                    ids
                })
                .collect();
            groups.sort();
            groups
        };
        prop_assert_eq!(canonical(&base), canonical(&shifted));
    }

    #[test]
    fn widening_never_adds_handovers(
        start in (0.0f64..4.0, 0.0f64..4.0),
        end in (0.0f64..4.0, 0.0f64..4.0),
        steps in 2usize..150,
    ) {
        let layout = grid_layout();
        let path: Vec<Vec3> = (0..steps)
            .map(|k| {
                let t = k as f64 / (steps - 1) as f64;
                Vec3::new(start.0 + t * (end.0 - start.0), start.1 + t * (end.1 - start.1), 0.85)
            })
            .collect();
        let edge = EdgeDetection::default();
        let fixed = handover_count(&path, &layout, &receiver(), FovPolicy::Fixed, &edge, THRESHOLD).unwrap();
        let widen = handover_count(&path, &layout, &receiver(), FovPolicy::WidenAtEdge, &edge, THRESHOLD).unwrap();
        prop_assert!(widen <= fixed, "widen {} fixed {}", widen, fixed);
    }

    #[test]
    fn classification_is_deterministic(x in 0.0f64..4.0, y in 0.0f64..4.0) {
        let layout = grid_layout();
        let rx = receiver().at(Vec3::new(x, y, 0.85));
        let a = classify_area(&rx, &layout, THRESHOLD);
        let b = classify_area(&rx, &layout, THRESHOLD);
        prop_assert_eq!(format!("{a:?}"), format!("{b:?}"));
        if let Ok(class) = a {
            prop_assert_eq!(class.covering_leds, coverage_set(&rx, &layout, THRESHOLD).unwrap());
        }
    }

    #[test]
    fn users_attach_only_above_threshold(
        pts in prop::collection::vec((0.0f64..4.0, 0.0f64..4.0), 1..12),
    ) {
        let layout = grid_layout();
        let users: Vec<Receiver> = pts.iter().map(|&(x, y)| receiver().at(Vec3::new(x, y, 0.85))).collect();
        let map = associate_users(&users, &layout, THRESHOLD, &AssociationPolicy::default()).unwrap();
        for (u, a) in users.iter().zip(&map.users) {
            let powers = layout.received_powers(u).unwrap();
            prop_assert!(a.serving.iter().all(|&l| powers[l] >= THRESHOLD));
            prop_assert_eq!(a.serving.is_empty(), powers.iter().all(|&p| p < THRESHOLD));
        }
    }

    #[test]
    fn digest_ignores_key_order(seed in any::<u32>(), half in 5.0f64..80.0) {
        let a = format!(
            "seed = {seed}\nmetrics = [\"power_map\"]\n[room]\nwidth = 4.0\ndepth = 5.0\nheight = 3.0\n\
             receiver_plane_height = 0.85\n[[luminaires]]\nposition = [2.0, 2.0, 3.0]\nhalf_angle = {half:?}\n"
        );
        let b = format!(
            "metrics = [\"power_map\"]\nseed = {seed}\n[[luminaires]]\nhalf_angle = {half:?}\nposition = [2.0, 2.0, 3.0]\n\
             [room]\nreceiver_plane_height = 0.85\nheight = 3.0\ndepth = 5.0\nwidth = 4.0\n"
        );
        let da = ScenarioConfig::from_toml(&a).unwrap().digest();
        let db = ScenarioConfig::from_toml(&b).unwrap().digest();
        prop_assert_eq!(da, db);
    }
}
