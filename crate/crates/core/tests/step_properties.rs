use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use mmwrelay::connectivity::snapshot;
use mmwrelay::world::{spawn_world, Action, MobilityMode, RewardParams, RoadConfig, VehicleId, WorldState};

fn small_road() -> RoadConfig {
    RoadConfig {
        n_cells_x: 30,
        roi_length_m: 150.0,
        ..RoadConfig::default()
    }
}

fn world(seed: u64, density: f64, mobility: MobilityMode) -> WorldState {
    spawn_world(&small_road(), density, 0.6, 0.6, mobility, seed).unwrap()
}

fn actions_from(w: &WorldState, picks: &[usize]) -> BTreeMap<VehicleId, Action> {
    w.agent_ids()
        .into_iter()
        .enumerate()
        .map(|(i, id)| (id, Action::ALL[picks[i % picks.len()] % 5]))
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn step_preserves_world_invariants(
        seed in any::<u64>(),
        density in 0.02f64..0.15,
        random_walk in any::<bool>(),
        picks in prop::collection::vec(0usize..5, 1..20),
    ) {
        let mobility = if random_walk { MobilityMode::RandomWalk } else { MobilityMode::ConstantVelocity };
        let w = world(seed, density, mobility);
        let actions = actions_from(&w, &picks);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let params = RewardParams::default();
        let out = w.step(&actions, params, &mut rng).unwrap();
        let next = &out.world;
        next.check_consistency().unwrap();
        prop_assert_eq!(next.vehicles().len(), w.vehicles().len());
        let snap = snapshot(next);
        prop_assert_eq!(&snap, &out.snapshot);
        let mut reward_sum = 0.0;
        let mut expected_sum = 0.0;
        for (before, after) in w.vehicles().iter().zip(next.vehicles()) {
            prop_assert_eq!(before.kind, after.kind);
            let (dx, dl) = (after.pos.x as i64 - before.pos.x as i64, after.pos.lane as i64 - before.pos.lane as i64);
            prop_assert!(dx.abs() + dl.abs() <= 1);
            if before.pos != after.pos {
                // moves only go into cells that were empty at step start
                prop_assert!(w.occupant(after.pos).is_none());
            }
            if mobility == MobilityMode::ConstantVelocity && !before.kind.is_controllable() {
                prop_assert_eq!(before.pos, after.pos);
            }
        }
        for o in &out.agents {
            prop_assert_eq!(o.relay_length_m, snap.relay_length(o.id).unwrap());
            prop_assert_eq!(o.penalized, o.prohibited || (o.action != Action::Stay && !o.moved));
            if o.action == Action::Stay {
                prop_assert!(!o.penalized);
            }
            reward_sum += o.reward;
            expected_sum += params.alpha * o.relay_length_m + if o.penalized { params.penalty } else { 0.0 };
        }
        prop_assert!((reward_sum - expected_sum).abs() < 1e-9);
    }

    #[test]
    fn stay_only_keeps_constant_velocity_world_fixed(seed in any::<u64>(), density in 0.02f64..0.15) {
        let w = world(seed, density, MobilityMode::ConstantVelocity);
        let stay: BTreeMap<_, _> = w.agent_ids().into_iter().map(|id| (id, Action::Stay)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let out = w.step(&stay, RewardParams::default(), &mut rng).unwrap();
        prop_assert_eq!(out.world.vehicles(), w.vehicles());
        prop_assert!(out.agents.iter().all(|o| !o.penalized));
    }

    #[test]
    fn prohibited_directions_never_contain_stay(seed in any::<u64>(), density in 0.02f64..0.2) {
        let w = world(seed, density, MobilityMode::RandomWalk);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let intents = w.draw_intents(&mut rng);
        for id in w.agent_ids() {
            let banned = w.prohibited_directions(id, &intents).unwrap();
            prop_assert!(!banned.contains(Action::Stay));
            let v = w.vehicle(id).unwrap();
            for a in Action::ALL {
                let (dx, dl) = a.delta();
                if a != Action::Stay && v.pos.offset(dx, dl, w.config()).is_none() {
                    prop_assert!(banned.contains(a));
                }
            }
        }
    }

    #[test]
    fn snapshot_is_translation_invariant(seed in any::<u64>(), shift in -5i64..5) {
        let w = world(seed, 0.05, MobilityMode::ConstantVelocity);
        if let Some(moved) = w.shifted(shift) {
            let (a, b) = (snapshot(&w), snapshot(&moved));
            for v in w.vehicles() {
                prop_assert_eq!(a.relay_length(v.id), b.relay_length(v.id));
            }
        }
    }
}
