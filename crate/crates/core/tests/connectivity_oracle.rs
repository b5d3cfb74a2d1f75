mod common;

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mmwrelay::connectivity::{los_clear, snapshot, supercover};
use mmwrelay::world::{GridPos, MobilityMode, RoadConfig, VehicleKind, WorldState};

#[test]
fn snapshot_matches_union_find_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..1000 {
        let w = common::random_small_world(&mut rng, 20);
        let s = snapshot(&w);
        let r = common::brute_force(&w);
        let comps: BTreeSet<BTreeSet<_>> = s
            .components()
            .iter()
            .map(|c| c.iter().copied().collect())
            .collect();
        assert_eq!(comps, r.components, "{}", w.dump());
        for v in w.vehicles() {
            assert_eq!(s.relay_length(v.id), r.relay_length.get(&v.id).copied());
            assert_eq!(s.coverage(v.id), r.coverage.get(&v.id).copied());
        }
    }
}

#[test]
fn supercover_matches_dense_sampling() {
    let road = RoadConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..10_000 {
        let a = GridPos::new(rng.gen_range(0..road.n_cells_x), rng.gen_range(0..road.n_lanes));
        let lo = a.x.saturating_sub(common::MAX_SAMPLED_DX);
        let hi = (a.x + common::MAX_SAMPLED_DX).min(road.n_cells_x - 1);
        let b = GridPos::new(rng.gen_range(lo..=hi), rng.gen_range(0..road.n_lanes));
        let mut visited = BTreeSet::new();
        supercover(a, b, |c| {
            visited.insert(c);
            true
        });
        visited.remove(&a);
        visited.remove(&b);
        assert_eq!(visited, common::sampled_cells(a, b), "{a:?} -> {b:?}");
    }
}

#[test]
fn los_matches_sampling_with_random_blockers() {
    let road = RoadConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut blocked = 0;
    for _ in 0..2_000 {
        let a = GridPos::new(rng.gen_range(0..road.n_cells_x), rng.gen_range(0..road.n_lanes));
        let b = GridPos::new(
            rng.gen_range(a.x.saturating_sub(30)..=(a.x + 30).min(road.n_cells_x - 1)),
            rng.gen_range(0..road.n_lanes),
        );
        let density = rng.gen_range(0.0..0.3);
        let mut layout = vec![];
        for x in a.x.min(b.x).saturating_sub(2)..=(a.x.max(b.x) + 2).min(road.n_cells_x - 1) {
            for lane in 0..road.n_lanes {
                let p = GridPos::new(x, lane);
                if p != a && p != b && rng.gen_bool(density) {
                    layout.push((VehicleKind::NonMmWave, x, lane));
                }
            }
        }
        let w = WorldState::from_layout(road.clone(), &layout, MobilityMode::ConstantVelocity).unwrap();
        let expected = common::los_oracle(&w, a, b);
        assert_eq!(los_clear(&w, a, b), expected, "{a:?} -> {b:?}\n{}", w.dump());
        assert_eq!(los_clear(&w, b, a), expected);
        blocked += usize::from(!expected);
    }
    assert!(blocked > 200, "too few blocked cases: {blocked}");
}
