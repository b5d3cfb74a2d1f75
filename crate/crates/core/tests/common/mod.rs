//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use petgraph::unionfind::UnionFind;
use rand::Rng;

use mmwrelay::world::{GridPos, RoadConfig, Vehicle, VehicleId, VehicleKind, WorldState};

/// Interior sample count is `SAMPLE_INTERVALS - 1`. Divisible by 2, 4 and 6,
/// so segments spanning at most four lanes hit every cell corner they pass
/// through exactly.
pub const SAMPLE_INTERVALS: i64 = 1008;

/// Longest along-road span for which sampling sees every crossed cell.
pub const MAX_SAMPLED_DX: usize = 160;

/// Cells touched (closed, corners included) by equally spaced interior
/// points of the segment between two cell centers, endpoint cells removed.
///
/// Coordinates are doubled so that cell `(i, j)` spans `[2i, 2i+2] x [2j, 2j+2]`
/// and centers are odd, then scaled by `SAMPLE_INTERVALS` to stay integral.
pub fn sampled_cells(a: GridPos, b: GridPos) -> BTreeSet<GridPos> {
    let n = SAMPLE_INTERVALS;
    let (ax, al) = (a.x as i64, a.lane as i64);
    let (dx, dl) = (b.x as i64 - ax, b.lane as i64 - al);
    let touched = |u: i64| -> Vec<i64> {
        // cells i with 2iN <= u <= (2i+2)N
        let lo = (u - 2 * n).div_euclid(2 * n) + if (u - 2 * n).rem_euclid(2 * n) == 0 { 0 } else { 1 };
        let hi = u.div_euclid(2 * n);
        (lo..=hi).collect()
    };
    let mut out = BTreeSet::new();
    for k in 1..n {
        let u = n * (2 * ax + 1) + 2 * k * dx;
        let v = n * (2 * al + 1) + 2 * k * dl;
        for i in touched(u) {
            for j in touched(v) {
                if i >= 0 && j >= 0 {
                    out.insert(GridPos::new(i as usize, j as usize));
                }
            }
        }
    }
    out.remove(&a);
    out.remove(&b);
    out
}

pub fn los_oracle(world: &WorldState, a: GridPos, b: GridPos) -> bool {
    sampled_cells(a, b).iter().all(|&c| {
        c.x >= world.config().n_cells_x || c.lane >= world.config().n_lanes || world.occupant(c).is_none()
    })
}

pub struct Reference {
    pub components: BTreeSet<BTreeSet<VehicleId>>,
    pub relay_length: BTreeMap<VehicleId, f64>,
    pub coverage: BTreeMap<VehicleId, f64>,
}

/// All-pairs link test plus union-find.
pub fn brute_force(world: &WorldState) -> Reference {
    let road = world.config();
    let mm: Vec<&Vehicle> = world.vehicles().iter().filter(|v| v.kind.is_mmwave()).collect();
    let mut uf = UnionFind::<usize>::new(mm.len());
    for i in 0..mm.len() {
        for j in i + 1..mm.len() {
            let dx = (mm[i].pos.x as f64 - mm[j].pos.x as f64) * road.cell_dx_m;
            let dy = (mm[i].pos.lane as f64 - mm[j].pos.lane as f64) * road.lane_dy_m;
            if dx * dx + dy * dy <= road.r_vv_m * road.r_vv_m && los_oracle(world, mm[i].pos, mm[j].pos) {
                uf.union(i, j);
            }
        }
    }
    let mut groups: BTreeMap<usize, BTreeSet<VehicleId>> = BTreeMap::new();
    for (i, v) in mm.iter().enumerate() {
        groups.entry(uf.find(i)).or_default().insert(v.id);
    }
    let mut relay_length = BTreeMap::new();
    let mut coverage = BTreeMap::new();
    for g in groups.values() {
        let xs: Vec<usize> = g.iter().map(|id| world.vehicles()[id.index()].pos.x).collect();
        let l = (xs.iter().max().unwrap() - xs.iter().min().unwrap()) as f64 * road.cell_dx_m;
        let c = ((2.0 * road.r_vi_m + l) / road.rsu_interval_m).min(1.0);
        for &id in g {
            relay_length.insert(id, l);
            coverage.insert(id, c);
        }
    }
    Reference {
        components: groups.into_values().collect(),
        relay_length,
        coverage,
    }
}

/// Short road with up to `max_vehicles` vehicles of random kinds.
pub fn random_small_world<R: Rng>(rng: &mut R, max_vehicles: usize) -> WorldState {
    let n_cells_x = rng.gen_range(4..=40);
    let n_lanes = rng.gen_range(1..=4);
    let road = RoadConfig {
        n_cells_x,
        n_lanes,
        roi_length_m: n_cells_x as f64 * 5.0,
        ..RoadConfig::default()
    };
    let n = rng.gen_range(0..=max_vehicles.min(n_cells_x * n_lanes));
    let cells = rand::seq::index::sample(rng, n_cells_x * n_lanes, n);
    let kinds = [VehicleKind::NonMmWave, VehicleKind::UncontrolledMmWave, VehicleKind::ControlledMmWave];
    let layout: Vec<(VehicleKind, usize, usize)> = cells
        .iter()
        .map(|c| (kinds[rng.gen_range(0..3)], c % n_cells_x, c / n_cells_x))
        .collect();
    WorldState::from_layout(road, &layout, mmwrelay::world::MobilityMode::ConstantVelocity).unwrap()
}

pub mod gradcheck {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use mmwrelay::connectivity::snapshot;
    use mmwrelay::encoder::{encode, EncoderConfig, StateDesign, StateTensor};
    use mmwrelay::policy::{finite_diff_grad, rollout_loss, ModelParams, NetShape, RolloutStep};
    use mmwrelay::world::{spawn_world, Action, MobilityMode, RoadConfig};

    pub const EPS: f64 = 1e-5;
    /// Denominator floor of the relative error, for entries whose true
    /// gradient is zero and whose difference quotient is rounding noise.
    pub const REL_FLOOR: f64 = 1e-6;

    pub struct Draw {
        pub max_rel_err: f64,
        pub params_checked: usize,
    }

    /// One random model and two-step rollout of real observations.
    /// Returns `None` when a ReLU input lies too close to its kink for a
    /// central difference to be valid.
    pub fn draw(design: StateDesign, seed: u64) -> Option<Draw> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let road = RoadConfig::default();
        let world = spawn_world(&road, 0.02, 0.4, 0.5, MobilityMode::ConstantVelocity, rng.gen()).unwrap();
        let snap = snapshot(&world);
        let enc = EncoderConfig::with_design(design);
        let agents = world.agent_ids();
        let states: Vec<StateTensor> = (0..2)
            .map(|_| encode(&world, &snap, agents[rng.gen_range(0..agents.len())], &enc).unwrap())
            .collect();
        let (k, x, y) = enc.dims(road.n_lanes);
        let shape = NetShape {
            planes: k,
            width: x,
            height: y,
            conv1: 3,
            conv2: 3,
            hidden: 6,
        };
        let mut m = ModelParams::init(shape, rng.gen()).unwrap();
        let mut at = 0;
        for spec in shape.layout() {
            let scale = if spec.dims.len() == 1 { 0.5 } else { 0.0 };
            for v in &mut m.as_mut_slice()[at..at + spec.len()] {
                *v += scale * rng.gen_range(-1.0..1.0);
            }
            at += spec.len();
        }
        for s in &states {
            if m.relu_margin(&m.forward_trace(s).unwrap()) < 100.0 * EPS {
                return None;
            }
        }
        let rollout: Vec<RolloutStep> = states
            .iter()
            .map(|s| RolloutStep {
                state: s,
                action: Action::ALL[rng.gen_range(0..5)],
                advantage: rng.gen_range(-5.0..5.0),
            })
            .collect();
        let returns: Vec<f64> = rollout
            .iter()
            .map(|st| st.advantage + m.value(st.state).unwrap())
            .collect();
        let (beta, c_v) = (0.01, 0.5);
        let analytic = m.backward(&rollout, beta, c_v).unwrap();
        let numeric = finite_diff_grad(&m, |p| rollout_loss(p, &rollout, &returns, beta, c_v).unwrap(), EPS);
        let max_rel_err = analytic
            .data
            .iter()
            .zip(&numeric.data)
            .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR))
            .fold(0.0, f64::max);
        Some(Draw {
            max_rel_err,
            params_checked: analytic.data.len(),
        })
    }
}
