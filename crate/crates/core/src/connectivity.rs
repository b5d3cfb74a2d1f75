//! mmWave link graph, relay chains and coverage.
//!
//! Two mmWave vehicles are linked when their cell centers are at most
//! `r_vv_m` apart and no occupied cell lies on the segment between them.
//! Blockage uses a supercover traversal: every cell whose closed rectangle
//! meets the segment, apart from the two endpoint cells, is checked.
//!
//! Geometry is evaluated exactly in "doubled cell" integer coordinates where
//! cell `(i, j)` spans `[2i, 2i + 2] × [2j, 2j + 2]` and cell centers sit on
//! odd coordinates, so corner-grazing segments are classified without
//! floating point error.

use crate::error::{Error, Result};
use crate::world::{GridPos, RoadConfig, VehicleId, VehicleKind, WorldState};

/// Read access to cell occupancy, possibly with a hypothetical relocation.
pub trait Occupancy {
    fn road(&self) -> &RoadConfig;
    fn occupant(&self, pos: GridPos) -> Option<VehicleId>;
    fn kind(&self, id: VehicleId) -> VehicleKind;
}

impl Occupancy for WorldState {
    fn road(&self) -> &RoadConfig {
        self.config()
    }

    #[inline]
    fn occupant(&self, pos: GridPos) -> Option<VehicleId> {
        WorldState::occupant(self, pos)
    }

    #[inline]
    fn kind(&self, id: VehicleId) -> VehicleKind {
        self.vehicles()[id.index()].kind
    }
}

/// The world with one vehicle moved to another (empty) cell.
pub struct Relocated<'a> {
    world: &'a WorldState,
    id: VehicleId,
    from: GridPos,
    to: GridPos,
}

impl<'a> Relocated<'a> {
    pub fn new(world: &'a WorldState, id: VehicleId, to: GridPos) -> Self {
        let from = world.vehicles()[id.index()].pos;
        Relocated { world, id, from, to }
    }
}

impl Occupancy for Relocated<'_> {
    fn road(&self) -> &RoadConfig {
        self.world.config()
    }

    #[inline]
    fn occupant(&self, pos: GridPos) -> Option<VehicleId> {
        if pos == self.to {
            Some(self.id)
        } else if pos == self.from {
            None
        } else {
            self.world.occupant(pos)
        }
    }

    #[inline]
    fn kind(&self, id: VehicleId) -> VehicleKind {
        self.world.vehicles()[id.index()].kind
    }
}

/// Calls `visit` for every cell the open segment between the centers of `a`
/// and `b` touches, endpoint cells excluded. Stops early when `visit`
/// returns `false`; the return value reports whether the walk completed.
pub fn supercover<F: FnMut(GridPos) -> bool>(a: GridPos, b: GridPos, mut visit: F) -> bool {
    let (a, b) = if a.x <= b.x { (a, b) } else { (b, a) };
    let is_end = |p: GridPos| p == a || p == b;

    if a.x == b.x {
        let (lo, hi) = (a.lane.min(b.lane), a.lane.max(b.lane));
        for lane in lo..=hi {
            let p = GridPos::new(a.x, lane);
            if !is_end(p) && !visit(p) {
                return false;
            }
        }
        return true;
    }

    let u0 = 2 * a.x as i64 + 1;
    let u1 = 2 * b.x as i64 + 1;
    let v0 = 2 * a.lane as i64 + 1;
    let du = u1 - u0;
    let dv = 2 * b.lane as i64 + 1 - v0;
    // v(u) = num(u) / du
    let num = |u: i64| v0 * du + (u - u0) * dv;

    for i in a.x..=b.x {
        let ul = (2 * i as i64).max(u0);
        let uh = (2 * i as i64 + 2).min(u1);
        let (n0, n1) = (num(ul), num(uh));
        let (vmin, vmax) = (n0.min(n1), n0.max(n1));
        // rows j with 2j <= vmax and 2j + 2 >= vmin
        let j_hi = vmax.div_euclid(2 * du);
        let j_lo = ceil_div(vmin, 2 * du) - 1;
        for j in j_lo.max(0)..=j_hi {
            let p = GridPos::new(i, j as usize);
            if !is_end(p) && !visit(p) {
                return false;
            }
        }
    }
    true
}

#[inline]
fn ceil_div(n: i64, d: i64) -> i64 {
    -((-n).div_euclid(d))
}

pub fn los_clear_in<O: Occupancy + ?Sized>(occ: &O, a: GridPos, b: GridPos) -> bool {
    supercover(a, b, |p| occ.occupant(p).is_none())
}

/// True when no vehicle occupies a cell crossed by the line of sight.
pub fn los_clear(world: &WorldState, a: GridPos, b: GridPos) -> bool {
    los_clear_in(world, a, b)
}

#[inline]
fn in_range(road: &RoadConfig, a: GridPos, b: GridPos) -> bool {
    road.dist2_m(a, b) <= road.r_vv_m * road.r_vv_m
}

fn linked_at<O: Occupancy + ?Sized>(occ: &O, a: GridPos, b: GridPos) -> bool {
    in_range(occ.road(), a, b) && los_clear_in(occ, a, b)
}

/// Whether two mmWave vehicles share a V2V link.
pub fn v2v_linked(world: &WorldState, i: VehicleId, j: VehicleId) -> Result<bool> {
    let vi = world.vehicle(i)?;
    let vj = world.vehicle(j)?;
    if i == j {
        return Err(Error::contract("a vehicle cannot link to itself"));
    }
    if !vi.kind.is_mmwave() || !vj.kind.is_mmwave() {
        return Err(Error::contract(format!("{i} and {j} must both be mmWave vehicles")));
    }
    Ok(linked_at(world, vi.pos, vj.pos))
}

/// mmWave vehicles within link range of `pos`, found by scanning nearby cells.
fn for_each_neighbor<O, F>(occ: &O, self_id: VehicleId, pos: GridPos, mut f: F)
where
    O: Occupancy + ?Sized,
    F: FnMut(VehicleId, GridPos),
{
    let road = occ.road();
    let reach = (road.r_vv_m / road.cell_dx_m).floor() as usize;
    let x_lo = pos.x.saturating_sub(reach);
    let x_hi = (pos.x + reach).min(road.n_cells_x - 1);
    for lane in 0..road.n_lanes {
        for x in x_lo..=x_hi {
            let p = GridPos::new(x, lane);
            let Some(other) = occ.occupant(p) else {
                continue;
            };
            if other == self_id || !occ.kind(other).is_mmwave() {
                continue;
            }
            if linked_at(occ, pos, p) {
                f(other, p);
            }
        }
    }
}

/// Along-road extent `(min_x, max_x)` of the chain containing `start`.
fn chain_extent<O: Occupancy + ?Sized>(
    occ: &O,
    n_vehicles: usize,
    start: VehicleId,
    start_pos: GridPos,
) -> (usize, usize) {
    let mut seen = vec![false; n_vehicles];
    seen[start.index()] = true;
    let mut stack = vec![(start, start_pos)];
    let (mut lo, mut hi) = (start_pos.x, start_pos.x);
    while let Some((id, pos)) = stack.pop() {
        lo = lo.min(pos.x);
        hi = hi.max(pos.x);
        for_each_neighbor(occ, id, pos, |other, p| {
            if !seen[other.index()] {
                seen[other.index()] = true;
                stack.push((other, p));
            }
        });
    }
    (lo, hi)
}

/// Links, chains and coverage for one world configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct ConnectivitySnapshot {
    mmwave: Vec<VehicleId>,
    adjacency: Vec<Vec<VehicleId>>,
    component_of: Vec<Option<usize>>,
    components: Vec<Vec<VehicleId>>,
    relay_length: Vec<Option<f64>>,
    coverage: Vec<Option<f64>>,
}

/// `min{(2 r_vi + l) / R_d, 1}`.
pub fn coverage_for(road: &RoadConfig, relay_length_m: f64) -> f64 {
    ((2.0 * road.r_vi_m + relay_length_m) / road.rsu_interval_m).min(1.0)
}

pub fn snapshot(world: &WorldState) -> ConnectivitySnapshot {
    let road = world.config();
    let n = world.vehicles().len();
    let mut adjacency = vec![Vec::new(); n];
    let mmwave: Vec<VehicleId> = world
        .vehicles()
        .iter()
        .filter(|v| v.kind.is_mmwave())
        .map(|v| v.id)
        .collect();
    for &id in &mmwave {
        let pos = world.vehicles()[id.index()].pos;
        let adj = &mut adjacency[id.index()];
        for_each_neighbor(world, id, pos, |other, _| adj.push(other));
        adj.sort_unstable();
    }

    let mut component_of = vec![None; n];
    let mut components = Vec::new();
    for &root in &mmwave {
        if component_of[root.index()].is_some() {
            continue;
        }
        let c = components.len();
        let mut members = vec![root];
        component_of[root.index()] = Some(c);
        let mut k = 0;
        while k < members.len() {
            let id: VehicleId = members[k];
            k += 1;
            for &other in &adjacency[id.index()] {
                if component_of[other.index()].is_none() {
                    component_of[other.index()] = Some(c);
                    members.push(other);
                }
            }
        }
        members.sort_unstable();
        components.push(members);
    }

    let mut relay_length = vec![None; n];
    let mut coverage = vec![None; n];
    for members in &components {
        let xs = members.iter().map(|id| world.vehicles()[id.index()].pos.x);
        let lo = xs.clone().min().unwrap_or(0);
        let hi = xs.max().unwrap_or(0);
        let l = (hi - lo) as f64 * road.cell_dx_m;
        let c = coverage_for(road, l);
        for id in members {
            relay_length[id.index()] = Some(l);
            coverage[id.index()] = Some(c);
        }
    }

    ConnectivitySnapshot {
        mmwave,
        adjacency,
        component_of,
        components,
        relay_length,
        coverage,
    }
}

impl ConnectivitySnapshot {
    pub fn mmwave(&self) -> &[VehicleId] {
        &self.mmwave
    }

    /// Components as sorted id lists, ordered by smallest member.
    pub fn components(&self) -> &[Vec<VehicleId>] {
        &self.components
    }

    pub fn component_of(&self, id: VehicleId) -> Option<usize> {
        self.component_of.get(id.index()).copied().flatten()
    }

    pub fn neighbors(&self, id: VehicleId) -> &[VehicleId] {
        self.adjacency.get(id.index()).map_or(&[], Vec::as_slice)
    }

    pub fn linked(&self, a: VehicleId, b: VehicleId) -> bool {
        self.neighbors(a).binary_search(&b).is_ok()
    }

    /// `l_i` in meters; `None` for non-mmWave or unknown vehicles.
    pub fn relay_length(&self, id: VehicleId) -> Option<f64> {
        self.relay_length.get(id.index()).copied().flatten()
    }

    pub fn coverage(&self, id: VehicleId) -> Option<f64> {
        self.coverage.get(id.index()).copied().flatten()
    }

    /// Mean coverage over all mmWave vehicles, 0 when there are none.
    pub fn mean_coverage(&self) -> f64 {
        if self.mmwave.is_empty() {
            return 0.0;
        }
        let sum: f64 = self.mmwave.iter().filter_map(|id| self.coverage(*id)).sum();
        sum / self.mmwave.len() as f64
    }
}

pub fn mean_coverage(snap: &ConnectivitySnapshot) -> f64 {
    snap.mean_coverage()
}

/// Relay length vehicle `id` would have if it were at `target` while
/// everyone else stays put. Occupied targets give 0.
pub fn achievable_relay_length(world: &WorldState, id: VehicleId, target: GridPos) -> Result<f64> {
    let v = world.vehicle(id)?;
    if !v.kind.is_mmwave() {
        return Err(Error::contract(format!("{id} is not a mmWave vehicle")));
    }
    let road = world.config();
    if target.x >= road.n_cells_x || target.lane >= road.n_lanes {
        return Ok(0.0);
    }
    Ok(achievable_unchecked(world, id, target))
}

/// `achievable_relay_length` for a known on-road mmWave vehicle.
pub(crate) fn achievable_unchecked(world: &WorldState, id: VehicleId, target: GridPos) -> f64 {
    let n = world.vehicles().len();
    let from = world.vehicles()[id.index()].pos;
    let (lo, hi) = if target == from {
        chain_extent(world, n, id, from)
    } else {
        if world.occupant(target).is_some() {
            return 0.0;
        }
        chain_extent(&Relocated::new(world, id, target), n, id, target)
    };
    (hi - lo) as f64 * world.config().cell_dx_m
}
