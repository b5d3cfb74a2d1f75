//! Non-learning comparison policies.
//!
//! The virtual-force baseline uses a saturating exponential force law: a
//! pair farther apart than `d_th` attracts with magnitude
//! `w_a·(1 − e^{−β₁(d − d_th)})`, a closer pair repels with
//! `w_r·(1 − e^{−β₂(d_th − d)})`, and a pair exactly at `d_th` exerts
//! nothing. This form is bounded and zero at the threshold, but it is our
//! own concretization and not a reproduction of any published VFA variant.
//! The force only sees distances, so blockage is invisible to it.

use crate::error::{Error, Result};
use crate::world::{Action, GridPos, Intents, RoadConfig, VehicleId, WorldState};

#[derive(Clone, Debug, PartialEq)]
pub struct VfaParams {
    pub w_a: f64,
    pub w_r: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Threshold distance in meters.
    pub d_th_m: f64,
    /// Forces weaker than this leave the vehicle in place.
    pub force_deadband: f64,
    /// Only vehicles within this many cells along the road contribute.
    pub half_x: usize,
}

impl Default for VfaParams {
    fn default() -> Self {
        VfaParams {
            w_a: 1.0,
            w_r: 10000.0,
            beta1: 2.0,
            beta2: 2.0,
            d_th_m: 50.0,
            force_deadband: 0.01,
            half_x: 20,
        }
    }
}

impl VfaParams {
    pub fn validate(&self) -> Result<()> {
        if self.w_a < 0.0 || self.w_r < 0.0 || self.beta1 < 0.0 || self.beta2 < 0.0 {
            return Err(Error::config("VFA weights and exponents must be non-negative"));
        }
        if !(self.d_th_m > 0.0) {
            return Err(Error::config("VFA threshold distance must be positive"));
        }
        Ok(())
    }
}

/// The random-positions baseline: never move.
pub fn stay_policy(world: &WorldState, id: VehicleId) -> Result<Action> {
    let v = world.vehicle(id)?;
    if !v.kind.is_controllable() {
        return Err(Error::contract(format!("{id} is not a controllable vehicle")));
    }
    Ok(Action::Stay)
}

/// Force on a vehicle at `at` exerted by one at `other`, in meters-frame axes.
pub fn pair_force(road: &RoadConfig, at: GridPos, other: GridPos, p: &VfaParams) -> (f64, f64) {
    let dx = (other.x as f64 - at.x as f64) * road.cell_dx_m;
    let dy = (other.lane as f64 - at.lane as f64) * road.lane_dy_m;
    let d = (dx * dx + dy * dy).sqrt();
    if d == 0.0 || d == p.d_th_m {
        return (0.0, 0.0);
    }
    let magnitude = if d > p.d_th_m {
        p.w_a * (1.0 - (-p.beta1 * (d - p.d_th_m)).exp())
    } else {
        -p.w_r * (1.0 - (-p.beta2 * (p.d_th_m - d)).exp())
    };
    (magnitude * dx / d, magnitude * dy / d)
}

/// Sum of pair forces from every other mmWave vehicle in the window.
pub fn net_force(world: &WorldState, id: VehicleId, p: &VfaParams) -> Result<(f64, f64)> {
    let me = world.vehicle(id)?;
    let road = world.config();
    let mut f = (0.0, 0.0);
    for v in world.vehicles() {
        if v.id == id || !v.kind.is_mmwave() || v.pos.x.abs_diff(me.pos.x) > p.half_x {
            continue;
        }
        let (fx, fy) = pair_force(road, me.pos, v.pos, p);
        f.0 += fx;
        f.1 += fy;
    }
    Ok(f)
}

/// Move best aligned with the net virtual force; Stay when the force is weak
/// or the best move is prohibited.
pub fn vfa_action(world: &WorldState, id: VehicleId, intents: &Intents, p: &VfaParams) -> Result<Action> {
    let v = world.vehicle(id)?;
    if !v.kind.is_controllable() {
        return Err(Error::contract(format!("{id} is not a controllable vehicle")));
    }
    let (fx, fy) = net_force(world, id, p)?;
    if fx.hypot(fy) < p.force_deadband {
        return Ok(Action::Stay);
    }
    let road = world.config();
    let mut best = Action::Forward;
    let mut best_dot = f64::NEG_INFINITY;
    // strict comparison keeps the first of tied moves: Forward > Back > Right > Left
    for a in [Action::Forward, Action::Back, Action::Right, Action::Left] {
        let (dx, dl) = a.delta();
        let score = fx * dx as f64 * road.cell_dx_m + fy * dl as f64 * road.lane_dy_m;
        if score > best_dot {
            best_dot = score;
            best = a;
        }
    }
    if world.prohibited_directions(id, intents)?.contains(best) {
        return Ok(Action::Stay);
    }
    Ok(best)
}
