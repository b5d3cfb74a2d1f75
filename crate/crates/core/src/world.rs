//! Grid highway, vehicle population and per-step action resolution.
//!
//! The road is a `n_cells_x × n_lanes` grid that moves with the traffic, so
//! positions are relative. Every step resolves the intents of all vehicles at
//! once: non-controllable vehicles announce first and always have priority,
//! then ties are broken by larger `x` and then by smaller lane. A move only
//! succeeds into a cell that was empty when the step started.

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::index;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::connectivity;
use crate::error::{Error, Result};

/// Physical layout of the simulated road window.
#[derive(Clone, Debug, PartialEq)]
pub struct RoadConfig {
    pub roi_length_m: f64,
    pub n_lanes: usize,
    pub n_cells_x: usize,
    pub cell_dx_m: f64,
    pub lane_dy_m: f64,
    pub rsu_interval_m: f64,
    /// mmWave V2V range.
    pub r_vv_m: f64,
    /// mmWave V2I range.
    pub r_vi_m: f64,
}

impl Default for RoadConfig {
    fn default() -> Self {
        RoadConfig {
            roi_length_m: 1000.0,
            n_lanes: 4,
            n_cells_x: 200,
            cell_dx_m: 5.0,
            lane_dy_m: 3.5,
            rsu_interval_m: 1000.0,
            r_vv_m: 50.0,
            r_vi_m: 100.0,
        }
    }
}

impl RoadConfig {
    pub fn validate(&self) -> Result<()> {
        let lengths = [
            ("roi_length_m", self.roi_length_m),
            ("cell_dx_m", self.cell_dx_m),
            ("lane_dy_m", self.lane_dy_m),
            ("rsu_interval_m", self.rsu_interval_m),
            ("r_vv_m", self.r_vv_m),
            ("r_vi_m", self.r_vi_m),
        ];
        for (name, v) in lengths {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.n_lanes == 0 || self.n_cells_x == 0 {
            return Err(Error::config("road needs at least one lane and one cell"));
        }
        let span = self.n_cells_x as f64 * self.cell_dx_m;
        if (span - self.roi_length_m).abs() > 1e-9 * self.roi_length_m {
            return Err(Error::config(format!(
                "n_cells_x * cell_dx_m = {span} does not match roi_length_m = {}",
                self.roi_length_m
            )));
        }
        Ok(())
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells_x * self.n_lanes
    }

    /// Cell index of `pos` in row-major `(lane, x)` order.
    #[inline]
    pub fn cell_index(&self, pos: GridPos) -> usize {
        pos.lane * self.n_cells_x + pos.x
    }

    #[inline]
    pub fn contains(&self, x: i64, lane: i64) -> bool {
        x >= 0 && lane >= 0 && (x as usize) < self.n_cells_x && (lane as usize) < self.n_lanes
    }

    /// Metric position of the cell center.
    pub fn center_m(&self, pos: GridPos) -> (f64, f64) {
        (
            (pos.x as f64 + 0.5) * self.cell_dx_m,
            (pos.lane as f64 + 0.5) * self.lane_dy_m,
        )
    }

    /// Squared center-to-center distance in m².
    #[inline]
    pub fn dist2_m(&self, a: GridPos, b: GridPos) -> f64 {
        let dx = (a.x as f64 - b.x as f64) * self.cell_dx_m;
        let dy = (a.lane as f64 - b.lane as f64) * self.lane_dy_m;
        dx * dx + dy * dy
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VehicleId(pub u32);

impl VehicleId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for VehicleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum VehicleKind {
    NonMmWave,
    UncontrolledMmWave,
    ControlledMmWave,
}

impl VehicleKind {
    #[inline]
    pub fn is_mmwave(self) -> bool {
        !matches!(self, VehicleKind::NonMmWave)
    }

    #[inline]
    pub fn is_controllable(self) -> bool {
        matches!(self, VehicleKind::ControlledMmWave)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            VehicleKind::NonMmWave => "non_mmwave",
            VehicleKind::UncontrolledMmWave => "uncontrolled",
            VehicleKind::ControlledMmWave => "controlled",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GridPos {
    pub x: usize,
    pub lane: usize,
}

impl GridPos {
    pub const fn new(x: usize, lane: usize) -> Self {
        GridPos { x, lane }
    }

    /// Position displaced by `(dx, dlane)`, or `None` when it leaves the road.
    #[inline]
    pub fn offset(self, dx: i64, dlane: i64, road: &RoadConfig) -> Option<GridPos> {
        let x = self.x as i64 + dx;
        let lane = self.lane as i64 + dlane;
        road.contains(x, lane)
            .then(|| GridPos::new(x as usize, lane as usize))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Action {
    Forward,
    Back,
    Right,
    Left,
    Stay,
}

impl Action {
    pub const ALL: [Action; 5] = [
        Action::Forward,
        Action::Back,
        Action::Right,
        Action::Left,
        Action::Stay,
    ];

    /// Displacement in `(x, lane)` cells.
    pub const fn delta(self) -> (i64, i64) {
        match self {
            Action::Forward => (1, 0),
            Action::Back => (-1, 0),
            Action::Right => (0, 1),
            Action::Left => (0, -1),
            Action::Stay => (0, 0),
        }
    }

    pub const fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Action::ALL.get(i).copied()
    }
}

/// Small set of actions.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct ActionSet(u8);

impl ActionSet {
    pub const EMPTY: ActionSet = ActionSet(0);

    pub fn insert(&mut self, a: Action) {
        self.0 |= 1 << a.index();
    }

    pub fn contains(self, a: Action) -> bool {
        self.0 & (1 << a.index()) != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn iter(self) -> impl Iterator<Item = Action> {
        Action::ALL.into_iter().filter(move |a| self.contains(*a))
    }
}

impl FromIterator<Action> for ActionSet {
    fn from_iter<I: IntoIterator<Item = Action>>(iter: I) -> Self {
        let mut s = ActionSet::EMPTY;
        for a in iter {
            s.insert(a);
        }
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MobilityMode {
    /// Non-controllable vehicles keep their relative positions.
    ConstantVelocity,
    /// Non-controllable vehicles draw uniformly from Forward/Stay/Back.
    RandomWalk,
}

impl MobilityMode {
    pub fn as_str(self) -> &'static str {
        match self {
            MobilityMode::ConstantVelocity => "constant",
            MobilityMode::RandomWalk => "random",
        }
    }
}

impl std::str::FromStr for MobilityMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "constant" => Ok(MobilityMode::ConstantVelocity),
            "random" => Ok(MobilityMode::RandomWalk),
            other => Err(Error::Parse(format!("unknown mobility mode {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Vehicle {
    pub id: VehicleId,
    pub kind: VehicleKind,
    pub pos: GridPos,
}

/// Reward shaping constants.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RewardParams {
    /// Reward per meter of relay length.
    pub alpha: f64,
    /// Added when the agent was penalized; negative.
    pub penalty: f64,
}

impl Default for RewardParams {
    fn default() -> Self {
        RewardParams {
            alpha: 0.5,
            penalty: -2.0,
        }
    }
}

pub fn reward(relay_length_m: f64, penalized: bool, params: RewardParams) -> f64 {
    params.alpha * relay_length_m + if penalized { params.penalty } else { 0.0 }
}

/// Announced moves of the non-controllable vehicles for the current step.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Intents {
    moves: Vec<(VehicleId, Action)>,
}

impl Intents {
    pub fn iter(&self) -> impl Iterator<Item = (VehicleId, Action)> + '_ {
        self.moves.iter().copied()
    }

    pub fn get(&self, id: VehicleId) -> Option<Action> {
        self.moves.iter().find(|(v, _)| *v == id).map(|(_, a)| *a)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AgentOutcome {
    pub id: VehicleId,
    pub action: Action,
    pub moved: bool,
    /// The selected direction was prohibited at the start of the step.
    pub prohibited: bool,
    /// Prohibited selection or a lost conflict.
    pub penalized: bool,
    pub relay_length_m: f64,
    pub reward: f64,
}

#[derive(Clone, Debug)]
pub struct StepOutcome {
    /// One entry per controllable vehicle, ordered by id.
    pub agents: Vec<AgentOutcome>,
    pub world: WorldState,
    pub snapshot: connectivity::ConnectivitySnapshot,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorldState {
    config: RoadConfig,
    vehicles: Vec<Vehicle>,
    occupancy: Vec<Option<VehicleId>>,
    mobility: MobilityMode,
}

/// Places vehicles for a fresh episode from a dedicated seed.
pub fn spawn_world(
    config: &RoadConfig,
    density: f64,
    r_mm: f64,
    r_ctrl: f64,
    mobility: MobilityMode,
    seed: u64,
) -> Result<WorldState> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    spawn_world_with(config, density, r_mm, r_ctrl, mobility, &mut rng)
}

/// Same as [`spawn_world`] but draws from a caller-owned stream.
pub fn spawn_world_with<R: Rng + ?Sized>(
    config: &RoadConfig,
    density: f64,
    r_mm: f64,
    r_ctrl: f64,
    mobility: MobilityMode,
    rng: &mut R,
) -> Result<WorldState> {
    config.validate()?;
    if !(density.is_finite() && density >= 0.0) {
        return Err(Error::config(format!("density must be >= 0, got {density}")));
    }
    for (name, r) in [("r_mm", r_mm), ("r_ctrl", r_ctrl)] {
        if !(0.0..=1.0).contains(&r) {
            return Err(Error::config(format!("{name} must lie in [0, 1], got {r}")));
        }
    }
    let per_lane = (density * config.roi_length_m).round() as usize;
    if per_lane > config.n_cells_x {
        return Err(Error::config(format!(
            "density {density} needs {per_lane} vehicles per lane but a lane has {} cells",
            config.n_cells_x
        )));
    }

    let mut positions = Vec::with_capacity(per_lane * config.n_lanes);
    for lane in 0..config.n_lanes {
        let mut xs = index::sample(rng, config.n_cells_x, per_lane).into_vec();
        xs.sort_unstable();
        positions.extend(xs.into_iter().map(|x| GridPos::new(x, lane)));
    }

    let n_all = positions.len();
    let n_mm = (r_mm * n_all as f64).round() as usize;
    let n_ctrl = (r_ctrl * n_mm as f64).round() as usize;
    let mut order: Vec<usize> = (0..n_all).collect();
    order.shuffle(rng);
    let mut kinds = vec![VehicleKind::NonMmWave; n_all];
    for (rank, &v) in order.iter().enumerate() {
        kinds[v] = if rank < n_ctrl {
            VehicleKind::ControlledMmWave
        } else if rank < n_mm {
            VehicleKind::UncontrolledMmWave
        } else {
            VehicleKind::NonMmWave
        };
    }

    let vehicles = positions
        .into_iter()
        .zip(kinds)
        .enumerate()
        .map(|(i, (pos, kind))| Vehicle {
            id: VehicleId(i as u32),
            kind,
            pos,
        })
        .collect();
    WorldState::from_vehicles(config.clone(), vehicles, mobility)
}

/// Draw for a non-controllable vehicle.
pub fn uncontrolled_action<R: Rng + ?Sized>(mobility: MobilityMode, rng: &mut R) -> Action {
    const WALK: [Action; 3] = [Action::Forward, Action::Stay, Action::Back];
    match mobility {
        MobilityMode::ConstantVelocity => Action::Stay,
        MobilityMode::RandomWalk => WALK[rng.gen_range(0..3)],
    }
}

impl WorldState {
    /// Builds a world from an explicit vehicle list. Ids must be `0..n` in order.
    pub fn from_vehicles(
        config: RoadConfig,
        vehicles: Vec<Vehicle>,
        mobility: MobilityMode,
    ) -> Result<WorldState> {
        config.validate()?;
        let mut occupancy = vec![None; config.n_cells()];
        for (i, v) in vehicles.iter().enumerate() {
            if v.id.index() != i {
                return Err(Error::config(format!(
                    "vehicle ids must be dense and ordered, found {} at slot {i}",
                    v.id
                )));
            }
            if v.pos.x >= config.n_cells_x || v.pos.lane >= config.n_lanes {
                return Err(Error::config(format!("{} placed off the road", v.id)));
            }
            let cell = &mut occupancy[config.cell_index(v.pos)];
            if let Some(other) = cell {
                return Err(Error::config(format!(
                    "{} and {} share cell ({}, {})",
                    other, v.id, v.pos.x, v.pos.lane
                )));
            }
            *cell = Some(v.id);
        }
        Ok(WorldState {
            config,
            vehicles,
            occupancy,
            mobility,
        })
    }

    /// Convenience constructor for hand-built scenes: `(kind, x, lane)` per vehicle.
    pub fn from_layout(
        config: RoadConfig,
        layout: &[(VehicleKind, usize, usize)],
        mobility: MobilityMode,
    ) -> Result<WorldState> {
        let vehicles = layout
            .iter()
            .enumerate()
            .map(|(i, &(kind, x, lane))| Vehicle {
                id: VehicleId(i as u32),
                kind,
                pos: GridPos::new(x, lane),
            })
            .collect();
        WorldState::from_vehicles(config, vehicles, mobility)
    }

    pub fn config(&self) -> &RoadConfig {
        &self.config
    }

    pub fn mobility(&self) -> MobilityMode {
        self.mobility
    }

    pub fn set_mobility(&mut self, mobility: MobilityMode) {
        self.mobility = mobility;
    }

    pub fn vehicles(&self) -> &[Vehicle] {
        &self.vehicles
    }

    pub fn vehicle(&self, id: VehicleId) -> Result<&Vehicle> {
        self.vehicles.get(id.index()).ok_or(Error::UnknownVehicle(id))
    }

    #[inline]
    pub fn occupant(&self, pos: GridPos) -> Option<VehicleId> {
        self.occupancy[self.config.cell_index(pos)]
    }

    pub fn agents(&self) -> impl Iterator<Item = &Vehicle> + '_ {
        self.vehicles.iter().filter(|v| v.kind.is_controllable())
    }

    pub fn agent_ids(&self) -> Vec<VehicleId> {
        self.agents().map(|v| v.id).collect()
    }

    pub fn count(&self, kind: VehicleKind) -> usize {
        self.vehicles.iter().filter(|v| v.kind == kind).count()
    }

    pub fn n_mmwave(&self) -> usize {
        self.vehicles.iter().filter(|v| v.kind.is_mmwave()).count()
    }

    /// Draws and announces the moves of every non-controllable vehicle.
    pub fn draw_intents<R: Rng + ?Sized>(&self, rng: &mut R) -> Intents {
        let moves = self
            .vehicles
            .iter()
            .filter(|v| !v.kind.is_controllable())
            .map(|v| (v.id, uncontrolled_action(self.mobility, rng)))
            .collect();
        Intents { moves }
    }

    fn target_of(&self, v: &Vehicle, action: Action) -> Option<GridPos> {
        let (dx, dl) = action.delta();
        v.pos.offset(dx, dl, &self.config)
    }

    /// Directions the agent may not take this step.
    pub fn prohibited_directions(&self, id: VehicleId, intents: &Intents) -> Result<ActionSet> {
        let v = self.vehicle(id)?;
        if !v.kind.is_controllable() {
            return Err(Error::contract(format!("{id} is not a controllable vehicle")));
        }
        let announced: Vec<GridPos> = intents
            .iter()
            .filter_map(|(other, a)| self.target_of(&self.vehicles[other.index()], a))
            .collect();
        let mut out = ActionSet::EMPTY;
        for action in Action::ALL {
            if action == Action::Stay {
                continue;
            }
            let blocked = match self.target_of(v, action) {
                None => true,
                Some(t) => self.occupant(t).is_some() || announced.contains(&t),
            };
            if blocked {
                out.insert(action);
            }
        }
        Ok(out)
    }

    /// Draws the non-controllable intents from `rng`, then resolves the step.
    pub fn step<R: Rng + ?Sized>(
        &self,
        agent_actions: &BTreeMap<VehicleId, Action>,
        rewards: RewardParams,
        rng: &mut R,
    ) -> Result<StepOutcome> {
        let intents = self.draw_intents(rng);
        self.resolve(&intents, agent_actions, rewards)
    }

    /// Resolves one step given already announced non-controllable intents.
    pub fn resolve(
        &self,
        intents: &Intents,
        agent_actions: &BTreeMap<VehicleId, Action>,
        rewards: RewardParams,
    ) -> Result<StepOutcome> {
        for id in agent_actions.keys() {
            let v = self.vehicle(*id)?;
            if !v.kind.is_controllable() {
                return Err(Error::contract(format!("action given for non-agent {id}")));
            }
        }
        let n_agents = self.agents().count();
        if agent_actions.len() != n_agents {
            return Err(Error::contract(format!(
                "{} actions for {n_agents} agents",
                agent_actions.len()
            )));
        }
        if intents.moves.len() != self.vehicles.len() - n_agents {
            return Err(Error::contract("intents do not cover every non-controllable vehicle"));
        }

        struct Claim {
            id: VehicleId,
            controllable: bool,
            from: GridPos,
            to: GridPos,
        }

        let mut claims = Vec::new();
        let mut prohibited = BTreeMap::new();
        for (other, action) in intents.iter() {
            let v = self.vehicle(other)?;
            if v.kind.is_controllable() {
                return Err(Error::contract(format!("intent announced for agent {other}")));
            }
            if action == Action::Stay {
                continue;
            }
            if let Some(to) = self.target_of(v, action) {
                if self.occupant(to).is_none() {
                    claims.push(Claim {
                        id: v.id,
                        controllable: false,
                        from: v.pos,
                        to,
                    });
                }
            }
        }
        for (&id, &action) in agent_actions {
            let banned = self.prohibited_directions(id, intents)?.contains(action);
            prohibited.insert(id, banned);
            if banned || action == Action::Stay {
                continue;
            }
            let v = &self.vehicles[id.index()];
            // not prohibited, so the target is on the road and empty
            let to = self.target_of(v, action).expect("validated target");
            claims.push(Claim {
                id,
                controllable: true,
                from: v.pos,
                to,
            });
        }

        // non-controllable first, then forward vehicles, then smaller lane
        claims.sort_by(|a, b| {
            a.controllable
                .cmp(&b.controllable)
                .then(b.from.x.cmp(&a.from.x))
                .then(a.from.lane.cmp(&b.from.lane))
        });

        let mut next = self.clone();
        let mut claimed = vec![false; self.config.n_cells()];
        let mut moved = BTreeMap::new();
        for c in &claims {
            let cell = self.config.cell_index(c.to);
            let won = !claimed[cell];
            claimed[cell] = true;
            if won {
                next.occupancy[self.config.cell_index(c.from)] = None;
                next.vehicles[c.id.index()].pos = c.to;
            }
            if c.controllable {
                moved.insert(c.id, won);
            }
        }
        // targets were empty at step start, so vacating and filling cannot collide
        for c in &claims {
            if next.vehicles[c.id.index()].pos == c.to {
                next.occupancy[self.config.cell_index(c.to)] = Some(c.id);
            }
        }

        let snapshot = connectivity::snapshot(&next);
        let agents = agent_actions
            .iter()
            .map(|(&id, &action)| {
                let banned = prohibited[&id];
                let did_move = moved.get(&id).copied().unwrap_or(false);
                let lost = !banned && action != Action::Stay && !did_move;
                let penalized = banned || lost;
                let l = snapshot.relay_length(id).unwrap_or(0.0);
                AgentOutcome {
                    id,
                    action,
                    moved: did_move,
                    prohibited: banned,
                    penalized,
                    relay_length_m: l,
                    reward: reward(l, penalized, rewards),
                }
            })
            .collect();

        Ok(StepOutcome {
            agents,
            world: next,
            snapshot,
        })
    }

    /// Debug dump, one `id,kind,x,lane` line per vehicle ordered by id.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for v in &self.vehicles {
            out.push_str(&format!(
                "{},{},{},{}\n",
                v.id.0,
                v.kind.as_str(),
                v.pos.x,
                v.pos.lane
            ));
        }
        out
    }

    /// Every vehicle shifted by `dx` cells, or `None` if one would leave the road.
    pub fn shifted(&self, dx: i64) -> Option<WorldState> {
        let mut vehicles = self.vehicles.clone();
        for v in &mut vehicles {
            v.pos = v.pos.offset(dx, 0, &self.config)?;
        }
        WorldState::from_vehicles(self.config.clone(), vehicles, self.mobility).ok()
    }

    /// Checks the occupancy/vehicle-list bijection.
    pub fn check_consistency(&self) -> Result<()> {
        let mut seen = 0;
        for (cell, occ) in self.occupancy.iter().enumerate() {
            if let Some(id) = occ {
                seen += 1;
                let v = self.vehicle(*id)?;
                if self.config.cell_index(v.pos) != cell {
                    return Err(Error::contract(format!("{id} registered at the wrong cell")));
                }
            }
        }
        if seen != self.vehicles.len() {
            return Err(Error::contract(format!(
                "{} vehicles but {seen} occupied cells",
                self.vehicles.len()
            )));
        }
        Ok(())
    }
}
