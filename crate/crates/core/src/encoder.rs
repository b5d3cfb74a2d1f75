//! Feature-plane observations centered on one agent.
//!
//! A tensor has `K` planes of `X × Y` values. `x` offsets run `-half_x..=half_x`
//! along the road and `y` offsets `-(n_lanes - 1)..=(n_lanes - 1)` across it,
//! so every lane is visible whatever lane the agent is in. Cells off the road
//! or outside the region of interest are zero in every plane.
//!
//! Planes (1-based, as in the debug dump):
//!
//! | plane | PT | PTCL | PTDL |
//! |-------|----|------|------|
//! | 1 | mmWave vehicle | same | same |
//! | 2 | non-mmWave vehicle | same | same |
//! | 3 | empty road cell | same | same |
//! | 4 | | `rho * l_hat` | `l_hat == 0` |
//! | 5..=K | | | `l_hat` in `(L_k, L_{k+1}]`, last bucket open |

use std::fmt::Write as _;
use std::str::FromStr;

use crate::connectivity::{self, ConnectivitySnapshot};
use crate::error::{Error, Result};
use crate::world::{VehicleId, WorldState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum StateDesign {
    /// Positions and types.
    Pt,
    /// Plus a continuous achievable-relay-length plane.
    Ptcl,
    /// Plus one-hot achievable-relay-length buckets.
    Ptdl,
}

impl StateDesign {
    pub fn as_str(self) -> &'static str {
        match self {
            StateDesign::Pt => "pt",
            StateDesign::Ptcl => "ptcl",
            StateDesign::Ptdl => "ptdl",
        }
    }
}

impl FromStr for StateDesign {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pt" => Ok(StateDesign::Pt),
            "ptcl" => Ok(StateDesign::Ptcl),
            "ptdl" => Ok(StateDesign::Ptdl),
            other => Err(Error::Parse(format!("unknown state design {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    pub design: StateDesign,
    /// Window half-width along the road, in cells.
    pub half_x: usize,
    /// Normalization for the PTCL plane, 1/m.
    pub rho: f64,
    /// PTDL bucket borders `L_5..L_K`; plane 4 is reserved for `l_hat == 0`.
    pub borders: Vec<f64>,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            design: StateDesign::Ptcl,
            half_x: 20,
            rho: 0.005,
            borders: vec![0.0, 25.0, 50.0, 100.0, 150.0],
        }
    }
}

impl EncoderConfig {
    pub fn with_design(design: StateDesign) -> Self {
        EncoderConfig {
            design,
            ..Default::default()
        }
    }

    pub fn planes(&self) -> usize {
        match self.design {
            StateDesign::Pt => 3,
            StateDesign::Ptcl => 4,
            StateDesign::Ptdl => 4 + self.borders.len(),
        }
    }

    pub fn dims(&self, n_lanes: usize) -> (usize, usize, usize) {
        (self.planes(), 2 * self.half_x + 1, 2 * n_lanes - 1)
    }

    /// PTDL plane index (0-based) for a relay length.
    pub fn bucket(&self, l_hat: f64) -> usize {
        if l_hat <= 0.0 {
            return 3;
        }
        // plane 5 + b where b is the last border strictly below l_hat
        let b = self.borders.iter().rposition(|&border| l_hat > border).unwrap_or(0);
        4 + b
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StateTensor {
    k: usize,
    x: usize,
    y: usize,
    data: Vec<f64>,
}

impl StateTensor {
    pub fn zeros(k: usize, x: usize, y: usize) -> Self {
        StateTensor {
            k,
            x,
            y,
            data: vec![0.0; k * x * y],
        }
    }

    pub fn from_vec(k: usize, x: usize, y: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != k * x * y {
            return Err(Error::Shape {
                expected: format!("{} values for {k}x{x}x{y}", k * x * y),
                found: data.len().to_string(),
            });
        }
        Ok(StateTensor { k, x, y, data })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.k, self.x, self.y)
    }

    /// Values in `(plane, x, y)` order, `y` fastest.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, k: usize, x: usize, y: usize) -> f64 {
        self.data[(k * self.x + x) * self.y + y]
    }

    #[inline]
    fn set(&mut self, k: usize, x: usize, y: usize, v: f64) {
        self.data[(k * self.x + x) * self.y + y] = v;
    }

    /// Plane-major text: a `plane k` line per plane, then one row per `y`
    /// (largest lane offset first) holding the `X` values left to right.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for k in 0..self.k {
            let _ = writeln!(out, "plane {}", k + 1);
            for y in (0..self.y).rev() {
                let row: Vec<String> = (0..self.x).map(|x| format_value(self.get(k, x, y))).collect();
                let _ = writeln!(out, "{}", row.join(" "));
            }
        }
        out
    }
}

fn format_value(v: f64) -> String {
    if v == 0.0 {
        "0".to_string()
    } else if v == 1.0 {
        "1".to_string()
    } else {
        format!("{v}")
    }
}

/// Builds the observation of agent `id`.
pub fn encode(
    world: &WorldState,
    snap: &ConnectivitySnapshot,
    id: VehicleId,
    cfg: &EncoderConfig,
) -> Result<StateTensor> {
    let agent = world.vehicle(id)?;
    if !agent.kind.is_controllable() {
        return Err(Error::contract(format!("{id} is not a controllable vehicle")));
    }
    let road = world.config();
    let (k, nx, ny) = cfg.dims(road.n_lanes);
    let mut t = StateTensor::zeros(k, nx, ny);
    let center_y = road.n_lanes as i64 - 1;
    let own_l = snap.relay_length(id).unwrap_or(0.0);

    for ix in 0..nx {
        let dx = ix as i64 - cfg.half_x as i64;
        for iy in 0..ny {
            let dy = iy as i64 - center_y;
            let Some(pos) = agent.pos.offset(dx, dy, road) else {
                continue;
            };
            let occupant = world.occupant(pos);
            match occupant {
                Some(o) if world.vehicles()[o.index()].kind.is_mmwave() => t.set(0, ix, iy, 1.0),
                Some(_) => t.set(1, ix, iy, 1.0),
                None => t.set(2, ix, iy, 1.0),
            }
            if cfg.design == StateDesign::Pt {
                continue;
            }
            let l_hat = if pos == agent.pos {
                own_l
            } else if occupant.is_some() {
                0.0
            } else {
                connectivity::achievable_unchecked(world, id, pos)
            };
            match cfg.design {
                StateDesign::Ptcl => t.set(3, ix, iy, cfg.rho * l_hat),
                StateDesign::Ptdl => t.set(cfg.bucket(l_hat), ix, iy, 1.0),
                StateDesign::Pt => unreachable!(),
            }
        }
    }
    Ok(t)
}

pub fn encode_pt(world: &WorldState, snap: &ConnectivitySnapshot, id: VehicleId) -> Result<StateTensor> {
    encode(world, snap, id, &EncoderConfig::with_design(StateDesign::Pt))
}

pub fn encode_ptcl(world: &WorldState, snap: &ConnectivitySnapshot, id: VehicleId) -> Result<StateTensor> {
    encode(world, snap, id, &EncoderConfig::with_design(StateDesign::Ptcl))
}

pub fn encode_ptdl(world: &WorldState, snap: &ConnectivitySnapshot, id: VehicleId) -> Result<StateTensor> {
    encode(world, snap, id, &EncoderConfig::with_design(StateDesign::Ptdl))
}
