//! Flat `key = value` experiment configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys are an
//! error. Every key is optional and defaults to the reference simulation
//! settings. [`ExperimentConfig::emit`] writes every key, so parsing its
//! output reproduces the configuration exactly.
//!
//! | key | default | meaning |
//! |-----|---------|---------|
//! | `roi_length_m` | 1000 | road window length |
//! | `n_lanes` | 4 | |
//! | `n_cells_x` | 200 | cells along the road |
//! | `cell_dx_m` | 5 | cell length |
//! | `lane_dy_m` | 3.5 | lane width |
//! | `rsu_interval_m` | 1000 | distance between roadside units |
//! | `r_vv_m` | 50 | V2V range |
//! | `r_vi_m` | 100 | V2I range |
//! | `lambda` | 0.02 | vehicles per meter per lane |
//! | `r_mm` | 0.4 | mmWave penetration ratio |
//! | `r_ctrl` | 0.5 | controllable share of mmWave vehicles |
//! | `mobility` | constant | `constant` or `random` |
//! | `gamma` | 0.1 | discount |
//! | `t_max` | 2 | update interval |
//! | `max_steps` | 100 | steps per episode |
//! | `episodes_learn` | 300 | |
//! | `episodes_test` | 100 | |
//! | `alpha` | 0.5 | reward per meter of relay length |
//! | `penalty` | -2 | reward for a prohibited or lost move |
//! | `beta` | 0.01 | entropy weight |
//! | `c_v` | 0.5 | value-loss weight |
//! | `learning_rate` | 0.0007 | |
//! | `rmsprop_decay` | 0.99 | |
//! | `rmsprop_epsilon` | 0.1 | |
//! | `state` | ptcl | `pt`, `ptcl` or `ptdl` |
//! | `half_x` | 20 | observation half-width in cells |
//! | `rho` | 0.005 | PTCL scale |
//! | `ptdl_borders` | 0,25,50,100,150 | PTDL bucket borders in meters |
//! | `conv1`, `conv2`, `hidden` | 8, 8, 32 | layer widths |
//! | `bootstrap_at_cutoff` | true | bootstrap with `V(s_T)` at the last step |
//! | `greedy_eval` | false | evaluate with the most probable action |
//! | `serial` | false | apply updates in id order on one thread |
//! | `policy` | rl | `rl`, `stay` or `vfa` |
//! | `seed_world`, `seed_model`, `seed_rollout` | 1, 2, 3 | |
//! | `vfa_w_a`, `vfa_w_r` | 1, 10000 | force weights |
//! | `vfa_beta1`, `vfa_beta2` | 2, 2 | force exponents |
//! | `vfa_d_th_m` | 50 | equilibrium distance |
//! | `vfa_force_deadband` | 0.01 | |
//! | `vfa_half_x` | 20 | neighbor window in cells |
//! | `out_dir` | out | output directory |
//! | `model_in` | | model to evaluate |
//! | `model_out` | model.bin | model file name, relative to `out_dir` |

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::a3c::{EnvConfig, LearnerConfig, Seeds};
use crate::baselines::VfaParams;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PolicyKind {
    Rl,
    Stay,
    Vfa,
}

impl PolicyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::Rl => "rl",
            PolicyKind::Stay => "stay",
            PolicyKind::Vfa => "vfa",
        }
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rl" => Ok(PolicyKind::Rl),
            "stay" => Ok(PolicyKind::Stay),
            "vfa" => Ok(PolicyKind::Vfa),
            other => Err(Error::Parse(format!("unknown policy {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub env: EnvConfig,
    pub learner: LearnerConfig,
    pub policy: PolicyKind,
    pub seeds: Seeds,
    pub vfa: VfaParams,
    pub out_dir: PathBuf,
    pub model_in: Option<PathBuf>,
    pub model_out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            env: EnvConfig::default(),
            learner: LearnerConfig::default(),
            policy: PolicyKind::Rl,
            seeds: Seeds::default(),
            vfa: VfaParams::default(),
            out_dir: PathBuf::from("out"),
            model_in: None,
            model_out: PathBuf::from("model.bin"),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Parse(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Parse(format!("{key}: expected true or false, got {value:?}"))),
    }
}

fn parse_list(key: &str, value: &str) -> Result<Vec<f64>> {
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("line {}: expected key = value", n + 1)))?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| Error::Parse(format!("line {}: {e}", n + 1)))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let road = &mut self.env.road;
        let l = &mut self.learner;
        match key {
            "roi_length_m" => road.roi_length_m = parse(key, value)?,
            "n_lanes" => road.n_lanes = parse(key, value)?,
            "n_cells_x" => road.n_cells_x = parse(key, value)?,
            "cell_dx_m" => road.cell_dx_m = parse(key, value)?,
            "lane_dy_m" => road.lane_dy_m = parse(key, value)?,
            "rsu_interval_m" => road.rsu_interval_m = parse(key, value)?,
            "r_vv_m" => road.r_vv_m = parse(key, value)?,
            "r_vi_m" => road.r_vi_m = parse(key, value)?,
            "lambda" => self.env.density = parse(key, value)?,
            "r_mm" => self.env.r_mm = parse(key, value)?,
            "r_ctrl" => self.env.r_ctrl = parse(key, value)?,
            "mobility" => self.env.mobility = value.parse()?,
            "gamma" => l.gamma = parse(key, value)?,
            "t_max" => l.t_max = parse(key, value)?,
            "max_steps" => l.max_steps = parse(key, value)?,
            "episodes_learn" => l.episodes_learn = parse(key, value)?,
            "episodes_test" => l.episodes_test = parse(key, value)?,
            "alpha" => l.reward.alpha = parse(key, value)?,
            "penalty" => l.reward.penalty = parse(key, value)?,
            "beta" => l.beta = parse(key, value)?,
            "c_v" => l.c_v = parse(key, value)?,
            "learning_rate" => l.learning_rate = parse(key, value)?,
            "rmsprop_decay" => l.rmsprop_decay = parse(key, value)?,
            "rmsprop_epsilon" => l.rmsprop_epsilon = parse(key, value)?,
            "state" => l.encoder.design = value.parse()?,
            "half_x" => l.encoder.half_x = parse(key, value)?,
            "rho" => l.encoder.rho = parse(key, value)?,
            "ptdl_borders" => l.encoder.borders = parse_list(key, value)?,
            "conv1" => l.layers.conv1 = parse(key, value)?,
            "conv2" => l.layers.conv2 = parse(key, value)?,
            "hidden" => l.layers.hidden = parse(key, value)?,
            "bootstrap_at_cutoff" => l.bootstrap_at_cutoff = parse_bool(key, value)?,
            "greedy_eval" => l.greedy_eval = parse_bool(key, value)?,
            "serial" => l.serial = parse_bool(key, value)?,
            "policy" => self.policy = value.parse()?,
            "seed_world" => self.seeds.world = parse(key, value)?,
            "seed_model" => self.seeds.model = parse(key, value)?,
            "seed_rollout" => self.seeds.rollout = parse(key, value)?,
            "vfa_w_a" => self.vfa.w_a = parse(key, value)?,
            "vfa_w_r" => self.vfa.w_r = parse(key, value)?,
            "vfa_beta1" => self.vfa.beta1 = parse(key, value)?,
            "vfa_beta2" => self.vfa.beta2 = parse(key, value)?,
            "vfa_d_th_m" => self.vfa.d_th_m = parse(key, value)?,
            "vfa_force_deadband" => self.vfa.force_deadband = parse(key, value)?,
            "vfa_half_x" => self.vfa.half_x = parse(key, value)?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            "model_in" => self.model_in = (!value.is_empty()).then(|| PathBuf::from(value)),
            "model_out" => self.model_out = PathBuf::from(value),
            other => return Err(Error::Parse(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Every key, one per line, in the documented order.
    pub fn emit(&self) -> String {
        let road = &self.env.road;
        let l = &self.learner;
        let borders: Vec<String> = l.encoder.borders.iter().map(f64::to_string).collect();
        let path = |p: &Path| p.to_string_lossy().into_owned();
        let entries: Vec<(&str, String)> = vec![
            ("roi_length_m", road.roi_length_m.to_string()),
            ("n_lanes", road.n_lanes.to_string()),
            ("n_cells_x", road.n_cells_x.to_string()),
            ("cell_dx_m", road.cell_dx_m.to_string()),
            ("lane_dy_m", road.lane_dy_m.to_string()),
            ("rsu_interval_m", road.rsu_interval_m.to_string()),
            ("r_vv_m", road.r_vv_m.to_string()),
            ("r_vi_m", road.r_vi_m.to_string()),
            ("lambda", self.env.density.to_string()),
            ("r_mm", self.env.r_mm.to_string()),
            ("r_ctrl", self.env.r_ctrl.to_string()),
            ("mobility", self.env.mobility.as_str().to_string()),
            ("gamma", l.gamma.to_string()),
            ("t_max", l.t_max.to_string()),
            ("max_steps", l.max_steps.to_string()),
            ("episodes_learn", l.episodes_learn.to_string()),
            ("episodes_test", l.episodes_test.to_string()),
            ("alpha", l.reward.alpha.to_string()),
            ("penalty", l.reward.penalty.to_string()),
            ("beta", l.beta.to_string()),
            ("c_v", l.c_v.to_string()),
            ("learning_rate", l.learning_rate.to_string()),
            ("rmsprop_decay", l.rmsprop_decay.to_string()),
            ("rmsprop_epsilon", l.rmsprop_epsilon.to_string()),
            ("state", l.encoder.design.as_str().to_string()),
            ("half_x", l.encoder.half_x.to_string()),
            ("rho", l.encoder.rho.to_string()),
            ("ptdl_borders", borders.join(",")),
            ("conv1", l.layers.conv1.to_string()),
            ("conv2", l.layers.conv2.to_string()),
            ("hidden", l.layers.hidden.to_string()),
            ("bootstrap_at_cutoff", l.bootstrap_at_cutoff.to_string()),
            ("greedy_eval", l.greedy_eval.to_string()),
            ("serial", l.serial.to_string()),
            ("policy", self.policy.as_str().to_string()),
            ("seed_world", self.seeds.world.to_string()),
            ("seed_model", self.seeds.model.to_string()),
            ("seed_rollout", self.seeds.rollout.to_string()),
            ("vfa_w_a", self.vfa.w_a.to_string()),
            ("vfa_w_r", self.vfa.w_r.to_string()),
            ("vfa_beta1", self.vfa.beta1.to_string()),
            ("vfa_beta2", self.vfa.beta2.to_string()),
            ("vfa_d_th_m", self.vfa.d_th_m.to_string()),
            ("vfa_force_deadband", self.vfa.force_deadband.to_string()),
            ("vfa_half_x", self.vfa.half_x.to_string()),
            ("out_dir", path(&self.out_dir)),
            ("model_in", self.model_in.as_deref().map(path).unwrap_or_default()),
            ("model_out", path(&self.model_out)),
        ];
        let mut out = String::new();
        for (k, v) in entries {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// SHA-256 of the settings that shape a learning run. Paths are left out.
    pub fn hash(&self) -> String {
        let text: String = self
            .emit()
            .lines()
            .filter(|l| !(l.starts_with("out_dir") || l.starts_with("model_in") || l.starts_with("model_out")))
            .map(|l| format!("{l}\n"))
            .collect();
        hex(&Sha256::digest(text.as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.learner.validate()?;
        self.vfa.validate()
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
