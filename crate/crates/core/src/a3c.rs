//! Asynchronous advantage actor-critic over a shared road.
//!
//! Every controllable vehicle is a worker. All workers share one
//! [`ParameterServer`] holding the global model and the RMSProp statistics.
//! An episode is split into windows of `t_max` steps aligned to the episode
//! start. At each window boundary the workers download the global model, act
//! for the window with that private copy, then each worker turns its window
//! into a gradient and uploads it. Uploads are applied one at a time.
//!
//! With `serial = true` workers upload in vehicle-id order from the calling
//! thread, which makes a run a pure function of the configuration and seeds.
//! Otherwise gradients are computed on scoped threads and applied in
//! completion order.

use std::collections::BTreeMap;
use std::sync::Mutex;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::baselines::{self, VfaParams};
use crate::connectivity::{self, ConnectivitySnapshot};
use crate::encoder::{self, EncoderConfig, StateTensor};
use crate::error::{Error, Result};
use crate::metrics::{EpisodeMetrics, EpisodeRecorder};
use crate::policy::{Gradients, ModelParams, NetShape, Trace, N_ACTIONS};
use crate::world::{
    self, Action, Intents, MobilityMode, RewardParams, RoadConfig, VehicleId, WorldState,
};

/// Environment for an experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvConfig {
    pub road: RoadConfig,
    /// Vehicles per meter per lane.
    pub density: f64,
    pub r_mm: f64,
    pub r_ctrl: f64,
    pub mobility: MobilityMode,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            road: RoadConfig::default(),
            density: 0.02,
            r_mm: 0.4,
            r_ctrl: 0.5,
            mobility: MobilityMode::ConstantVelocity,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        self.road.validate()?;
        if !(self.density >= 0.0 && self.density * self.road.cell_dx_m <= 1.0) {
            return Err(Error::config(format!(
                "density {} does not fit {} m cells",
                self.density, self.road.cell_dx_m
            )));
        }
        for (name, r) in [("r_mm", self.r_mm), ("r_ctrl", self.r_ctrl)] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::config(format!("{name} must lie in [0, 1], got {r}")));
            }
        }
        Ok(())
    }
}

/// Hidden layer sizes of the network; input dims come from the encoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NetLayers {
    pub conv1: usize,
    pub conv2: usize,
    pub hidden: usize,
}

impl Default for NetLayers {
    fn default() -> Self {
        let s = NetShape::new(1, 1, 1);
        NetLayers {
            conv1: s.conv1,
            conv2: s.conv2,
            hidden: s.hidden,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LearnerConfig {
    pub gamma: f64,
    /// Update interval in steps.
    pub t_max: usize,
    /// Steps per episode.
    pub max_steps: usize,
    pub episodes_learn: usize,
    pub episodes_test: usize,
    pub reward: RewardParams,
    /// Entropy weight.
    pub beta: f64,
    /// Value-loss coefficient.
    pub c_v: f64,
    pub learning_rate: f64,
    pub rmsprop_decay: f64,
    pub rmsprop_epsilon: f64,
    pub encoder: EncoderConfig,
    pub layers: NetLayers,
    /// Bootstrap with `V(s_T)` at the episode cutoff instead of 0.
    pub bootstrap_at_cutoff: bool,
    /// Evaluate with the most probable action instead of sampling.
    pub greedy_eval: bool,
    /// Apply gradients in id order on the calling thread.
    pub serial: bool,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig {
            gamma: 0.1,
            t_max: 2,
            max_steps: 100,
            episodes_learn: 300,
            episodes_test: 100,
            reward: RewardParams::default(),
            beta: 0.01,
            c_v: 0.5,
            learning_rate: 7e-4,
            rmsprop_decay: 0.99,
            rmsprop_epsilon: 0.1,
            encoder: EncoderConfig::default(),
            layers: NetLayers::default(),
            bootstrap_at_cutoff: true,
            greedy_eval: false,
            serial: false,
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::config(format!("gamma must lie in [0, 1), got {}", self.gamma)));
        }
        if self.t_max == 0 {
            return Err(Error::config("t_max must be at least 1"));
        }
        if self.max_steps < self.t_max {
            return Err(Error::config(format!(
                "max_steps {} is shorter than t_max {}",
                self.max_steps, self.t_max
            )));
        }
        if !(self.reward.alpha > 0.0) || !(self.reward.penalty < 0.0) {
            return Err(Error::config("alpha must be positive and the penalty negative"));
        }
        if !(0.0..1.0).contains(&self.rmsprop_decay) || !(self.rmsprop_epsilon > 0.0) {
            return Err(Error::config("rmsprop decay must lie in [0, 1) and epsilon be positive"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::config("learning rate must be positive"));
        }
        Ok(())
    }

    pub fn net_shape(&self, road: &RoadConfig) -> NetShape {
        let (k, x, y) = self.encoder.dims(road.n_lanes);
        NetShape {
            planes: k,
            width: x,
            height: y,
            conv1: self.layers.conv1,
            conv2: self.layers.conv2,
            hidden: self.layers.hidden,
        }
    }
}

/// The three independent random streams of an experiment.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Seeds {
    /// Vehicle placement and non-controllable mobility.
    pub world: u64,
    /// Parameter initialization.
    pub model: u64,
    /// Action sampling.
    pub rollout: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds {
            world: 1,
            model: 2,
            rollout: 3,
        }
    }
}

/// `(R_τ, A_τ)` by the backward recursion `R ← r + γR` seeded with `bootstrap`.
pub fn advantage(rewards: &[f64], values: &[f64], bootstrap: f64, gamma: f64) -> Result<Vec<(f64, f64)>> {
    if rewards.len() != values.len() {
        return Err(Error::contract(format!(
            "{} rewards but {} values",
            rewards.len(),
            values.len()
        )));
    }
    if rewards.is_empty() {
        return Err(Error::contract("advantage needs at least one step"));
    }
    let mut out = vec![(0.0, 0.0); rewards.len()];
    let mut ret = bootstrap;
    for t in (0..rewards.len()).rev() {
        ret = rewards[t] + gamma * ret;
        out[t] = (ret, ret - values[t]);
    }
    Ok(out)
}

/// Global model plus shared RMSProp statistics.
#[derive(Clone, Debug)]
pub struct ParameterServer {
    params: ModelParams,
    mean_square: Vec<f64>,
    updates: u64,
}

impl ParameterServer {
    pub fn new(params: ModelParams) -> Self {
        let n = params.as_slice().len();
        ParameterServer {
            params,
            mean_square: vec![0.0; n],
            updates: 0,
        }
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn into_params(self) -> ModelParams {
        self.params
    }

    pub fn mean_square(&self) -> &[f64] {
        &self.mean_square
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// Shared-statistics RMSProp step: `m ← ρm + (1−ρ)g²`, `θ ← θ − lr·g/√(m+ε)`.
    pub fn apply(&mut self, g: &Gradients, cfg: &LearnerConfig) -> Result<()> {
        let params = self.params.as_mut_slice();
        if g.data.len() != params.len() {
            return Err(Error::Shape {
                expected: format!("{} gradient values", params.len()),
                found: g.data.len().to_string(),
            });
        }
        let decay = cfg.rmsprop_decay;
        let lr = cfg.learning_rate;
        let eps = cfg.rmsprop_epsilon;
        for ((p, m), &gi) in params.iter_mut().zip(self.mean_square.iter_mut()).zip(&g.data) {
            *m = decay * *m + (1.0 - decay) * gi * gi;
            // Accumulators of idle parameters decay geometrically; subnormals
            // are very slow to compute with and vanish next to eps anyway.
            if *m < f64::MIN_POSITIVE {
                *m = 0.0;
            }
            *p -= lr * gi / (*m + eps).sqrt();
        }
        self.updates += 1;
        Ok(())
    }
}

pub fn apply_gradients(server: &mut ParameterServer, g: &Gradients, cfg: &LearnerConfig) -> Result<()> {
    server.apply(g, cfg)
}

/// One worker's experience over a window, produced with a fixed local model.
#[derive(Debug)]
pub struct WorkerWindow {
    pub traces: Vec<Trace>,
    pub actions: Vec<Action>,
    pub rewards: Vec<f64>,
}

impl WorkerWindow {
    fn new() -> Self {
        WorkerWindow {
            traces: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// Turns one window into a gradient with the same local model that acted.
pub fn worker_gradients(
    local: &ModelParams,
    window: &WorkerWindow,
    bootstrap: f64,
    cfg: &LearnerConfig,
    out: &mut Gradients,
) -> Result<()> {
    let values: Vec<f64> = window.traces.iter().map(Trace::value).collect();
    let adv = advantage(&window.rewards, &values, bootstrap, cfg.gamma)?;
    out.clear();
    for ((trace, action), (_, a)) in window.traces.iter().zip(&window.actions).zip(adv) {
        local.accumulate(trace, *action, a, cfg.beta, cfg.c_v, out);
    }
    Ok(())
}

pub fn sample_action<R: Rng + ?Sized>(probs: &[f64; N_ACTIONS], rng: &mut R) -> Action {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return Action::ALL[i];
        }
    }
    // rounding left the cumulative sum a hair below 1
    Action::ALL[N_ACTIONS - 1]
}

pub fn greedy_action(probs: &[f64; N_ACTIONS]) -> Action {
    let mut best = 0;
    for i in 1..N_ACTIONS {
        if probs[i] > probs[best] {
            best = i;
        }
    }
    Action::ALL[best]
}

/// Per-episode random streams. Placement and mobility draws depend only on
/// the world seed and the episode index, so different policies and
/// mobility modes see the same initial layouts.
struct EpisodeStreams {
    placement: ChaCha8Rng,
    mobility: ChaCha8Rng,
}

impl EpisodeStreams {
    fn next(world_rng: &mut ChaCha8Rng) -> Self {
        let seed = world_rng.next_u64();
        let placement = ChaCha8Rng::seed_from_u64(seed);
        let mut mobility = ChaCha8Rng::seed_from_u64(seed);
        mobility.set_stream(1);
        EpisodeStreams { placement, mobility }
    }
}

fn spawn(env: &EnvConfig, streams: &mut EpisodeStreams) -> Result<WorldState> {
    world::spawn_world_with(
        &env.road,
        env.density,
        env.r_mm,
        env.r_ctrl,
        env.mobility,
        &mut streams.placement,
    )
}

fn encode_all(
    world: &WorldState,
    snap: &ConnectivitySnapshot,
    agents: &[VehicleId],
    enc: &EncoderConfig,
) -> Result<Vec<StateTensor>> {
    agents.iter().map(|&id| encoder::encode(world, snap, id, enc)).collect()
}

fn check_model(model: &ModelParams, env: &EnvConfig, cfg: &LearnerConfig) -> Result<()> {
    let want = cfg.net_shape(&env.road);
    let have = model.shape();
    if (have.planes, have.width, have.height) != (want.planes, want.width, want.height) {
        return Err(Error::Shape {
            expected: format!(
                "{}x{}x{} input ({})",
                want.planes,
                want.width,
                want.height,
                cfg.encoder.design.as_str()
            ),
            found: format!("{}x{}x{} input", have.planes, have.width, have.height),
        });
    }
    Ok(())
}

/// Result of a learning run.
#[derive(Debug)]
pub struct LearningRun {
    pub model: ModelParams,
    pub metrics: EpisodeMetrics,
    /// Gradient applications performed.
    pub updates: u64,
}

pub fn run_learning(env: &EnvConfig, cfg: &LearnerConfig, seeds: Seeds) -> Result<LearningRun> {
    let mut learner = Learner::new(env, cfg, seeds)?;
    while learner.episodes_done() < cfg.episodes_learn {
        learner.run_episode()?;
    }
    Ok(learner.finish())
}

/// Position of a ChaCha8 stream, enough to rebuild it exactly.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn of(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

/// Everything needed to continue a learning run after `episode` episodes.
/// Learning-curve metrics of earlier episodes are not part of it.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub episode: usize,
    pub params: ModelParams,
    pub mean_square: Vec<f64>,
    pub updates: u64,
    pub world_rng: RngState,
    pub rollout_rng: RngState,
}

/// A learning run that advances one episode at a time.
pub struct Learner<'a> {
    env: &'a EnvConfig,
    cfg: &'a LearnerConfig,
    server: Mutex<ParameterServer>,
    world_rng: ChaCha8Rng,
    rollout_rng: ChaCha8Rng,
    episode: usize,
    metrics: EpisodeMetrics,
}

impl<'a> Learner<'a> {
    pub fn new(env: &'a EnvConfig, cfg: &'a LearnerConfig, seeds: Seeds) -> Result<Self> {
        env.validate()?;
        cfg.validate()?;
        let init = ModelParams::init(cfg.net_shape(&env.road), seeds.model)?;
        Ok(Learner {
            env,
            cfg,
            server: Mutex::new(ParameterServer::new(init)),
            world_rng: ChaCha8Rng::seed_from_u64(seeds.world),
            rollout_rng: ChaCha8Rng::seed_from_u64(seeds.rollout),
            episode: 0,
            metrics: EpisodeMetrics::default(),
        })
    }

    pub fn resume(env: &'a EnvConfig, cfg: &'a LearnerConfig, ck: Checkpoint) -> Result<Self> {
        env.validate()?;
        cfg.validate()?;
        check_model(&ck.params, env, cfg)?;
        if ck.mean_square.len() != ck.params.as_slice().len() {
            return Err(Error::Shape {
                expected: format!("{} RMSProp statistics", ck.params.as_slice().len()),
                found: ck.mean_square.len().to_string(),
            });
        }
        Ok(Learner {
            env,
            cfg,
            server: Mutex::new(ParameterServer {
                params: ck.params,
                mean_square: ck.mean_square,
                updates: ck.updates,
            }),
            world_rng: ck.world_rng.restore(),
            rollout_rng: ck.rollout_rng.restore(),
            episode: ck.episode,
            metrics: EpisodeMetrics::default(),
        })
    }

    pub fn episodes_done(&self) -> usize {
        self.episode
    }

    pub fn metrics(&self) -> &EpisodeMetrics {
        &self.metrics
    }

    pub fn params(&self) -> ModelParams {
        self.server.lock().expect("parameter server lock poisoned").params().clone()
    }

    pub fn run_episode(&mut self) -> Result<()> {
        let mut streams = EpisodeStreams::next(&mut self.world_rng);
        let world = spawn(self.env, &mut streams)?;
        learn_episode(
            self.episode + 1,
            world,
            &mut streams.mobility,
            &mut self.rollout_rng,
            &self.server,
            self.cfg,
            &mut self.metrics,
        )?;
        self.episode += 1;
        Ok(())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let server = self.server.lock().expect("parameter server lock poisoned");
        Checkpoint {
            episode: self.episode,
            params: server.params.clone(),
            mean_square: server.mean_square.clone(),
            updates: server.updates,
            world_rng: RngState::of(&self.world_rng),
            rollout_rng: RngState::of(&self.rollout_rng),
        }
    }

    pub fn finish(self) -> LearningRun {
        let server = self.server.into_inner().expect("parameter server lock poisoned");
        LearningRun {
            updates: server.updates(),
            model: server.into_params(),
            metrics: self.metrics,
        }
    }
}

fn learn_episode(
    episode: usize,
    mut world: WorldState,
    mobility_rng: &mut ChaCha8Rng,
    rollout_rng: &mut ChaCha8Rng,
    server: &Mutex<ParameterServer>,
    cfg: &LearnerConfig,
    metrics: &mut EpisodeMetrics,
) -> Result<()> {
    let agents = world.agent_ids();
    let mut snap = connectivity::snapshot(&world);
    let mut recorder = EpisodeRecorder::new(episode, agents.len(), world.n_mmwave(), snap.mean_coverage());
    let mut states = encode_all(&world, &snap, &agents, &cfg.encoder)?;
    let mut t = 0;

    while t < cfg.max_steps {
        let local = server.lock().expect("parameter server lock poisoned").params().clone();
        let mut windows: Vec<WorkerWindow> = agents.iter().map(|_| WorkerWindow::new()).collect();
        let len = cfg.t_max.min(cfg.max_steps - t);

        for _ in 0..len {
            let intents = world.draw_intents(mobility_rng);
            let mut actions = BTreeMap::new();
            for ((&id, s), win) in agents.iter().zip(&states).zip(windows.iter_mut()) {
                let trace = local.forward_trace(s)?;
                let a = sample_action(&trace.probs(), rollout_rng);
                actions.insert(id, a);
                win.traces.push(trace);
                win.actions.push(a);
            }
            let out = world.resolve(&intents, &actions, cfg.reward)?;
            let rewards: Vec<f64> = out.agents.iter().map(|o| o.reward).collect();
            let penalties = out.agents.iter().filter(|o| o.penalized).count();
            for (win, r) in windows.iter_mut().zip(&rewards) {
                win.rewards.push(*r);
            }
            world = out.world;
            snap = out.snapshot;
            metrics.steps.push(recorder.record(snap.mean_coverage(), rewards, penalties));
            states = encode_all(&world, &snap, &agents, &cfg.encoder)?;
            t += 1;
        }

        let cutoff = t >= cfg.max_steps && !cfg.bootstrap_at_cutoff;
        let bootstraps: Vec<f64> = if cutoff {
            vec![0.0; agents.len()]
        } else {
            states.iter().map(|s| local.value(s)).collect::<Result<_>>()?
        };

        if cfg.serial || agents.len() <= 1 {
            let mut g = Gradients::zeros(local.shape());
            for (win, &b) in windows.iter().zip(&bootstraps) {
                worker_gradients(&local, win, b, cfg, &mut g)?;
                server.lock().expect("parameter server lock poisoned").apply(&g, cfg)?;
            }
        } else {
            std::thread::scope(|scope| -> Result<()> {
                let handles: Vec<_> = windows
                    .iter()
                    .zip(&bootstraps)
                    .map(|(win, &b)| {
                        let local = &local;
                        scope.spawn(move || -> Result<()> {
                            let mut g = Gradients::zeros(local.shape());
                            worker_gradients(local, win, b, cfg, &mut g)?;
                            server.lock().expect("parameter server lock poisoned").apply(&g, cfg)
                        })
                    })
                    .collect();
                for h in handles {
                    h.join().expect("worker thread panicked")?;
                }
                Ok(())
            })?;
        }
    }

    metrics.episodes.push(recorder.finish());
    Ok(())
}

/// How controllable vehicles choose actions during evaluation.
#[derive(Clone, Debug)]
pub enum Policy<'a> {
    Rl(&'a ModelParams),
    Stay,
    Vfa(VfaParams),
}

/// Runs `episodes_test` episodes without touching any parameters.
pub fn run_eval(policy: &Policy<'_>, env: &EnvConfig, cfg: &LearnerConfig, seeds: Seeds) -> Result<EpisodeMetrics> {
    env.validate()?;
    cfg.validate()?;
    match policy {
        Policy::Rl(model) => check_model(model, env, cfg)?,
        Policy::Vfa(p) => p.validate()?,
        Policy::Stay => {}
    }
    let mut world_rng = ChaCha8Rng::seed_from_u64(seeds.world);
    let mut rollout_rng = ChaCha8Rng::seed_from_u64(seeds.rollout);
    let mut metrics = EpisodeMetrics::default();

    for ep in 1..=cfg.episodes_test {
        let mut streams = EpisodeStreams::next(&mut world_rng);
        let mut world = spawn(env, &mut streams)?;
        let agents = world.agent_ids();
        let mut snap = connectivity::snapshot(&world);
        let mut recorder = EpisodeRecorder::new(ep, agents.len(), world.n_mmwave(), snap.mean_coverage());
        for _ in 0..cfg.max_steps {
            let intents = world.draw_intents(&mut streams.mobility);
            let mut actions = BTreeMap::new();
            for &id in &agents {
                let a = choose(policy, &world, &snap, &intents, id, cfg, &mut rollout_rng)?;
                actions.insert(id, a);
            }
            let out = world.resolve(&intents, &actions, cfg.reward)?;
            let rewards: Vec<f64> = out.agents.iter().map(|o| o.reward).collect();
            let penalties = out.agents.iter().filter(|o| o.penalized).count();
            world = out.world;
            snap = out.snapshot;
            metrics.steps.push(recorder.record(snap.mean_coverage(), rewards, penalties));
        }
        metrics.episodes.push(recorder.finish());
    }
    Ok(metrics)
}

fn choose(
    policy: &Policy<'_>,
    world: &WorldState,
    snap: &ConnectivitySnapshot,
    intents: &Intents,
    id: VehicleId,
    cfg: &LearnerConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Action> {
    match policy {
        Policy::Stay => baselines::stay_policy(world, id),
        Policy::Vfa(p) => baselines::vfa_action(world, id, intents, p),
        Policy::Rl(model) => {
            let s = encoder::encode(world, snap, id, &cfg.encoder)?;
            let (probs, _) = model.forward(&s)?;
            Ok(if cfg.greedy_eval {
                greedy_action(&probs)
            } else {
                sample_action(&probs, rng)
            })
        }
    }
}
