//! DQN on a small deterministic gridworld, plus score normalization.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fitting::{lrelu_init, ReferenceActivation};
use crate::matrix::Matrix;
use crate::nn::{all_shared, per_site, NetworkSpec, Optimizer, OptimizerKind, SlotFunction, TrainConfig};

pub const ACTIONS: usize = 4;

/// `(x, y)`, with `y` growing downwards.
pub type Cell = (usize, usize);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridWorld {
    pub width: usize,
    pub height: usize,
    pub walls: Vec<Cell>,
    pub start: Cell,
    pub goal: Cell,
    pub step_reward: f64,
    pub goal_reward: f64,
    pub max_steps: usize,
}

impl Default for GridWorld {
    fn default() -> Self {
        Self {
            width: 5,
            height: 5,
            walls: Vec::new(),
            start: (0, 0),
            goal: (4, 4),
            step_reward: -1.0,
            goal_reward: 10.0,
            max_steps: 50,
        }
    }
}

impl GridWorld {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.max_steps == 0 {
            return Err(Error::Config("grid size and max_steps must be positive".into()));
        }
        let inside = |c: Cell| c.0 < self.width && c.1 < self.height;
        if !inside(self.start) || !inside(self.goal) {
            return Err(Error::Config("start and goal must lie inside the grid".into()));
        }
        if self.start == self.goal {
            return Err(Error::Config("start and goal must differ".into()));
        }
        if self.walls.contains(&self.start) || self.walls.contains(&self.goal) {
            return Err(Error::Config("start and goal cannot be walls".into()));
        }
        if !(self.step_reward.is_finite() && self.goal_reward.is_finite()) {
            return Err(Error::Config("rewards must be finite".into()));
        }
        Ok(())
    }

    pub fn cells(&self) -> usize {
        self.width * self.height
    }

    pub fn is_wall(&self, c: Cell) -> bool {
        self.walls.contains(&c)
    }

    /// One-hot encoding of a cell.
    pub fn encode(&self, c: Cell) -> Vec<f64> {
        let mut v = vec![0.0; self.cells()];
        v[c.1 * self.width + c.0] = 1.0;
        v
    }

    /// Deterministic move: 0 up, 1 down, 2 left, 3 right. Walls and borders block.
    pub fn moved(&self, c: Cell, action: usize) -> Result<Cell> {
        let (x, y) = c;
        let next = match action {
            0 => (x, y.wrapping_sub(1)),
            1 => (x, y + 1),
            2 => (x.wrapping_sub(1), y),
            3 => (x + 1, y),
            _ => return Err(Error::InvalidAction(action)),
        };
        if next.0 >= self.width || next.1 >= self.height || self.is_wall(next) {
            Ok(c)
        } else {
            Ok(next)
        }
    }

    /// Return of the shortest path from start to goal, or `None` if the goal is
    /// unreachable within `max_steps`.
    pub fn optimal_return(&self) -> Option<f64> {
        let mut dist = vec![usize::MAX; self.cells()];
        let idx = |c: Cell| c.1 * self.width + c.0;
        let mut queue = VecDeque::from([self.start]);
        dist[idx(self.start)] = 0;
        while let Some(c) = queue.pop_front() {
            if c == self.goal {
                break;
            }
            for a in 0..ACTIONS {
                let n = self.moved(c, a).expect("valid action");
                if dist[idx(n)] == usize::MAX {
                    dist[idx(n)] = dist[idx(c)] + 1;
                    queue.push_back(n);
                }
            }
        }
        let d = dist[idx(self.goal)];
        (d <= self.max_steps).then(|| d as f64 * self.step_reward + self.goal_reward)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub state: Vec<f64>,
    pub reward: f64,
    /// Episode over (goal reached or step limit).
    pub done: bool,
    /// Goal reached; no bootstrapping from the next state.
    pub terminal: bool,
}

/// A running episode.
#[derive(Clone, Debug)]
pub struct Env {
    world: GridWorld,
    pos: Cell,
    steps: usize,
}

impl Env {
    pub fn new(world: GridWorld) -> Result<Self> {
        world.validate()?;
        let pos = world.start;
        Ok(Self { world, pos, steps: 0 })
    }

    pub fn world(&self) -> &GridWorld {
        &self.world
    }

    pub fn position(&self) -> Cell {
        self.pos
    }

    pub fn reset(&mut self) -> Vec<f64> {
        self.pos = self.world.start;
        self.steps = 0;
        self.world.encode(self.pos)
    }

    pub fn step(&mut self, action: usize) -> Result<StepResult> {
        self.pos = self.world.moved(self.pos, action)?;
        self.steps += 1;
        let terminal = self.pos == self.world.goal;
        let mut reward = self.world.step_reward;
        if terminal {
            reward += self.world.goal_reward;
        }
        Ok(StepResult {
            state: self.world.encode(self.pos),
            reward,
            done: terminal || self.steps >= self.world.max_steps,
            terminal,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub terminal: bool,
}

/// Fixed-capacity ring buffer with uniform sampling.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    initial_fill: usize,
    items: Vec<Transition>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, initial_fill: usize) -> Result<Self> {
        if capacity == 0 || initial_fill > capacity {
            return Err(Error::Config("need 0 < initial_fill ≤ capacity".into()));
        }
        Ok(Self {
            capacity,
            initial_fill,
            items: Vec::with_capacity(capacity),
            next: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn is_ready(&self) -> bool {
        self.items.len() >= self.initial_fill.max(1)
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// `n` transitions drawn with replacement, or `None` before the initial fill.
    pub fn sample<R: Rng>(&self, n: usize, rng: &mut R) -> Option<Vec<&Transition>> {
        if !self.is_ready() {
            return None;
        }
        Some(
            (0..n)
                .map(|_| &self.items[rng.random_range(0..self.items.len())])
                .collect(),
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DqnConfig {
    pub gamma: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_decay_steps: usize,
    pub target_update_freq: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub buffer_capacity: usize,
    pub initial_fill: usize,
    pub train_steps: usize,
    /// Greedy evaluation period, in environment steps.
    pub eval_every: usize,
    pub seed: u64,
}

impl Default for DqnConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            epsilon_start: 1.0,
            epsilon_end: 0.1,
            epsilon_decay_steps: 10_000,
            target_update_freq: 250,
            batch_size: 32,
            learning_rate: 1e-3,
            buffer_capacity: 5000,
            initial_fill: 500,
            train_steps: 30_000,
            eval_every: 1000,
            seed: 0,
        }
    }
}

impl DqnConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config("gamma must lie in [0, 1]".into()));
        }
        if !(self.epsilon_start >= self.epsilon_end && self.epsilon_end >= 0.0 && self.epsilon_start <= 1.0) {
            return Err(Error::Config("need 1 ≥ epsilon_start ≥ epsilon_end ≥ 0".into()));
        }
        if self.target_update_freq == 0 || self.batch_size == 0 || self.eval_every == 0 {
            return Err(Error::Config(
                "target_update_freq, batch_size and eval_every must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.buffer_capacity == 0 || self.initial_fill > self.buffer_capacity {
            return Err(Error::Config("need 0 < initial_fill ≤ buffer_capacity".into()));
        }
        Ok(())
    }
}

/// Linear decay from `epsilon_start` to `epsilon_end` over `epsilon_decay_steps`, then flat.
pub fn epsilon_at(cfg: &DqnConfig, step: usize) -> f64 {
    if cfg.epsilon_decay_steps == 0 || step >= cfg.epsilon_decay_steps {
        return cfg.epsilon_end;
    }
    let t = step as f64 / cfg.epsilon_decay_steps as f64;
    cfg.epsilon_start + t * (cfg.epsilon_end - cfg.epsilon_start)
}

/// Smooth-L1 with threshold 1: value and derivative.
pub fn huber(r: f64) -> (f64, f64) {
    if r.abs() <= 1.0 {
        (0.5 * r * r, r)
    } else {
        (r.abs() - 0.5, r.signum())
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

pub fn greedy_action(net: &NetworkSpec, state: &[f64]) -> Result<usize> {
    let q = net.predict(&Matrix::from_vec(1, state.len(), state.to_vec())?)?;
    Ok(argmax(q.row(0)))
}

/// Return of one greedy episode from the start cell.
pub fn greedy_return(net: &NetworkSpec, world: &GridWorld) -> Result<f64> {
    let mut env = Env::new(world.clone())?;
    let mut state = env.reset();
    let mut total = 0.0;
    loop {
        let step = env.step(greedy_action(net, &state)?)?;
        total += step.reward;
        if step.done {
            return Ok(total);
        }
        state = step.state;
    }
}

/// Mean return of the uniform random policy over `episodes` seeded episodes.
pub fn random_policy_return(world: &GridWorld, episodes: usize, seed: u64) -> Result<f64> {
    if episodes == 0 {
        return Err(Error::Config("episodes must be positive".into()));
    }
    let mut env = Env::new(world.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sum = 0.0;
    for _ in 0..episodes {
        env.reset();
        loop {
            let step = env.step(rng.random_range(0..ACTIONS))?;
            sum += step.reward;
            if step.done {
                break;
            }
        }
    }
    Ok(sum / episodes as f64)
}

/// Activation configuration of a Q-network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActivationKind {
    /// One LReLU-initialized rational per hidden layer.
    Rational,
    /// One LReLU-initialized rational shared by all hidden layers.
    SharedRational,
    Lrelu,
    Silu,
    Dsilu,
}

impl ActivationKind {
    pub const ALL: [ActivationKind; 5] = [
        ActivationKind::Rational,
        ActivationKind::SharedRational,
        ActivationKind::Lrelu,
        ActivationKind::Silu,
        ActivationKind::Dsilu,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ActivationKind::Rational => "rational",
            ActivationKind::SharedRational => "shared-rational",
            ActivationKind::Lrelu => "lrelu",
            ActivationKind::Silu => "silu",
            ActivationKind::Dsilu => "dsilu",
        }
    }

    pub fn slot_function(self) -> Result<SlotFunction> {
        Ok(match self {
            ActivationKind::Rational | ActivationKind::SharedRational => lrelu_init()?.into(),
            ActivationKind::Lrelu => ReferenceActivation::lrelu().into(),
            ActivationKind::Silu => ReferenceActivation::Silu.into(),
            ActivationKind::Dsilu => ReferenceActivation::Dsilu.into(),
        })
    }

    /// Network with the given layer sizes and this activation configuration.
    pub fn build(self, sizes: &[usize], tracked: bool, rng: &mut impl Rng) -> Result<NetworkSpec> {
        let sites = sizes.len().saturating_sub(2);
        let partition = match self {
            ActivationKind::SharedRational => all_shared(sites),
            _ => per_site(sites),
        };
        NetworkSpec::build(sizes, &partition, &self.slot_function()?, tracked, rng)
    }
}

impl fmt::Display for ActivationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ActivationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown activation {s:?}")))
    }
}

/// Q-network for `world`: one-hot input, `hidden` layers, one output per action.
pub fn build_q_network(
    world: &GridWorld,
    hidden: &[usize],
    kind: ActivationKind,
    seed: u64,
) -> Result<NetworkSpec> {
    let mut sizes = vec![world.cells()];
    sizes.extend_from_slice(hidden);
    sizes.push(ACTIONS);
    kind.build(&sizes, false, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub step: usize,
    pub greedy_return: f64,
}

/// DQN learner state. Exploration, replay sampling, and everything else
/// random is drawn from one generator seeded by `cfg.seed`.
pub struct DqnAgent {
    cfg: DqnConfig,
    env: Env,
    state: Vec<f64>,
    online: NetworkSpec,
    target: NetworkSpec,
    buffer: ReplayBuffer,
    optimizer: Optimizer,
    rng: ChaCha8Rng,
    steps: usize,
    last_loss: Option<f64>,
}

impl DqnAgent {
    pub fn new(world: GridWorld, net: NetworkSpec, cfg: DqnConfig) -> Result<Self> {
        cfg.validate()?;
        let mut env = Env::new(world)?;
        if net.input_size() != env.world().cells() || net.output_size() != ACTIONS {
            return Err(Error::Shape(format!(
                "Q-network must map {} inputs to {ACTIONS} outputs",
                env.world().cells()
            )));
        }
        let optimizer = Optimizer::new(&TrainConfig {
            optimizer: OptimizerKind::Adam,
            learning_rate: cfg.learning_rate,
            ..TrainConfig::default()
        })?;
        let state = env.reset();
        Ok(Self {
            buffer: ReplayBuffer::new(cfg.buffer_capacity, cfg.initial_fill)?,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            target: net.clone(),
            online: net,
            cfg,
            env,
            state,
            optimizer,
            steps: 0,
            last_loss: None,
        })
    }

    pub fn online(&self) -> &NetworkSpec {
        &self.online
    }

    pub fn target(&self) -> &NetworkSpec {
        &self.target
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Loss of the most recent gradient update.
    pub fn last_loss(&self) -> Option<f64> {
        self.last_loss
    }

    pub fn into_online(self) -> NetworkSpec {
        self.online
    }

    /// One environment step, one gradient update once the buffer is ready,
    /// and a target sync every `target_update_freq` steps.
    pub fn step(&mut self) -> Result<()> {
        let eps = epsilon_at(&self.cfg, self.steps);
        let action = if self.rng.random_bool(eps) {
            self.rng.random_range(0..ACTIONS)
        } else {
            greedy_action(&self.online, &self.state)?
        };
        let out = self.env.step(action)?;
        let next_state = if out.done { self.env.reset() } else { out.state.clone() };
        self.buffer.push(Transition {
            state: std::mem::replace(&mut self.state, next_state),
            action,
            reward: out.reward,
            next_state: out.state,
            terminal: out.terminal,
        });

        if self.buffer.is_ready() {
            self.update()?;
        }
        self.steps += 1;
        if self.steps % self.cfg.target_update_freq == 0 {
            self.target = self.online.clone();
        }
        Ok(())
    }

    fn update(&mut self) -> Result<()> {
        let batch = self
            .buffer
            .sample(self.cfg.batch_size, &mut self.rng)
            .expect("buffer is ready");
        let n = batch.len();
        let width = self.online.input_size();
        let mut states = Vec::with_capacity(n * width);
        let mut nexts = Vec::with_capacity(n * width);
        for t in &batch {
            states.extend_from_slice(&t.state);
            nexts.extend_from_slice(&t.next_state);
        }
        let states = Matrix::from_vec(n, width, states)?;
        let nexts = Matrix::from_vec(n, width, nexts)?;

        let q_next = self.target.predict(&nexts)?;
        let (q, cache) = self.online.forward(&states)?;
        let mut grad = Matrix::zeros(n, ACTIONS);
        let mut loss = 0.0;
        for (r, t) in batch.iter().enumerate() {
            let bootstrap = if t.terminal {
                0.0
            } else {
                q_next.row(r).iter().copied().fold(f64::NEG_INFINITY, f64::max)
            };
            let y = t.reward + self.cfg.gamma * bootstrap;
            let (l, dl) = huber(q.get(r, t.action) - y);
            loss += l;
            grad.set(r, t.action, dl / n as f64);
        }
        let loss = loss / n as f64;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss(format!(
                "TD loss {loss} at step {}",
                self.steps
            )));
        }
        self.last_loss = Some(loss);
        let grads = self.online.backward(&cache, &grad)?;
        self.online.step(&grads, &mut self.optimizer)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DqnOutcome {
    pub curve: Vec<EvalPoint>,
    pub final_return: f64,
}

/// Runs `cfg.train_steps` agent steps; the curve holds a greedy evaluation
/// every `cfg.eval_every` steps (and one at the end).
pub fn dqn_train(world: &GridWorld, net: NetworkSpec, cfg: &DqnConfig) -> Result<(NetworkSpec, DqnOutcome)> {
    let mut agent = DqnAgent::new(world.clone(), net, cfg.clone())?;
    let mut curve = Vec::new();
    while agent.steps() < cfg.train_steps {
        agent.step()?;
        if agent.steps() % cfg.eval_every == 0 || agent.steps() == cfg.train_steps {
            let greedy = greedy_return(agent.online(), world)?;
            log::debug!("step {}: greedy return {greedy}", agent.steps());
            curve.push(EvalPoint {
                step: agent.steps(),
                greedy_return: greedy,
            });
        }
    }
    let net = agent.into_online();
    let final_return = greedy_return(&net, world)?;
    Ok((net, DqnOutcome { curve, final_return }))
}

/// `100·(agent − random)/(baseline − random)`; when all three scores are
/// negative the reciprocal ratio `100·(baseline − random)/(agent − random)` is used.
pub fn normalize_score(agent: f64, random: f64, baseline: f64) -> Result<f64> {
    let all_negative = agent < 0.0 && random < 0.0 && baseline < 0.0;
    let (num, den) = if all_negative {
        (baseline - random, agent - random)
    } else {
        (agent - random, baseline - random)
    };
    if den == 0.0 || !den.is_finite() || !num.is_finite() {
        return Err(Error::UndefinedNormalization(format!(
            "agent={agent}, random={random}, baseline={baseline}"
        )));
    }
    Ok(100.0 * num / den)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub score_agent: f64,
    pub score_random: f64,
    pub score_baseline: f64,
    pub normalized: f64,
}

impl ScoreReport {
    pub fn new(agent: f64, random: f64, baseline: f64) -> Result<Self> {
        Ok(Self {
            score_agent: agent,
            score_random: random,
            score_baseline: baseline,
            normalized: normalize_score(agent, random, baseline)?,
        })
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["agent", "random", "baseline", "normalized"])?;
        w.write_record([
            self.score_agent.to_string(),
            self.score_random.to_string(),
            self.score_baseline.to_string(),
            self.normalized.to_string(),
        ])?;
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}
