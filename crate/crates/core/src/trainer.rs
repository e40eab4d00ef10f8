//! Episode loop, experiment driver and block metrics.
//!
//! Every random choice in an experiment (network initialization, person
//! phase at reset, exploration, replay sampling, mixture initialization)
//! flows from a single seeded ChaCha stream, so a config plus seed fully
//! determines the per-episode log.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::KvDoc;
use crate::error::{Error, Result};
use crate::explore::{
    convergence_action, epsilon_greedy_action, DomainNetwork, EpsilonMode, EpsilonSchedule, ExploreConfig, Guidance,
    StrategyKind,
};
use crate::memory::{importance_weights, ReplayMemory, Transition, DEFAULT_CAPACITY};
use crate::nn::{OptimAlgo, OptimizerConfig, Tensor};
use crate::perception::{augment_depth, observation_tensor, reward, PenaltyMode, RewardParams};
use crate::qpolicy::{PolicyPair, QConfig};
use crate::worldsim::{self, person_bbox, render_depth, ActionId, BBox, WorldConfig, WorldState};

pub const EPISODE_CSV_HEADER: &str = "episode,steps,total_reward,collided,epsilon,strategy,seed";
pub const BLOCK_CSV_HEADER: &str = "block_index,mean_reward,mean_steps,collision_rate,episodes";

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Preset the world was loaded from, if any.
    pub world_preset: Option<String>,
    pub world: WorldConfig,
    pub reward: RewardParams,
    pub q: QConfig,
    pub explore: ExploreConfig,
    pub episodes: usize,
    pub max_steps: usize,
    pub warmup: usize,
    pub batch_size: usize,
    pub replay_capacity: usize,
    /// Importance-sampling exponent for prioritized training batches (0 = off).
    pub replay_beta: f64,
    /// Side of the pooled square depth image fed to the networks.
    pub input_side: usize,
    pub block_size: usize,
    /// Save a checkpoint every this many episodes (0 = only at the end).
    pub checkpoint_every: usize,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            world_preset: None,
            world: WorldConfig::empty(),
            reward: RewardParams::default(),
            q: QConfig::default(),
            explore: ExploreConfig::default(),
            episodes: 300,
            max_steps: 500,
            warmup: 500,
            batch_size: 32,
            replay_capacity: DEFAULT_CAPACITY,
            replay_beta: 0.0,
            input_side: 16,
            block_size: 100,
            checkpoint_every: 100,
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    /// Defaults on top of a shipped world preset.
    pub fn preset(name: &str) -> Result<Self> {
        let mut doc = KvDoc::default();
        doc.set("world", name);
        Self::from_doc(doc)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_doc(KvDoc::parse(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_doc(KvDoc::load(path)?)
    }

    /// Builds the config from a document, rejecting unknown keys. A `world`
    /// key names a preset whose keys fill in anything the document omits.
    pub fn from_doc(mut doc: KvDoc) -> Result<Self> {
        let world_preset = match doc.take("world") {
            Some(e) => {
                let src = worldsim::preset_source(&e.value).ok_or_else(|| {
                    e.error(format!("unknown preset (known: {})", worldsim::preset_names().collect::<Vec<_>>().join(", ")))
                })?;
                doc.inherit(KvDoc::parse(src)?);
                Some(e.value)
            }
            None => None,
        };
        let d = Self::default();
        let world = WorldConfig::from_kv(&mut doc)?;
        let reward = RewardParams::from_kv(&mut doc, world.control_dt)?;
        let q = QConfig::from_kv(&mut doc)?;
        let explore = ExploreConfig::from_kv(&mut doc)?;
        let mut take = |key: &str, default: usize| -> Result<usize> {
            doc.take(key).map(|e| e.parse::<usize>()).unwrap_or(Ok(default))
        };
        let episodes = take("episodes", d.episodes)?;
        let max_steps = take("max_steps", d.max_steps)?;
        let warmup = take("warmup", d.warmup)?;
        let batch_size = take("batch_size", d.batch_size)?;
        let replay_capacity = take("replay.capacity", d.replay_capacity)?;
        let input_side = take("input_side", d.input_side)?;
        let block_size = take("block_size", d.block_size)?;
        let checkpoint_every = take("checkpoint_every", d.checkpoint_every)?;
        let replay_beta = doc.take("replay.beta").map(|e| e.parse_f64()).unwrap_or(Ok(d.replay_beta))?;
        let seed = doc.take("seed").map(|e| e.parse::<u64>()).unwrap_or(Ok(d.seed))?;
        doc.finish()?;
        let cfg = Self {
            world_preset,
            world,
            reward,
            q,
            explore,
            episodes,
            max_steps,
            warmup,
            batch_size,
            replay_capacity,
            replay_beta,
            input_side,
            block_size,
            checkpoint_every,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 {
            return Err(Error::config("episodes must be at least 1"));
        }
        if self.max_steps == 0 {
            return Err(Error::config("max_steps must be at least 1"));
        }
        if self.batch_size == 0 || self.block_size == 0 {
            return Err(Error::config("batch_size and block_size must be positive"));
        }
        if self.replay_capacity < self.batch_size {
            return Err(Error::config("replay.capacity must hold at least one batch"));
        }
        let cam = &self.world.camera;
        if self.input_side == 0 || cam.width % self.input_side != 0 || cam.height % self.input_side != 0 {
            return Err(Error::config(format!(
                "input_side {} must divide the camera size {}x{}",
                self.input_side, cam.width, cam.height
            )));
        }
        if self.input_side % crate::gmm::EMBED_GRID != 0 {
            return Err(Error::config(format!("input_side must be a multiple of {}", crate::gmm::EMBED_GRID)));
        }
        self.world.validate()?;
        self.reward.validate()?;
        self.q.validate()?;
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.input_side * self.input_side
    }

    pub fn schedule(&self) -> Result<EpsilonSchedule> {
        self.explore.schedule(self.episodes)
    }

    /// The effective configuration as a document that parses back to `self`.
    pub fn to_config_text(&self) -> String {
        let mut s = String::new();
        let w = &self.world;
        let v3 = |v: worldsim::Vec3| format!("{} {} {}", v.x, v.y, v.z);
        let bx = |b: &worldsim::Aabb| format!("{} {}", v3(b.min), v3(b.max));
        let list = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
        let opt = |s: &mut String, prefix: &str, o: &OptimizerConfig| {
            let algo = match o.algo {
                OptimAlgo::Sgd => "sgd",
                OptimAlgo::Adam => "adam",
            };
            let _ = writeln!(s, "{prefix}.algo = {algo}");
            let _ = writeln!(s, "{prefix}.lr = {}", o.lr);
            let _ = writeln!(s, "{prefix}.beta1 = {}", o.beta1);
            let _ = writeln!(s, "{prefix}.beta2 = {}", o.beta2);
            let _ = writeln!(s, "{prefix}.eps = {}", o.eps);
        };
        let _ = writeln!(s, "# experiment");
        let _ = writeln!(s, "strategy = {}", self.explore.strategy);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "episodes = {}", self.episodes);
        let _ = writeln!(s, "max_steps = {}", self.max_steps);
        let _ = writeln!(s, "warmup = {}", self.warmup);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "block_size = {}", self.block_size);
        let _ = writeln!(s, "checkpoint_every = {}", self.checkpoint_every);
        let _ = writeln!(s, "input_side = {}", self.input_side);
        let _ = writeln!(s, "replay.capacity = {}", self.replay_capacity);
        let _ = writeln!(s, "replay.alpha = {}", self.explore.guidance.alpha);
        let _ = writeln!(s, "replay.beta = {}", self.replay_beta);
        let _ = writeln!(s, "\n# world");
        let _ = writeln!(s, "world.name = {}", w.name);
        let _ = writeln!(s, "world.bounds = {}", bx(&w.bounds));
        let _ = writeln!(s, "world.uav_radius = {}", w.uav_radius);
        let _ = writeln!(s, "world.dt = {}", w.control_dt);
        let _ = writeln!(s, "camera.width = {}", w.camera.width);
        let _ = writeln!(s, "camera.height = {}", w.camera.height);
        let _ = writeln!(s, "camera.fov = {}", w.camera.fov);
        let _ = writeln!(s, "camera.max_range = {}", w.camera.max_range);
        let _ = writeln!(s, "spawn.position = {}", v3(w.spawn.position));
        let _ = writeln!(s, "spawn.heading = {}", w.spawn.heading);
        let _ = writeln!(s, "person.speed = {}", w.person.speed);
        let _ = writeln!(s, "person.radius = {}", w.person.radius);
        let _ = writeln!(s, "person.height = {}", w.person.height);
        for p in &w.person.waypoints {
            let _ = writeln!(s, "person.waypoint = {}", v3(*p));
        }
        for o in &w.obstacles {
            let _ = writeln!(s, "obstacle = {}", bx(o));
        }
        let r = &self.reward;
        let _ = writeln!(s, "\n# reward");
        let _ = writeln!(s, "reward.dt = {}", r.dt);
        let _ = writeln!(s, "reward.lambda = {}", r.lambda);
        let _ = writeln!(s, "reward.rho = {}", r.rho);
        let _ = writeln!(s, "reward.shrink = {}", r.shrink);
        let mode = match r.penalty_mode {
            PenaltyMode::HeightFraction => "height",
            PenaltyMode::AspectRatio => "aspect",
        };
        let _ = writeln!(s, "reward.penalty_mode = {mode}");
        let _ = writeln!(s, "\n# q-network");
        let _ = writeln!(s, "q.hidden = {}", list(&self.q.hidden));
        let _ = writeln!(s, "q.gamma = {}", self.q.gamma);
        let _ = writeln!(s, "q.sync_interval = {}", self.q.sync_interval);
        let _ = writeln!(s, "q.double_dqn = {}", self.q.double_dqn);
        opt(&mut s, "optim", &self.q.optimizer);
        let e = &self.explore;
        let _ = writeln!(s, "\n# exploration");
        let _ = writeln!(s, "explore.eps0 = {}", e.epsilon0);
        let _ = writeln!(s, "explore.eps_goal = {}", e.epsilon_goal);
        let mode = match e.epsilon_mode {
            EpsilonMode::Linear => "linear",
            EpsilonMode::Reciprocal => "reciprocal",
        };
        let _ = writeln!(s, "explore.eps_mode = {mode}");
        let _ = writeln!(s, "explore.tau = {}", e.convergence.tau);
        let _ = writeln!(s, "explore.zeta = {}", e.convergence.zeta);
        let _ = writeln!(s, "explore.v_size = {}", e.guidance.v_size);
        let _ = writeln!(s, "explore.visited_capacity = {}", e.guidance.visited_capacity);
        let _ = writeln!(s, "explore.refit_every = {}", e.guidance.refit_every);
        let _ = writeln!(s, "gmm.components = {}", e.guidance.gmm.components);
        let _ = writeln!(s, "gmm.iterations = {}", e.guidance.gmm.iterations);
        let _ = writeln!(s, "gmm.pseudocount = {}", e.guidance.gmm.pseudocount);
        let _ = writeln!(s, "domain.hidden = {}", list(&e.domain_hidden));
        opt(&mut s, "domain", &e.domain_optimizer);
        s
    }
}

/// Depth render, person detection and augmentation for one state.
pub fn observe(state: &WorldState, cfg: &ExperimentConfig) -> Result<(Tensor, Option<BBox>)> {
    let raw = render_depth(state, &cfg.world);
    let bbox = person_bbox(state, &cfg.world);
    let depth = augment_depth(&raw, bbox.as_ref(), cfg.reward.shrink);
    Ok((observation_tensor(&depth, cfg.world.camera.max_range, cfg.input_side)?, bbox))
}

/// Learner state that persists across episodes.
#[derive(Debug, Clone)]
pub struct Agent {
    pub pair: PolicyPair,
    pub domain: Option<DomainNetwork>,
    pub guidance: Option<Guidance>,
    pub memory: ReplayMemory,
    /// Environment steps taken so far.
    pub env_steps: u64,
    /// Optimization batches applied so far.
    pub train_steps: u64,
    pub last_loss: Option<f64>,
    pub rng: ChaCha8Rng,
}

impl Agent {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let q_seed: u64 = rng.gen();
        let d_seed: u64 = rng.gen();
        let pair = PolicyPair::new(cfg.input_dim(), &cfg.q, q_seed)?;
        let (domain, guidance) = if cfg.explore.strategy == StrategyKind::Guidance {
            (Some(cfg.explore.domain_network(d_seed)?), Some(Guidance::new(cfg.explore.guidance.clone())?))
        } else {
            (None, None)
        };
        Ok(Self {
            pair,
            domain,
            guidance,
            memory: ReplayMemory::new(cfg.replay_capacity)?,
            env_steps: 0,
            train_steps: 0,
            last_loss: None,
            rng,
        })
    }

    fn select_action(&mut self, cfg: &ExperimentConfig, state: &Tensor, eps: f64) -> Result<ActionId> {
        match cfg.explore.strategy {
            StrategyKind::EpsilonGreedy => epsilon_greedy_action(&self.pair, state, eps, &mut self.rng),
            StrategyKind::Convergence => {
                convergence_action(&self.pair, state, &cfg.explore.convergence, self.env_steps, &mut self.rng)
            }
            StrategyKind::Guidance => {
                if self.rng.gen::<f64>() < eps {
                    let guidance = self.guidance.as_mut().expect("guidance agent");
                    let domain = self.domain.as_ref().expect("guidance agent");
                    self.memory.sort_by_td();
                    guidance.action(state, domain, &self.memory, &mut self.rng)
                } else {
                    self.pair.select_greedy(state)
                }
            }
        }
    }

    /// One optimization batch (plus a domain-network step under guidance).
    fn optimize(&mut self, cfg: &ExperimentConfig) -> Result<()> {
        if self.memory.len() < cfg.warmup.max(cfg.batch_size) {
            return Ok(());
        }
        let stats = if cfg.explore.strategy == StrategyKind::Guidance {
            self.memory.sort_by_td();
            let alpha = cfg.explore.guidance.alpha;
            let idx = self.memory.sample_rank_prioritized(cfg.batch_size, alpha, &mut self.rng)?;
            let batch = self.memory.transitions(&idx);
            let weights = (cfg.replay_beta > 0.0)
                .then(|| importance_weights(self.memory.len(), &idx, alpha, cfg.replay_beta));
            let stats = self.pair.train_batch_weighted(&batch, weights.as_deref())?;
            self.domain.as_mut().expect("guidance agent").train_transitions(&batch)?;
            self.memory.update_priorities(&idx, &stats.td_errors)?;
            stats
        } else {
            let idx = self.memory.sample_uniform(cfg.batch_size, &mut self.rng)?;
            self.pair.train_batch(&self.memory.transitions(&idx))?
        };
        self.last_loss = Some(stats.loss);
        self.train_steps += 1;
        self.pair.maybe_sync(self.train_steps);
        Ok(())
    }
}

/// One executed step, enough to recompute its reward offline.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    /// Pose after the step.
    pub state: WorldState,
    pub action: ActionId,
    pub applied_v: f64,
    pub applied_psi: f64,
    /// Detection in the post-step observation.
    pub bbox: Option<BBox>,
    pub collided: bool,
    pub reward: f64,
}

pub const TRAJECTORY_CSV_HEADER: &str = "episode,step,x,y,z,heading,pitch,action,reward,collided";

pub fn trajectory_row(episode: usize, s: &StepRecord) -> String {
    let p = s.state.uav_position;
    format!(
        "{},{},{},{},{},{},{},{},{},{}",
        episode,
        s.step,
        p.x,
        p.y,
        p.z,
        s.state.uav_heading,
        s.state.uav_pitch,
        s.action.index(),
        s.reward,
        u8::from(s.collided)
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeOutcome {
    pub total_reward: f64,
    pub steps: usize,
    pub collided: bool,
    pub trajectory: Vec<StepRecord>,
}

/// UAV at the spawn pose, person at a random waypoint of its loop.
pub fn reset_world<R: Rng + ?Sized>(world: &WorldConfig, rng: &mut R) -> Result<WorldState> {
    let state = worldsim::reset(world)?;
    let n = world.person.waypoints.len();
    Ok(if n > 0 { state.with_person_at(world, rng.gen_range(0..n)) } else { state })
}

fn context(err: Error, episode: usize, step: usize) -> Error {
    match err {
        Error::Numeric(m) => Error::Numeric(format!("episode {episode}, step {step}: {m}")),
        other => other,
    }
}

/// Runs one training episode with exploration rate `eps`; `episode` is 1-based.
pub fn run_episode(cfg: &ExperimentConfig, agent: &mut Agent, episode: usize, eps: f64) -> Result<EpisodeOutcome> {
    let dims = (cfg.world.camera.width, cfg.world.camera.height);
    let mut state = reset_world(&cfg.world, &mut agent.rng)?;
    let (mut obs, _) = observe(&state, cfg)?;
    let mut out = EpisodeOutcome { total_reward: 0.0, steps: 0, collided: false, trajectory: Vec::new() };
    for step in 1..=cfg.max_steps {
        let action = agent.select_action(cfg, &obs, eps).map_err(|e| context(e, episode, step))?;
        let o = worldsim::step(&state, action, &cfg.world);
        let (next_obs, bbox) = observe(&o.state, cfg)?;
        let r = reward(o.applied_v, o.applied_psi, bbox.as_ref(), dims, o.collided, &cfg.reward);
        agent.memory.push(Transition {
            state: obs,
            action,
            reward: r,
            next_state: next_obs.clone(),
            terminal: o.collided,
        });
        agent.env_steps += 1;
        agent.optimize(cfg).map_err(|e| context(e, episode, step))?;
        out.total_reward += r;
        out.steps = step;
        out.collided = o.collided;
        out.trajectory.push(StepRecord {
            step,
            state: o.state,
            action,
            applied_v: o.applied_v,
            applied_psi: o.applied_psi,
            bbox,
            collided: o.collided,
            reward: r,
        });
        if o.collided {
            break;
        }
        state = o.state;
        obs = next_obs;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub steps: usize,
    pub total_reward: f64,
    pub collided: bool,
    pub epsilon: f64,
    pub strategy: StrategyKind,
    pub seed: u64,
}

impl EpisodeRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.episode,
            self.steps,
            self.total_reward,
            u8::from(self.collided),
            self.epsilon,
            self.strategy,
            self.seed
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockMetrics {
    /// 0-based.
    pub block_index: usize,
    pub episodes_in_block: usize,
    pub mean_reward: f64,
    pub mean_steps: f64,
    pub collision_rate: f64,
    /// Fewer episodes than the configured block size.
    pub partial: bool,
}

impl BlockMetrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.block_index, self.mean_reward, self.mean_steps, self.collision_rate, self.episodes_in_block
        )
    }
}

/// Aggregates consecutive runs of `block_size` episodes; a trailing short
/// run becomes a partial block.
pub fn block_metrics(episodes: &[EpisodeRecord], block_size: usize) -> Vec<BlockMetrics> {
    episodes
        .chunks(block_size.max(1))
        .enumerate()
        .map(|(i, chunk)| {
            let n = chunk.len() as f64;
            BlockMetrics {
                block_index: i,
                episodes_in_block: chunk.len(),
                mean_reward: chunk.iter().map(|e| e.total_reward).sum::<f64>() / n,
                mean_steps: chunk.iter().map(|e| e.steps as f64).sum::<f64>() / n,
                collision_rate: chunk.iter().filter(|e| e.collided).count() as f64 / n,
                partial: chunk.len() < block_size,
            }
        })
        .collect()
}

pub fn write_blocks_csv(blocks: &[BlockMetrics], mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "{BLOCK_CSV_HEADER}")?;
    for b in blocks {
        writeln!(w, "{}", b.csv_row())?;
    }
    w.flush()
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub episodes: Vec<EpisodeRecord>,
    pub blocks: Vec<BlockMetrics>,
    pub agent: Agent,
}

/// Runs the full experiment, streaming episode rows to `episode_csv` (header
/// first, flushed after every row) and calling `on_episode` after each one.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    mut episode_csv: Option<&mut dyn Write>,
    mut on_episode: impl FnMut(&EpisodeRecord, &Agent) -> Result<()>,
) -> Result<ExperimentResult> {
    cfg.validate()?;
    let schedule = cfg.schedule()?;
    let mut agent = Agent::new(cfg)?;
    let io_err = |e: std::io::Error| Error::Io { path: "episode log".into(), source: e };
    if let Some(w) = episode_csv.as_mut() {
        writeln!(w, "{EPISODE_CSV_HEADER}").map_err(io_err)?;
    }
    let mut episodes = Vec::with_capacity(cfg.episodes);
    for e in 1..=cfg.episodes {
        let eps = schedule.value(e as f64);
        let out = run_episode(cfg, &mut agent, e, eps)?;
        let rec = EpisodeRecord {
            episode: e,
            steps: out.steps,
            total_reward: out.total_reward,
            collided: out.collided,
            epsilon: eps,
            strategy: cfg.explore.strategy,
            seed: cfg.seed,
        };
        if let Some(w) = episode_csv.as_mut() {
            writeln!(w, "{}", rec.csv_row()).map_err(io_err)?;
            w.flush().map_err(io_err)?;
        }
        on_episode(&rec, &agent)?;
        episodes.push(rec);
    }
    let blocks = block_metrics(&episodes, cfg.block_size);
    Ok(ExperimentResult { episodes, blocks, agent })
}

/// Greedy episodes with a frozen policy; nothing is learned or stored.
pub fn greedy_rollout(cfg: &ExperimentConfig, pair: &PolicyPair, n: usize, seed: u64) -> Result<Vec<EpisodeOutcome>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = (cfg.world.camera.width, cfg.world.camera.height);
    let mut outcomes = Vec::with_capacity(n);
    for _ in 0..n {
        let mut state = reset_world(&cfg.world, &mut rng)?;
        let (mut obs, _) = observe(&state, cfg)?;
        let mut out = EpisodeOutcome { total_reward: 0.0, steps: 0, collided: false, trajectory: Vec::new() };
        for step in 1..=cfg.max_steps {
            let action = pair.select_greedy(&obs)?;
            let o = worldsim::step(&state, action, &cfg.world);
            let (next_obs, bbox) = observe(&o.state, cfg)?;
            let r = reward(o.applied_v, o.applied_psi, bbox.as_ref(), dims, o.collided, &cfg.reward);
            out.total_reward += r;
            out.steps = step;
            out.collided = o.collided;
            out.trajectory.push(StepRecord {
                step,
                state: o.state,
                action,
                applied_v: o.applied_v,
                applied_psi: o.applied_psi,
                bbox,
                collided: o.collided,
                reward: r,
            });
            if o.collided {
                break;
            }
            state = o.state;
            obs = next_obs;
        }
        outcomes.push(out);
    }
    Ok(outcomes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(episode: usize, steps: usize, total_reward: f64, collided: bool) -> EpisodeRecord {
        EpisodeRecord {
            episode,
            steps,
            total_reward,
            collided,
            epsilon: 0.5,
            strategy: StrategyKind::EpsilonGreedy,
            seed: 0,
        }
    }

    #[test]
    fn blocks_of_250() {
        let eps: Vec<_> = (1..=250).map(|e| rec(e, e, e as f64, e % 2 == 0)).collect();
        let blocks = block_metrics(&eps, 100);
        assert_eq!(blocks.len(), 3);
        assert!(!blocks[0].partial && !blocks[1].partial && blocks[2].partial);
        assert_eq!(blocks[2].episodes_in_block, 50);
        assert_eq!(blocks[0].mean_reward, 50.5);
        assert_eq!(blocks[1].mean_steps, 150.5);
        assert_eq!(blocks[0].collision_rate, 0.5);
    }

    #[test]
    fn config_text_round_trips() {
        let mut cfg = ExperimentConfig::preset("complex").unwrap();
        cfg.explore.strategy = StrategyKind::Guidance;
        cfg.seed = 7;
        let back = ExperimentConfig::parse(&cfg.to_config_text()).unwrap();
        assert_eq!(back.world, cfg.world);
        assert_eq!(back.to_config_text(), cfg.to_config_text());
    }

    #[test]
    fn preset_keys_can_be_overridden() {
        let cfg = ExperimentConfig::parse("world = simple\nworld.dt = 0.25\nepisodes = 3\n").unwrap();
        assert_eq!(cfg.world.control_dt, 0.25);
        assert_eq!(cfg.reward.dt, 0.25);
        assert_eq!(cfg.world.obstacles.len(), 4);
        assert_eq!(cfg.episodes, 3);
    }

    #[test]
    fn unknown_key_is_reported_with_line() {
        let err = ExperimentConfig::parse("world = simple\nepisodez = 3\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }
}
