//! Action-selection strategies: epsilon-greedy, convergence exploration and
//! guidance exploration.
//!
//! Convergence exploration spends the first `tau` environment steps trying
//! random actions, skipping any whose online/target disagreement
//! `(Q_tar(s, a) - Q(s, a))^2` is already below `zeta`.
//!
//! Guidance exploration predicts the next state embedding for every action
//! with a domain network, scores each prediction under a Gaussian mixture
//! fitted to previously visited states and takes the least familiar one.

use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::config::KvDoc;
use crate::error::{Error, Result};
use crate::gmm::{self, embed, Embedding, GaussianMixture, GmmConfig, EMBED_DIM};
use crate::memory::{ReplayMemory, Transition};
use crate::nn::{Activation, Network, Optimizer, OptimizerConfig, Tensor};
use crate::qpolicy::{optimizer_from_kv, PolicyPair, QVector};
use crate::worldsim::{ActionId, NUM_ACTIONS};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpsilonMode {
    /// `max(goal, eps0 - (eps0 - goal) * e / E)`
    Linear,
    /// `clamp((eps0 - goal) / e, goal, eps0)`
    Reciprocal,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsilonSchedule {
    pub epsilon0: f64,
    pub epsilon_goal: f64,
    pub total_episodes: usize,
    pub mode: EpsilonMode,
}

impl EpsilonSchedule {
    pub fn new(epsilon0: f64, epsilon_goal: f64, total_episodes: usize, mode: EpsilonMode) -> Result<Self> {
        if !(0.0 <= epsilon_goal && epsilon_goal <= epsilon0 && epsilon0 <= 1.0) {
            return Err(Error::config(format!(
                "need 0 <= epsilon_goal <= epsilon0 <= 1, got {epsilon_goal} and {epsilon0}"
            )));
        }
        if total_episodes == 0 {
            return Err(Error::config("epsilon schedule needs at least one episode"));
        }
        Ok(Self { epsilon0, epsilon_goal, total_episodes, mode })
    }

    /// Exploration probability for 1-based `episode`; fractional episodes are allowed.
    pub fn value(&self, episode: f64) -> f64 {
        let (e0, goal) = (self.epsilon0, self.epsilon_goal);
        match self.mode {
            EpsilonMode::Linear => {
                let frac = (episode / self.total_episodes as f64).clamp(0.0, 1.0);
                if frac >= 1.0 {
                    goal
                } else {
                    (e0 - (e0 - goal) * frac).clamp(goal, e0)
                }
            }
            EpsilonMode::Reciprocal => ((e0 - goal) / episode).clamp(goal, e0),
        }
    }
}

fn random_action<R: Rng + ?Sized>(rng: &mut R) -> ActionId {
    ActionId::new(rng.gen_range(0..NUM_ACTIONS)).expect("in range")
}

/// Uniform random action with probability `eps`, otherwise greedy.
///
/// Exactly one uniform draw decides between the branches, so the RNG stream
/// does not depend on the network.
pub fn epsilon_greedy_action<R: Rng + ?Sized>(pair: &PolicyPair, state: &Tensor, eps: f64, rng: &mut R) -> Result<ActionId> {
    if !(0.0..=1.0).contains(&eps) {
        return Err(Error::Argument(format!("epsilon {eps} outside [0, 1]")));
    }
    if rng.gen::<f64>() < eps {
        Ok(random_action(rng))
    } else {
        pair.select_greedy(state)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceParams {
    /// Number of environment steps spent in the exploration phase.
    pub tau: u64,
    /// Squared online/target disagreement below which an action counts as converged.
    pub zeta: f64,
}

impl Default for ConvergenceParams {
    fn default() -> Self {
        Self { tau: 5000, zeta: 0.01 }
    }
}

/// Per-action `(Q_tar(s, a) - Q(s, a))^2`.
pub fn convergence_errors(pair: &PolicyPair, state: &Tensor) -> Result<QVector> {
    let q = pair.online.q_values(state)?;
    let qt = pair.target.q_values(state)?;
    let mut c = [0.0; NUM_ACTIONS];
    for a in 0..NUM_ACTIONS {
        let d = qt[a] - q[a];
        c[a] = d * d;
    }
    Ok(c)
}

/// Visits actions in a random order and returns the first one that is not
/// yet converged, or `None` when every action is below `zeta`.
pub fn pick_unconverged<R: Rng + ?Sized>(errors: &QVector, zeta: f64, rng: &mut R) -> Option<ActionId> {
    let mut order: [usize; NUM_ACTIONS] = std::array::from_fn(|i| i);
    order.shuffle(rng);
    order.into_iter().find(|&a| errors[a] >= zeta).map(|a| ActionId::new(a).expect("in range"))
}

pub fn convergence_action<R: Rng + ?Sized>(
    pair: &PolicyPair,
    state: &Tensor,
    params: &ConvergenceParams,
    global_step: u64,
    rng: &mut R,
) -> Result<ActionId> {
    if global_step >= params.tau {
        return pair.select_greedy(state);
    }
    let errors = convergence_errors(pair, state)?;
    match pick_unconverged(&errors, params.zeta, rng) {
        Some(a) => Ok(a),
        None => pair.select_greedy(state),
    }
}

/// Next-state model: `(embedding ++ one_hot(action)) -> next embedding`.
#[derive(Debug, Clone)]
pub struct DomainNetwork {
    pub net: Network,
    optimizer: Optimizer,
}

impl DomainNetwork {
    pub fn new(embed_dim: usize, hidden: &[usize], optimizer: OptimizerConfig, seed: u64) -> Result<Self> {
        let mut dims = vec![embed_dim + NUM_ACTIONS];
        dims.extend_from_slice(hidden);
        dims.push(embed_dim);
        let mut acts = vec![Activation::Relu; hidden.len()];
        acts.push(Activation::Identity);
        Self::from_network(Network::init(&dims, &acts, seed)?, optimizer)
    }

    pub fn from_network(net: Network, optimizer: OptimizerConfig) -> Result<Self> {
        if net.input_dim() != net.output_dim() + NUM_ACTIONS {
            return Err(Error::shape(
                format!("input = output + {NUM_ACTIONS}"),
                format!("{} -> {}", net.input_dim(), net.output_dim()),
            ));
        }
        Ok(Self { net, optimizer: Optimizer::new(optimizer) })
    }

    pub fn embed_dim(&self) -> usize {
        self.net.output_dim()
    }

    fn encode(&self, state: &Embedding, action: ActionId, out: &mut Vec<f64>) -> Result<()> {
        if state.dim() != self.embed_dim() {
            return Err(Error::shape(self.embed_dim(), state.dim()));
        }
        out.extend_from_slice(state.as_slice());
        let mut one_hot = [0.0; NUM_ACTIONS];
        one_hot[action.index()] = 1.0;
        out.extend_from_slice(&one_hot);
        Ok(())
    }

    pub fn predict(&self, state: &Embedding, action: ActionId) -> Result<Embedding> {
        let mut x = Vec::with_capacity(self.net.input_dim());
        self.encode(state, action, &mut x)?;
        Ok(Embedding(self.net.forward(&Tensor::vector(x)?)?.into_values()))
    }

    /// Predictions for all ten actions in one batched pass.
    pub fn predict_all(&self, state: &Embedding) -> Result<Vec<Embedding>> {
        let mut x = Vec::with_capacity(NUM_ACTIONS * self.net.input_dim());
        for a in ActionId::all() {
            self.encode(state, a, &mut x)?;
        }
        let out = self.net.forward(&Tensor::matrix(NUM_ACTIONS, self.net.input_dim(), x)?)?;
        Ok(out.values().chunks(self.embed_dim()).map(|c| Embedding(c.to_vec())).collect())
    }

    /// Mean over the batch of `||target - prediction||^2`, before the update.
    pub fn loss(&self, batch: &[(Embedding, ActionId, Embedding)]) -> Result<f64> {
        let mut total = 0.0;
        for (s, a, next) in batch {
            let p = self.predict(s, *a)?;
            total += p.0.iter().zip(&next.0).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
        }
        Ok(total / batch.len().max(1) as f64)
    }

    /// One optimizer step on `mean_b ||next_b - D(s_b, a_b)||^2`; returns the pre-update loss.
    pub fn train(&mut self, batch: &[(Embedding, ActionId, Embedding)]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Argument("domain training batch is empty".into()));
        }
        let b = batch.len();
        let d = self.embed_dim();
        let mut x = Vec::with_capacity(b * self.net.input_dim());
        for (s, a, next) in batch {
            if next.dim() != d {
                return Err(Error::shape(d, next.dim()));
            }
            self.encode(s, *a, &mut x)?;
        }
        let input = Tensor::matrix(b, self.net.input_dim(), x)?;
        let cache = self.net.forward_cached(&input)?;
        let pred = cache.output().values();
        let mut loss = 0.0;
        let mut grad = vec![0.0; b * d];
        for (i, (_, _, next)) in batch.iter().enumerate() {
            for k in 0..d {
                let e = pred[i * d + k] - next.0[k];
                loss += e * e;
                grad[i * d + k] = 2.0 * e / b as f64;
            }
        }
        loss /= b as f64;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("non-finite domain loss {loss}")));
        }
        let grads = self.net.param_grads(&cache, &Tensor::new(vec![b, d], grad)?)?;
        self.optimizer.step(&mut self.net, &grads)?;
        Ok(loss)
    }

    /// Trains on replay transitions, embedding both observations.
    pub fn train_transitions(&mut self, batch: &[&Transition]) -> Result<f64> {
        let triples = batch
            .iter()
            .map(|t| Ok((embed(&t.state)?, t.action, embed(&t.next_state)?)))
            .collect::<Result<Vec<_>>>()?;
        self.train(&triples)
    }
}

/// Bounded FIFO of visited-state embeddings.
#[derive(Debug, Clone)]
pub struct VisitedSet {
    capacity: usize,
    items: VecDeque<Embedding>,
}

impl VisitedSet {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::config("visited-set capacity must be positive"));
        }
        Ok(Self { capacity, items: VecDeque::with_capacity(capacity) })
    }

    pub fn push(&mut self, e: Embedding) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(e);
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

    pub fn to_vec(&self) -> Vec<Embedding> {
        self.items.iter().cloned().collect()
    }
}

/// Index of the smallest score, ties to the lowest action id.
pub fn least_familiar(scores: &QVector) -> ActionId {
    let mut best = 0;
    for (i, &v) in scores.iter().enumerate().skip(1) {
        if v < scores[best] {
            best = i;
        }
    }
    ActionId::new(best).expect("in range")
}

/// Scores each predicted next state under `mixture` and returns the action
/// whose prediction has the lowest log-density.
pub fn guidance_select(predictions: &[Embedding], mixture: &GaussianMixture) -> Result<(ActionId, QVector)> {
    if predictions.len() != NUM_ACTIONS {
        return Err(Error::shape(NUM_ACTIONS, predictions.len()));
    }
    let mut scores = [0.0; NUM_ACTIONS];
    for (s, p) in scores.iter_mut().zip(predictions) {
        *s = mixture.log_density(p.as_slice())?;
    }
    Ok((least_familiar(&scores), scores))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceParams {
    /// Size of the replay sample added to the visited set per exploration step.
    pub v_size: usize,
    pub visited_capacity: usize,
    pub gmm: GmmConfig,
    /// Rank-sampling exponent for both the visited sample and training batches.
    pub alpha: f64,
    /// Refit the mixture on every n-th exploration step (1 = always).
    pub refit_every: usize,
}

impl Default for GuidanceParams {
    fn default() -> Self {
        Self { v_size: 64, visited_capacity: 512, gmm: GmmConfig::default(), alpha: 0.7, refit_every: 1 }
    }
}

/// Mutable guidance state carried across steps.
#[derive(Debug, Clone)]
pub struct Guidance {
    pub params: GuidanceParams,
    pub visited: VisitedSet,
    mixture: Option<GaussianMixture>,
    calls: usize,
}

impl Guidance {
    pub fn new(params: GuidanceParams) -> Result<Self> {
        if params.v_size < params.gmm.components || params.v_size == 0 {
            return Err(Error::config("explore.v_size must be at least gmm.components"));
        }
        if params.refit_every == 0 {
            return Err(Error::config("explore.refit_every must be positive"));
        }
        Ok(Self { visited: VisitedSet::new(params.visited_capacity)?, params, mixture: None, calls: 0 })
    }

    pub fn mixture(&self) -> Option<&GaussianMixture> {
        self.mixture.as_ref()
    }

    /// One guided exploration decision. Falls back to a uniform random
    /// action while the memory holds fewer than `v_size` transitions.
    pub fn action<R: Rng + ?Sized>(
        &mut self,
        state: &Tensor,
        domain: &DomainNetwork,
        mem: &ReplayMemory,
        rng: &mut R,
    ) -> Result<ActionId> {
        let p = &self.params;
        if mem.len() < p.v_size {
            return Ok(random_action(rng));
        }
        let sample = mem.sample_rank_prioritized(p.v_size, p.alpha, rng)?;
        for t in mem.transitions(&sample) {
            self.visited.push(embed(&t.state)?);
        }
        let fit_seed: u64 = rng.gen();
        if self.mixture.is_none() || self.calls % p.refit_every == 0 {
            self.mixture = Some(gmm::fit(&self.visited.to_vec(), &p.gmm, fit_seed)?);
        }
        self.calls += 1;
        let preds = domain.predict_all(&embed(state)?)?;
        Ok(guidance_select(&preds, self.mixture.as_ref().expect("fitted above"))?.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StrategyKind {
    EpsilonGreedy,
    Convergence,
    Guidance,
}

impl StrategyKind {
    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::EpsilonGreedy => "epsilon_greedy",
            StrategyKind::Convergence => "convergence",
            StrategyKind::Guidance => "guidance",
        }
    }
}

impl std::str::FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "epsilon_greedy" | "egreedy" | "d3qn" => Ok(StrategyKind::EpsilonGreedy),
            "convergence" => Ok(StrategyKind::Convergence),
            "guidance" => Ok(StrategyKind::Guidance),
            _ => Err(Error::config(format!("unknown strategy {s:?} (epsilon_greedy, convergence, guidance)"))),
        }
    }
}

impl std::fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExploreConfig {
    pub strategy: StrategyKind,
    pub epsilon0: f64,
    pub epsilon_goal: f64,
    pub epsilon_mode: EpsilonMode,
    pub convergence: ConvergenceParams,
    pub guidance: GuidanceParams,
    pub domain_hidden: Vec<usize>,
    pub domain_optimizer: OptimizerConfig,
}

impl Default for ExploreConfig {
    fn default() -> Self {
        Self {
            strategy: StrategyKind::EpsilonGreedy,
            epsilon0: 1.0,
            epsilon_goal: 0.05,
            epsilon_mode: EpsilonMode::Linear,
            convergence: ConvergenceParams::default(),
            guidance: GuidanceParams::default(),
            domain_hidden: vec![64],
            domain_optimizer: OptimizerConfig::adam(1e-3),
        }
    }
}

impl ExploreConfig {
    pub fn schedule(&self, episodes: usize) -> Result<EpsilonSchedule> {
        EpsilonSchedule::new(self.epsilon0, self.epsilon_goal, episodes, self.epsilon_mode)
    }

    pub fn domain_network(&self, seed: u64) -> Result<DomainNetwork> {
        DomainNetwork::new(EMBED_DIM, &self.domain_hidden, self.domain_optimizer, seed)
    }

    pub fn from_kv(doc: &mut KvDoc) -> Result<Self> {
        let mut c = Self::default();
        if let Some(e) = doc.take("strategy") {
            c.strategy = e.value.parse().map_err(|_| e.error("expected epsilon_greedy, convergence or guidance"))?;
        }
        if let Some(e) = doc.take("explore.eps0") {
            c.epsilon0 = e.parse_f64()?;
        }
        if let Some(e) = doc.take("explore.eps_goal") {
            c.epsilon_goal = e.parse_f64()?;
        }
        if let Some(e) = doc.take("explore.eps_mode") {
            c.epsilon_mode = match e.value.as_str() {
                "linear" => EpsilonMode::Linear,
                "reciprocal" => EpsilonMode::Reciprocal,
                _ => return Err(e.error("expected `linear` or `reciprocal`")),
            };
        }
        if let Some(e) = doc.take("explore.tau") {
            c.convergence.tau = e.parse()?;
        }
        if let Some(e) = doc.take("explore.zeta") {
            c.convergence.zeta = e.parse_f64()?;
            if !(c.convergence.zeta > 0.0) {
                return Err(e.error("must be positive"));
            }
        }
        if let Some(e) = doc.take("explore.v_size") {
            c.guidance.v_size = e.parse()?;
        }
        if let Some(e) = doc.take("explore.visited_capacity") {
            c.guidance.visited_capacity = e.parse()?;
        }
        if let Some(e) = doc.take("explore.refit_every") {
            c.guidance.refit_every = e.parse()?;
        }
        if let Some(e) = doc.take("replay.alpha") {
            c.guidance.alpha = e.parse_f64()?;
            if !(c.guidance.alpha >= 0.0) {
                return Err(e.error("must be non-negative"));
            }
        }
        if let Some(e) = doc.take("gmm.components") {
            c.guidance.gmm.components = e.parse()?;
        }
        if let Some(e) = doc.take("gmm.iterations") {
            c.guidance.gmm.iterations = e.parse()?;
        }
        if let Some(e) = doc.take("gmm.pseudocount") {
            c.guidance.gmm.pseudocount = e.parse_f64()?;
        }
        if let Some(e) = doc.take("domain.hidden") {
            c.domain_hidden = e.parse_usizes()?;
        }
        c.domain_optimizer = optimizer_from_kv(doc, "domain", c.domain_optimizer)?;
        EpsilonSchedule::new(c.epsilon0, c.epsilon_goal, 1, c.epsilon_mode)?;
        Guidance::new(c.guidance.clone())?;
        Ok(c)
    }
}
