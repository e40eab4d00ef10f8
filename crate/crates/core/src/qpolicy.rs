//! Dueling Q-network and the online/target pair trained on TD targets.
//!
//! `Q(s, a) = V(s) + A(s, a) - mean_a A(s, a)`. The trunk is shared between
//! the value and advantage heads.

use std::path::Path;

use crate::config::KvDoc;
use crate::error::{Error, Result};
use crate::memory::Transition;
use crate::nn::{load_network, save_network, Activation, Gradients, Network, Optimizer, OptimizerConfig, Tensor};
use crate::worldsim::{ActionId, NUM_ACTIONS};

pub type QVector = [f64; NUM_ACTIONS];

#[derive(Debug, Clone, PartialEq)]
pub struct DuelingQNetwork {
    pub trunk: Network,
    pub value_head: Network,
    pub advantage_head: Network,
    pub gamma: f64,
}

/// Mean-centred dueling aggregation.
pub fn aggregate(value: f64, advantages: &[f64]) -> QVector {
    debug_assert_eq!(advantages.len(), NUM_ACTIONS);
    let mean = advantages.iter().sum::<f64>() / NUM_ACTIONS as f64;
    let mut q = [0.0; NUM_ACTIONS];
    for (qa, a) in q.iter_mut().zip(advantages) {
        *qa = value + (a - mean);
    }
    q
}

/// Index of the largest value, ties to the lowest index.
pub fn argmax_lowest(q: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in q.iter().enumerate().skip(1) {
        if v > q[best] {
            best = i;
        }
    }
    best
}

impl DuelingQNetwork {
    /// Trunk `input -> hidden[0] -> ... -> hidden[last]` (ReLU), linear heads.
    pub fn new(input_dim: usize, hidden: &[usize], gamma: f64, seed: u64) -> Result<Self> {
        if hidden.is_empty() {
            return Err(Error::config("Q-network trunk needs at least one hidden layer"));
        }
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        let trunk = Network::init(&dims, &vec![Activation::Relu; hidden.len()], seed)?;
        let feat = *hidden.last().unwrap();
        let value_head = Network::init(&[feat, 1], &[Activation::Identity], seed.wrapping_add(1))?;
        let advantage_head = Network::init(&[feat, NUM_ACTIONS], &[Activation::Identity], seed.wrapping_add(2))?;
        Self::from_parts(trunk, value_head, advantage_head, gamma)
    }

    pub fn from_parts(trunk: Network, value_head: Network, advantage_head: Network, gamma: f64) -> Result<Self> {
        if !(gamma >= 0.0 && gamma < 1.0) {
            return Err(Error::config(format!("discount must lie in [0, 1), got {gamma}")));
        }
        if value_head.output_dim() != 1 || advantage_head.output_dim() != NUM_ACTIONS {
            return Err(Error::shape(
                format!("value head 1 output, advantage head {NUM_ACTIONS}"),
                format!("{} and {}", value_head.output_dim(), advantage_head.output_dim()),
            ));
        }
        if value_head.input_dim() != trunk.output_dim() || advantage_head.input_dim() != trunk.output_dim() {
            return Err(Error::shape(trunk.output_dim(), "head input width"));
        }
        Ok(Self { trunk, value_head, advantage_head, gamma })
    }

    pub fn input_dim(&self) -> usize {
        self.trunk.input_dim()
    }

    /// `(V, A)` for a batch: `V` is `[B]`, `A` is `[B, 10]` row-major.
    pub fn value_and_advantages(&self, states: &Tensor) -> Result<(Vec<f64>, Vec<f64>)> {
        let feat = self.trunk.forward(states)?;
        let v = self.value_head.forward(&feat)?.into_values();
        let a = self.advantage_head.forward(&feat)?.into_values();
        Ok((v, a))
    }

    /// Q-values for every row of `states`.
    pub fn q_batch(&self, states: &Tensor) -> Result<Vec<QVector>> {
        let (v, a) = self.value_and_advantages(states)?;
        Ok(v.iter().zip(a.chunks(NUM_ACTIONS)).map(|(&v, a)| aggregate(v, a)).collect())
    }

    pub fn q_values(&self, state: &Tensor) -> Result<QVector> {
        if state.rows() != 1 {
            return Err(Error::shape("single state", format!("{:?}", state.shape())));
        }
        Ok(self.q_batch(state)?[0])
    }

    fn save(&self, dir: &Path, prefix: &str) -> Result<()> {
        save_network(&self.trunk, &dir.join(format!("{prefix}_trunk.bin")))?;
        save_network(&self.value_head, &dir.join(format!("{prefix}_value.bin")))?;
        save_network(&self.advantage_head, &dir.join(format!("{prefix}_advantage.bin")))
    }

    fn load(dir: &Path, prefix: &str, gamma: f64) -> Result<Self> {
        Self::from_parts(
            load_network(&dir.join(format!("{prefix}_trunk.bin")))?,
            load_network(&dir.join(format!("{prefix}_value.bin")))?,
            load_network(&dir.join(format!("{prefix}_advantage.bin")))?,
            gamma,
        )
    }
}

/// Squared TD loss restricted to the taken actions, optionally weighted per sample.
///
/// Returns the mean loss, the signed TD errors `y_i - Q(s_i, a_i)` and
/// `dL/dQ`, which is non-zero only at `(i, a_i)`.
pub fn masked_td_loss(
    q: &[QVector],
    actions: &[ActionId],
    targets: &[f64],
    weights: Option<&[f64]>,
) -> (f64, Vec<f64>, Vec<f64>) {
    let b = q.len();
    let mut grad = vec![0.0; b * NUM_ACTIONS];
    let mut td = Vec::with_capacity(b);
    let mut loss = 0.0;
    for i in 0..b {
        let a = actions[i].index();
        let w = weights.map_or(1.0, |w| w[i]);
        let e = targets[i] - q[i][a];
        loss += w * e * e;
        grad[i * NUM_ACTIONS + a] = -2.0 * w * e / b as f64;
        td.push(e);
    }
    (loss / b as f64, td, grad)
}

#[derive(Debug, Clone, PartialEq)]
pub struct QConfig {
    pub hidden: Vec<usize>,
    pub gamma: f64,
    pub sync_interval: u64,
    /// Select the bootstrap action with the online network instead of the target's own max.
    pub double_dqn: bool,
    pub optimizer: OptimizerConfig,
}

impl Default for QConfig {
    fn default() -> Self {
        Self {
            hidden: vec![256, 128],
            gamma: 0.99,
            sync_interval: 200,
            double_dqn: false,
            optimizer: OptimizerConfig::default(),
        }
    }
}

impl QConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::config("q.hidden must list positive layer widths"));
        }
        if !(self.gamma >= 0.0 && self.gamma < 1.0) {
            return Err(Error::config("q.gamma must lie in [0, 1)"));
        }
        if self.sync_interval == 0 {
            return Err(Error::config("q.sync_interval must be positive"));
        }
        if !(self.optimizer.lr > 0.0) {
            return Err(Error::config("optim.lr must be positive"));
        }
        Ok(())
    }

    pub fn from_kv(doc: &mut KvDoc) -> Result<Self> {
        let mut c = Self::default();
        if let Some(e) = doc.take("q.hidden") {
            c.hidden = e.parse_usizes()?;
        }
        if let Some(e) = doc.take("q.gamma") {
            c.gamma = e.parse_f64()?;
        }
        if let Some(e) = doc.take("q.sync_interval") {
            c.sync_interval = e.parse()?;
        }
        if let Some(e) = doc.take("q.double_dqn") {
            c.double_dqn = e.parse_bool()?;
        }
        c.optimizer = optimizer_from_kv(doc, "optim", c.optimizer)?;
        c.validate()?;
        Ok(c)
    }
}

/// Reads `<prefix>.algo` (`sgd`/`adam`), `<prefix>.lr`, `<prefix>.beta1`,
/// `<prefix>.beta2` and `<prefix>.eps`.
pub fn optimizer_from_kv(doc: &mut KvDoc, prefix: &str, mut cfg: OptimizerConfig) -> Result<OptimizerConfig> {
    if let Some(e) = doc.take(&format!("{prefix}.algo")) {
        cfg.algo = match e.value.as_str() {
            "sgd" => crate::nn::OptimAlgo::Sgd,
            "adam" => crate::nn::OptimAlgo::Adam,
            _ => return Err(e.error("expected `sgd` or `adam`")),
        };
    }
    if let Some(e) = doc.take(&format!("{prefix}.lr")) {
        cfg.lr = e.parse_f64()?;
    }
    if let Some(e) = doc.take(&format!("{prefix}.beta1")) {
        cfg.beta1 = e.parse_f64()?;
    }
    if let Some(e) = doc.take(&format!("{prefix}.beta2")) {
        cfg.beta2 = e.parse_f64()?;
    }
    if let Some(e) = doc.take(&format!("{prefix}.eps")) {
        cfg.eps = e.parse_f64()?;
    }
    Ok(cfg)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub loss: f64,
    /// Signed `y_i - Q(s_i, a_i)` before the update, in batch order.
    pub td_errors: Vec<f64>,
}

/// Online network, its periodically synced target copy and the optimizer state.
#[derive(Debug, Clone)]
pub struct PolicyPair {
    pub online: DuelingQNetwork,
    pub target: DuelingQNetwork,
    pub sync_interval: u64,
    pub double_dqn: bool,
    optimizers: [Optimizer; 3],
}

pub(crate) fn stack_states<'a>(rows: impl Iterator<Item = &'a Tensor>) -> Result<Tensor> {
    let rows: Vec<&[f64]> = rows.map(|t| t.values()).collect();
    Tensor::from_rows(&rows)
}

impl PolicyPair {
    pub fn new(input_dim: usize, cfg: &QConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let online = DuelingQNetwork::new(input_dim, &cfg.hidden, cfg.gamma, seed)?;
        Ok(Self::from_online(online, cfg))
    }

    /// Pair whose target starts as an exact copy of `online`.
    pub fn from_online(online: DuelingQNetwork, cfg: &QConfig) -> Self {
        let target = online.clone();
        Self {
            online,
            target,
            sync_interval: cfg.sync_interval,
            double_dqn: cfg.double_dqn,
            optimizers: std::array::from_fn(|_| Optimizer::new(cfg.optimizer)),
        }
    }

    pub fn gamma(&self) -> f64 {
        self.online.gamma
    }

    pub fn select_greedy(&self, state: &Tensor) -> Result<ActionId> {
        let q = self.online.q_values(state)?;
        ActionId::new(argmax_lowest(&q))
    }

    pub fn td_target(&self, t: &Transition) -> Result<f64> {
        Ok(self.td_targets(&[t])?[0])
    }

    /// `y = r` for terminal transitions, otherwise `r + gamma * Q_tar(s', a*)`
    /// where `a*` is the target's own argmax (or the online argmax with `double_dqn`).
    pub fn td_targets(&self, batch: &[&Transition]) -> Result<Vec<f64>> {
        let live: Vec<usize> = (0..batch.len()).filter(|&i| !batch[i].terminal).collect();
        let mut y: Vec<f64> = batch.iter().map(|t| t.reward).collect();
        if live.is_empty() {
            return Ok(y);
        }
        let next = stack_states(live.iter().map(|&i| &batch[i].next_state))?;
        let q_tar = self.target.q_batch(&next)?;
        let q_sel = if self.double_dqn { Some(self.online.q_batch(&next)?) } else { None };
        let gamma = self.gamma();
        for (j, &i) in live.iter().enumerate() {
            let boot = match &q_sel {
                Some(q_on) => q_tar[j][argmax_lowest(&q_on[j])],
                None => q_tar[j].iter().copied().fold(f64::NEG_INFINITY, f64::max),
            };
            y[i] = batch[i].reward + gamma * boot;
        }
        Ok(y)
    }

    /// Mean (optionally weighted) squared TD error of `batch` and its
    /// gradients with respect to the online trunk, value head and advantage
    /// head. Targets are constants.
    pub fn loss_gradients(&self, batch: &[&Transition], weights: Option<&[f64]>) -> Result<(BatchStats, [Gradients; 3])> {
        if batch.is_empty() {
            return Err(Error::Argument("training batch is empty".into()));
        }
        if let Some(w) = weights {
            if w.len() != batch.len() {
                return Err(Error::shape(batch.len(), w.len()));
            }
        }
        let targets = self.td_targets(batch)?;
        let states = stack_states(batch.iter().map(|t| &t.state))?;
        let actions: Vec<ActionId> = batch.iter().map(|t| t.action).collect();

        let net = &self.online;
        let trunk_cache = net.trunk.forward_cached(&states)?;
        let feat = trunk_cache.output();
        let v_cache = net.value_head.forward_cached(feat)?;
        let a_cache = net.advantage_head.forward_cached(feat)?;
        let v = v_cache.output().values();
        let a = a_cache.output().values();
        let q: Vec<QVector> = v.iter().zip(a.chunks(NUM_ACTIONS)).map(|(&v, a)| aggregate(v, a)).collect();

        let (loss, td_errors, dq) = masked_td_loss(&q, &actions, &targets, weights);
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("non-finite TD loss {loss}")));
        }

        // Q = V + A - mean(A): dV = sum(dQ), dA = dQ - mean(dQ)
        let b = batch.len();
        let mut dv = vec![0.0; b];
        let mut da = vec![0.0; b * NUM_ACTIONS];
        for i in 0..b {
            let row = &dq[i * NUM_ACTIONS..(i + 1) * NUM_ACTIONS];
            let sum: f64 = row.iter().sum();
            dv[i] = sum;
            let mean = sum / NUM_ACTIONS as f64;
            for (d, g) in da[i * NUM_ACTIONS..(i + 1) * NUM_ACTIONS].iter_mut().zip(row) {
                *d = g - mean;
            }
        }
        let dv = Tensor::new(vec![b, 1], dv)?;
        let da = Tensor::new(vec![b, NUM_ACTIONS], da)?;
        let (gv, dfeat_v) = net.value_head.backward_cached(&v_cache, &dv)?;
        let (ga, dfeat_a) = net.advantage_head.backward_cached(&a_cache, &da)?;
        let dfeat: Vec<f64> = dfeat_v.values().iter().zip(dfeat_a.values()).map(|(x, y)| x + y).collect();
        let dfeat = Tensor::new(dfeat_v.shape().to_vec(), dfeat)?;
        let gt = net.trunk.param_grads(&trunk_cache, &dfeat)?;
        Ok((BatchStats { loss, td_errors }, [gt, gv, ga]))
    }

    /// One optimizer step on the mean squared TD error of `batch`.
    pub fn train_batch(&mut self, batch: &[&Transition]) -> Result<BatchStats> {
        self.train_batch_weighted(batch, None)
    }

    /// As [`Self::train_batch`], scaling each sample's squared error by its weight.
    pub fn train_batch_weighted(&mut self, batch: &[&Transition], weights: Option<&[f64]>) -> Result<BatchStats> {
        let (stats, [gt, gv, ga]) = self.loss_gradients(batch, weights)?;
        let [ot, ov, oa] = &mut self.optimizers;
        ot.step(&mut self.online.trunk, &gt)?;
        ov.step(&mut self.online.value_head, &gv)?;
        oa.step(&mut self.online.advantage_head, &ga)?;
        Ok(stats)
    }

    pub fn sync(&mut self) {
        self.target = self.online.clone();
    }

    /// Copies online into target whenever `global_step` is a multiple of the
    /// sync interval. Returns whether a sync happened.
    pub fn maybe_sync(&mut self, global_step: u64) -> bool {
        if global_step > 0 && global_step % self.sync_interval == 0 {
            self.sync();
            true
        } else {
            false
        }
    }

    /// Writes six network files plus `manifest.txt` into `dir`.
    ///
    /// The manifest is `key = value` lines: `step`, `gamma`, `sync_interval`,
    /// `double_dqn`, `input_dim`.
    pub fn save_checkpoint(&self, dir: &Path, step: u64) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.online.save(dir, "online")?;
        self.target.save(dir, "target")?;
        let manifest = format!(
            "step = {step}\ngamma = {}\nsync_interval = {}\ndouble_dqn = {}\ninput_dim = {}\n",
            self.gamma(),
            self.sync_interval,
            self.double_dqn,
            self.online.input_dim()
        );
        let path = dir.join("manifest.txt");
        std::fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
    }

    /// Restores a checkpoint; optimizer moments start fresh. Returns the saved step.
    pub fn load_checkpoint(dir: &Path, optimizer: OptimizerConfig) -> Result<(Self, u64)> {
        let path = dir.join("manifest.txt");
        let mut doc = KvDoc::load(&path)?;
        let mut need = |key: &str| {
            doc.take(key).ok_or_else(|| Error::Format { path: path.clone(), message: format!("missing {key}") })
        };
        let step: u64 = need("step")?.parse()?;
        let gamma = need("gamma")?.parse_f64()?;
        let sync_interval: u64 = need("sync_interval")?.parse()?;
        let double_dqn = need("double_dqn")?.parse_bool()?;
        let input_dim: usize = need("input_dim")?.parse()?;
        let online = DuelingQNetwork::load(dir, "online", gamma)?;
        let target = DuelingQNetwork::load(dir, "target", gamma)?;
        if online.input_dim() != input_dim || target.input_dim() != input_dim {
            return Err(Error::Format { path, message: format!("networks disagree with input_dim {input_dim}") });
        }
        if sync_interval == 0 {
            return Err(Error::Format { path, message: "sync_interval must be positive".into() });
        }
        Ok((
            Self {
                online,
                target,
                sync_interval,
                double_dqn,
                optimizers: std::array::from_fn(|_| Optimizer::new(optimizer)),
            },
            step,
        ))
    }
}
