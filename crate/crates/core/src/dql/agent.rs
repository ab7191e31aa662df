//! Deep Q-learning agent: epsilon-greedy masked action selection, temporal
//! difference updates against a periodically synced target network, and a
//! JSON checkpoint format.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::{Adam, Gradients, QNetwork};
use super::replay::{ReplayBuffer, Transition};
use super::state::{DestinationEncoding, StateEncoder};
use crate::error::{Error, Result};
use crate::topology::ActionMask;

pub const NUM_ACTIONS: usize = 6;
const CHECKPOINT_FORMAT: &str = "ngso-dql-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardWeights {
    /// Penalty per queued packet at the chosen port.
    pub alpha: f64,
    /// Penalty per hop.
    pub beta: f64,
    /// Bonus on delivery.
    pub delivery: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            alpha: 0.01,
            beta: 0.1,
            delivery: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub learning_rate: f64,
    pub discount: f64,
    pub target_sync_steps: u64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_decay_steps: u64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    pub pretrain_steps: u64,
    pub hidden: Vec<usize>,
    pub reward: RewardWeights,
    pub delay_scale_ms: f64,
    pub destination_encoding: DestinationEncoding,
    /// One network for all satellites; otherwise one per satellite.
    pub shared_parameters: bool,
    /// Keep learning during pure-RL evaluation runs.
    pub online_learning_rl: bool,
    /// Simulated length of each pretraining episode.
    pub pretrain_episode_s: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            discount: 0.99,
            target_sync_steps: 1000,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_steps: 200_000,
            batch_size: 64,
            replay_capacity: 100_000,
            pretrain_steps: 1_000_000,
            hidden: vec![128, 64],
            reward: RewardWeights::default(),
            delay_scale_ms: 25.0,
            destination_encoding: DestinationEncoding::Geographic,
            shared_parameters: true,
            online_learning_rl: false,
            pretrain_episode_s: 120.0,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::config("agent.learning_rate", "must be > 0"));
        }
        if !(self.discount > 0.0 && self.discount < 1.0) {
            return Err(Error::config("agent.discount", "must be in (0, 1)"));
        }
        if self.target_sync_steps == 0 {
            return Err(Error::config("agent.target_sync_steps", "must be >= 1"));
        }
        for (field, e) in [
            ("agent.epsilon_start", self.epsilon_start),
            ("agent.epsilon_end", self.epsilon_end),
        ] {
            if !(0.0..=1.0).contains(&e) {
                return Err(Error::config(field, "must be in [0, 1]"));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::config("agent.batch_size", "must be >= 1"));
        }
        if self.replay_capacity == 0 {
            return Err(Error::config("agent.replay_capacity", "must be >= 1"));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::config("agent.hidden", "need at least one non-empty hidden layer"));
        }
        if !(self.delay_scale_ms > 0.0) {
            return Err(Error::config("agent.delay_scale_ms", "must be > 0"));
        }
        if !(self.pretrain_episode_s > 0.0) {
            return Err(Error::config("agent.pretrain_episode_s", "must be > 0"));
        }
        Ok(())
    }

    /// Linear decay from `epsilon_start` to `epsilon_end`, constant afterwards.
    pub fn epsilon(&self, step: u64) -> f64 {
        if self.epsilon_decay_steps == 0 || step >= self.epsilon_decay_steps {
            return self.epsilon_end;
        }
        let frac = step as f64 / self.epsilon_decay_steps as f64;
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac
    }

    pub fn layer_sizes(&self, input_dim: usize) -> Vec<usize> {
        let mut s = vec![input_dim];
        s.extend(&self.hidden);
        s.push(NUM_ACTIONS);
        s
    }

    pub fn encoder(&self, ground_nodes: usize) -> StateEncoder {
        StateEncoder {
            encoding: self.destination_encoding,
            delay_scale_s: self.delay_scale_ms * 1e-3,
            ground_nodes,
        }
    }
}

/// Per-transition reward: queue and hop penalties plus the delivery bonus.
pub fn reward(queue_len: usize, hops: usize, delivered: bool, weights: &RewardWeights) -> f64 {
    let bonus = if delivered { weights.delivery } else { 0.0 };
    -weights.alpha * queue_len as f64 - weights.beta * hops as f64 + bonus
}

/// Highest-valued feasible action, lowest index on ties.
pub fn masked_argmax(q: &[f64], mask: &ActionMask) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in q.iter().enumerate().take(NUM_ACTIONS) {
        if mask.0[i] && best.is_none_or(|b| v > q[b]) {
            best = Some(i);
        }
    }
    best
}

pub fn select_action<R: Rng + ?Sized>(
    net: &QNetwork,
    state: &[f64],
    epsilon: f64,
    mask: &ActionMask,
    rng: &mut R,
) -> Result<usize> {
    if mask.is_empty() {
        return Err(Error::NoAction);
    }
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        let k = rng.random_range(0..mask.len());
        return Ok(mask.ports().nth(k).expect("k < len").index());
    }
    let q = net.forward(state)?;
    Ok(masked_argmax(&q, mask).expect("mask non-empty"))
}

fn td_targets(target: &QNetwork, batch: &[&Transition], discount: f64) -> Result<Vec<f64>> {
    batch
        .iter()
        .map(|t| {
            if t.terminal || t.next_mask.is_empty() {
                return Ok(t.reward);
            }
            let q = target.forward(&t.next_state)?;
            let best = masked_argmax(&q, &t.next_mask).expect("mask non-empty");
            Ok(t.reward + discount * q[best])
        })
        .collect()
}

/// Mean squared TD error of `net` against targets from `target`.
pub fn td_loss(net: &QNetwork, target: &QNetwork, batch: &[&Transition], discount: f64) -> Result<f64> {
    Ok(td_loss_and_gradients(net, target, batch, discount)?.0)
}

pub fn td_loss_and_gradients(
    net: &QNetwork,
    target: &QNetwork,
    batch: &[&Transition],
    discount: f64,
) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(Error::Contract("empty TD batch".into()));
    }
    let ys = td_targets(target, batch, discount)?;
    let n = batch.len() as f64;
    let mut grads = Gradients::zeros_like(net);
    let mut loss = 0.0;
    let mut grad_out = vec![0.0; net.output_dim()];
    for (t, y) in batch.iter().zip(ys) {
        let trace = net.trace(&t.state)?;
        let err = trace.output()[t.action] - y;
        loss += err * err;
        grad_out.iter_mut().for_each(|g| *g = 0.0);
        grad_out[t.action] = 2.0 * err / n;
        net.backward(&trace, &grad_out, &mut grads);
    }
    Ok((loss / n, grads))
}

/// One Adam step on the TD loss; returns the loss before the step.
pub fn td_update(
    net: &mut QNetwork,
    target: &QNetwork,
    adam: &mut Adam,
    batch: &[&Transition],
    discount: f64,
) -> Result<f64> {
    let (loss, grads) = td_loss_and_gradients(net, target, batch, discount)?;
    adam.step(net, &grads);
    Ok(loss)
}

pub fn sync_target(net: &QNetwork, target: &mut QNetwork) {
    target.clone_from(net);
}

#[derive(Debug, Clone)]
pub struct QAgent {
    pub online: QNetwork,
    pub target: QNetwork,
    adam: Adam,
    replay: ReplayBuffer,
    updates: u64,
    since_sync: u64,
    steps: u64,
    rng: ChaCha8Rng,
}

impl QAgent {
    pub fn new(config: &AgentConfig, input_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let online = QNetwork::new(&config.layer_sizes(input_dim), &mut rng);
        Self::from_networks(config, online.clone(), online, seed)
    }

    fn from_networks(config: &AgentConfig, online: QNetwork, target: QNetwork, seed: u64) -> Self {
        let adam = Adam::new(&online, config.learning_rate);
        Self {
            online,
            target,
            adam,
            replay: ReplayBuffer::new(config.replay_capacity),
            updates: 0,
            since_sync: 0,
            steps: 0,
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0fda_7a11),
        }
    }

    pub fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// Transitions learned from so far.
    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn replay(&self) -> &ReplayBuffer {
        &self.replay
    }

    pub fn q_values(&self, state: &[f64]) -> Result<Vec<f64>> {
        self.online.forward(state)
    }

    pub fn act(&mut self, state: &[f64], epsilon: f64, mask: &ActionMask) -> Result<usize> {
        select_action(&self.online, state, epsilon, mask, &mut self.rng)
    }

    /// Stores `t`, runs one TD update on a sampled batch and syncs the target
    /// network every `target_sync_steps` updates.
    pub fn learn(&mut self, t: Transition, config: &AgentConfig) -> Result<f64> {
        self.replay.push(t);
        self.steps += 1;
        let batch = self.replay.sample(config.batch_size, &mut self.rng);
        let loss = td_update(&mut self.online, &self.target, &mut self.adam, &batch, config.discount)?;
        self.updates += 1;
        self.since_sync += 1;
        if self.since_sync >= config.target_sync_steps {
            sync_target(&self.online, &mut self.target);
            self.since_sync = 0;
        }
        Ok(loss)
    }

    pub fn since_sync(&self) -> u64 {
        self.since_sync
    }
}

/// Agents for a constellation: one shared network or one per satellite.
#[derive(Debug, Clone)]
pub struct AgentPool {
    pub config: AgentConfig,
    input_dim: usize,
    agents: Vec<QAgent>,
}

#[derive(Serialize, Deserialize)]
struct AgentState {
    online: QNetwork,
    target: QNetwork,
    adam: Adam,
    updates: u64,
    since_sync: u64,
    steps: u64,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    input_dim: usize,
    config: AgentConfig,
    agents: Vec<AgentState>,
}

impl AgentPool {
    pub fn new(config: &AgentConfig, input_dim: usize, satellites: usize, seed: u64) -> Self {
        let count = if config.shared_parameters { 1 } else { satellites.max(1) };
        let agents = (0..count)
            .map(|i| QAgent::new(config, input_dim, seed.wrapping_add(i as u64)))
            .collect();
        Self {
            config: config.clone(),
            input_dim,
            agents,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }

    pub fn agent(&self, satellite: usize) -> &QAgent {
        &self.agents[satellite % self.agents.len()]
    }

    pub fn agent_mut(&mut self, satellite: usize) -> &mut QAgent {
        let n = self.agents.len();
        &mut self.agents[satellite % n]
    }

    pub fn agents(&self) -> &[QAgent] {
        &self.agents
    }

    pub fn total_steps(&self) -> u64 {
        self.agents.iter().map(|a| a.steps).sum()
    }

    pub fn reseed(&mut self, seed: u64) {
        for (i, a) in self.agents.iter_mut().enumerate() {
            a.reseed(seed.wrapping_add(i as u64));
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let ck = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            input_dim: self.input_dim,
            config: self.config.clone(),
            agents: self
                .agents
                .iter()
                .map(|a| AgentState {
                    online: a.online.clone(),
                    target: a.target.clone(),
                    adam: a.adam.clone(),
                    updates: a.updates,
                    since_sync: a.since_sync,
                    steps: a.steps,
                })
                .collect(),
        };
        let text = serde_json::to_string(&ck).map_err(|e| Error::Checkpoint {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        crate::cli::write_atomic(path, text.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let err = |message: String| Error::Checkpoint {
            path: path.to_path_buf(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(err(format!("unsupported format {} v{}", ck.format, ck.version)));
        }
        if ck.agents.is_empty() {
            return Err(err("no agents".into()));
        }
        let mut agents = Vec::with_capacity(ck.agents.len());
        for (i, s) in ck.agents.into_iter().enumerate() {
            if s.online.input_dim() != ck.input_dim || s.online.sizes() != s.target.sizes() {
                return Err(err(format!("agent {i} has inconsistent shapes")));
            }
            let mut a = QAgent::from_networks(&ck.config, s.online, s.target, i as u64);
            a.adam = s.adam;
            a.updates = s.updates;
            a.since_sync = s.since_sync;
            a.steps = s.steps;
            agents.push(a);
        }
        Ok(Self {
            config: ck.config,
            input_dim: ck.input_dim,
            agents,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::Port;

    fn net_with_output(q: [f64; 6]) -> QNetwork {
        // 1 -> 1 -> 6 network whose output equals `q` for input 0.
        let mut net = QNetwork::zeros(&[1, 1, 6]);
        let mut p = net.params();
        let n = p.len();
        p[n - 6..].copy_from_slice(&q);
        net.set_params(&p).unwrap();
        net
    }

    #[test]
    fn greedy_masked_selection() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = net_with_output([5.0, 1.0, 1.0, 1.0, 1.0, 1.0]);
        assert_eq!(select_action(&net, &[0.0], 0.0, &ActionMask::FULL, &mut rng).unwrap(), 0);
        let mask = ActionMask::FULL.without(Port::Ut);
        assert_eq!(select_action(&net, &[0.0], 0.0, &mask, &mut rng).unwrap(), 1);
        assert!(matches!(
            select_action(&net, &[0.0], 0.0, &ActionMask::EMPTY, &mut rng),
            Err(Error::NoAction)
        ));
    }

    #[test]
    fn uniform_exploration_over_feasible() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net = net_with_output([9.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let mut mask = ActionMask::EMPTY;
        for p in [Port::Gw, Port::West, Port::Backward] {
            mask.insert(p);
        }
        let n = 10_000;
        let mut counts = [0usize; 6];
        for _ in 0..n {
            counts[select_action(&net, &[0.0], 1.0, &mask, &mut rng).unwrap()] += 1;
        }
        let expect = n as f64 / 3.0;
        let sigma = (n as f64 * (1.0 / 3.0) * (2.0 / 3.0)).sqrt();
        for p in mask.ports() {
            assert!((counts[p.index()] as f64 - expect).abs() < 3.0 * sigma, "{counts:?}");
        }
        assert_eq!(counts[0] + counts[2] + counts[4], 0);
    }

    #[test]
    fn reward_examples() {
        let w = RewardWeights::default();
        assert_eq!(reward(0, 0, true, &w), 10.0);
        assert_eq!(reward(0, 0, false, &w), 0.0);
        assert!((reward(50, 6, true, &w) - 8.9).abs() < 1e-12);
    }

    #[test]
    fn epsilon_schedule_three_points() {
        let c = AgentConfig::default();
        assert_eq!(c.epsilon(0), 1.0);
        assert!((c.epsilon(100_000) - 0.525).abs() < 1e-12);
        assert!((c.epsilon(200_000) - 0.05).abs() < 1e-12);
        assert_eq!(c.epsilon(5_000_000), 0.05);
    }

    fn transition(state: Vec<f64>, action: usize, reward: f64, terminal: bool) -> Transition {
        let next_state = vec![0.0; state.len()];
        Transition {
            state,
            action,
            reward,
            next_state,
            terminal,
            next_mask: ActionMask::FULL,
        }
    }

    #[test]
    fn zero_network_terminal_batch_is_fixed_point() {
        let mut net = QNetwork::zeros(&[4, 3, 6]);
        let target = net.clone();
        let before = net.clone();
        let mut adam = Adam::new(&net, 1e-3);
        let t = transition(vec![1.0, 2.0, 3.0, 4.0], 2, 0.0, true);
        let loss = td_update(&mut net, &target, &mut adam, &[&t, &t], 0.99).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(net, before);
        assert!(td_update(&mut net, &target, &mut adam, &[], 0.99).is_err());
    }

    #[test]
    fn repeated_updates_drive_q_to_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut net = QNetwork::new(&[4, 8, 6], &mut rng);
        let target = net.clone();
        let mut adam = Adam::new(&net, 1e-2);
        let t = transition(vec![0.5, -0.2, 0.1, 0.9], 3, 1.5, true);
        let mut losses = Vec::new();
        for _ in 0..300 {
            losses.push(td_update(&mut net, &target, &mut adam, &[&t], 0.99).unwrap());
        }
        assert!(losses.last().unwrap() < &1e-6, "{:?}", &losses[losses.len() - 3..]);
        assert!(losses.windows(50).step_by(50).all(|w| w[49] <= w[0]));
        assert!((net.forward(&t.state).unwrap()[3] - 1.5).abs() < 1e-3);
    }

    #[test]
    fn target_sync_semantics() {
        let cfg = AgentConfig {
            target_sync_steps: 3,
            batch_size: 2,
            ..Default::default()
        };
        let mut agent = QAgent::new(&cfg, 4, 9);
        let init = agent.target.clone();
        let t = transition(vec![0.1, 0.2, 0.3, 0.4], 1, 1.0, true);
        agent.learn(t.clone(), &cfg).unwrap();
        agent.learn(t.clone(), &cfg).unwrap();
        assert_eq!(agent.target, init);
        assert_ne!(agent.online, init);
        agent.learn(t, &cfg).unwrap();
        assert_eq!(agent.since_sync(), 0);
        let s = [0.3, -1.0, 2.0, 0.0];
        assert_eq!(agent.online.forward(&s).unwrap(), agent.target.forward(&s).unwrap());
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("agent.json");
        let cfg = AgentConfig {
            shared_parameters: false,
            hidden: vec![5],
            ..Default::default()
        };
        let mut pool = AgentPool::new(&cfg, 22, 3, 1);
        let t = transition(vec![0.5; 22], 4, 1.0, true);
        pool.agent_mut(1).learn(t, &cfg).unwrap();
        pool.save(&path).unwrap();
        let back = AgentPool::load(&path).unwrap();
        assert_eq!(back.len(), 3);
        assert_eq!(back.config, cfg);
        for (a, b) in pool.agents().iter().zip(back.agents()) {
            assert_eq!(a.online, b.online);
            assert_eq!(a.target, b.target);
            assert_eq!(a.adam, b.adam);
            assert_eq!(a.steps(), b.steps());
        }
        std::fs::write(&path, "{}").unwrap();
        assert!(matches!(AgentPool::load(&path), Err(Error::Checkpoint { .. })));
    }

    #[test]
    fn parameters_stay_finite_on_random_data() {
        let cfg = AgentConfig::default();
        let mut agent = QAgent::new(&cfg, 22, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..10_000 {
            let state: Vec<f64> = (0..22).map(|_| rng.random_range(0.0..1.0)).collect();
            let next_state: Vec<f64> = (0..22).map(|_| rng.random_range(0.0..1.0)).collect();
            let t = Transition {
                state,
                action: rng.random_range(0..6),
                reward: rng.random_range(-2.0..10.0),
                next_state,
                terminal: rng.random_bool(0.2),
                next_mask: ActionMask([true, false, true, true, rng.random_bool(0.5), false]),
            };
            agent.learn(t, &cfg).unwrap();
        }
        assert!(agent.online.is_finite());
        assert!(agent.target.is_finite());
    }
}
