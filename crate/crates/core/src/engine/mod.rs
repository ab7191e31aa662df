//! Discrete-event packet simulation.
//!
//! One run owns its topology, queues, packets and (for learned policies) an
//! independent copy of the agents. Packets are created at ground sources,
//! handed to the attached satellite, forwarded hop by hop through per-port
//! drop-tail FIFOs and delivered over the feeder link of the satellite that
//! currently serves the destination.

pub mod event;
pub mod metrics;
pub mod queue;

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::ScenarioConfig;
use crate::dql::{reward, AgentPool, LocalObservation, StateEncoder, StateVector, Transition};
use crate::error::{Error, Result};
use crate::orbits::{propagate, GroundNode};
use crate::policy::{
    count_decision_costs, hybrid_decide, FallbackReason, table_decide, Decision, DecisionCounters, DecisionMode, HybridInput,
    PolicyKind,
};
use crate::table::{build_table, RoutingTable, WeightAccumulator};
use crate::topology::{
    snapshot_with_outages, ActionMask, DelayParams, LinkKind, NodeId, Port, TopologySnapshot,
};
use crate::traffic::{flow_rng, next_arrival, pair_flows, DropReason, Flow, Packet};

use event::{EventKind, EventQueue};
pub use metrics::{aggregate, csv_header, csv_row, percentile, AggregatePoint, MeanStd, MetricsReport, CSV_COLUMNS};
use queue::{Enqueue, InService, PortQueue};

/// Added to the run seed for the agents' sampling streams.
pub const AGENT_SEED_OFFSET: u64 = 1_000_003;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSpec {
    pub policy: PolicyKind,
    pub eta: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PacketTrace {
    pub packet_id: u64,
    pub flow_id: u32,
    pub created_s: f64,
    pub delivered_s: Option<f64>,
    pub dropped: Option<DropReason>,
    pub path: Vec<u32>,
    /// Propagation time over the traversed links, s.
    pub propagation_s: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: MetricsReport,
    /// Packets created after warm-up, in creation order (when traces are on).
    pub traces: Vec<PacketTrace>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    pub steps: u64,
    pub episodes: u64,
    pub final_epsilon: f64,
    /// Mean undiscounted return of packets that finished during pretraining.
    pub mean_episode_reward: f64,
    pub mean_loss: f64,
}

/// Agents with fresh weights sized for this scenario.
pub fn fresh_agents(config: &ScenarioConfig, seed: u64) -> Result<AgentPool> {
    let ground = config.ground_segment()?;
    let dim = config.agent.encoder(ground.nodes.len()).dim();
    Ok(AgentPool::new(
        &config.agent,
        dim,
        config.constellation.num_satellites(),
        seed.wrapping_add(AGENT_SEED_OFFSET),
    ))
}

/// Simulates one (policy, eta, seed) point. Learned policies need `agents`;
/// the run works on its own copy.
pub fn run(config: &ScenarioConfig, spec: RunSpec, agents: Option<&AgentPool>) -> Result<RunOutput> {
    config.validate()?;
    if !(spec.eta > 0.0) || !spec.eta.is_finite() {
        return Err(Error::config("traffic.eta", format!("must be positive, got {}", spec.eta)));
    }
    let mut local = match (spec.policy.needs_agent(), agents) {
        (true, None) => {
            return Err(Error::config(
                "checkpoint",
                format!("policy '{}' needs a trained agent", spec.policy),
            ))
        }
        (true, Some(a)) => {
            let mut a = a.clone();
            a.reseed(spec.seed.wrapping_add(AGENT_SEED_OFFSET));
            Some(a)
        }
        (false, _) => None,
    };
    let started = Instant::now();
    let mut sim = Sim::new(config, spec, Mode::Evaluate, local.as_mut())?;
    sim.run()?;
    let wall = started.elapsed().as_secs_f64();
    Ok(sim.finish(wall))
}

/// Offline exploration: episodes with random load and orbital phase until
/// the agents have learned from `budget` transitions.
pub fn pretrain(config: &ScenarioConfig, agents: &mut AgentPool, budget: u64, seed: u64) -> Result<PretrainReport> {
    config.validate()?;
    if budget == 0 {
        return Err(Error::config("agent.pretrain_steps", "budget must be >= 1"));
    }
    let lo = config.traffic.eta.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = config.traffic.eta.iter().copied().fold(0.0, f64::max);
    let period = config.constellation.orbital_period_s();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start_steps = agents.total_steps();
    let target = start_steps.saturating_add(budget);
    let mut returns = Vec::new();
    let (mut loss_sum, mut loss_n) = (0.0, 0u64);
    let mut episodes = 0;
    while agents.total_steps() < target {
        let eta = if hi > lo { rng.random_range(lo..=hi) } else { lo };
        let mut ep = config.clone();
        ep.constellation.epoch_s += rng.random_range(0.0..period);
        ep.engine.t_sim_s = config.agent.pretrain_episode_s;
        ep.engine.warm_up_s = 0.0;
        ep.engine.record_timing = false;
        ep.engine.record_traces = false;
        let spec = RunSpec {
            policy: PolicyKind::Rl,
            eta,
            seed: rng.random(),
        };
        agents.reseed(spec.seed.wrapping_add(AGENT_SEED_OFFSET));
        let before = agents.total_steps();
        let mut sim = Sim::new(&ep, spec, Mode::Pretrain { until_steps: target }, Some(agents))?;
        sim.run()?;
        returns.append(&mut sim.finished_returns);
        loss_sum += sim.loss_sum;
        loss_n += sim.td_updates;
        drop(sim);
        episodes += 1;
        if agents.total_steps() == before {
            return Err(Error::Contract(
                "pretraining episode produced no transitions; check traffic and topology".into(),
            ));
        }
    }
    let steps = agents.total_steps() - start_steps;
    let eps_step = agents.agents().iter().map(|a| a.steps()).max().unwrap_or(0);
    Ok(PretrainReport {
        steps,
        episodes,
        final_epsilon: config.agent.epsilon(eps_step),
        mean_episode_reward: metrics::mean(&returns).unwrap_or(0.0),
        mean_loss: if loss_n > 0 { loss_sum / loss_n as f64 } else { 0.0 },
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Mode {
    Evaluate,
    Pretrain { until_steps: u64 },
}

type Decided = (Decision, Option<StateVector>, Option<FallbackReason>);

/// Decision awaiting its next state.
#[derive(Debug, Clone)]
struct Pending {
    state: Vec<f64>,
    action: usize,
    queue_len: usize,
    satellite: usize,
}

struct Sim<'a> {
    cfg: &'a ScenarioConfig,
    spec: RunSpec,
    mode: Mode,
    params: DelayParams,
    ground: Vec<GroundNode>,
    n_sat: usize,
    flows: Vec<Flow>,
    flow_rngs: Vec<ChaCha8Rng>,
    snapshot: TopologySnapshot,
    table: Option<RoutingTable>,
    weights: WeightAccumulator,
    queues: Vec<PortQueue>,
    packets: Vec<Packet>,
    pending: Vec<Option<Pending>>,
    returns: Vec<f64>,
    finished_returns: Vec<f64>,
    events: EventQueue,
    tick: u64,
    rebuilds: u64,
    agents: Option<&'a mut AgentPool>,
    encoder: StateEncoder,
    counters: DecisionCounters,
    learn_fallback: bool,
    learn_rl: bool,
    decision_time_s: f64,
    timed_decisions: u64,
    td_updates: u64,
    loss_sum: f64,
    stopped: bool,
}

impl<'a> Sim<'a> {
    fn new(cfg: &'a ScenarioConfig, spec: RunSpec, mode: Mode, agents: Option<&'a mut AgentPool>) -> Result<Self> {
        let segment = cfg.ground_segment()?;
        let ground = segment.nodes;
        let n_sat = cfg.constellation.num_satellites();
        let params = cfg.delay_params();
        let encoder = cfg.agent.encoder(ground.len());
        if let Some(pool) = agents.as_deref() {
            if pool.input_dim() != encoder.dim() {
                return Err(Error::config(
                    "checkpoint",
                    format!(
                        "agent expects {} state inputs, scenario produces {}",
                        pool.input_dim(),
                        encoder.dim()
                    ),
                ));
            }
        }

        let node = |i: usize| NodeId((n_sat + i) as u32);
        let gateways: Vec<NodeId> = ground
            .iter()
            .enumerate()
            .filter(|(_, g)| g.kind == crate::orbits::GroundKind::Gateway)
            .map(|(i, _)| node(i))
            .collect();
        let terminals: Vec<NodeId> = ground
            .iter()
            .enumerate()
            .filter(|(_, g)| g.kind == crate::orbits::GroundKind::UserTerminal)
            .map(|(i, _)| node(i))
            .collect();
        let flows = pair_flows(&gateways, &terminals, cfg.traffic.n_flows, cfg.traffic.lambda0, spec.seed)?;
        let flow_rngs = flows.iter().map(|f| flow_rng(spec.seed, f.flow_id)).collect();

        let n_nodes = n_sat + ground.len();
        let mut queues = Vec::with_capacity(n_nodes * Port::COUNT);
        for i in 0..n_nodes {
            for _ in 0..Port::COUNT {
                queues.push(if i < n_sat {
                    PortQueue::bounded(cfg.engine.buffer)
                } else {
                    PortQueue::unbounded()
                });
            }
        }

        let learn_fallback = spec.policy == PolicyKind::Hybrid;
        let learn_rl = matches!(mode, Mode::Pretrain { .. }) || cfg.agent.online_learning_rl;
        let snapshot = TopologySnapshot::empty(n_sat, ground.iter().map(|g| g.kind).collect(), params.clone(), 0.0);
        let mut sim = Self {
            cfg,
            spec,
            mode,
            params,
            ground,
            n_sat,
            flows,
            flow_rngs,
            snapshot,
            table: None,
            weights: WeightAccumulator::new(),
            queues,
            packets: Vec::new(),
            pending: Vec::new(),
            returns: Vec::new(),
            finished_returns: Vec::new(),
            events: EventQueue::new(),
            tick: 0,
            rebuilds: 0,
            agents,
            encoder,
            counters: DecisionCounters::default(),
            learn_fallback,
            learn_rl,
            decision_time_s: 0.0,
            timed_decisions: 0,
            td_updates: 0,
            loss_sum: 0.0,
            stopped: false,
        };
        sim.snapshot = sim.build_snapshot(0.0)?;
        sim.events.schedule(0.0, EventKind::TopologyTick);
        if spec.policy.needs_table() {
            sim.events.schedule(0.0, EventKind::TableRebuild);
        }
        for f in 0..sim.flows.len() {
            let t = next_arrival(&sim.flows[f], spec.eta, 0.0, &mut sim.flow_rngs[f])?;
            if t < cfg.engine.t_sim_s {
                sim.events.schedule(t, EventKind::Generate { flow: f as u32 });
            }
        }
        sim.events.schedule(cfg.engine.t_sim_s, EventKind::MetricsFlush);
        Ok(sim)
    }

    fn build_snapshot(&self, t: f64) -> Result<TopologySnapshot> {
        let positions = propagate(&self.cfg.constellation, t)?;
        Ok(snapshot_with_outages(
            &self.cfg.constellation,
            &positions,
            &self.ground,
            &self.params,
            t,
            &self.cfg.engine.outages,
        ))
    }

    fn run(&mut self) -> Result<()> {
        while let Some(ev) = self.events.pop() {
            match ev.kind {
                EventKind::TopologyTick => self.on_tick()?,
                EventKind::TableRebuild => self.on_rebuild()?,
                EventKind::TxComplete { node, port, generation } => self.on_tx_complete(node, port, generation)?,
                EventKind::PacketArrival { packet, node } => self.on_arrival(packet, node)?,
                EventKind::Generate { flow } => self.on_generate(flow)?,
                EventKind::MetricsFlush => break,
            }
            if self.stopped {
                break;
            }
        }
        Ok(())
    }

    fn now(&self) -> f64 {
        self.events.now()
    }

    fn qidx(node: NodeId, port: Port) -> usize {
        node.index() * Port::COUNT + port.index()
    }

    fn queue_len(&self, node: NodeId, port: Port) -> usize {
        self.queues[Self::qidx(node, port)].len()
    }

    fn counted(&self, pid: u32) -> bool {
        self.packets[pid as usize].created_s >= self.cfg.engine.warm_up_s
    }

    fn ground_of(&self, node: NodeId) -> &GroundNode {
        &self.ground[node.index() - self.n_sat]
    }

    // ---- topology and tables ------------------------------------------

    fn on_tick(&mut self) -> Result<()> {
        let now = self.now();
        if self.tick > 0 && !self.cfg.engine.freeze_topology {
            self.snapshot = self.build_snapshot(now)?;
            self.revalidate_service()?;
        }
        if self.spec.policy.needs_table() {
            self.weights.add(&self.snapshot)?;
        }
        self.tick += 1;
        let next = self.tick as f64 * self.cfg.engine.topology_step_s;
        if next < self.cfg.engine.t_sim_s {
            self.events.schedule(next, EventKind::TopologyTick);
        }
        Ok(())
    }

    /// Aborts transmissions whose link vanished, then restarts every idle
    /// port with work (including ground nodes that just got a satellite).
    fn revalidate_service(&mut self) -> Result<()> {
        let n_nodes = self.n_sat + self.ground.len();
        for i in 0..n_nodes {
            let node = NodeId(i as u32);
            for &port in Self::ports_of(node, self.n_sat) {
                let q = &mut self.queues[Self::qidx(node, port)];
                if let Some(s) = q.in_service {
                    let alive = self.snapshot.out_link(node, port).is_some_and(|l| l.dst == s.next);
                    if !alive {
                        q.abort_service();
                    }
                }
            }
        }
        for i in 0..n_nodes {
            let node = NodeId(i as u32);
            for &port in Self::ports_of(node, self.n_sat) {
                let q = &self.queues[Self::qidx(node, port)];
                if q.in_service.is_none() && q.waiting() > 0 {
                    self.try_serve(node, port)?;
                }
            }
        }
        Ok(())
    }

    fn ports_of(node: NodeId, n_sat: usize) -> &'static [Port] {
        if node.index() < n_sat {
            &Port::ACTIONS
        } else {
            &[Port::Uplink]
        }
    }

    fn on_rebuild(&mut self) -> Result<()> {
        let weights = self.weights.means();
        let mut table = build_table(&self.snapshot, &weights)?;
        table.epoch_s = self.now();
        self.table = Some(table);
        self.weights.clear();
        self.rebuilds += 1;
        let next = self.rebuilds as f64 * self.cfg.engine.table_epoch_s;
        if next < self.cfg.engine.t_sim_s {
            self.events.schedule(next, EventKind::TableRebuild);
        }
        Ok(())
    }

    // ---- traffic ----------------------------------------------------------

    fn on_generate(&mut self, flow: u32) -> Result<()> {
        let now = self.now();
        let f = &self.flows[flow as usize];
        let pid = self.packets.len() as u32;
        let packet = Packet::new(pid as u64, f, self.params.packet_len_bits, now);
        let src = packet.src;
        self.packets.push(packet);
        self.pending.push(None);
        self.returns.push(0.0);
        self.queues[Self::qidx(src, Port::Uplink)].enqueue(pid);
        self.try_serve(src, Port::Uplink)?;

        let next = next_arrival(&self.flows[flow as usize], self.spec.eta, now, &mut self.flow_rngs[flow as usize])?;
        if next < self.cfg.engine.t_sim_s {
            self.events.schedule(next, EventKind::Generate { flow });
        }
        Ok(())
    }

    /// Ports a packet may leave `node` through: every ISL, and the feeder
    /// only when it reaches the packet's destination.
    fn packet_mask(&self, node: NodeId, dst: NodeId) -> ActionMask {
        let mut m = ActionMask::EMPTY;
        for l in self.snapshot.out_links(node) {
            if l.kind == LinkKind::Isl || l.dst == dst {
                m.insert(l.port);
            }
        }
        m
    }

    fn on_arrival(&mut self, pid: u32, node: NodeId) -> Result<()> {
        let p = &mut self.packets[pid as usize];
        p.hop_log.push(node);
        if !self.snapshot.is_satellite(node) {
            if node != p.dst {
                return Err(Error::Contract(format!(
                    "packet {} reached ground node {node} but is bound for {}",
                    p.packet_id, p.dst
                )));
            }
            p.delivered_s = Some(self.events.now());
            debug_assert!(p.delay_s().unwrap() + 1e-12 >= p.propagation_s);
            self.complete_pending(pid, None, true)?;
            self.finish_packet(pid);
            return Ok(());
        }
        if p.hops() >= self.cfg.engine.ttl_hops {
            self.complete_pending(pid, None, false)?;
            self.drop_packet(pid, DropReason::Ttl);
            return Ok(());
        }
        if self.pending[pid as usize].is_some() {
            let dst = self.packets[pid as usize].dst;
            let mask = self.packet_mask(node, dst);
            if mask.is_empty() {
                self.complete_pending(pid, None, false)?;
            } else {
                let s = self.encode(node, dst, mask);
                self.complete_pending(pid, Some((s, mask)), false)?;
            }
        }
        self.route(pid, node)
    }

    fn finish_packet(&mut self, pid: u32) {
        if matches!(self.mode, Mode::Pretrain { .. }) {
            self.finished_returns.push(self.returns[pid as usize]);
        }
    }

    fn drop_packet(&mut self, pid: u32, reason: DropReason) {
        self.pending[pid as usize] = None;
        self.packets[pid as usize].dropped = Some(reason);
        self.finish_packet(pid);
    }

    // ---- forwarding -------------------------------------------------------

    fn encode(&self, node: NodeId, dst: NodeId, mask: ActionMask) -> StateVector {
        let obs = LocalObservation::from_snapshot(node, &self.snapshot, mask, self.cfg.engine.buffer, |p| {
            self.queue_len(node, p)
        });
        self.encoder.encode(&obs, self.ground_of(dst))
    }

    /// Decides and enqueues. No feasible action drops the packet.
    fn route(&mut self, pid: u32, node: NodeId) -> Result<()> {
        let started = self.cfg.engine.record_timing.then(Instant::now);
        let outcome = self.decide(pid, node)?;
        let counted = self.counted(pid);
        if let Some(t0) = started {
            if counted {
                self.decision_time_s += t0.elapsed().as_secs_f64();
                self.timed_decisions += 1;
            }
        }
        if counted && self.spec.policy.needs_table() {
            self.counters.table_lookups += 1;
        }
        let Some((decision, state, fallback)) = outcome else {
            self.complete_pending(pid, None, false)?;
            self.drop_packet(pid, DropReason::NoRoute);
            return Ok(());
        };
        if counted {
            self.counters.record(&decision);
            if let Some(reason) = fallback {
                self.counters.record_fallback(reason);
            }
            if decision.mode != DecisionMode::Table {
                self.counters.q_evaluations += 1;
            }
        }
        let learns = match decision.mode {
            DecisionMode::Table => false,
            DecisionMode::Fallback => self.learn_fallback,
            DecisionMode::PureRl => self.learn_rl,
        };
        self.pending[pid as usize] = match (learns, state) {
            (true, Some(s)) => Some(Pending {
                state: s.0,
                action: decision.action.index(),
                queue_len: self.queue_len(node, decision.action),
                satellite: node.index(),
            }),
            _ => None,
        };
        self.enqueue(pid, node, decision.action)
    }

    /// The decision, the encoded state when the agent was consulted, and
    /// the hybrid fallback cause.
    fn decide(&mut self, pid: u32, node: NodeId) -> Result<Option<Decided>> {
        let dst = self.packets[pid as usize].dst;
        let mask = self.packet_mask(node, dst);
        match self.spec.policy {
            PolicyKind::Table => {
                let table = self.table.as_ref().expect("table built at t = 0");
                Ok(table_decide(table, node, dst, &mask).ok().map(|d| (d, None, None)))
            }
            PolicyKind::Rl => {
                if mask.is_empty() {
                    return Ok(None);
                }
                let state = self.encode(node, dst, mask);
                let epsilon = match self.mode {
                    Mode::Evaluate => 0.0,
                    Mode::Pretrain { .. } => {
                        let pool = self.agents.as_deref().expect("agents present");
                        self.cfg.agent.epsilon(pool.agent(node.index()).steps())
                    }
                };
                let pool = self.agents.as_deref_mut().expect("agents present");
                let a = pool.agent_mut(node.index()).act(state.as_slice(), epsilon, &mask)?;
                let port = Port::from_action(a).expect("valid action");
                Ok(Some((Decision::learned(port, DecisionMode::PureRl), Some(state), None)))
            }
            PolicyKind::Hybrid => {
                let table = self.table.as_ref().expect("table built at t = 0");
                let pool = self.agents.as_deref().expect("agents present");
                let net = &pool.agent(node.index()).online;
                let input = HybridInput {
                    current: node,
                    dest: dst,
                    feasible: mask,
                    buffer: self.cfg.engine.buffer,
                    queue_len: &|p| self.queue_len(node, p),
                };
                match hybrid_decide(table, net, &input, || self.encode(node, dst, mask)) {
                    Ok(h) => Ok(Some((h.decision, h.state, h.fallback))),
                    Err(Error::NoAction) => Ok(None),
                    Err(e) => Err(e),
                }
            }
        }
    }

    fn enqueue(&mut self, pid: u32, node: NodeId, port: Port) -> Result<()> {
        match self.queues[Self::qidx(node, port)].enqueue(pid) {
            Enqueue::Accepted => self.try_serve(node, port),
            Enqueue::Dropped => {
                self.complete_pending(pid, None, false)?;
                self.drop_packet(pid, DropReason::Overflow);
                Ok(())
            }
        }
    }

    /// Starts transmitting the head of the line if the port is idle. A
    /// satellite packet whose link is no longer usable is re-decided.
    fn try_serve(&mut self, node: NodeId, port: Port) -> Result<()> {
        let qi = Self::qidx(node, port);
        loop {
            let q = &self.queues[qi];
            if q.in_service.is_some() {
                return Ok(());
            }
            let Some(pid) = q.front() else {
                return Ok(());
            };
            let dst = self.packets[pid as usize].dst;
            let link = self
                .snapshot
                .out_link(node, port)
                .filter(|l| l.kind == LinkKind::Isl || port == Port::Uplink || l.dst == dst)
                .copied();
            match link {
                Some(l) => {
                    let q = &mut self.queues[qi];
                    q.pop_front();
                    q.in_service = Some(InService {
                        packet: pid,
                        next: l.dst,
                        propagation_s: l.distance_km * 1e3 / self.params.c_eff_m_s,
                    });
                    let generation = q.generation;
                    let tx = self.params.packet_len_bits / l.rate_bps;
                    self.events
                        .schedule(self.now() + tx, EventKind::TxComplete { node, port, generation });
                    return Ok(());
                }
                None if port == Port::Uplink => return Ok(()),
                None => {
                    self.queues[qi].pop_front();
                    self.route(pid, node)?;
                }
            }
        }
    }

    fn on_tx_complete(&mut self, node: NodeId, port: Port, generation: u64) -> Result<()> {
        let q = &mut self.queues[Self::qidx(node, port)];
        if q.generation != generation {
            return Ok(());
        }
        let s = q.in_service.take().expect("completion for an idle port");
        self.packets[s.packet as usize].propagation_s += s.propagation_s;
        self.events.schedule(
            self.now() + s.propagation_s,
            EventKind::PacketArrival {
                packet: s.packet,
                node: s.next,
            },
        );
        self.try_serve(node, port)
    }

    // ---- learning -------------------------------------------------------

    /// Closes the packet's open transition. `next` is the state and mask at
    /// the next satellite; `None` makes it terminal.
    fn complete_pending(&mut self, pid: u32, next: Option<(StateVector, ActionMask)>, delivered: bool) -> Result<()> {
        let Some(p) = self.pending[pid as usize].take() else {
            return Ok(());
        };
        let r = reward(p.queue_len, 1, delivered, &self.cfg.agent.reward);
        self.returns[pid as usize] += r;
        let (next_state, next_mask, terminal) = match next {
            Some((s, m)) => (s.0, m, false),
            None => (vec![0.0; p.state.len()], ActionMask::EMPTY, true),
        };
        let t = Transition {
            state: p.state,
            action: p.action,
            reward: r,
            next_state,
            terminal,
            next_mask,
        };
        let pool = self.agents.as_deref_mut().expect("agents present when learning");
        let loss = pool.agent_mut(p.satellite).learn(t, &self.cfg.agent)?;
        self.td_updates += 1;
        self.loss_sum += loss;
        if let Mode::Pretrain { until_steps } = self.mode {
            if pool.total_steps() >= until_steps {
                self.stopped = true;
            }
        }
        Ok(())
    }

    // ---- metrics --------------------------------------------------------

    fn finish(self, wall_time_s: f64) -> RunOutput {
        let e = &self.cfg.engine;
        let mut generated = 0;
        let mut delivered = 0;
        let mut drops = [0u64; 3];
        let mut in_flight = 0;
        let mut delays = Vec::new();
        let mut hops = Vec::new();
        let mut traces = Vec::new();
        // Delivery order keeps the sidecar stable and meaningful.
        let mut deliveries: Vec<(f64, u64, f64)> = Vec::new();
        for p in &self.packets {
            if p.created_s < e.warm_up_s {
                continue;
            }
            generated += 1;
            match (p.delivered_s, p.dropped) {
                (Some(t), _) => {
                    delivered += 1;
                    deliveries.push((t, p.packet_id, (t - p.created_s) * 1e3));
                    hops.push(p.hops() as f64);
                }
                (None, Some(DropReason::Overflow)) => drops[0] += 1,
                (None, Some(DropReason::Ttl)) => drops[1] += 1,
                (None, Some(DropReason::NoRoute)) => drops[2] += 1,
                (None, None) => in_flight += 1,
            }
            if e.record_traces {
                traces.push(PacketTrace {
                    packet_id: p.packet_id,
                    flow_id: p.flow_id,
                    created_s: p.created_s,
                    delivered_s: p.delivered_s,
                    dropped: p.dropped,
                    path: p.hop_log.iter().map(|n| n.0).collect(),
                    propagation_s: p.propagation_s,
                });
            }
        }
        deliveries.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        delays.extend(deliveries.iter().map(|d| d.2));
        let sorted = metrics::sorted(&delays);
        let costs = count_decision_costs(self.spec.policy, &self.counters);
        let report = MetricsReport {
            policy: self.spec.policy,
            eta: self.spec.eta,
            seed: self.spec.seed,
            generated,
            delivered,
            dropped_overflow: drops[0],
            dropped_ttl: drops[1],
            dropped_noroute: drops[2],
            in_flight,
            pdr: if generated > 0 {
                delivered as f64 / generated as f64
            } else {
                0.0
            },
            mean_delay_ms: metrics::mean(&delays),
            p50_delay_ms: percentile(&sorted, 50.0),
            p95_delay_ms: percentile(&sorted, 95.0),
            mean_hops: metrics::mean(&hops),
            throughput_pps: delivered as f64 / (e.t_sim_s - e.warm_up_s),
            p_fb: costs.p_fb,
            decisions: self.counters,
            mean_decision_s: if self.timed_decisions > 0 {
                self.decision_time_s / self.timed_decisions as f64
            } else {
                0.0
            },
            td_updates: self.td_updates,
            events: self.events.processed(),
            wall_time_s: if e.record_timing { wall_time_s } else { 0.0 },
            delays_ms: delays,
        };
        debug_assert!(report.is_conserved());
        RunOutput { report, traces }
    }
}
