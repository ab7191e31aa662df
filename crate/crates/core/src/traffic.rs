//! Gateway/user-terminal flows with Poisson packet arrivals scaled by the
//! normalized input rate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::topology::NodeId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    GatewayToTerminal,
    TerminalToGateway,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Flow {
    pub flow_id: u32,
    pub src: NodeId,
    pub dst: NodeId,
    /// Base rate in packets/s before scaling by eta.
    pub base_rate: f64,
    pub direction: Direction,
}

/// Draws `n_flows` uniformly random gateway/terminal pairs; directions alternate
/// starting with gateway-to-terminal.
pub fn pair_flows(
    gateways: &[NodeId],
    terminals: &[NodeId],
    n_flows: usize,
    base_rate: f64,
    seed: u64,
) -> Result<Vec<Flow>> {
    if gateways.is_empty() {
        return Err(Error::config("ground.gateways", "no gateways to pair"));
    }
    if terminals.is_empty() {
        return Err(Error::config("ground.user_terminals", "no user terminals to pair"));
    }
    if n_flows == 0 {
        return Err(Error::config("traffic.n_flows", "must be >= 1"));
    }
    if !(base_rate > 0.0) {
        return Err(Error::config("traffic.lambda0", "must be > 0"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let flows = (0..n_flows)
        .map(|i| {
            let gw = gateways[rng.random_range(0..gateways.len())];
            let ut = terminals[rng.random_range(0..terminals.len())];
            let (src, dst, direction) = if i % 2 == 0 {
                (gw, ut, Direction::GatewayToTerminal)
            } else {
                (ut, gw, Direction::TerminalToGateway)
            };
            Flow {
                flow_id: i as u32,
                src,
                dst,
                base_rate,
                direction,
            }
        })
        .collect();
    Ok(flows)
}

/// Independent arrival stream for one flow: the run seed keys the generator
/// and the flow id selects the ChaCha stream, so neighbouring run seeds never
/// share arrival sequences.
pub fn flow_rng(run_seed: u64, flow_id: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(run_seed);
    rng.set_stream(flow_id as u64);
    rng
}

/// Time of the next arrival after `now`.
pub fn next_arrival<R: Rng + ?Sized>(flow: &Flow, eta: f64, now: f64, rng: &mut R) -> Result<f64> {
    let rate = eta * flow.base_rate;
    if !(eta > 0.0) || !(rate > 0.0) || !rate.is_finite() {
        return Err(Error::Contract(format!(
            "arrival rate must be positive (eta={eta}, lambda0={})",
            flow.base_rate
        )));
    }
    let exp = Exp::new(rate).expect("positive rate");
    Ok(now + exp.sample(rng))
}

/// Aggregate offered load in packets/s.
pub fn offered_load(eta: f64, lambda0: f64, n_flows: usize) -> f64 {
    eta * lambda0 * n_flows as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DropReason {
    Overflow,
    Ttl,
    NoRoute,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Packet {
    pub packet_id: u64,
    pub flow_id: u32,
    pub src: NodeId,
    pub dst: NodeId,
    pub size_bits: f64,
    pub created_s: f64,
    /// Nodes visited, starting with the source.
    pub hop_log: Vec<NodeId>,
    pub delivered_s: Option<f64>,
    pub dropped: Option<DropReason>,
    /// Sum of propagation delays over traversed links.
    pub propagation_s: f64,
}

impl Packet {
    pub fn new(packet_id: u64, flow: &Flow, size_bits: f64, created_s: f64) -> Self {
        Self {
            packet_id,
            flow_id: flow.flow_id,
            src: flow.src,
            dst: flow.dst,
            size_bits,
            created_s,
            hop_log: vec![flow.src],
            delivered_s: None,
            dropped: None,
            propagation_s: 0.0,
        }
    }

    /// Links traversed so far.
    pub fn hops(&self) -> usize {
        self.hop_log.len() - 1
    }

    pub fn is_finished(&self) -> bool {
        self.delivered_s.is_some() || self.dropped.is_some()
    }

    pub fn delay_s(&self) -> Option<f64> {
        self.delivered_s.map(|t| t - self.created_s)
    }
}
