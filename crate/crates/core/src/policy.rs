//! Forwarding decisions: pure RL, table lookup, and the hybrid that follows
//! the table unless its next hop is down or congested.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dql::{masked_argmax, QNetwork, StateVector};
use crate::error::{Error, Result};
use crate::table::RoutingTable;
use crate::topology::{ActionMask, NodeId, Port};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Table,
    Rl,
    Hybrid,
}

impl PolicyKind {
    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Table => "table",
            PolicyKind::Rl => "rl",
            PolicyKind::Hybrid => "hybrid",
        }
    }

    pub fn needs_agent(self) -> bool {
        !matches!(self, PolicyKind::Table)
    }

    pub fn needs_table(self) -> bool {
        !matches!(self, PolicyKind::Rl)
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "table" => Ok(PolicyKind::Table),
            "rl" | "pure-rl" | "dql" => Ok(PolicyKind::Rl),
            "hybrid" => Ok(PolicyKind::Hybrid),
            other => Err(Error::config("policy", format!("unknown policy '{other}' (table, rl, hybrid)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DecisionMode {
    Table,
    Fallback,
    PureRl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DecisionCost {
    Lookup,
    QEval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Decision {
    pub action: Port,
    pub mode: DecisionMode,
    pub cost: DecisionCost,
}

impl Decision {
    pub fn table(action: Port) -> Self {
        Self {
            action,
            mode: DecisionMode::Table,
            cost: DecisionCost::Lookup,
        }
    }

    pub fn learned(action: Port, mode: DecisionMode) -> Self {
        debug_assert!(mode != DecisionMode::Table);
        Self {
            action,
            mode,
            cost: DecisionCost::QEval,
        }
    }
}

/// True iff the table next hop is down or its queue is above 70% of the buffer.
pub fn fallback_trigger(next_hop_link_active: bool, next_hop_queue: usize, buffer: usize) -> bool {
    debug_assert!(buffer > 0);
    // queue / B > 0.7 in exact integer arithmetic.
    !next_hop_link_active || next_hop_queue * 10 > buffer * 7
}

fn greedy(net: &QNetwork, state: &StateVector, mask: &ActionMask) -> Result<Port> {
    if mask.is_empty() {
        return Err(Error::NoAction);
    }
    let q = net.forward(state.as_slice())?;
    let a = masked_argmax(&q, mask).expect("mask non-empty");
    Ok(Port::from_action(a).expect("action index in range"))
}

/// Greedy masked argmax of Q, as used in evaluation.
pub fn pure_rl_decide(net: &QNetwork, state: &StateVector, feasible: &ActionMask) -> Result<Decision> {
    Ok(Decision::learned(greedy(net, state, feasible)?, DecisionMode::PureRl))
}

/// Table lookup alone; no route or a dead next hop is a no-action.
pub fn table_decide(table: &RoutingTable, current: NodeId, dest: NodeId, feasible: &ActionMask) -> Result<Decision> {
    match table.lookup(current, dest) {
        Some(p) if feasible.contains(p) => Ok(Decision::table(p)),
        _ => Err(Error::NoAction),
    }
}

/// What the hybrid rule needs about the current satellite.
pub struct HybridInput<'a> {
    pub current: NodeId,
    pub dest: NodeId,
    /// Actions usable for this packet right now.
    pub feasible: ActionMask,
    pub buffer: usize,
    pub queue_len: &'a dyn Fn(Port) -> usize,
}

/// Why the hybrid rule left the table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FallbackReason {
    NoRoute,
    LinkDown,
    Congested,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HybridDecision {
    pub decision: Decision,
    pub fallback: Option<FallbackReason>,
    /// Encoded state when the agent was consulted.
    pub state: Option<StateVector>,
    /// Mask the agent chose from.
    pub mask: ActionMask,
}

/// Table next hop when it is usable, otherwise masked Q-argmax over the
/// remaining ports. `encode` is only called on fallback.
pub fn hybrid_decide(
    table: &RoutingTable,
    net: &QNetwork,
    input: &HybridInput<'_>,
    encode: impl FnOnce() -> StateVector,
) -> Result<HybridDecision> {
    let next = table.lookup(input.current, input.dest);
    let reason = match next {
        None => FallbackReason::NoRoute,
        Some(port) => {
            let active = input.feasible.contains(port);
            if !fallback_trigger(active, (input.queue_len)(port), input.buffer) {
                return Ok(HybridDecision {
                    decision: Decision::table(port),
                    fallback: None,
                    state: None,
                    mask: input.feasible,
                });
            }
            if active {
                FallbackReason::Congested
            } else {
                FallbackReason::LinkDown
            }
        }
    };
    let mut mask = match next {
        Some(port) => input.feasible.without(port),
        None => input.feasible,
    };
    if mask.is_empty() {
        // Only the congested table port is left.
        mask = input.feasible;
    }
    if mask.is_empty() {
        return Err(Error::NoAction);
    }
    let state = encode();
    let action = greedy(net, &state, &mask)?;
    Ok(HybridDecision {
        decision: Decision::learned(action, DecisionMode::Fallback),
        fallback: Some(reason),
        state: Some(state),
        mask,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionCounters {
    pub table: u64,
    pub fallback: u64,
    pub pure_rl: u64,
    pub table_lookups: u64,
    pub q_evaluations: u64,
    /// Fallbacks by cause: no table entry, next hop down, next hop congested.
    pub fallback_no_route: u64,
    pub fallback_link_down: u64,
    pub fallback_congested: u64,
}

impl DecisionCounters {
    pub fn record_fallback(&mut self, reason: FallbackReason) {
        match reason {
            FallbackReason::NoRoute => self.fallback_no_route += 1,
            FallbackReason::LinkDown => self.fallback_link_down += 1,
            FallbackReason::Congested => self.fallback_congested += 1,
        }
    }

    pub fn record(&mut self, d: &Decision) {
        match d.mode {
            DecisionMode::Table => self.table += 1,
            DecisionMode::Fallback => self.fallback += 1,
            DecisionMode::PureRl => self.pure_rl += 1,
        }
    }

    pub fn decisions(&self) -> u64 {
        self.table + self.fallback + self.pure_rl
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecisionCostSummary {
    pub table_lookups: u64,
    pub q_evaluations: u64,
    pub p_fb: Option<f64>,
}

/// Fallback activation rate and cost counters of a completed run.
pub fn count_decision_costs(policy: PolicyKind, counters: &DecisionCounters) -> DecisionCostSummary {
    let total = counters.decisions();
    let p_fb = (total > 0).then(|| match policy {
        PolicyKind::Rl => 1.0,
        PolicyKind::Table => 0.0,
        PolicyKind::Hybrid => counters.fallback as f64 / total as f64,
    });
    DecisionCostSummary {
        table_lookups: counters.table_lookups,
        q_evaluations: counters.q_evaluations,
        p_fb,
    }
}
