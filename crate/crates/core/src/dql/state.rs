//! Local observation of a satellite and its fixed-length encoding.
//!
//! Layout: 6 queue fill ratios, 6 availability flags, 6 normalized link
//! delays (all in action order UT, GW, E, W, Fwd, Bwd), then the
//! destination label.

use serde::{Deserialize, Serialize};

use crate::orbits::GroundNode;
use crate::topology::{link_delay, ActionMask, NodeId, Port, TopologySnapshot};

pub const PORT_FEATURES: usize = 18;
pub const GEOGRAPHIC_DIM: usize = PORT_FEATURES + 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DestinationEncoding {
    /// sin/cos of destination latitude and longitude.
    Geographic,
    /// One slot per ground node.
    OneHot,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalObservation {
    pub queue_len: [usize; 6],
    pub buffer: usize,
    pub available: ActionMask,
    /// Zero-queue delay of each available link, seconds.
    pub link_delay_s: [f64; 6],
}

impl LocalObservation {
    /// Observation of `node` with per-port queue lengths from `queue_len`.
    /// `available` is the action mask for the packet being routed.
    pub fn from_snapshot(
        node: NodeId,
        snapshot: &TopologySnapshot,
        available: ActionMask,
        buffer: usize,
        queue_len: impl Fn(Port) -> usize,
    ) -> Self {
        let mut obs = Self {
            queue_len: [0; 6],
            buffer,
            available,
            link_delay_s: [0.0; 6],
        };
        for port in Port::ACTIONS {
            let i = port.index();
            obs.queue_len[i] = queue_len(port);
            if available.contains(port) {
                if let Some(l) = snapshot.out_link(node, port) {
                    obs.link_delay_s[i] = link_delay(l, 0, &snapshot.params).unwrap_or(f64::INFINITY);
                }
            }
        }
        obs
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateVector(pub Vec<f64>);

impl StateVector {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateEncoder {
    pub encoding: DestinationEncoding,
    pub delay_scale_s: f64,
    pub ground_nodes: usize,
}

impl StateEncoder {
    pub fn dim(&self) -> usize {
        match self.encoding {
            DestinationEncoding::Geographic => GEOGRAPHIC_DIM,
            DestinationEncoding::OneHot => PORT_FEATURES + self.ground_nodes,
        }
    }

    pub fn encode(&self, obs: &LocalObservation, dest: &GroundNode) -> StateVector {
        let mut v = Vec::with_capacity(self.dim());
        for i in 0..6 {
            let ratio = if obs.available.0[i] && obs.buffer > 0 {
                (obs.queue_len[i] as f64 / obs.buffer as f64).min(1.0)
            } else {
                0.0
            };
            v.push(ratio);
        }
        v.extend(obs.available.0.iter().map(|&b| if b { 1.0 } else { 0.0 }));
        for i in 0..6 {
            let d = if obs.available.0[i] {
                (obs.link_delay_s[i] / self.delay_scale_s).clamp(0.0, 1.0)
            } else {
                1.0
            };
            v.push(d);
        }
        match self.encoding {
            DestinationEncoding::Geographic => {
                let (sl, cl) = dest.latitude_deg.to_radians().sin_cos();
                let (so, co) = dest.longitude_deg.to_radians().sin_cos();
                v.extend([sl, cl, so, co]);
            }
            DestinationEncoding::OneHot => {
                let start = v.len();
                v.resize(start + self.ground_nodes, 0.0);
                if let Some(slot) = v.get_mut(start + dest.node_id as usize) {
                    *slot = 1.0;
                }
            }
        }
        StateVector(v)
    }
}
