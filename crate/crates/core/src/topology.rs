//! Time-varying link graph and the per-link delay model.
//!
//! Node ids are dense: satellites occupy `0..N_s` (index `p * S + s`), ground
//! nodes follow at `N_s..N_s + N_g` in ground-segment order.

use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::orbits::{
    chord_distance, elevation_from, walker_neighbors, ConstellationConfig, GroundKind, GroundNode,
    SatellitePosition,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Output interface of a node. The first six are the satellite action
/// universe; `Uplink` is the single interface of a ground node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Port {
    Ut,
    Gw,
    East,
    West,
    Forward,
    Backward,
    Uplink,
}

impl Port {
    pub const COUNT: usize = 7;
    pub const ACTIONS: [Port; 6] = [
        Port::Ut,
        Port::Gw,
        Port::East,
        Port::West,
        Port::Forward,
        Port::Backward,
    ];
    pub const ISL: [Port; 4] = [Port::East, Port::West, Port::Forward, Port::Backward];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_action(action: usize) -> Option<Port> {
        Port::ACTIONS.get(action).copied()
    }

    pub fn feeder_for(kind: GroundKind) -> Port {
        match kind {
            GroundKind::Gateway => Port::Gw,
            GroundKind::UserTerminal => Port::Ut,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Port::Ut => "UT",
            Port::Gw => "GW",
            Port::East => "E",
            Port::West => "W",
            Port::Forward => "Fwd",
            Port::Backward => "Bwd",
            Port::Uplink => "UP",
        }
    }
}

impl fmt::Display for Port {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Subset of the six satellite actions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash, Serialize, Deserialize)]
pub struct ActionMask(pub [bool; 6]);

impl ActionMask {
    pub const EMPTY: ActionMask = ActionMask([false; 6]);
    pub const FULL: ActionMask = ActionMask([true; 6]);

    pub fn only(port: Port) -> Self {
        let mut m = Self::EMPTY;
        m.insert(port);
        m
    }

    pub fn insert(&mut self, port: Port) {
        if port != Port::Uplink {
            self.0[port.index()] = true;
        }
    }

    pub fn remove(&mut self, port: Port) {
        if port != Port::Uplink {
            self.0[port.index()] = false;
        }
    }

    pub fn without(mut self, port: Port) -> Self {
        self.remove(port);
        self
    }

    pub fn contains(&self, port: Port) -> bool {
        port != Port::Uplink && self.0[port.index()]
    }

    pub fn is_empty(&self) -> bool {
        !self.0.iter().any(|&b| b)
    }

    pub fn len(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn ports(&self) -> impl Iterator<Item = Port> + '_ {
        Port::ACTIONS.into_iter().filter(|p| self.contains(*p))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LinkKind {
    Isl,
    Feeder,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub src: NodeId,
    pub dst: NodeId,
    pub kind: LinkKind,
    pub distance_km: f64,
    pub rate_bps: f64,
    pub port: Port,
}

impl Link {
    pub fn key(&self) -> (NodeId, NodeId) {
        (self.src, self.dst)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DelayParams {
    /// Effective signal speed, m/s.
    pub c_eff_m_s: f64,
    pub packet_len_bits: f64,
    pub isl_rate_bps: f64,
    pub feeder_rate_bps: f64,
    /// ISLs are active while the chord is strictly shorter than this.
    pub isl_max_km: f64,
    /// Feeders are active while elevation is strictly above this.
    pub min_elevation_deg: f64,
    /// When set, every port serves this many packets per second regardless
    /// of the nominal link rates. Set from the traffic section.
    #[serde(skip)]
    pub service_rate_override_pps: Option<f64>,
}

impl Default for DelayParams {
    fn default() -> Self {
        Self {
            c_eff_m_s: 3.0e8,
            packet_len_bits: 9600.0,
            isl_rate_bps: 1.0e9,
            feeder_rate_bps: 2.0e9,
            isl_max_km: 2500.0,
            min_elevation_deg: 10.0,
            service_rate_override_pps: None,
        }
    }
}

impl DelayParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("links.c_eff_m_s", self.c_eff_m_s),
            ("links.packet_len_bits", self.packet_len_bits),
            ("links.isl_rate_bps", self.isl_rate_bps),
            ("links.feeder_rate_bps", self.feeder_rate_bps),
            ("links.isl_max_km", self.isl_max_km),
            ("links.min_elevation_deg", self.min_elevation_deg),
        ];
        for (field, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::config(field, "must be strictly positive"));
            }
        }
        if let Some(r) = self.service_rate_override_pps {
            if !(r > 0.0) || !r.is_finite() {
                return Err(Error::config(
                    "traffic.service_rate_override_pps",
                    "must be strictly positive",
                ));
            }
        }
        Ok(())
    }

    /// Service rate of a link of the given kind, honouring the override.
    pub fn rate_bps(&self, kind: LinkKind) -> f64 {
        match self.service_rate_override_pps {
            Some(pps) => pps * self.packet_len_bits,
            None => match kind {
                LinkKind::Isl => self.isl_rate_bps,
                LinkKind::Feeder => self.feeder_rate_bps,
            },
        }
    }
}

/// Propagation + transmission + waiting behind `queue_len` packets.
pub fn link_delay(link: &Link, queue_len: usize, params: &DelayParams) -> Result<f64> {
    if !(link.rate_bps > 0.0) {
        return Err(Error::InvalidLink {
            src: link.src.0,
            dst: link.dst.0,
            message: format!("rate {} bps", link.rate_bps),
        });
    }
    let propagation = link.distance_km * 1e3 / params.c_eff_m_s;
    let transmission = params.packet_len_bits / link.rate_bps;
    Ok(propagation + transmission + queue_len as f64 * transmission)
}

/// Sum of zero-queue link delays along a connected path.
pub fn path_delay(path: &[Link], snapshot: &TopologySnapshot) -> Result<f64> {
    let mut total = 0.0;
    for (hop, pair) in path.windows(2).enumerate() {
        if pair[0].dst != pair[1].src {
            return Err(Error::DisconnectedPath {
                hop: hop + 1,
                expected: pair[0].dst.0,
                found: pair[1].src.0,
            });
        }
    }
    for link in path {
        total += link_delay(link, 0, &snapshot.params)?;
    }
    Ok(total)
}

/// Scheduled outage of the link pair between `a` and `b` over `[start_s, end_s)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkOutage {
    pub a: u32,
    pub b: u32,
    pub start_s: f64,
    pub end_s: f64,
}

impl LinkOutage {
    fn blocks(&self, x: NodeId, y: NodeId, t: f64) -> bool {
        let hit = (self.a == x.0 && self.b == y.0) || (self.a == y.0 && self.b == x.0);
        hit && t >= self.start_s && t < self.end_s
    }
}

const NO_LINK: u32 = u32::MAX;

#[derive(Debug, Clone)]
pub struct TopologySnapshot {
    pub time_s: f64,
    pub params: DelayParams,
    num_satellites: usize,
    ground_kinds: Vec<GroundKind>,
    links: Vec<Link>,
    port_link: Vec<[u32; Port::COUNT]>,
}

impl TopologySnapshot {
    /// Snapshot with no links at all.
    pub fn empty(num_satellites: usize, ground_kinds: Vec<GroundKind>, params: DelayParams, t: f64) -> Self {
        let nodes = num_satellites + ground_kinds.len();
        Self {
            time_s: t,
            params,
            num_satellites,
            ground_kinds,
            links: Vec::new(),
            port_link: vec![[NO_LINK; Port::COUNT]; nodes],
        }
    }

    /// Adds a link, replacing any existing link on the same source port.
    pub fn insert_link(&mut self, link: Link) {
        let slot = &mut self.port_link[link.src.index()][link.port.index()];
        if *slot != NO_LINK {
            self.links[*slot as usize] = link;
        } else {
            *slot = self.links.len() as u32;
            self.links.push(link);
        }
    }

    pub fn num_satellites(&self) -> usize {
        self.num_satellites
    }

    pub fn num_ground(&self) -> usize {
        self.ground_kinds.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.num_satellites + self.ground_kinds.len()
    }

    pub fn is_satellite(&self, node: NodeId) -> bool {
        node.index() < self.num_satellites
    }

    pub fn ground_index(&self, node: NodeId) -> Option<usize> {
        node.index()
            .checked_sub(self.num_satellites)
            .filter(|&i| i < self.ground_kinds.len())
    }

    pub fn ground_node(&self, ground_index: usize) -> NodeId {
        NodeId((self.num_satellites + ground_index) as u32)
    }

    pub fn ground_kind(&self, node: NodeId) -> Option<GroundKind> {
        self.ground_index(node).map(|i| self.ground_kinds[i])
    }

    pub fn ground_nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.ground_kinds.len()).map(|i| self.ground_node(i))
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn out_link(&self, node: NodeId, port: Port) -> Option<&Link> {
        let idx = *self.port_link.get(node.index())?.get(port.index())?;
        (idx != NO_LINK).then(|| &self.links[idx as usize])
    }

    pub fn out_links(&self, node: NodeId) -> impl Iterator<Item = &Link> + '_ {
        self.port_link
            .get(node.index())
            .into_iter()
            .flat_map(|ports| ports.iter())
            .filter(|&&i| i != NO_LINK)
            .map(|&i| &self.links[i as usize])
    }

    /// Satellite currently serving a ground node.
    pub fn attached_satellite(&self, ground: NodeId) -> Option<NodeId> {
        self.out_link(ground, Port::Uplink).map(|l| l.dst)
    }

    /// Ground node on a satellite's feeder interface.
    pub fn feeder_ground(&self, sat: NodeId) -> Option<NodeId> {
        self.out_link(sat, Port::Ut)
            .or_else(|| self.out_link(sat, Port::Gw))
            .map(|l| l.dst)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# snapshot t={:.3} satellites={} ground={} links={}",
            self.time_s,
            self.num_satellites,
            self.ground_kinds.len(),
            self.links.len()
        );
        let _ = writeln!(out, "src,dst,kind,port,distance_km,rate_bps");
        for l in &self.links {
            let kind = match l.kind {
                LinkKind::Isl => "isl",
                LinkKind::Feeder => "feeder",
            };
            let _ = writeln!(
                out,
                "{},{},{},{},{:.3},{:.0}",
                l.src, l.dst, kind, l.port, l.distance_km, l.rate_bps
            );
        }
        out
    }
}

/// Builds G(t) from positions evaluated at `t`.
pub fn snapshot(
    config: &ConstellationConfig,
    positions: &[SatellitePosition],
    ground: &[GroundNode],
    params: &DelayParams,
    t: f64,
) -> TopologySnapshot {
    snapshot_with_outages(config, positions, ground, params, t, &[])
}

pub fn snapshot_with_outages(
    config: &ConstellationConfig,
    positions: &[SatellitePosition],
    ground: &[GroundNode],
    params: &DelayParams,
    t: f64,
    outages: &[LinkOutage],
) -> TopologySnapshot {
    let n_sat = positions.len();
    let kinds = ground.iter().map(|g| g.kind).collect();
    let mut snap = TopologySnapshot::empty(n_sat, kinds, params.clone(), t);
    let down = |a: NodeId, b: NodeId| outages.iter().any(|o| o.blocks(a, b, t));

    let isl_rate = params.rate_bps(LinkKind::Isl);
    for (i, pos) in positions.iter().enumerate() {
        let n = walker_neighbors(pos.id, config);
        let src = NodeId(i as u32);
        for (port, nb) in [
            (Port::East, n.east),
            (Port::West, n.west),
            (Port::Forward, n.forward),
            (Port::Backward, n.backward),
        ] {
            let j = config.index_of(nb);
            if j == i {
                continue;
            }
            let dst = NodeId(j as u32);
            let d = chord_distance(&pos.position_km, &positions[j].position_km);
            if d < params.isl_max_km && !down(src, dst) {
                snap.insert_link(Link {
                    src,
                    dst,
                    kind: LinkKind::Isl,
                    distance_km: d,
                    rate_bps: isl_rate,
                    port,
                });
            }
        }
    }

    // Greedy matching by descending elevation: every ground node takes its
    // best visible satellite whose feeder is still free.
    let abs_t = t + config.epoch_s;
    let mut candidates = Vec::new();
    for (g, node) in ground.iter().enumerate() {
        let gp = node.inertial_position_km(abs_t);
        for (s, pos) in positions.iter().enumerate() {
            let el = elevation_from(&gp, &pos.position_km);
            if el > params.min_elevation_deg {
                candidates.push((el, g, s, chord_distance(&gp, &pos.position_km)));
            }
        }
    }
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut ground_used = vec![false; ground.len()];
    let mut sat_used = vec![false; n_sat];
    let feeder_rate = params.rate_bps(LinkKind::Feeder);
    for (_, g, s, d) in candidates {
        if ground_used[g] || sat_used[s] {
            continue;
        }
        let gnode = snap.ground_node(g);
        let sat = NodeId(s as u32);
        if down(gnode, sat) {
            continue;
        }
        ground_used[g] = true;
        sat_used[s] = true;
        snap.insert_link(Link {
            src: sat,
            dst: gnode,
            kind: LinkKind::Feeder,
            distance_km: d,
            rate_bps: feeder_rate,
            port: Port::feeder_for(ground[g].kind),
        });
        snap.insert_link(Link {
            src: gnode,
            dst: sat,
            kind: LinkKind::Feeder,
            distance_km: d,
            rate_bps: feeder_rate,
            port: Port::Uplink,
        });
    }
    snap
}

/// One action per active outgoing link of a satellite.
pub fn feasible_actions(node: NodeId, snapshot: &TopologySnapshot) -> Result<ActionMask> {
    if !snapshot.is_satellite(node) {
        return Err(Error::NotASatellite(node.0));
    }
    let mut mask = ActionMask::EMPTY;
    for link in snapshot.out_links(node) {
        mask.insert(link.port);
    }
    Ok(mask)
}
