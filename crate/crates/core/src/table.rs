//! Offline shortest-path next-hop tables.
//!
//! Weights are zero-queue link delays averaged over a window of snapshots;
//! the table structure comes from one representative snapshot. Only ground
//! destinations are tabulated since all traffic terminates on the ground.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::topology::{link_delay, NodeId, Port, TopologySnapshot};

pub type LinkKey = (NodeId, NodeId);

/// Running mean of zero-queue link delays.
#[derive(Debug, Clone, Default)]
pub struct WeightAccumulator {
    sums: BTreeMap<LinkKey, (f64, u32)>,
    snapshots: usize,
}

impl WeightAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, snapshot: &TopologySnapshot) -> Result<()> {
        for link in snapshot.links() {
            let d = link_delay(link, 0, &snapshot.params)?;
            let e = self.sums.entry(link.key()).or_insert((0.0, 0));
            e.0 += d;
            e.1 += 1;
        }
        self.snapshots += 1;
        Ok(())
    }

    pub fn snapshots(&self) -> usize {
        self.snapshots
    }

    pub fn means(&self) -> BTreeMap<LinkKey, f64> {
        self.sums
            .iter()
            .map(|(k, (sum, n))| (*k, sum / *n as f64))
            .collect()
    }

    pub fn clear(&mut self) {
        self.sums.clear();
        self.snapshots = 0;
    }
}

/// Mean delay of each link over the snapshots where it is active.
pub fn mean_link_delays(snapshots: &[TopologySnapshot]) -> Result<BTreeMap<LinkKey, f64>> {
    if snapshots.is_empty() {
        return Err(Error::config("table", "need at least one snapshot"));
    }
    let mut acc = WeightAccumulator::new();
    for s in snapshots {
        acc.add(s)?;
    }
    Ok(acc.means())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoutingTable {
    pub epoch_s: f64,
    num_satellites: usize,
    num_ground: usize,
    next_hop: Vec<Option<Port>>,
    pub build_weights: BTreeMap<LinkKey, f64>,
}

#[derive(Clone, Copy, PartialEq)]
struct HeapEntry {
    cost: f64,
    node: NodeId,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // Min-heap on (cost, node).
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Cost-to-destination from every node, never transiting other ground nodes.
pub fn distances_to(
    snapshot: &TopologySnapshot,
    weights: &BTreeMap<LinkKey, f64>,
    dest: NodeId,
) -> Result<Vec<f64>> {
    let n = snapshot.num_nodes();
    let mut reverse: Vec<Vec<(NodeId, f64)>> = vec![Vec::new(); n];
    for link in snapshot.links() {
        let w = *weights.get(&link.key()).ok_or_else(|| {
            Error::Contract(format!("no weight for link {}->{}", link.src, link.dst))
        })?;
        reverse[link.dst.index()].push((link.src, w));
    }
    let mut dist = vec![f64::INFINITY; n];
    let mut heap = BinaryHeap::new();
    dist[dest.index()] = 0.0;
    heap.push(HeapEntry {
        cost: 0.0,
        node: dest,
    });
    while let Some(HeapEntry { cost, node }) = heap.pop() {
        if cost > dist[node.index()] {
            continue;
        }
        if node != dest && !snapshot.is_satellite(node) {
            continue;
        }
        for &(pred, w) in &reverse[node.index()] {
            let c = cost + w;
            if c < dist[pred.index()] {
                dist[pred.index()] = c;
                heap.push(HeapEntry { cost: c, node: pred });
            }
        }
    }
    Ok(dist)
}

/// Next-hop table for every (satellite, ground destination) pair reachable
/// in `snapshot`. Ties go to the smallest neighbour id, then port order.
pub fn build_table(snapshot: &TopologySnapshot, weights: &BTreeMap<LinkKey, f64>) -> Result<RoutingTable> {
    let n_sat = snapshot.num_satellites();
    let n_ground = snapshot.num_ground();
    let mut next_hop = vec![None; n_sat * n_ground];
    for g in 0..n_ground {
        let dest = snapshot.ground_node(g);
        let dist = distances_to(snapshot, weights, dest)?;
        for s in 0..n_sat {
            let sat = NodeId(s as u32);
            let mut best: Option<(f64, NodeId, Port)> = None;
            for link in snapshot.out_links(sat) {
                let j = link.dst;
                if j != dest && !snapshot.is_satellite(j) {
                    continue;
                }
                if !dist[j.index()].is_finite() {
                    continue;
                }
                let c = weights[&link.key()] + dist[j.index()];
                let better = match best {
                    None => true,
                    Some((bc, bj, bp)) => c < bc || (c == bc && (j, link.port) < (bj, bp)),
                };
                if better {
                    best = Some((c, j, link.port));
                }
            }
            next_hop[s * n_ground + g] = best.map(|b| b.2);
        }
    }
    Ok(RoutingTable {
        epoch_s: snapshot.time_s,
        num_satellites: n_sat,
        num_ground: n_ground,
        next_hop,
        build_weights: weights.clone(),
    })
}

impl RoutingTable {
    /// Stored port for `(current, dest)`; `None` is the no-route value.
    #[inline]
    pub fn lookup(&self, current: NodeId, dest: NodeId) -> Option<Port> {
        let s = current.index();
        let g = dest.index().checked_sub(self.num_satellites)?;
        if s >= self.num_satellites || g >= self.num_ground {
            return None;
        }
        self.next_hop[s * self.num_ground + g]
    }

    pub fn entries(&self) -> impl Iterator<Item = (NodeId, NodeId, Port)> + '_ {
        self.next_hop.iter().enumerate().filter_map(move |(i, p)| {
            let s = i / self.num_ground;
            let g = i % self.num_ground;
            p.map(|p| {
                (
                    NodeId(s as u32),
                    NodeId((self.num_satellites + g) as u32),
                    p,
                )
            })
        })
    }

    pub fn len(&self) -> usize {
        self.next_hop.iter().filter(|p| p.is_some()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("# table epoch={:.3}\ncurrent,destination,port\n", self.epoch_s);
        for (s, d, p) in self.entries() {
            let _ = writeln!(out, "{s},{d},{p}");
        }
        out
    }
}
