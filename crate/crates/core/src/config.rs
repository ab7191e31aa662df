//! Scenario configuration: TOML sections, presets and validation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dql::AgentConfig;
use crate::error::{Error, Result};
use crate::orbits::{ConstellationConfig, GroundSegment};
use crate::policy::PolicyKind;
use crate::topology::{DelayParams, LinkOutage};
use crate::traffic::offered_load;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroundConfig {
    pub gateways: usize,
    pub user_terminals: usize,
    pub max_latitude_deg: f64,
    /// Placement seed; the ground segment is the same for every run.
    pub seed: u64,
    /// Explicit ground segment (TOML with `[[node]]` entries) instead of
    /// generated placement.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
}

impl Default for GroundConfig {
    fn default() -> Self {
        Self {
            gateways: 12,
            user_terminals: 50,
            max_latitude_deg: 55.0,
            seed: 42,
            file: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrafficConfig {
    /// Base arrival rate per flow at eta = 1, packets/s.
    pub lambda0: f64,
    pub n_flows: usize,
    pub eta: Vec<f64>,
    /// Packets/s served by every port. 0 uses the nominal link rates.
    pub service_rate_override_pps: f64,
}

impl Default for TrafficConfig {
    fn default() -> Self {
        Self {
            lambda0: 2.0,
            n_flows: 100,
            eta: vec![0.2, 0.4, 0.6, 0.8, 1.0, 1.2],
            service_rate_override_pps: 60.0,
        }
    }
}

impl TrafficConfig {
    pub fn service_override(&self) -> Option<f64> {
        (self.service_rate_override_pps > 0.0).then_some(self.service_rate_override_pps)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub t_sim_s: f64,
    pub warm_up_s: f64,
    /// Per-port buffer in packets (waiting plus in service).
    pub buffer: usize,
    pub ttl_hops: usize,
    pub table_epoch_s: f64,
    pub topology_step_s: f64,
    /// Keep the t = 0 topology for the whole run.
    pub freeze_topology: bool,
    /// Measure per-decision wall time. Off gives byte-identical CSVs.
    pub record_timing: bool,
    /// Keep per-packet hop traces in the run output.
    pub record_traces: bool,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub outages: Vec<LinkOutage>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            t_sim_s: 600.0,
            warm_up_s: 100.0,
            buffer: 200,
            ttl_hops: 64,
            table_epoch_s: 60.0,
            topology_step_s: 1.0,
            freeze_topology: false,
            record_timing: true,
            record_traces: false,
            outages: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub master_seed: u64,
    /// Seeds per (policy, eta) point: master_seed, master_seed + 1, ...
    pub runs: usize,
    pub policies: Vec<PolicyKind>,
    pub out_dir: PathBuf,
    /// Concurrent runs; 0 uses every core.
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            master_seed: 42,
            runs: 20,
            policies: vec![PolicyKind::Rl, PolicyKind::Hybrid],
            out_dir: PathBuf::from("results"),
            workers: 0,
        }
    }
}

impl RunConfig {
    pub fn seeds(&self) -> Vec<u64> {
        (0..self.runs as u64).map(|i| self.master_seed.wrapping_add(i)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub constellation: ConstellationConfig,
    pub links: DelayParams,
    pub ground: GroundConfig,
    pub traffic: TrafficConfig,
    pub engine: EngineConfig,
    pub agent: AgentConfig,
    pub run: RunConfig,
}

pub const PRESETS: [&str; 3] = ["default", "table1", "mini"];

impl ScenarioConfig {
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "default" => Ok(Self::default()),
            "table1" => Ok(Self::table1_literal()),
            "mini" => Ok(Self::mini()),
            other => Err(Error::config(
                "preset",
                format!("unknown preset '{other}' (expected one of {})", PRESETS.join(", ")),
            )),
        }
    }

    /// Nominal 1-2 Gbps rates and the 2000 km ISL threshold.
    pub fn table1_literal() -> Self {
        let mut c = Self::default();
        c.links.isl_max_km = 2000.0;
        c.traffic.service_rate_override_pps = 0.0;
        c
    }

    /// Desk-scale scenario that runs in seconds. A higher shell and a
    /// longer ISL reach keep the 4x8 grid connected.
    pub fn mini() -> Self {
        let mut c = Self::default();
        c.constellation.planes = 4;
        c.constellation.sats_per_plane = 8;
        c.constellation.altitude_km = 2000.0;
        c.links.isl_max_km = 9000.0;
        c.ground.gateways = 3;
        c.ground.user_terminals = 8;
        c.traffic.n_flows = 20;
        c.traffic.eta = vec![0.2, 0.6, 1.0, 1.2];
        c.traffic.service_rate_override_pps = 16.0;
        c.engine.t_sim_s = 120.0;
        c.engine.warm_up_s = 20.0;
        // Per-snapshot tables: with 60 s epochs most hybrid fallbacks are
        // stale feeder entries after ground handovers, not congestion.
        c.engine.table_epoch_s = 1.0;
        c.agent.pretrain_steps = 50_000;
        c.agent.epsilon_decay_steps = 40_000;
        c.agent.pretrain_episode_s = 30.0;
        c.run.runs = 5;
        c
    }

    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text, path)?;
        if let (Some(file), Some(dir)) = (cfg.ground.file.as_mut(), path.parent()) {
            if file.is_relative() {
                *file = dir.join(&*file);
            }
        }
        Ok(cfg)
    }

    /// A preset with a TOML file layered on top: keys present in the file
    /// replace the preset's values.
    pub fn load_over(base: &Self, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let overlay: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let mut merged: toml::Table = toml::Table::try_from(base).expect("config serializes");
        merge_tables(&mut merged, overlay);
        let mut cfg: Self = merged.try_into().map_err(|e: toml::de::Error| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        if let (Some(file), Some(dir)) = (cfg.ground.file.as_mut(), path.parent()) {
            if file.is_relative() {
                *file = dir.join(&*file);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Delay parameters with the traffic section's service-rate override applied.
    pub fn delay_params(&self) -> DelayParams {
        let mut p = self.links.clone();
        p.service_rate_override_pps = self.traffic.service_override();
        p
    }

    pub fn ground_segment(&self) -> Result<GroundSegment> {
        let seg = match &self.ground.file {
            Some(path) => GroundSegment::load(path)?,
            None => GroundSegment::generate(
                self.ground.gateways,
                self.ground.user_terminals,
                self.ground.max_latitude_deg,
                self.ground.seed,
            ),
        };
        seg.validate()?;
        Ok(seg)
    }

    pub fn validate(&self) -> Result<()> {
        self.constellation.validate()?;
        self.delay_params().validate()?;
        self.agent.validate()?;

        let g = &self.ground;
        if g.file.is_none() {
            if g.gateways == 0 {
                return Err(Error::config("ground.gateways", "must be >= 1"));
            }
            if g.user_terminals == 0 {
                return Err(Error::config("ground.user_terminals", "must be >= 1"));
            }
            if !(g.max_latitude_deg > 0.0 && g.max_latitude_deg <= 90.0) {
                return Err(Error::config("ground.max_latitude_deg", "must be in (0, 90]"));
            }
        }

        let t = &self.traffic;
        if !(t.lambda0 > 0.0) || !t.lambda0.is_finite() {
            return Err(Error::config("traffic.lambda0", "must be > 0"));
        }
        if t.n_flows == 0 {
            return Err(Error::config("traffic.n_flows", "must be >= 1"));
        }
        if t.eta.is_empty() {
            return Err(Error::config("traffic.eta", "need at least one value"));
        }
        if let Some(bad) = t.eta.iter().find(|e| !(**e > 0.0) || !e.is_finite()) {
            return Err(Error::config("traffic.eta", format!("values must be positive, got {bad}")));
        }
        if t.service_rate_override_pps < 0.0 || !t.service_rate_override_pps.is_finite() {
            return Err(Error::config("traffic.service_rate_override_pps", "must be >= 0 (0 = nominal rates)"));
        }

        let e = &self.engine;
        if !(e.t_sim_s > 0.0) || !e.t_sim_s.is_finite() {
            return Err(Error::config("engine.t_sim_s", "must be > 0"));
        }
        if !(e.warm_up_s >= 0.0) || e.warm_up_s >= e.t_sim_s {
            return Err(Error::config("engine.warm_up_s", "must be in [0, t_sim_s)"));
        }
        if e.buffer == 0 {
            return Err(Error::config("engine.buffer", "must be >= 1"));
        }
        if e.ttl_hops == 0 {
            return Err(Error::config("engine.ttl_hops", "must be >= 1"));
        }
        if !(e.table_epoch_s > 0.0) {
            return Err(Error::config("engine.table_epoch_s", "must be > 0"));
        }
        if !(e.topology_step_s > 0.0) {
            return Err(Error::config("engine.topology_step_s", "must be > 0"));
        }
        for (i, o) in e.outages.iter().enumerate() {
            if !(o.end_s > o.start_s) {
                return Err(Error::config("engine.outages", format!("outage {i}: end_s must exceed start_s")));
            }
        }

        let r = &self.run;
        if r.runs == 0 {
            return Err(Error::config("run.runs", "need at least one seed"));
        }
        if r.policies.is_empty() {
            return Err(Error::config("run.policies", "need at least one policy"));
        }
        Ok(())
    }

    /// Consistency warnings that do not prevent a run.
    pub fn warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        let spacing = self.constellation.intra_plane_spacing_km();
        if spacing >= self.links.isl_max_km {
            w.push(format!(
                "intra-plane spacing {spacing:.0} km > {:.0} km ISL threshold: no intra-plane ISL will ever be active",
                self.links.isl_max_km
            ));
        }
        if self.engine.table_epoch_s >= self.engine.t_sim_s {
            w.push("table epoch >= t_sim_s: the routing table is never rebuilt".into());
        }
        w
    }

    /// Derived quantities printed by `validate`.
    pub fn diagnostics(&self) -> Vec<String> {
        let c = &self.constellation;
        let mut d = vec![
            format!("satellites: {} ({} planes x {})", c.num_satellites(), c.planes, c.sats_per_plane),
            format!("orbital period: {:.3} s", c.orbital_period_s()),
            format!("intra-plane spacing: {:.1} km", c.intra_plane_spacing_km()),
        ];
        match self.traffic.service_override() {
            Some(pps) => d.push(format!("service rate: {pps} pkts/s per port (override)")),
            None => d.push(format!(
                "service rate: nominal ({:.0}/{:.0} Gbps ISL/feeder)",
                self.links.isl_rate_bps / 1e9,
                self.links.feeder_rate_bps / 1e9
            )),
        }
        for eta in &self.traffic.eta {
            d.push(format!(
                "offered load at eta={eta}: {} pkts/s",
                offered_load(*eta, self.traffic.lambda0, self.traffic.n_flows)
            ));
        }
        d
    }
}

fn merge_tables(base: &mut toml::Table, overlay: toml::Table) {
    for (k, v) in overlay {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge_tables(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
