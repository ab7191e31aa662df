//! Command-line front end: `pretrain`, `evaluate` and `validate`.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::ScenarioConfig;
use crate::dql::AgentPool;
use crate::engine::{self, csv_header, csv_row, AggregatePoint, MetricsReport, PretrainReport, RunSpec};
use crate::error::{Error, Result};
use crate::policy::PolicyKind;

#[derive(Debug, Parser)]
#[command(name = "ngso-sim", version, about = "Table, deep-Q and hybrid routing in LEO constellations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the agent offline and write a checkpoint.
    Pretrain(ScenarioArgs),
    /// Run the policy x eta x seed grid and write results.
    Evaluate(ScenarioArgs),
    /// Check a scenario and print derived quantities.
    Validate(ScenarioArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct ScenarioArgs {
    /// Scenario TOML; its keys override the preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Base preset: default, table1 or mini.
    #[arg(long, default_value = "default")]
    pub preset: String,
    /// Comma-separated policies (table, rl, hybrid).
    #[arg(long, value_delimiter = ',')]
    pub policy: Vec<PolicyKind>,
    /// Comma-separated normalized input rates.
    #[arg(long, value_delimiter = ',')]
    pub eta: Vec<f64>,
    /// Number of seeds per point, starting at the master seed.
    #[arg(long)]
    pub seeds: Option<usize>,
    #[arg(long)]
    pub master_seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Concurrent runs (0 = all cores).
    #[arg(long)]
    pub workers: Option<usize>,
    /// Agent checkpoint to write (pretrain) or read (evaluate).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Pretraining budget in learned transitions.
    #[arg(long)]
    pub steps: Option<u64>,
    /// Skip wall-clock measurement so reruns give byte-identical CSVs.
    #[arg(long)]
    pub no_timing: bool,
    /// Write per-packet hop traces (JSON lines) next to the results.
    #[arg(long)]
    pub traces: bool,
}

impl ScenarioArgs {
    /// Preset, then config file, then flags.
    pub fn resolve(&self) -> Result<ScenarioConfig> {
        let base = ScenarioConfig::preset(&self.preset)?;
        let mut cfg = match &self.config {
            Some(path) => ScenarioConfig::load_over(&base, path)?,
            None => base,
        };
        if !self.policy.is_empty() {
            cfg.run.policies = self.policy.clone();
        }
        if !self.eta.is_empty() {
            cfg.traffic.eta = self.eta.clone();
        }
        if let Some(n) = self.seeds {
            cfg.run.runs = n;
        }
        if let Some(s) = self.master_seed {
            cfg.run.master_seed = s;
        }
        if let Some(out) = &self.out {
            cfg.run.out_dir = out.clone();
        }
        if let Some(w) = self.workers {
            cfg.run.workers = w;
        }
        if let Some(s) = self.steps {
            cfg.agent.pretrain_steps = s;
        }
        if self.no_timing {
            cfg.engine.record_timing = false;
        }
        if self.traces {
            cfg.engine.record_traces = true;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn checkpoint_path(&self, cfg: &ScenarioConfig) -> PathBuf {
        self.checkpoint
            .clone()
            .unwrap_or_else(|| cfg.run.out_dir.join("checkpoint.json"))
    }
}

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let name = path
        .file_name()
        .ok_or_else(|| Error::config("out", format!("{} is not a file path", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

pub fn cmd_pretrain(cfg: &ScenarioConfig, checkpoint: &Path, log: &mut dyn Write) -> Result<PretrainReport> {
    let seed = cfg.run.master_seed;
    let mut pool = engine::fresh_agents(cfg, seed)?;
    let report = engine::pretrain(cfg, &mut pool, cfg.agent.pretrain_steps, seed)?;
    pool.save(checkpoint)?;
    let _ = writeln!(
        log,
        "pretrained {} steps over {} episodes; final epsilon {:.4}; mean episode reward {:.4}; mean TD loss {:.5}",
        report.steps, report.episodes, report.final_epsilon, report.mean_episode_reward, report.mean_loss
    );
    let _ = writeln!(log, "checkpoint: {}", checkpoint.display());
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub scenario: String,
    pub points: Vec<AggregatePoint>,
    /// Per-run reports without delay samples (those are in the sidecars).
    pub runs: Vec<MetricsReport>,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub reports: Vec<MetricsReport>,
    pub summary: Summary,
}

pub fn run_label(r: &RunSpec) -> String {
    format!("{}_eta{}_seed{}", r.policy, r.eta, r.seed)
}

/// Every (policy, eta, seed) run of the scenario, grid-ordered.
pub fn grid(cfg: &ScenarioConfig) -> Vec<RunSpec> {
    let mut specs = Vec::new();
    for &policy in &cfg.run.policies {
        for &eta in &cfg.traffic.eta {
            for seed in cfg.run.seeds() {
                specs.push(RunSpec { policy, eta, seed });
            }
        }
    }
    specs
}

/// Runs the grid in parallel and returns reports in grid order.
pub fn run_grid(cfg: &ScenarioConfig, agents: Option<&AgentPool>) -> Result<Vec<(RunSpec, engine::RunOutput)>> {
    let specs = grid(cfg);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.run.workers)
        .build()
        .map_err(|e| Error::config("run.workers", e.to_string()))?;
    pool.install(|| {
        specs
            .par_iter()
            .map(|s| engine::run(cfg, *s, agents).map(|o| (*s, o)))
            .collect()
    })
}

pub fn cmd_evaluate(cfg: &ScenarioConfig, checkpoint: Option<&Path>, log: &mut dyn Write) -> Result<Evaluation> {
    let needs_agent = cfg.run.policies.iter().any(|p| p.needs_agent());
    let agents = match (needs_agent, checkpoint) {
        (false, _) => None,
        (true, Some(path)) if path.exists() => Some(AgentPool::load(path)?),
        (true, Some(path)) => {
            return Err(Error::Checkpoint {
                path: path.to_path_buf(),
                message: "not found; run `pretrain` first or pass --checkpoint".into(),
            })
        }
        (true, None) => {
            return Err(Error::config("checkpoint", "policies rl/hybrid need --checkpoint"));
        }
    };
    let out = &cfg.run.out_dir;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_atomic(&out.join("resolved_config.toml"), cfg.to_toml().as_bytes())?;

    let outputs = run_grid(cfg, agents.as_ref())?;
    let mut csv = csv_header();
    csv.push('\n');
    for (spec, o) in &outputs {
        csv.push_str(&csv_row(&o.report));
        csv.push('\n');
        let label = run_label(spec);
        let mut delays = String::new();
        for d in &o.report.delays_ms {
            let _ = writeln!(delays, "{d:.6}");
        }
        write_atomic(&out.join(format!("delays_{label}.txt")), delays.as_bytes())?;
        if cfg.engine.record_traces {
            let mut lines = String::new();
            for t in &o.traces {
                lines.push_str(&serde_json::to_string(t).expect("trace serializes"));
                lines.push('\n');
            }
            write_atomic(&out.join(format!("traces_{label}.jsonl")), lines.as_bytes())?;
        }
    }
    write_atomic(&out.join("results.csv"), csv.as_bytes())?;

    let reports: Vec<MetricsReport> = outputs.into_iter().map(|(_, o)| o.report).collect();
    let mut points = Vec::new();
    for &policy in &cfg.run.policies {
        for &eta in &cfg.traffic.eta {
            let group: Vec<MetricsReport> = reports
                .iter()
                .filter(|r| r.policy == policy && r.eta == eta)
                .cloned()
                .collect();
            points.push(engine::aggregate(&group)?);
        }
    }
    let summary = Summary {
        scenario: cfg.to_toml(),
        points,
        runs: reports.clone(),
    };
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    write_atomic(&out.join("summary.json"), json.as_bytes())?;

    for p in &summary.points {
        let m = |v: Option<engine::MeanStd>| v.map(|x| format!("{:.4}", x.mean)).unwrap_or_else(|| "-".into());
        let _ = writeln!(
            log,
            "{:<7} eta={:<4} pdr={} delay_ms={} hops={} thr={} p_fb={}",
            p.policy.name(),
            p.eta,
            m(p.pdr),
            m(p.mean_delay_ms),
            m(p.mean_hops),
            m(p.throughput_pps),
            m(p.p_fb)
        );
    }
    let _ = writeln!(log, "results: {}", out.join("results.csv").display());
    Ok(Evaluation { reports, summary })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    pub warnings: Vec<String>,
    pub derived: Vec<String>,
}

pub fn cmd_validate(cfg: &ScenarioConfig, log: &mut dyn Write) -> Diagnostics {
    let d = Diagnostics {
        warnings: cfg.warnings(),
        derived: cfg.diagnostics(),
    };
    for line in &d.derived {
        let _ = writeln!(log, "{line}");
    }
    for w in &d.warnings {
        let _ = writeln!(log, "warning: {w}");
    }
    if d.warnings.is_empty() {
        let _ = writeln!(log, "no warnings");
    }
    d
}

/// Entry point behind `main`.
pub fn dispatch(cli: Cli, log: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Validate(args) => {
            // Validation errors are reported, but diagnostics still print.
            let cfg = match &args.config {
                Some(p) => ScenarioConfig::load_over(&ScenarioConfig::preset(&args.preset)?, p)?,
                None => ScenarioConfig::preset(&args.preset)?,
            };
            cmd_validate(&cfg, log);
            args.resolve().map(|_| ())
        }
        Command::Pretrain(args) => {
            let cfg = args.resolve()?;
            let ck = args.checkpoint_path(&cfg);
            cmd_pretrain(&cfg, &ck, log).map(|_| ())
        }
        Command::Evaluate(args) => {
            let cfg = args.resolve()?;
            let ck = args.checkpoint_path(&cfg);
            cmd_evaluate(&cfg, Some(&ck), log).map(|_| ())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_preset() {
        let args = ScenarioArgs {
            preset: "mini".into(),
            policy: vec![PolicyKind::Table],
            eta: vec![0.5],
            seeds: Some(2),
            no_timing: true,
            ..Default::default()
        };
        let cfg = args.resolve().unwrap();
        assert_eq!(cfg.run.policies, vec![PolicyKind::Table]);
        assert_eq!(cfg.traffic.eta, vec![0.5]);
        assert_eq!(cfg.run.seeds(), vec![42, 43]);
        assert!(!cfg.engine.record_timing);
        assert_eq!(cfg.constellation.planes, 4);
    }

    #[test]
    fn grid_size() {
        let mut cfg = ScenarioConfig::default();
        cfg.run.policies = vec![PolicyKind::Rl, PolicyKind::Hybrid];
        assert_eq!(grid(&cfg).len(), 6 * 2 * 20);
    }

    #[test]
    fn zero_budget_rejected() {
        let args = ScenarioArgs {
            preset: "mini".into(),
            steps: Some(0),
            ..Default::default()
        };
        let cfg = args.resolve().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let err = cmd_pretrain(&cfg, &dir.path().join("ck.json"), &mut std::io::sink()).unwrap_err();
        assert!(matches!(err, Error::Config { .. }));
    }

    #[test]
    fn validate_reports_literal_threshold() {
        let mut out = Vec::new();
        let d = cmd_validate(&ScenarioConfig::table1_literal(), &mut out);
        assert_eq!(d.warnings.len(), 1);
        let text = String::from_utf8(out).unwrap();
        assert!(text.contains("warning: intra-plane spacing 2165 km > 2000 km"));
        let d = cmd_validate(&ScenarioConfig::default(), &mut std::io::sink());
        assert!(d.warnings.is_empty());
        assert!(d.derived.iter().any(|l| l.contains("eta=1: 200 pkts/s")));
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/x.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }
}
