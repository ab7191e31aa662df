use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{DecisionCounters, PolicyKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub policy: PolicyKind,
    pub eta: f64,
    pub seed: u64,
    pub generated: u64,
    pub delivered: u64,
    pub dropped_overflow: u64,
    pub dropped_ttl: u64,
    pub dropped_noroute: u64,
    pub in_flight: u64,
    pub pdr: f64,
    pub mean_delay_ms: Option<f64>,
    pub p50_delay_ms: Option<f64>,
    pub p95_delay_ms: Option<f64>,
    pub mean_hops: Option<f64>,
    pub throughput_pps: f64,
    pub p_fb: Option<f64>,
    pub decisions: DecisionCounters,
    /// Mean wall time of one forwarding decision, seconds (0 when not measured).
    pub mean_decision_s: f64,
    pub td_updates: u64,
    pub events: u64,
    pub wall_time_s: f64,
    /// End-to-end delays of delivered packets in delivery order, ms.
    #[serde(skip)]
    pub delays_ms: Vec<f64>,
}

impl MetricsReport {
    pub fn dropped(&self) -> u64 {
        self.dropped_overflow + self.dropped_ttl + self.dropped_noroute
    }

    pub fn is_conserved(&self) -> bool {
        self.generated == self.delivered + self.dropped() + self.in_flight
    }
}

/// Nearest-rank percentile of ascending-sorted samples.
pub fn percentile(sorted: &[f64], p: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    Some(sorted[rank.clamp(1, sorted.len()) - 1])
}

pub fn sorted(samples: &[f64]) -> Vec<f64> {
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

pub fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    /// Reports that had a value.
    pub n: usize,
}

impl MeanStd {
    /// Sample standard deviation; a single value has zero spread.
    pub fn of(values: &[f64]) -> Option<Self> {
        let m = mean(values)?;
        let std = if values.len() < 2 {
            0.0
        } else {
            let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
            (ss / (values.len() - 1) as f64).sqrt()
        };
        Some(Self {
            mean: m,
            std,
            n: values.len(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatePoint {
    pub policy: PolicyKind,
    pub eta: f64,
    pub runs: usize,
    pub seeds: Vec<u64>,
    pub pdr: Option<MeanStd>,
    pub mean_delay_ms: Option<MeanStd>,
    pub mean_hops: Option<MeanStd>,
    pub throughput_pps: Option<MeanStd>,
    pub p_fb: Option<MeanStd>,
    pub q_evals: Option<MeanStd>,
    pub table_lookups: Option<MeanStd>,
    pub mean_decision_s: Option<MeanStd>,
    /// Percentiles over the pooled delay samples of every run.
    pub pooled_p50_delay_ms: Option<f64>,
    pub pooled_p95_delay_ms: Option<f64>,
}

/// Mean and spread per metric across seeds of one (policy, eta) point.
pub fn aggregate(reports: &[MetricsReport]) -> Result<AggregatePoint> {
    let first = reports
        .first()
        .ok_or_else(|| Error::Aggregation("no reports".into()))?;
    for r in reports {
        if r.policy != first.policy || r.eta != first.eta {
            return Err(Error::Aggregation(format!(
                "mixed points ({}, eta={}) and ({}, eta={})",
                first.policy, first.eta, r.policy, r.eta
            )));
        }
    }
    let stat = |f: &dyn Fn(&MetricsReport) -> Option<f64>| {
        let v: Vec<f64> = reports.iter().filter_map(f).collect();
        MeanStd::of(&v)
    };
    let pooled: Vec<f64> = reports.iter().flat_map(|r| r.delays_ms.iter().copied()).collect();
    let pooled = sorted(&pooled);
    Ok(AggregatePoint {
        policy: first.policy,
        eta: first.eta,
        runs: reports.len(),
        seeds: reports.iter().map(|r| r.seed).collect(),
        pdr: stat(&|r| Some(r.pdr)),
        mean_delay_ms: stat(&|r| r.mean_delay_ms),
        mean_hops: stat(&|r| r.mean_hops),
        throughput_pps: stat(&|r| Some(r.throughput_pps)),
        p_fb: stat(&|r| r.p_fb),
        q_evals: stat(&|r| Some(r.decisions.q_evaluations as f64)),
        table_lookups: stat(&|r| Some(r.decisions.table_lookups as f64)),
        mean_decision_s: stat(&|r| Some(r.mean_decision_s)),
        pooled_p50_delay_ms: percentile(&pooled, 50.0),
        pooled_p95_delay_ms: percentile(&pooled, 95.0),
    })
}

pub const CSV_COLUMNS: [&str; 18] = [
    "policy",
    "eta",
    "seed",
    "generated",
    "delivered",
    "dropped_overflow",
    "dropped_ttl",
    "dropped_noroute",
    "pdr",
    "mean_delay_ms",
    "p50_delay_ms",
    "p95_delay_ms",
    "mean_hops",
    "throughput_pps",
    "p_fb",
    "table_lookups",
    "q_evals",
    "wall_time_s",
];

pub fn csv_header() -> String {
    CSV_COLUMNS.join(",")
}

/// One results row; undefined values are left empty.
pub fn csv_row(r: &MetricsReport) -> String {
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    [
        r.policy.name().to_string(),
        format!("{}", r.eta),
        r.seed.to_string(),
        r.generated.to_string(),
        r.delivered.to_string(),
        r.dropped_overflow.to_string(),
        r.dropped_ttl.to_string(),
        r.dropped_noroute.to_string(),
        format!("{:.6}", r.pdr),
        opt(r.mean_delay_ms),
        opt(r.p50_delay_ms),
        opt(r.p95_delay_ms),
        opt(r.mean_hops),
        format!("{:.6}", r.throughput_pps),
        opt(r.p_fb),
        r.decisions.table_lookups.to_string(),
        r.decisions.q_evaluations.to_string(),
        format!("{:.6}", r.wall_time_s),
    ]
    .join(",")
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    pub(crate) fn report(pdr: f64, delays: Vec<f64>) -> MetricsReport {
        MetricsReport {
            policy: PolicyKind::Hybrid,
            eta: 1.0,
            seed: 42,
            generated: 10,
            delivered: 9,
            dropped_overflow: 1,
            dropped_ttl: 0,
            dropped_noroute: 0,
            in_flight: 0,
            pdr,
            mean_delay_ms: mean(&delays),
            p50_delay_ms: percentile(&sorted(&delays), 50.0),
            p95_delay_ms: percentile(&sorted(&delays), 95.0),
            mean_hops: Some(3.0),
            throughput_pps: 1.0,
            p_fb: Some(0.1),
            decisions: DecisionCounters::default(),
            mean_decision_s: 0.0,
            td_updates: 0,
            events: 0,
            wall_time_s: 0.0,
            delays_ms: delays,
        }
    }

    #[test]
    fn nearest_rank() {
        let s = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(percentile(&s, 50.0), Some(2.0));
        assert_eq!(percentile(&s, 95.0), Some(4.0));
        assert_eq!(percentile(&s, 100.0), Some(4.0));
        assert_eq!(percentile(&s, 0.0), Some(1.0));
        assert_eq!(percentile(&[], 50.0), None);
    }

    #[test]
    fn single_report_has_zero_spread() {
        let a = aggregate(&[report(0.9, vec![1.0])]).unwrap();
        let pdr = a.pdr.unwrap();
        assert_eq!((pdr.mean, pdr.std), (0.9, 0.0));
    }

    #[test]
    fn two_reports_average() {
        let mut b = report(1.0, vec![5.0, 6.0]);
        b.seed = 43;
        let a = aggregate(&[report(0.9, vec![1.0, 2.0]), b]).unwrap();
        assert!((a.pdr.unwrap().mean - 0.95).abs() < 1e-15);
        assert_eq!(a.seeds, vec![42, 43]);
        assert_eq!(a.pooled_p50_delay_ms, Some(2.0));
    }

    #[test]
    fn heterogeneous_points_rejected() {
        let mut b = report(1.0, vec![]);
        b.eta = 0.2;
        assert!(matches!(aggregate(&[report(0.9, vec![]), b]), Err(Error::Aggregation(_))));
        assert!(aggregate(&[]).is_err());
    }

    #[test]
    fn csv_shape() {
        let r = report(0.9, vec![]);
        let row = csv_row(&r);
        assert_eq!(row.split(',').count(), CSV_COLUMNS.len());
        assert!(row.starts_with("hybrid,1,42,10,9,1,0,0,0.900000,,,"));
    }

    proptest! {
        #[test]
        fn pooled_percentiles_match_sort_and_index(
            a in prop::collection::vec(0.0f64..500.0, 0..40),
            b in prop::collection::vec(0.0f64..500.0, 1..40),
        ) {
            let agg = aggregate(&[report(1.0, a.clone()), report(1.0, b.clone())]).unwrap();
            let mut all: Vec<f64> = a.iter().chain(&b).copied().collect();
            all.sort_by(|x, y| x.partial_cmp(y).unwrap());
            let n = all.len();
            let idx = |p: f64| ((p * n as f64 / 100.0).ceil() as usize).max(1) - 1;
            prop_assert_eq!(agg.pooled_p50_delay_ms, Some(all[idx(50.0)]));
            prop_assert_eq!(agg.pooled_p95_delay_ms, Some(all[idx(95.0)]));
        }
    }
}
