//! Availability, cost, latency and failure metrics for finished runs.
//!
//! Everything in a [`SimReport`] is computed from the cluster event log and
//! the request outcomes; nothing is carried over from the simulation itself.

mod export;

pub use export::{
    aggregate_rows, cost_svg, export_reports, latency_svg, outcomes_csv, ready_svg, reports_csv,
    sweep_csv, write_file, AggregateRow, CSV_HEADER,
};

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::cluster::{BillingLedger, Event, EventKind, InstanceKind, ReplicaId};
use crate::trace::Zone;
use crate::workload::{RequestOutcome, RequestStatus};

/// Fraction of ticks with at least `n_tar(t)` ready replicas.
pub fn availability(ready: &[u32], n_tar: &[u32]) -> f64 {
    if ready.is_empty() {
        return 0.0;
    }
    let met = ready.iter().zip(n_tar).filter(|(r, n)| r >= n).count();
    met as f64 / ready.len() as f64
}

/// Cost relative to running exactly `n_tar(t)` on-demand replicas.
pub fn relative_cost(total: f64, n_tar: &[u32], od_unit_cost: f64) -> f64 {
    let base: f64 = n_tar.iter().map(|&n| f64::from(n)).sum::<f64>() * od_unit_cost;
    if base == 0.0 {
        return 0.0;
    }
    total / base
}

/// Nearest-rank percentile of an ascending slice: the value at rank
/// `ceil(p/100 · n)`.
pub fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let rank = ((p / 100.0 * n as f64) - 1e-9).ceil().max(1.0) as usize;
    sorted[rank.min(n) - 1]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub p50: f64,
    pub p90: f64,
    pub p99: f64,
    pub mean: f64,
}

/// Percentiles over completed requests plus timed-out ones (at their
/// timeout), unless `include_timeouts` is false. `None` without samples.
pub fn latency_percentiles(outcomes: &[RequestOutcome], include_timeouts: bool) -> Option<LatencySummary> {
    let mut lat: Vec<f64> = outcomes
        .iter()
        .filter(|o| {
            o.status == RequestStatus::Completed
                || (include_timeouts && o.status == RequestStatus::TimedOut)
        })
        .map(|o| o.latency_s)
        .collect();
    if lat.is_empty() {
        return None;
    }
    lat.sort_by(f64::total_cmp);
    Some(LatencySummary {
        p50: nearest_rank(&lat, 50.0),
        p90: nearest_rank(&lat, 90.0),
        p99: nearest_rank(&lat, 99.0),
        mean: lat.iter().sum::<f64>() / lat.len() as f64,
    })
}

/// Share of requests that timed out or gave up.
pub fn failure_rate(outcomes: &[RequestOutcome]) -> f64 {
    if outcomes.is_empty() {
        return 0.0;
    }
    let failed = outcomes
        .iter()
        .filter(|o| o.status != RequestStatus::Completed)
        .count();
    failed as f64 / outcomes.len() as f64
}

/// Ready replicas at each tick, after that tick's decision was applied.
pub fn ready_series(events: &[Event], horizon: usize) -> Vec<u32> {
    let mut ready: HashSet<ReplicaId> = HashSet::new();
    let mut out = Vec::with_capacity(horizon);
    let mut i = 0;
    for t in 0..horizon {
        while i < events.len() && events[i].t <= t {
            let e = &events[i];
            if let Some(id) = e.replica {
                match e.kind {
                    EventKind::BecameReady => {
                        ready.insert(id);
                    }
                    EventKind::Preempted | EventKind::Terminated => {
                        ready.remove(&id);
                    }
                    _ => {}
                }
            }
            i += 1;
        }
        out.push(ready.len() as u32);
    }
    out
}

/// Bills every launched replica from its launch tick to its end (or the
/// horizon).
pub fn ledger_from_events(events: &[Event], zones: &[Zone], horizon: usize) -> BillingLedger {
    let mut start: HashMap<ReplicaId, (usize, InstanceKind, usize)> = HashMap::new();
    let mut spans = Vec::new();
    for e in events {
        let Some(id) = e.replica else { continue };
        match e.kind {
            EventKind::Launched => {
                start.insert(id, (e.t, e.replica_kind, e.zone.0));
            }
            EventKind::Preempted | EventKind::Terminated => {
                if let Some(s) = start.remove(&id) {
                    spans.push((id, s, e.t));
                }
            }
            _ => {}
        }
    }
    spans.extend(start.into_iter().map(|(id, s)| (id, s, horizon)));
    spans.sort_by_key(|&(id, _, _)| id);

    let mut ledger = BillingLedger {
        per_zone_spot: vec![0.0; zones.len()],
        per_zone_od: vec![0.0; zones.len()],
        ..BillingLedger::default()
    };
    for (_, (from, kind, z), to) in spans {
        let ticks = to.saturating_sub(from) as f64;
        match kind {
            InstanceKind::Spot => {
                let c = zones[z].spot_unit_cost * ticks;
                ledger.spot_cost += c;
                ledger.per_zone_spot[z] += c;
            }
            InstanceKind::OnDemand => {
                let c = zones[z].od_unit_cost * ticks;
                ledger.od_cost += c;
                ledger.per_zone_od[z] += c;
            }
        }
    }
    ledger
}

/// Summary of one simulated run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub policy: String,
    pub trace: String,
    pub seed: u64,
    pub availability: f64,
    pub cost_total: f64,
    pub cost_spot: f64,
    pub cost_od: f64,
    pub cost_relative_to_od: f64,
    pub latency: Option<LatencySummary>,
    pub failure_rate: f64,
    pub requests: usize,
    pub preemptions: usize,
    pub launch_failures: usize,
    pub ready_series: Vec<u32>,
    pub n_tar_series: Vec<u32>,
}

/// What a run left behind: enough to rebuild its report.
pub struct RunRecord<'a> {
    pub policy: &'a str,
    pub trace: &'a str,
    pub seed: u64,
    pub events: &'a [Event],
    pub zones: &'a [Zone],
    pub n_tar: &'a [u32],
    /// On-demand price used for the relative cost baseline.
    pub od_unit_cost: f64,
    pub outcomes: &'a [RequestOutcome],
    pub include_timeouts: bool,
}

impl SimReport {
    pub fn from_run(run: &RunRecord<'_>) -> Self {
        let horizon = run.n_tar.len();
        let ready = ready_series(run.events, horizon);
        let ledger = ledger_from_events(run.events, run.zones, horizon);
        let count = |k| run.events.iter().filter(|e| e.kind == k).count();
        SimReport {
            policy: run.policy.to_string(),
            trace: run.trace.to_string(),
            seed: run.seed,
            availability: availability(&ready, run.n_tar),
            cost_total: ledger.total(),
            cost_spot: ledger.spot_cost,
            cost_od: ledger.od_cost,
            cost_relative_to_od: relative_cost(ledger.total(), run.n_tar, run.od_unit_cost),
            latency: latency_percentiles(run.outcomes, run.include_timeouts),
            failure_rate: failure_rate(run.outcomes),
            requests: run.outcomes.len(),
            preemptions: count(EventKind::Preempted),
            launch_failures: count(EventKind::LaunchFailed),
            ready_series: ready,
            n_tar_series: run.n_tar.to_vec(),
        }
    }
}
