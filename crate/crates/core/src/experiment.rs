//! Runs that tie trace, cluster, policy, workload and metrics together.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::cluster::{BillingLedger, ClusterConfig, ClusterState, Event, EventKind, InstanceKind, DEFAULT_COLD_START_TICKS};
use crate::config::{seconds_to_ticks, Config};
use crate::error::{Error, Result};
use crate::metrics::{RunRecord, SimReport};
use crate::omniscient::{
    evaluate_solution, solve_exact_with, ConstraintSummary, Evaluation, OmniscientInstance, Schedule, SolverLimits,
};
use crate::policy::analysis::{monte_carlo_preemptions, Placement};
use crate::policy::autoscale::candidate_target;
use crate::policy::{
    build_policy, expected_preemptions_round_robin, expected_preemptions_static, AutoscaleConfig, Autoscaler,
    PolicyKind, PolicyParams, PolicyView, DEFAULT_N_EXTRA,
};
use crate::trace::CapacityTrace;
use crate::workload::{gen_workload, rate_per_tick, replica_windows, simulate_requests, RequestOutcome, ServeConfig, WorkloadSpec};

/// How `N_Tar(t)` is set.
#[derive(Debug, Clone, PartialEq)]
pub enum NTarget {
    Fixed(u32),
    /// Hysteresis autoscaler fed by the per-tick request rate.
    Autoscale(AutoscaleConfig),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunParams {
    pub seed: u64,
    pub cold_start_ticks: usize,
    pub od_capacity: Option<u32>,
    pub n_target: NTarget,
    pub n_extra: u32,
    pub spot_pool: u32,
    pub od_pool: u32,
    pub workload: Option<WorkloadSpec>,
    pub serve: ServeConfig,
    pub include_timeouts: bool,
    /// Base directory for relative workload trace paths.
    pub trace_dir: Option<PathBuf>,
    /// Label written into report rows.
    pub trace_label: String,
}

impl RunParams {
    /// Fixed target `n`, defaults elsewhere, no workload.
    pub fn fixed(n: u32) -> Self {
        RunParams {
            seed: 0,
            cold_start_ticks: DEFAULT_COLD_START_TICKS,
            od_capacity: None,
            n_target: NTarget::Fixed(n),
            n_extra: DEFAULT_N_EXTRA,
            spot_pool: 0,
            od_pool: 0,
            workload: None,
            serve: ServeConfig::default(),
            include_timeouts: true,
            trace_dir: None,
            trace_label: "trace".into(),
        }
    }
}

/// Cluster counts after the policy acted at tick `t`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TickRecord {
    pub t: usize,
    pub n_tar: u32,
    pub spot: u32,
    pub spot_ready: u32,
    pub od: u32,
    pub od_ready: u32,
    pub spot_per_zone: Vec<u32>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub policy: PolicyKind,
    pub trace: String,
    pub seed: u64,
    pub events: Vec<Event>,
    pub ticks: Vec<TickRecord>,
    pub ledger: BillingLedger,
    pub outcomes: Vec<RequestOutcome>,
    pub report: SimReport,
}

impl RunOutput {
    pub fn availability(&self) -> f64 {
        self.report.availability
    }

    pub fn n_tar(&self) -> Vec<u32> {
        self.ticks.iter().map(|r| r.n_tar).collect()
    }

    /// Launched and ready counts per tick, in the omniscient layout.
    pub fn schedule(&self) -> Schedule {
        let zones = self.ticks.first().map_or(0, |r| r.spot_per_zone.len());
        let mut s = Schedule::zeros(zones, self.ticks.len());
        for r in &self.ticks {
            for (z, &n) in r.spot_per_zone.iter().enumerate() {
                s.spot[z][r.t] = n;
            }
            s.od[r.t] = r.od;
            s.spot_ready[r.t] = r.spot_ready;
            s.od_ready[r.t] = r.od_ready;
        }
        s
    }
}

/// Simulates one policy over the whole trace.
///
/// Each tick: advance the cluster (readiness, preemptions), let the policy
/// decide, apply the decision, record counts. Requests are replayed
/// afterwards against the replicas' ready windows.
pub fn run_policy(trace: &CapacityTrace, kind: PolicyKind, params: &RunParams) -> Result<RunOutput> {
    let horizon = trace.horizon();
    let tick_s = f64::from(trace.tick_seconds());
    let requests = match &params.workload {
        Some(spec) => gen_workload(spec, horizon as f64 * tick_s, params.seed, params.trace_dir.as_deref())?,
        None => Vec::new(),
    };
    let rates = rate_per_tick(&requests, tick_s, horizon);
    let mut autoscaler = match &params.n_target {
        NTarget::Fixed(_) => None,
        NTarget::Autoscale(cfg) => {
            if params.workload.is_none() {
                return Err(Error::config("policy.q_tar", "autoscaling needs a workload"));
            }
            let w = cfg.window.max(1).min(horizon);
            let initial_rate = rates[..w].iter().sum::<f64>() / w as f64;
            let initial = candidate_target(initial_rate, cfg.q_tar).max(cfg.min_replicas);
            Some(Autoscaler::new(cfg.clone(), initial))
        }
    };

    let mut cluster = ClusterState::new(
        trace,
        &ClusterConfig {
            cold_start_ticks: params.cold_start_ticks,
            od_capacity: params.od_capacity,
            seed: params.seed,
        },
    );
    let mut policy = build_policy(
        kind,
        &PolicyParams {
            n_extra: params.n_extra,
            spot_pool: params.spot_pool,
            od_pool: params.od_pool,
        },
        trace.num_zones(),
    );
    let mut ticks = Vec::with_capacity(horizon);
    for t in 0..horizon {
        if t > 0 {
            let evs = cluster.step(trace)?;
            policy.observe(&evs);
        }
        let n_tar = match (&mut autoscaler, &params.n_target) {
            (Some(a), _) => {
                if t > 0 {
                    a.observe(rates[t - 1])
                } else {
                    a.target()
                }
            }
            (None, NTarget::Fixed(n)) => *n,
            (None, NTarget::Autoscale(_)) => unreachable!(),
        };
        let decision = policy.decide(&PolicyView {
            t,
            n_tar,
            zones: trace.zones(),
            cluster: &cluster,
        });
        let mut evs = cluster.apply(trace, &decision)?;
        policy.observe(&evs);
        let mut refused = Vec::new();
        for _ in 0..trace.num_zones() {
            let before = refused.len();
            refused.extend(
                evs.iter()
                    .filter(|e| e.kind == EventKind::LaunchFailed && e.replica_kind == InstanceKind::Spot)
                    .map(|e| e.zone),
            );
            if refused.len() == before {
                break;
            }
            let again = policy.retry(
                &PolicyView {
                    t,
                    n_tar,
                    zones: trace.zones(),
                    cluster: &cluster,
                },
                &refused,
            );
            if again.is_empty() {
                break;
            }
            evs = cluster.apply(trace, &again)?;
            policy.observe(&evs);
        }
        let c = cluster.counts();
        ticks.push(TickRecord {
            t,
            n_tar,
            spot: c.spot,
            spot_ready: c.spot_ready,
            od: c.od,
            od_ready: c.od_ready,
            spot_per_zone: c.spot_per_zone,
        });
    }
    // Replicas that turn ready exactly at the horizon can still drain requests.
    cluster.step(trace)?;

    let events = cluster.events().to_vec();
    let ledger = cluster.bill(trace.zones());
    let outcomes = if requests.is_empty() {
        Vec::new()
    } else {
        simulate_requests(&replica_windows(&events, tick_s), &requests, &params.serve)
    };
    let n_tar: Vec<u32> = ticks.iter().map(|r| r.n_tar).collect();
    let od_unit_cost = trace.zone(trace.cheapest_on_demand_zone()).od_unit_cost;
    let report = SimReport::from_run(&RunRecord {
        policy: kind.as_str(),
        trace: &params.trace_label,
        seed: params.seed,
        events: &events,
        zones: trace.zones(),
        n_tar: &n_tar,
        od_unit_cost,
        outcomes: &outcomes,
        include_timeouts: params.include_timeouts,
    });
    Ok(RunOutput {
        policy: kind,
        trace: params.trace_label.clone(),
        seed: params.seed,
        events,
        ticks,
        ledger,
        outcomes,
        report,
    })
}

/// A validated config with its trace source resolved.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: Config,
    /// Directory of the config file; relative paths resolve against it.
    pub base: Option<PathBuf>,
}

impl Experiment {
    pub fn new(config: Config, base: Option<&Path>) -> Result<Self> {
        config.validate()?;
        Ok(Experiment {
            config,
            base: base.map(Path::to_path_buf),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let cfg = Config::load(path)?;
        Experiment::new(cfg, path.parent())
    }

    pub fn trace(&self, seed: u64) -> Result<CapacityTrace> {
        self.config.trace(seed, self.base.as_deref())
    }

    pub fn params(&self, trace: &CapacityTrace, seed: u64) -> Result<RunParams> {
        let c = &self.config;
        let tick = trace.tick_seconds();
        let n_target = match (c.policy.n_tar, c.autoscale(tick)) {
            (Some(n), _) => NTarget::Fixed(n),
            (None, Some(a)) => NTarget::Autoscale(a),
            (None, None) => NTarget::Fixed(c.policy.spot_pool.unwrap_or(0) + c.policy.od_pool.unwrap_or(0)),
        };
        let (spot_pool, od_pool) = c.pools();
        Ok(RunParams {
            seed,
            cold_start_ticks: seconds_to_ticks(c.cluster.cold_start_s, tick),
            od_capacity: c.cluster.od_capacity,
            n_target,
            n_extra: c.policy.n_extra,
            spot_pool,
            od_pool,
            workload: c.workload.as_ref().map(|w| w.spec()),
            serve: c.workload.as_ref().map(|w| w.serve()).unwrap_or_default(),
            include_timeouts: c.workload.as_ref().is_none_or(|w| w.latency_includes_timeouts),
            trace_dir: self.base.clone(),
            trace_label: c.trace_label(),
        })
    }

    pub fn run(&self, kind: PolicyKind, seed: u64) -> Result<RunOutput> {
        let trace = self.trace(seed)?;
        run_policy(&trace, kind, &self.params(&trace, seed)?)
    }
}

/// Every `(policy, seed)` pair, in that order. `jobs` bounds the worker
/// threads; results do not depend on it.
pub fn run_sweep(exp: &Experiment, policies: &[PolicyKind], seeds: &[u64], jobs: usize) -> Result<Vec<RunOutput>> {
    if seeds.is_empty() {
        return Err(Error::config("seeds", "sweep needs at least one seed"));
    }
    if policies.is_empty() {
        return Err(Error::config("policies", "sweep needs at least one policy"));
    }
    let pairs: Vec<(PolicyKind, u64)> = policies
        .iter()
        .flat_map(|&p| seeds.iter().map(move |&s| (p, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Resource(format!("thread pool: {e}")))?;
    pool.install(|| pairs.par_iter().map(|&(p, s)| exp.run(p, s)).collect())
}

/// Launched and ready counts per tick rebuilt from an event log.
pub fn schedule_from_events(events: &[Event], num_zones: usize, horizon: usize) -> Schedule {
    let mut s = Schedule::zeros(num_zones, horizon);
    let mut spans: std::collections::BTreeMap<u64, (InstanceKind, usize, usize, Option<usize>, Option<usize>)> =
        Default::default();
    for e in events {
        let Some(id) = e.replica else { continue };
        match e.kind {
            EventKind::Launched => {
                spans.insert(id.0, (e.replica_kind, e.zone.0, e.t, None, None));
            }
            EventKind::BecameReady => {
                if let Some(sp) = spans.get_mut(&id.0) {
                    sp.3 = Some(e.t);
                }
            }
            EventKind::Preempted | EventKind::Terminated => {
                if let Some(sp) = spans.get_mut(&id.0) {
                    sp.4 = Some(e.t);
                }
            }
            EventKind::LaunchFailed => {}
        }
    }
    for (kind, zone, launched, ready, ended) in spans.into_values() {
        let end = ended.unwrap_or(horizon).min(horizon);
        for t in launched..end {
            let is_ready = ready.is_some_and(|r| r <= t);
            match kind {
                InstanceKind::Spot => {
                    s.spot[zone][t] += 1;
                    s.spot_ready[t] += u32::from(is_ready);
                }
                InstanceKind::OnDemand => {
                    s.od[t] += 1;
                    s.od_ready[t] += u32::from(is_ready);
                }
            }
        }
    }
    s
}

#[derive(Debug, Clone, Serialize)]
pub struct OptimizeReport {
    pub objective: f64,
    pub availability: f64,
    pub required_ticks: usize,
    pub d: usize,
    pub k: f64,
    pub n_max: u32,
    pub n_tar: Vec<u32>,
    pub constraints: ConstraintSummary,
    pub schedule: Schedule,
    pub met: Vec<bool>,
    /// Present when a policy event log was scored on the same instance.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scored: Option<Evaluation>,
}

/// The optimizer's readiness window is one tick longer than the simulator's
/// cold start: a replica ready at `t` has been launched through `[t - d, t]`.
pub fn ilp_delay(cold_start_ticks: usize) -> usize {
    cold_start_ticks + 1
}

/// Solves the offline optimum for the config's trace. With `event_log`
/// (JSON lines), also scores that run against the same instance.
pub fn run_optimize(exp: &Experiment, seed: u64, event_log: Option<&str>) -> Result<OptimizeReport> {
    let c = &exp.config;
    let trace = exp.trace(seed)?;
    let n = c
        .optimize
        .n_tar
        .or(c.policy.n_tar)
        .ok_or_else(|| Error::config("optimize.n_tar", "the optimizer needs a fixed target"))?;
    let d = ilp_delay(seconds_to_ticks(c.cluster.cold_start_s, trace.tick_seconds()));
    let capacity: Vec<Vec<u32>> = (0..trace.num_zones())
        .map(|z| trace.series(crate::trace::ZoneIdx(z)).to_vec())
        .collect();
    let mut inst = OmniscientInstance::new(capacity, vec![n; trace.horizon()], c.optimize.avail_tar, d, c.optimize.k)?;
    if let Some(m) = c.optimize.n_max {
        inst = inst.with_n_max(m)?;
    }
    let mut limits = SolverLimits::default();
    if let Some(m) = c.optimize.max_expansions {
        limits.max_expansions = m;
    }
    let sol = solve_exact_with(&inst, &limits)?;
    let scored = match event_log {
        Some(text) => {
            let events = crate::cluster::read_event_log(text, &trace)?;
            let mut s = schedule_from_events(&events, trace.num_zones(), trace.horizon());
            s.clip_ready(&inst);
            Some(evaluate_solution(&inst, &s))
        }
        None => None,
    };
    Ok(OptimizeReport {
        objective: sol.objective,
        availability: sol.availability,
        required_ticks: inst.required_ticks(),
        d,
        k: inst.k(),
        n_max: inst.n_max(),
        n_tar: inst.n_tar().to_vec(),
        constraints: inst.constraint_summary(),
        schedule: sol.schedule,
        met: sol.met,
        scored,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalyzeRow {
    pub placement: &'static str,
    pub analytic: f64,
    pub simulated: f64,
    pub stderr: f64,
    pub runs: usize,
    pub relative_error: f64,
}

/// Closed-form and Monte Carlo expected preemptions for both placements.
pub fn run_analyze(n: u32, lambdas: &[f64], horizon: f64, runs: usize, seed: u64) -> Result<Vec<AnalyzeRow>> {
    let mut rows = Vec::new();
    for (name, placement, analytic) in [
        ("static", Placement::Static, expected_preemptions_static(n, lambdas, horizon)?),
        ("round_robin", Placement::RoundRobin, expected_preemptions_round_robin(n, lambdas, horizon)?),
    ] {
        let est = monte_carlo_preemptions(placement, n, lambdas, horizon, runs, seed)?;
        rows.push(AnalyzeRow {
            placement: name,
            analytic,
            simulated: est.mean,
            stderr: est.stderr,
            runs: est.runs,
            relative_error: if analytic == 0.0 {
                est.mean.abs()
            } else {
                (est.mean - analytic).abs() / analytic
            },
        });
    }
    Ok(rows)
}

pub fn analyze_csv(rows: &[AnalyzeRow]) -> String {
    let mut out = String::from("placement,analytic,simulated,stderr,runs,relative_error\n");
    for r in rows {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{},{:.6}\n",
            r.placement, r.analytic, r.simulated, r.stderr, r.runs, r.relative_error
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::Zone;

    fn flat(zones: usize, cap: u32, horizon: usize) -> CapacityTrace {
        let zs = (0..zones)
            .map(|i| Zone::new(&format!("aws:z{i}"), &format!("r{i}"), 1.0, 3.0))
            .collect();
        CapacityTrace::new(zs, 10, vec![vec![cap; horizon]; zones]).unwrap()
    }

    #[test]
    fn od_only_costs_exactly_on_demand() {
        let trace = flat(2, 4, 50);
        let mut p = RunParams::fixed(3);
        p.cold_start_ticks = 0;
        let run = run_policy(&trace, PolicyKind::OdOnly, &p).unwrap();
        assert_eq!(run.availability(), 1.0);
        assert!((run.report.cost_relative_to_od - 1.0).abs() < 1e-12);
    }

    #[test]
    fn spothedge_on_steady_spot() {
        let trace = flat(3, 10, 200);
        for n_extra in [0, 1] {
            let mut p = RunParams::fixed(4);
            p.cold_start_ticks = 0;
            p.n_extra = n_extra;
            let run = run_policy(&trace, PolicyKind::SpotHedge, &p).unwrap();
            assert_eq!(run.availability(), 1.0);
            // Tick 0 is covered on demand while spot boots; spot only after.
            assert!(run.ticks[1..].iter().all(|r| r.od == 0));
            let spot_share = f64::from(4 + n_extra) / 4.0 / 3.0;
            let startup = 1.0 / 200.0;
            assert!(run.report.cost_relative_to_od <= spot_share + startup + 1e-9);
        }
    }

    #[test]
    fn schedule_matches_tick_records() {
        let mut cap = vec![vec![3u32; 80]; 2];
        for t in 20..40 {
            cap[0][t] = 0;
        }
        for t in 30..50 {
            cap[1][t] = 1;
        }
        let zs = vec![Zone::new("aws:a", "r", 1.0, 3.0), Zone::new("aws:b", "r", 1.0, 3.0)];
        let trace = CapacityTrace::new(zs, 10, cap).unwrap();
        let mut p = RunParams::fixed(3);
        p.cold_start_ticks = 2;
        let run = run_policy(&trace, PolicyKind::SpotHedge, &p).unwrap();
        assert_eq!(schedule_from_events(&run.events, 2, 80), run.schedule());
    }

    #[test]
    fn analyze_table_has_both_rows() {
        let rows = run_analyze(6, &[0.2, 0.1, 0.1], 100.0, 50, 1).unwrap();
        assert_eq!(rows.len(), 2);
        assert!((rows[0].analytic - 80.0).abs() < 1e-9);
        assert!((rows[1].analytic - 72.0).abs() < 1e-9);
        assert!(analyze_csv(&rows).starts_with("placement,"));
    }
}
