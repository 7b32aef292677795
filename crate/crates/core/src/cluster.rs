//! Replica lifecycle: launches, cold start, readiness, capacity-driven
//! preemption, termination and billing.
//!
//! Time is counted in ticks. During tick `t` a live replica is billed, and a
//! replica launched at `L` becomes ready at the start of tick `L + d`. Calling
//! [`ClusterState::step`] moves the clock to the next tick, promotes replicas
//! whose cold start has elapsed, then preempts spot replicas in any zone whose
//! capacity fell below its live spot count.

use std::fmt;
use std::io::Write;

use rand::seq::index::sample;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::ScalingDecision;
use crate::rng::{streams, substream};
use crate::trace::{CapacityTrace, Zone, ZoneIdx};

/// Default cold start: 180 s at 10 s ticks.
pub const DEFAULT_COLD_START_TICKS: usize = 18;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ReplicaId(pub u64);

impl fmt::Display for ReplicaId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstanceKind {
    Spot,
    OnDemand,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplicaState {
    Provisioning,
    Ready,
    Terminated,
    Preempted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Replica {
    pub id: ReplicaId,
    pub kind: InstanceKind,
    pub zone: ZoneIdx,
    pub state: ReplicaState,
    pub launched_at: usize,
    pub ready_at: Option<usize>,
    pub ended_at: Option<usize>,
}

impl Replica {
    pub fn is_live(&self) -> bool {
        matches!(self.state, ReplicaState::Provisioning | ReplicaState::Ready)
    }

    pub fn is_ready(&self) -> bool {
        self.state == ReplicaState::Ready
    }

    /// Ticks billed so far when the clock reads `now`.
    pub fn billed_ticks(&self, now: usize) -> usize {
        self.ended_at.unwrap_or(now).saturating_sub(self.launched_at)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Launched,
    BecameReady,
    Preempted,
    LaunchFailed,
    Terminated,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Event {
    pub t: usize,
    pub kind: EventKind,
    /// `None` for failed launches.
    pub replica: Option<ReplicaId>,
    pub zone: ZoneIdx,
    pub replica_kind: InstanceKind,
}

#[derive(Serialize)]
struct EventRecord<'a> {
    t: usize,
    event: EventKind,
    replica: Option<u64>,
    zone: &'a str,
    kind: InstanceKind,
}

#[derive(Deserialize)]
struct EventRecordOwned {
    t: usize,
    event: EventKind,
    replica: Option<u64>,
    zone: String,
    kind: InstanceKind,
}

/// Writes the event log as JSON lines `{"t","event","replica","zone","kind"}`.
pub fn write_event_log<W: Write>(mut w: W, events: &[Event], zones: &[Zone]) -> std::io::Result<()> {
    for e in events {
        let rec = EventRecord {
            t: e.t,
            event: e.kind,
            replica: e.replica.map(|r| r.0),
            zone: &zones[e.zone.0].id,
            kind: e.replica_kind,
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Parses an event log written by [`write_event_log`].
pub fn read_event_log(text: &str, trace: &CapacityTrace) -> Result<Vec<Event>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let rec: EventRecordOwned = serde_json::from_str(line)
                .map_err(|e| Error::Parse(format!("event log line {}: {e}", i + 1)))?;
            Ok(Event {
                t: rec.t,
                kind: rec.event,
                replica: rec.replica.map(ReplicaId),
                zone: trace.zone_index(&rec.zone)?,
                replica_kind: rec.kind,
            })
        })
        .collect()
}

/// Result of a single launch request.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LaunchOutcome {
    Launched(ReplicaId),
    /// No capacity in the zone (or the on-demand cap was hit).
    Failed,
}

/// Replica counts at the current tick.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Counts {
    /// Launched spot replicas, `S(t)`.
    pub spot: u32,
    /// Ready spot replicas, `S_r(t)`.
    pub spot_ready: u32,
    /// Launched on-demand replicas, `O(t)`.
    pub od: u32,
    /// Ready on-demand replicas, `O_r(t)`.
    pub od_ready: u32,
    /// Launched spot replicas per zone, `S(z, t)`.
    pub spot_per_zone: Vec<u32>,
}

impl Counts {
    pub fn ready(&self) -> u32 {
        self.spot_ready + self.od_ready
    }
}

/// Accumulated cost, split by instance kind and zone.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BillingLedger {
    pub spot_cost: f64,
    pub od_cost: f64,
    pub per_zone_spot: Vec<f64>,
    pub per_zone_od: Vec<f64>,
}

impl BillingLedger {
    pub fn total(&self) -> f64 {
        self.spot_cost + self.od_cost
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterConfig {
    pub cold_start_ticks: usize,
    /// Cap on live on-demand replicas; `None` means always provisionable.
    pub od_capacity: Option<u32>,
    /// Root seed; preemption victims use its own sub-stream.
    pub seed: u64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            cold_start_ticks: DEFAULT_COLD_START_TICKS,
            od_capacity: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClusterState {
    replicas: Vec<Replica>,
    t: usize,
    cold_start: usize,
    od_capacity: Option<u32>,
    od_zone: ZoneIdx,
    num_zones: usize,
    rng: ChaCha8Rng,
    log: Vec<Event>,
}

impl ClusterState {
    pub fn new(trace: &CapacityTrace, cfg: &ClusterConfig) -> Self {
        ClusterState {
            replicas: Vec::new(),
            t: 0,
            cold_start: cfg.cold_start_ticks,
            od_capacity: cfg.od_capacity,
            od_zone: trace.cheapest_on_demand_zone(),
            num_zones: trace.num_zones(),
            rng: substream(cfg.seed, streams::PREEMPTION),
            log: Vec::new(),
        }
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn cold_start(&self) -> usize {
        self.cold_start
    }

    /// Zone used for on-demand launches.
    pub fn od_zone(&self) -> ZoneIdx {
        self.od_zone
    }

    pub fn replicas(&self) -> &[Replica] {
        &self.replicas
    }

    pub fn replica(&self, id: ReplicaId) -> Option<&Replica> {
        self.replicas.get(id.0 as usize)
    }

    pub fn live(&self) -> impl Iterator<Item = &Replica> {
        self.replicas.iter().filter(|r| r.is_live())
    }

    pub fn events(&self) -> &[Event] {
        &self.log
    }

    fn live_spot_in(&self, zone: ZoneIdx) -> usize {
        self.live()
            .filter(|r| r.kind == InstanceKind::Spot && r.zone == zone)
            .count()
    }

    fn push(&mut self, out: &mut Vec<Event>, e: Event) {
        self.log.push(e.clone());
        out.push(e);
    }

    fn launch_inner(
        &mut self,
        trace: &CapacityTrace,
        kind: InstanceKind,
        zone: ZoneIdx,
        out: &mut Vec<Event>,
    ) -> Result<LaunchOutcome> {
        if zone.0 >= self.num_zones {
            return Err(Error::Lookup(format!("unknown zone index {}", zone.0)));
        }
        let t = self.t;
        let has_room = match kind {
            InstanceKind::Spot => {
                t < trace.horizon() && self.live_spot_in(zone) < trace.capacity(zone, t) as usize
            }
            InstanceKind::OnDemand => self.od_capacity.is_none_or(|cap| {
                (self.live().filter(|r| r.kind == InstanceKind::OnDemand).count() as u32) < cap
            }),
        };
        if !has_room {
            self.push(
                out,
                Event {
                    t,
                    kind: EventKind::LaunchFailed,
                    replica: None,
                    zone,
                    replica_kind: kind,
                },
            );
            return Ok(LaunchOutcome::Failed);
        }
        let id = ReplicaId(self.replicas.len() as u64);
        let ready_now = self.cold_start == 0;
        self.replicas.push(Replica {
            id,
            kind,
            zone,
            state: if ready_now {
                ReplicaState::Ready
            } else {
                ReplicaState::Provisioning
            },
            launched_at: t,
            ready_at: ready_now.then_some(t),
            ended_at: None,
        });
        let ev = |k| Event {
            t,
            kind: k,
            replica: Some(id),
            zone,
            replica_kind: kind,
        };
        self.push(out, ev(EventKind::Launched));
        if ready_now {
            self.push(out, ev(EventKind::BecameReady));
        }
        Ok(LaunchOutcome::Launched(id))
    }

    /// Launches one replica at the current tick. Spot launches fail when the
    /// zone is already at capacity.
    pub fn launch(
        &mut self,
        trace: &CapacityTrace,
        kind: InstanceKind,
        zone: ZoneIdx,
    ) -> Result<LaunchOutcome> {
        let mut out = Vec::new();
        self.launch_inner(trace, kind, zone, &mut out)
    }

    fn terminate_inner(&mut self, id: ReplicaId, out: &mut Vec<Event>) -> Result<()> {
        let t = self.t;
        let r = self
            .replicas
            .get_mut(id.0 as usize)
            .ok_or_else(|| Error::Lookup(format!("unknown replica {id}")))?;
        if !r.is_live() {
            return Err(Error::Validation(format!("replica {id} is not live")));
        }
        r.state = ReplicaState::Terminated;
        r.ended_at = Some(t);
        let e = Event {
            t,
            kind: EventKind::Terminated,
            replica: Some(id),
            zone: r.zone,
            replica_kind: r.kind,
        };
        self.push(out, e);
        Ok(())
    }

    pub fn terminate(&mut self, id: ReplicaId) -> Result<()> {
        let mut out = Vec::new();
        self.terminate_inner(id, &mut out)
    }

    /// Applies a policy decision at the current tick: terminations first,
    /// then spot launches in order, then on-demand launches.
    pub fn apply(&mut self, trace: &CapacityTrace, decision: &ScalingDecision) -> Result<Vec<Event>> {
        let mut out = Vec::new();
        for &id in &decision.terminate {
            self.terminate_inner(id, &mut out)?;
        }
        for &z in &decision.spot_launches {
            self.launch_inner(trace, InstanceKind::Spot, z, &mut out)?;
        }
        for _ in 0..decision.od_launches {
            let z = self.od_zone;
            self.launch_inner(trace, InstanceKind::OnDemand, z, &mut out)?;
        }
        Ok(out)
    }

    /// Advances the clock by one tick. Capacity is enforced while the new
    /// tick lies inside the trace; the final step to `horizon` only settles
    /// readiness so that billing closes at the horizon.
    pub fn step(&mut self, trace: &CapacityTrace) -> Result<Vec<Event>> {
        if self.t >= trace.horizon() {
            return Err(Error::Lookup(format!(
                "cannot step past horizon {}",
                trace.horizon()
            )));
        }
        self.t += 1;
        let t = self.t;
        let mut out = Vec::new();

        let mut newly_ready = Vec::new();
        for r in self.replicas.iter_mut() {
            if r.state == ReplicaState::Provisioning && r.launched_at + self.cold_start <= t {
                r.state = ReplicaState::Ready;
                r.ready_at = Some(t);
                newly_ready.push(Event {
                    t,
                    kind: EventKind::BecameReady,
                    replica: Some(r.id),
                    zone: r.zone,
                    replica_kind: r.kind,
                });
            }
        }
        for e in newly_ready {
            self.push(&mut out, e);
        }

        if t < trace.horizon() {
            for z in 0..self.num_zones {
                let zone = ZoneIdx(z);
                let live: Vec<usize> = self
                    .replicas
                    .iter()
                    .enumerate()
                    .filter(|(_, r)| r.is_live() && r.kind == InstanceKind::Spot && r.zone == zone)
                    .map(|(i, _)| i)
                    .collect();
                let cap = trace.capacity(zone, t) as usize;
                if live.len() <= cap {
                    continue;
                }
                let mut victims: Vec<usize> = sample(&mut self.rng, live.len(), live.len() - cap)
                    .into_iter()
                    .map(|k| live[k])
                    .collect();
                victims.sort_unstable();
                for i in victims {
                    let r = &mut self.replicas[i];
                    r.state = ReplicaState::Preempted;
                    r.ended_at = Some(t);
                    let e = Event {
                        t,
                        kind: EventKind::Preempted,
                        replica: Some(r.id),
                        zone,
                        replica_kind: InstanceKind::Spot,
                    };
                    self.push(&mut out, e);
                }
            }
        }
        Ok(out)
    }

    pub fn counts(&self) -> Counts {
        let mut c = Counts {
            spot_per_zone: vec![0; self.num_zones],
            ..Counts::default()
        };
        for r in self.live() {
            match r.kind {
                InstanceKind::Spot => {
                    c.spot += 1;
                    c.spot_per_zone[r.zone.0] += 1;
                    if r.is_ready() {
                        c.spot_ready += 1;
                    }
                }
                InstanceKind::OnDemand => {
                    c.od += 1;
                    if r.is_ready() {
                        c.od_ready += 1;
                    }
                }
            }
        }
        c
    }

    /// Cost so far: every replica is billed its zone's unit cost for each
    /// tick from launch up to (not including) its end or the current tick.
    /// Cold-start ticks are billed.
    pub fn bill(&self, zones: &[Zone]) -> BillingLedger {
        let mut ledger = BillingLedger {
            per_zone_spot: vec![0.0; zones.len()],
            per_zone_od: vec![0.0; zones.len()],
            ..BillingLedger::default()
        };
        for r in &self.replicas {
            let ticks = r.billed_ticks(self.t) as f64;
            let zone = &zones[r.zone.0];
            match r.kind {
                InstanceKind::Spot => {
                    let c = zone.spot_unit_cost * ticks;
                    ledger.spot_cost += c;
                    ledger.per_zone_spot[r.zone.0] += c;
                }
                InstanceKind::OnDemand => {
                    let c = zone.od_unit_cost * ticks;
                    ledger.od_cost += c;
                    ledger.per_zone_od[r.zone.0] += c;
                }
            }
        }
        ledger
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace(caps: Vec<Vec<u32>>) -> CapacityTrace {
        let zones = (0..caps.len())
            .map(|i| Zone::new(&format!("z{}", i + 1), "r1", 1.0, 3.0))
            .collect();
        CapacityTrace::new(zones, 10, caps).unwrap()
    }

    fn cfg(d: usize) -> ClusterConfig {
        ClusterConfig {
            cold_start_ticks: d,
            od_capacity: None,
            seed: 5,
        }
    }

    #[test]
    fn spot_launch_respects_capacity() {
        let tr = trace(vec![vec![2; 4]]);
        let mut c = ClusterState::new(&tr, &cfg(2));
        let out = c.launch(&tr, InstanceKind::Spot, ZoneIdx(0)).unwrap();
        assert!(matches!(out, LaunchOutcome::Launched(_)));
        assert_eq!(c.replicas()[0].state, ReplicaState::Provisioning);
        c.launch(&tr, InstanceKind::Spot, ZoneIdx(0)).unwrap();
        assert_eq!(
            c.launch(&tr, InstanceKind::Spot, ZoneIdx(0)).unwrap(),
            LaunchOutcome::Failed
        );
    }

    #[test]
    fn zero_capacity_fails_launch() {
        let tr = trace(vec![vec![0; 4]]);
        let mut c = ClusterState::new(&tr, &cfg(2));
        assert_eq!(
            c.launch(&tr, InstanceKind::Spot, ZoneIdx(0)).unwrap(),
            LaunchOutcome::Failed
        );
        assert_eq!(c.events()[0].kind, EventKind::LaunchFailed);
        assert_eq!(c.events()[0].zone, ZoneIdx(0));
    }

    #[test]
    fn unknown_zone_is_error() {
        let tr = trace(vec![vec![1; 4]]);
        let mut c = ClusterState::new(&tr, &cfg(2));
        assert!(c.launch(&tr, InstanceKind::Spot, ZoneIdx(3)).is_err());
    }

    #[test]
    fn ready_after_cold_start() {
        let tr = trace(vec![vec![1; 40]]);
        let mut c = ClusterState::new(&tr, &cfg(18));
        c.step(&tr).unwrap();
        c.step(&tr).unwrap();
        c.launch(&tr, InstanceKind::Spot, ZoneIdx(0)).unwrap();
        for _ in 0..17 {
            c.step(&tr).unwrap();
            assert!(!c.replicas()[0].is_ready());
        }
        c.step(&tr).unwrap();
        assert_eq!(c.replicas()[0].ready_at, Some(2 + 18));
    }

    #[test]
    fn zero_delay_is_ready_immediately() {
        let tr = trace(vec![vec![1; 4]]);
        let mut c = ClusterState::new(&tr, &cfg(0));
        c.launch(&tr, InstanceKind::Spot, ZoneIdx(0)).unwrap();
        assert_eq!(c.counts().spot_ready, 1);
    }

    #[test]
    fn capacity_drop_preempts_excess() {
        let tr = trace(vec![vec![3, 1, 1]]);
        let mut c = ClusterState::new(&tr, &cfg(0));
        for _ in 0..3 {
            c.launch(&tr, InstanceKind::Spot, ZoneIdx(0)).unwrap();
        }
        let ev = c.step(&tr).unwrap();
        let preempted = ev.iter().filter(|e| e.kind == EventKind::Preempted).count();
        assert_eq!(preempted, 2);
        assert_eq!(c.counts().spot, 1);
    }

    #[test]
    fn constant_capacity_is_quiet() {
        let tr = trace(vec![vec![2; 10]]);
        let mut c = ClusterState::new(&tr, &cfg(3));
        for _ in 0..9 {
            assert!(c.step(&tr).unwrap().is_empty());
        }
    }

    #[test]
    fn counts_split_ready_and_provisioning() {
        let tr = trace(vec![vec![5; 10]]);
        let mut c = ClusterState::new(&tr, &cfg(2));
        assert_eq!(c.counts(), Counts { spot_per_zone: vec![0], ..Counts::default() });
        c.launch(&tr, InstanceKind::Spot, ZoneIdx(0)).unwrap();
        c.step(&tr).unwrap();
        c.step(&tr).unwrap();
        c.launch(&tr, InstanceKind::Spot, ZoneIdx(0)).unwrap();
        c.launch(&tr, InstanceKind::Spot, ZoneIdx(0)).unwrap();
        let k = c.counts();
        assert_eq!((k.spot, k.spot_ready), (3, 1));
    }

    #[test]
    fn billing_includes_cold_start() {
        let tr = trace(vec![vec![1; 20]]);
        let mut c = ClusterState::new(&tr, &cfg(3));
        c.launch(&tr, InstanceKind::Spot, ZoneIdx(0)).unwrap();
        for _ in 0..10 {
            c.step(&tr).unwrap();
        }
        let id = c.replicas()[0].id;
        c.terminate(id).unwrap();
        assert_eq!(c.bill(tr.zones()).spot_cost, 10.0);
    }

    #[test]
    fn on_demand_billed_at_od_rate() {
        let tr = trace(vec![vec![0; 20]]);
        let mut c = ClusterState::new(&tr, &cfg(3));
        c.launch(&tr, InstanceKind::OnDemand, ZoneIdx(0)).unwrap();
        for _ in 0..10 {
            c.step(&tr).unwrap();
        }
        let ledger = c.bill(tr.zones());
        assert_eq!(ledger.od_cost, 30.0);
        assert_eq!(ledger.total(), 30.0);
    }

    #[test]
    fn od_cap_limits_launches() {
        let tr = trace(vec![vec![0; 5]]);
        let mut c = ClusterState::new(
            &tr,
            &ClusterConfig {
                od_capacity: Some(1),
                ..cfg(1)
            },
        );
        assert!(matches!(
            c.launch(&tr, InstanceKind::OnDemand, ZoneIdx(0)).unwrap(),
            LaunchOutcome::Launched(_)
        ));
        assert_eq!(
            c.launch(&tr, InstanceKind::OnDemand, ZoneIdx(0)).unwrap(),
            LaunchOutcome::Failed
        );
    }

    #[test]
    fn stepping_past_horizon_is_error() {
        let tr = trace(vec![vec![1; 2]]);
        let mut c = ClusterState::new(&tr, &cfg(1));
        c.step(&tr).unwrap();
        c.step(&tr).unwrap();
        assert!(c.step(&tr).is_err());
    }

    #[test]
    fn event_log_round_trip() {
        let tr = trace(vec![vec![1, 0, 1], vec![2, 2, 2]]);
        let mut c = ClusterState::new(&tr, &cfg(1));
        c.launch(&tr, InstanceKind::Spot, ZoneIdx(0)).unwrap();
        c.launch(&tr, InstanceKind::OnDemand, ZoneIdx(1)).unwrap();
        c.step(&tr).unwrap();
        c.launch(&tr, InstanceKind::Spot, ZoneIdx(0)).unwrap();
        let mut buf = Vec::new();
        write_event_log(&mut buf, c.events(), tr.zones()).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with(r#"{"t":0,"event":"launched","replica":0,"zone":"z1","kind":"spot"}"#));
        assert_eq!(read_event_log(&text, &tr).unwrap(), c.events());
    }
}
