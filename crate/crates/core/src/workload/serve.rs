//! Event-driven request service over the replicas' ready intervals.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::cluster::{Event, EventKind, ReplicaId};
use crate::workload::{Balancer, LbMode, Request, DEFAULT_MAX_CONCURRENCY, DEFAULT_TIMEOUT_S};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowEnd {
    /// Lost without warning; its requests are retried elsewhere.
    Preempted,
    /// Scaled down: stops taking requests, finishes the ones it is serving.
    Terminated,
}

/// Interval during which a replica can serve.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicaWindow {
    pub replica: ReplicaId,
    pub ready_s: f64,
    pub end: Option<(f64, WindowEnd)>,
}

/// Ready intervals from a cluster event log, sorted by replica id.
pub fn replica_windows(events: &[Event], tick_seconds: f64) -> Vec<ReplicaWindow> {
    let mut out: Vec<ReplicaWindow> = Vec::new();
    let mut slot = std::collections::HashMap::new();
    for e in events {
        let Some(id) = e.replica else { continue };
        let at = e.t as f64 * tick_seconds;
        match e.kind {
            EventKind::BecameReady => {
                slot.insert(id, out.len());
                out.push(ReplicaWindow {
                    replica: id,
                    ready_s: at,
                    end: None,
                });
            }
            EventKind::Preempted | EventKind::Terminated => {
                if let Some(&i) = slot.get(&id) {
                    let how = if e.kind == EventKind::Preempted {
                        WindowEnd::Preempted
                    } else {
                        WindowEnd::Terminated
                    };
                    out[i].end = Some((at, how));
                }
            }
            _ => {}
        }
    }
    out.sort_by_key(|w| w.replica);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServeConfig {
    #[serde(default)]
    pub lb: LbMode,
    #[serde(default = "default_concurrency")]
    pub max_concurrency: u32,
    #[serde(default = "default_timeout")]
    pub timeout_s: f64,
    /// Added to every service attempt.
    #[serde(default)]
    pub network_latency_s: f64,
    /// Give up after this many attempts; unlimited by default (the deadline
    /// still applies).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_attempts: Option<u32>,
}

fn default_concurrency() -> u32 {
    DEFAULT_MAX_CONCURRENCY
}

fn default_timeout() -> f64 {
    DEFAULT_TIMEOUT_S
}

impl Default for ServeConfig {
    fn default() -> Self {
        ServeConfig {
            lb: LbMode::default(),
            max_concurrency: DEFAULT_MAX_CONCURRENCY,
            timeout_s: DEFAULT_TIMEOUT_S,
            network_latency_s: 0.0,
            max_attempts: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestStatus {
    Completed,
    TimedOut,
    FailedFinal,
}

impl RequestStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RequestStatus::Completed => "completed",
            RequestStatus::TimedOut => "timed_out",
            RequestStatus::FailedFinal => "failed_final",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RequestOutcome {
    pub id: u64,
    pub status: RequestStatus,
    /// From first arrival to completion, including time lost to failed
    /// attempts. Timed-out requests report the timeout.
    pub latency_s: f64,
    pub attempts: u32,
    pub servers_visited: Vec<ReplicaId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Completion { req: usize, gen: u32 },
    Down { server: usize, how: WindowEnd },
    Ready { server: usize },
    Arrival { req: usize },
    Deadline { req: usize },
}

impl Kind {
    fn priority(self) -> u8 {
        match self {
            Kind::Completion { .. } => 0,
            Kind::Down { .. } => 1,
            Kind::Ready { .. } => 2,
            Kind::Arrival { .. } => 3,
            Kind::Deadline { .. } => 4,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Timed {
    at: f64,
    seq: u64,
    kind: Kind,
}

impl PartialEq for Timed {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Timed {}

impl PartialOrd for Timed {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Timed {
    fn cmp(&self, other: &Self) -> Ordering {
        self.at
            .total_cmp(&other.at)
            .then(self.kind.priority().cmp(&other.kind.priority()))
            .then(self.seq.cmp(&other.seq))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Place {
    Nowhere,
    Pending,
    Queued(usize),
    Serving(usize),
}

struct Server {
    id: ReplicaId,
    accepting: bool,
    gone: bool,
    queue: VecDeque<usize>,
    serving: Vec<usize>,
}

struct ReqState {
    gen: u32,
    attempts: u32,
    place: Place,
    outcome: Option<(RequestStatus, f64)>,
    visited: Vec<ReplicaId>,
}

struct Sim<'a> {
    cfg: &'a ServeConfig,
    requests: &'a [Request],
    servers: Vec<Server>,
    state: Vec<ReqState>,
    pending: VecDeque<usize>,
    balancer: Balancer,
    heap: BinaryHeap<Reverse<Timed>>,
    seq: u64,
}

impl Sim<'_> {
    fn schedule(&mut self, at: f64, kind: Kind) {
        self.seq += 1;
        self.heap.push(Reverse(Timed {
            at,
            seq: self.seq,
            kind,
        }));
    }

    fn dispatch(&mut self, req: usize, now: f64) {
        let ready: Vec<(ReplicaId, usize)> = self
            .servers
            .iter()
            .filter(|s| s.accepting)
            .map(|s| (s.id, s.serving.len() + s.queue.len()))
            .collect();
        match self.balancer.route(&ready) {
            None => {
                self.state[req].place = Place::Pending;
                self.pending.push_back(req);
            }
            Some(id) => {
                let si = self
                    .servers
                    .binary_search_by_key(&id, |s| s.id)
                    .expect("routed to a known server");
                self.state[req].visited.push(id);
                if self.servers[si].serving.len() < self.cfg.max_concurrency as usize {
                    self.start(si, req, now);
                } else {
                    self.state[req].place = Place::Queued(si);
                    self.servers[si].queue.push_back(req);
                }
            }
        }
    }

    fn start(&mut self, si: usize, req: usize, now: f64) {
        self.servers[si].serving.push(req);
        self.state[req].place = Place::Serving(si);
        let gen = self.state[req].gen;
        let done = now + self.requests[req].service_s + self.cfg.network_latency_s;
        self.schedule(done, Kind::Completion { req, gen });
    }

    fn fill(&mut self, si: usize, now: f64) {
        while self.servers[si].serving.len() < self.cfg.max_concurrency as usize {
            let Some(next) = self.servers[si].queue.pop_front() else {
                break;
            };
            self.start(si, next, now);
        }
    }

    fn detach(&mut self, req: usize, now: f64) {
        match self.state[req].place {
            Place::Pending => self.pending.retain(|&r| r != req),
            Place::Queued(si) => self.servers[si].queue.retain(|&r| r != req),
            Place::Serving(si) => {
                self.servers[si].serving.retain(|&r| r != req);
                self.fill(si, now);
            }
            Place::Nowhere => {}
        }
        self.state[req].place = Place::Nowhere;
    }

    fn finish(&mut self, req: usize, status: RequestStatus, latency: f64, now: f64) {
        self.detach(req, now);
        self.state[req].outcome = Some((status, latency));
    }

    fn retry(&mut self, req: usize, now: f64) {
        let st = &mut self.state[req];
        st.gen += 1;
        st.attempts += 1;
        st.place = Place::Nowhere;
        if self.cfg.max_attempts.is_some_and(|m| st.attempts > m) {
            st.outcome = Some((RequestStatus::FailedFinal, now - self.requests[req].arrival_s));
            return;
        }
        self.dispatch(req, now);
    }

    fn handle(&mut self, ev: Timed) {
        let now = ev.at;
        match ev.kind {
            Kind::Arrival { req } => self.dispatch(req, now),
            Kind::Deadline { req } => {
                if self.state[req].outcome.is_none() {
                    self.finish(req, RequestStatus::TimedOut, self.cfg.timeout_s, now);
                }
            }
            Kind::Completion { req, gen } => {
                if self.state[req].outcome.is_none() && self.state[req].gen == gen {
                    let latency = now - self.requests[req].arrival_s;
                    self.finish(req, RequestStatus::Completed, latency, now);
                }
            }
            Kind::Ready { server } => {
                if self.servers[server].gone {
                    return;
                }
                self.servers[server].accepting = true;
                for req in std::mem::take(&mut self.pending) {
                    self.dispatch(req, now);
                }
            }
            Kind::Down { server, how } => {
                let s = &mut self.servers[server];
                s.gone = true;
                s.accepting = false;
                let queued: Vec<usize> = s.queue.drain(..).collect();
                match how {
                    WindowEnd::Preempted => {
                        let serving = std::mem::take(&mut s.serving);
                        for req in serving.into_iter().chain(queued) {
                            self.retry(req, now);
                        }
                    }
                    WindowEnd::Terminated => {
                        for req in queued {
                            self.state[req].place = Place::Nowhere;
                            self.dispatch(req, now);
                        }
                    }
                }
            }
        }
    }
}

/// Serves `requests` on the replicas described by `windows`.
///
/// Each replica runs up to `max_concurrency` requests and queues the rest
/// FIFO. With no replica ready, requests wait at the balancer. A preempted
/// replica's running and queued requests go back to the balancer as new
/// attempts; a terminated replica hands back its queue and finishes what it
/// is running. Every request ends completed, timed out (at its deadline,
/// `arrival + timeout`) or failed after `max_attempts`.
pub fn simulate_requests(
    windows: &[ReplicaWindow],
    requests: &[Request],
    cfg: &ServeConfig,
) -> Vec<RequestOutcome> {
    let mut sorted: Vec<&ReplicaWindow> = windows.iter().collect();
    sorted.sort_by_key(|w| w.replica);
    let mut sim = Sim {
        cfg,
        requests,
        servers: sorted
            .iter()
            .map(|w| Server {
                id: w.replica,
                accepting: false,
                gone: false,
                queue: VecDeque::new(),
                serving: Vec::new(),
            })
            .collect(),
        state: requests
            .iter()
            .map(|_| ReqState {
                gen: 0,
                attempts: 1,
                place: Place::Nowhere,
                outcome: None,
                visited: Vec::new(),
            })
            .collect(),
        pending: VecDeque::new(),
        balancer: Balancer::new(cfg.lb),
        heap: BinaryHeap::new(),
        seq: 0,
    };
    for (i, w) in sorted.iter().enumerate() {
        sim.schedule(w.ready_s, Kind::Ready { server: i });
        if let Some((at, how)) = w.end {
            sim.schedule(at, Kind::Down { server: i, how });
        }
    }
    for (i, r) in requests.iter().enumerate() {
        sim.schedule(r.arrival_s, Kind::Arrival { req: i });
        sim.schedule(r.arrival_s + cfg.timeout_s, Kind::Deadline { req: i });
    }
    while let Some(Reverse(ev)) = sim.heap.pop() {
        sim.handle(ev);
    }
    requests
        .iter()
        .zip(sim.state)
        .map(|(r, st)| {
            let (status, latency_s) = st.outcome.expect("every request has a deadline");
            RequestOutcome {
                id: r.id,
                status,
                latency_s,
                attempts: st.attempts,
                servers_visited: st.visited,
            }
        })
        .collect()
}
