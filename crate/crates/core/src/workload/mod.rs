//! Request arrivals, routing and request-level service.

mod lb;
mod serve;

pub use lb::{Balancer, LbMode};
pub use serve::{replica_windows, simulate_requests, ReplicaWindow, RequestOutcome, RequestStatus, ServeConfig, WindowEnd};

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{streams, substream};

pub const DEFAULT_TIMEOUT_S: f64 = 100.0;
pub const DEFAULT_MAX_CONCURRENCY: u32 = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: u64,
    pub arrival_s: f64,
    pub service_s: f64,
}

/// How requests arrive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Arrivals {
    Poisson {
        /// Requests per second.
        rate: f64,
    },
    /// Poisson arrivals whose rate jumps to `base_rate × spike_multiplier`
    /// for `spike_s` seconds out of every `period_s`.
    Bursty {
        base_rate: f64,
        #[serde(default = "default_spike_multiplier")]
        spike_multiplier: f64,
        period_s: f64,
        spike_s: f64,
    },
    /// JSON lines `{"arrival_s": .., "service_s": ..}` (`service_s` optional).
    Trace { path: String },
}

fn default_spike_multiplier() -> f64 {
    5.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ServiceTime {
    Deterministic { seconds: f64 },
    Exponential { mean_s: f64 },
    Lognormal { median_s: f64, sigma: f64 },
}

impl Default for ServiceTime {
    fn default() -> Self {
        ServiceTime::Lognormal {
            median_s: 10.0,
            sigma: 0.8,
        }
    }
}

/// One parsed workload trace record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceRecord {
    pub arrival_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub service_s: Option<f64>,
}

/// Parses a JSON-lines workload trace. Arrivals must be non-decreasing.
pub fn parse_workload_trace(text: &str) -> Result<Vec<TraceRecord>> {
    let mut out: Vec<TraceRecord> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: TraceRecord = serde_json::from_str(line)
            .map_err(|e| Error::Parse(format!("workload trace line {}: {e}", i + 1)))?;
        if !(rec.arrival_s >= 0.0 && rec.arrival_s.is_finite()) {
            return Err(Error::Parse(format!(
                "workload trace line {}: arrival_s must be a finite non-negative number",
                i + 1
            )));
        }
        if rec.service_s.is_some_and(|s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::Parse(format!(
                "workload trace line {}: service_s must be positive",
                i + 1
            )));
        }
        if out.last().is_some_and(|p| p.arrival_s > rec.arrival_s) {
            return Err(Error::Parse(format!(
                "workload trace line {}: arrivals must be non-decreasing",
                i + 1
            )));
        }
        out.push(rec);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadSpec {
    pub arrivals: Arrivals,
    #[serde(default)]
    pub service: ServiceTime,
    #[serde(default = "default_timeout")]
    pub timeout_s: f64,
}

fn default_timeout() -> f64 {
    DEFAULT_TIMEOUT_S
}

impl WorkloadSpec {
    pub fn poisson(rate: f64) -> Self {
        WorkloadSpec {
            arrivals: Arrivals::Poisson { rate },
            service: ServiceTime::default(),
            timeout_s: DEFAULT_TIMEOUT_S,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64, key: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(key, format!("must be positive, got {v}")))
            }
        };
        match &self.arrivals {
            Arrivals::Poisson { rate } => pos(*rate, "workload.arrivals.rate")?,
            Arrivals::Bursty {
                base_rate,
                spike_multiplier,
                period_s,
                spike_s,
            } => {
                pos(*base_rate, "workload.arrivals.base_rate")?;
                pos(*spike_multiplier, "workload.arrivals.spike_multiplier")?;
                pos(*period_s, "workload.arrivals.period_s")?;
                pos(*spike_s, "workload.arrivals.spike_s")?;
                if spike_s > period_s {
                    return Err(Error::config(
                        "workload.arrivals.spike_s",
                        "must not exceed period_s",
                    ));
                }
            }
            Arrivals::Trace { .. } => {}
        }
        match self.service {
            ServiceTime::Deterministic { seconds } => pos(seconds, "workload.service.seconds")?,
            ServiceTime::Exponential { mean_s } => pos(mean_s, "workload.service.mean_s")?,
            ServiceTime::Lognormal { median_s, sigma } => {
                pos(median_s, "workload.service.median_s")?;
                pos(sigma, "workload.service.sigma")?;
            }
        }
        pos(self.timeout_s, "workload.timeout_s")
    }
}

struct ServiceSampler {
    kind: ServiceTime,
    cap: f64,
    rng: ChaCha8Rng,
}

impl ServiceSampler {
    fn sample(&mut self) -> f64 {
        let raw = match self.kind {
            ServiceTime::Deterministic { seconds } => seconds,
            ServiceTime::Exponential { mean_s } => {
                Exp::new(1.0 / mean_s).expect("validated rate").sample(&mut self.rng)
            }
            ServiceTime::Lognormal { median_s, sigma } => LogNormal::new(median_s.ln(), sigma)
                .expect("validated sigma")
                .sample(&mut self.rng),
        };
        raw.clamp(f64::MIN_POSITIVE, self.cap)
    }
}

fn poisson_times(rng: &mut ChaCha8Rng, rate: f64, horizon_s: f64) -> Vec<f64> {
    let exp = Exp::new(rate).expect("validated rate");
    let mut t = 0.0;
    let mut out = Vec::new();
    loop {
        t += exp.sample(rng);
        if t >= horizon_s {
            return out;
        }
        out.push(t);
    }
}

/// Piecewise-constant rate of a bursty workload at time `t`.
pub fn bursty_rate(base_rate: f64, spike_multiplier: f64, period_s: f64, spike_s: f64, t: f64) -> f64 {
    if t.rem_euclid(period_s) < spike_s {
        base_rate * spike_multiplier
    } else {
        base_rate
    }
}

/// Generates requests in `[0, horizon_s)`. Arrivals and service demands use
/// separate streams of `seed`, and service demands are drawn in arrival
/// order, so two specs with the same arrivals share service times.
/// `trace_dir` resolves relative trace paths.
pub fn gen_workload(
    spec: &WorkloadSpec,
    horizon_s: f64,
    seed: u64,
    trace_dir: Option<&Path>,
) -> Result<Vec<Request>> {
    spec.validate()?;
    let mut arrivals_rng = substream(seed, streams::ARRIVALS);
    let mut service = ServiceSampler {
        kind: spec.service.clone(),
        cap: spec.timeout_s,
        rng: substream(seed, streams::SERVICE),
    };
    let timed: Vec<(f64, Option<f64>)> = match &spec.arrivals {
        Arrivals::Poisson { rate } => poisson_times(&mut arrivals_rng, *rate, horizon_s)
            .into_iter()
            .map(|t| (t, None))
            .collect(),
        Arrivals::Bursty {
            base_rate,
            spike_multiplier,
            period_s,
            spike_s,
        } => {
            let peak = base_rate * spike_multiplier.max(1.0);
            poisson_times(&mut arrivals_rng, peak, horizon_s)
                .into_iter()
                .filter(|&t| {
                    let keep = bursty_rate(*base_rate, *spike_multiplier, *period_s, *spike_s, t) / peak;
                    arrivals_rng.random::<f64>() < keep
                })
                .map(|t| (t, None))
                .collect()
        }
        Arrivals::Trace { path } => {
            let p = match trace_dir {
                Some(dir) => dir.join(path),
                None => Path::new(path).to_path_buf(),
            };
            let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
            parse_workload_trace(&text)?
                .into_iter()
                .map(|r| (r.arrival_s, r.service_s))
                .collect()
        }
    };
    Ok(timed
        .into_iter()
        .enumerate()
        .map(|(i, (arrival_s, svc))| Request {
            id: i as u64,
            arrival_s,
            service_s: svc.unwrap_or_else(|| service.sample()),
        })
        .collect())
}

/// Arrivals per second in each tick `[t·tick_s, (t+1)·tick_s)`.
pub fn rate_per_tick(requests: &[Request], tick_seconds: f64, horizon: usize) -> Vec<f64> {
    let mut counts = vec![0u32; horizon];
    for r in requests {
        let t = (r.arrival_s / tick_seconds) as usize;
        if t < horizon {
            counts[t] += 1;
        }
    }
    counts.into_iter().map(|c| f64::from(c) / tick_seconds).collect()
}
