//! Experiment configuration (TOML).
//!
//! ```toml
//! seed = 7
//!
//! [trace]
//! path = "traces/aws3.json"      # or an inline [trace.generator] table
//!
//! [cluster]
//! cold_start_s = 180
//!
//! [policy]
//! name = "spothedge"
//! n_extra = 1
//! n_tar = 4                      # fixed target; or set q_tar to autoscale
//!
//! [workload]
//! arrivals = { kind = "poisson", rate = 0.15 }
//! ```
//!
//! Durations are given in seconds and rounded up to whole ticks.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{AutoscaleConfig, PolicyKind, DEFAULT_N_EXTRA};
use crate::trace::{CapacityTrace, GeneratorConfig};
use crate::workload::{Arrivals, LbMode, ServeConfig, ServiceTime, WorkloadSpec, DEFAULT_MAX_CONCURRENCY, DEFAULT_TIMEOUT_S};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub seed: u64,
    pub trace: TraceSource,
    #[serde(default)]
    pub cluster: ClusterSection,
    #[serde(default)]
    pub policy: PolicySection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workload: Option<WorkloadSection>,
    #[serde(default)]
    pub optimize: OptimizeSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceSource {
    /// Trace file, relative to the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    /// Synthetic trace, regenerated from the run seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorConfig>,
    /// Name used in report rows; defaults to the file stem or "generated".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterSection {
    #[serde(default = "default_cold_start_s")]
    pub cold_start_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub od_capacity: Option<u32>,
}

fn default_cold_start_s() -> f64 {
    180.0
}

impl Default for ClusterSection {
    fn default() -> Self {
        ClusterSection {
            cold_start_s: default_cold_start_s(),
            od_capacity: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySection {
    #[serde(default = "default_policy")]
    pub name: PolicyKind,
    #[serde(default = "default_n_extra")]
    pub n_extra: u32,
    /// Fixed target. Without it the autoscaler sets the target from `q_tar`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_tar: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_tar: Option<f64>,
    #[serde(default = "default_window_s")]
    pub autoscale_window_s: f64,
    #[serde(default = "default_persistence_s")]
    pub upscale_persistence_s: f64,
    #[serde(default = "default_persistence_s")]
    pub downscale_persistence_s: f64,
    #[serde(default = "default_min_replicas")]
    pub min_replicas: u32,
    /// Spot pool size for `static_mixture`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spot_pool: Option<u32>,
    /// On-demand pool size for `static_mixture`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub od_pool: Option<u32>,
}

fn default_policy() -> PolicyKind {
    PolicyKind::SpotHedge
}
fn default_n_extra() -> u32 {
    DEFAULT_N_EXTRA
}
fn default_window_s() -> f64 {
    60.0
}
fn default_persistence_s() -> f64 {
    600.0
}
fn default_min_replicas() -> u32 {
    1
}

impl Default for PolicySection {
    fn default() -> Self {
        PolicySection {
            name: default_policy(),
            n_extra: default_n_extra(),
            n_tar: None,
            q_tar: None,
            autoscale_window_s: default_window_s(),
            upscale_persistence_s: default_persistence_s(),
            downscale_persistence_s: default_persistence_s(),
            min_replicas: default_min_replicas(),
            spot_pool: None,
            od_pool: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadSection {
    pub arrivals: Arrivals,
    #[serde(default)]
    pub service: ServiceTime,
    #[serde(default = "default_timeout")]
    pub timeout_s: f64,
    #[serde(default)]
    pub lb: LbMode,
    #[serde(default = "default_concurrency")]
    pub max_concurrency: u32,
    #[serde(default)]
    pub network_latency_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_attempts: Option<u32>,
    /// Count timed-out requests at the timeout in latency percentiles.
    #[serde(default = "default_true")]
    pub latency_includes_timeouts: bool,
}

fn default_timeout() -> f64 {
    DEFAULT_TIMEOUT_S
}
fn default_concurrency() -> u32 {
    DEFAULT_MAX_CONCURRENCY
}
fn default_true() -> bool {
    true
}

impl WorkloadSection {
    pub fn spec(&self) -> WorkloadSpec {
        WorkloadSpec {
            arrivals: self.arrivals.clone(),
            service: self.service.clone(),
            timeout_s: self.timeout_s,
        }
    }

    pub fn serve(&self) -> ServeConfig {
        ServeConfig {
            lb: self.lb,
            max_concurrency: self.max_concurrency,
            timeout_s: self.timeout_s,
            network_latency_s: self.network_latency_s,
            max_attempts: self.max_attempts,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizeSection {
    #[serde(default = "default_avail_tar")]
    pub avail_tar: f64,
    #[serde(default = "default_k")]
    pub k: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_tar: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_max: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_expansions: Option<u64>,
}

fn default_avail_tar() -> f64 {
    0.99
}
fn default_k() -> f64 {
    3.0
}

impl Default for OptimizeSection {
    fn default() -> Self {
        OptimizeSection {
            avail_tar: default_avail_tar(),
            k: default_k(),
            n_tar: None,
            n_max: None,
            max_expansions: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_out")]
    pub dir: String,
    #[serde(default = "default_true")]
    pub event_log: bool,
    #[serde(default = "default_true")]
    pub charts: bool,
}

fn default_out() -> String {
    "out".into()
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: default_out(),
            event_log: true,
            charts: true,
        }
    }
}

/// Seconds to whole ticks, rounding up.
pub fn seconds_to_ticks(seconds: f64, tick_seconds: u32) -> usize {
    (seconds / f64::from(tick_seconds) - 1e-9).ceil().max(0.0) as usize
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| {
            let msg = e.message().to_string();
            let key = e
                .span()
                .and_then(|s| text.get(s))
                .map(|s| s.lines().next().unwrap_or("").trim().to_string())
                .filter(|s| !s.is_empty())
                .unwrap_or_else(|| "<document>".into());
            Error::config(key, msg)
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Config::from_toml(&text)
    }

    /// TOML with every default spelled out; parses back to `self`.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.trace.path, &self.trace.generator) {
            (Some(_), Some(_)) => {
                return Err(Error::config("trace", "set either `path` or `generator`, not both"))
            }
            (None, None) => return Err(Error::config("trace", "set `path` or `generator`")),
            (None, Some(g)) => g.validate().map_err(|e| Error::config("trace.generator", e.to_string()))?,
            _ => {}
        }
        if !(self.cluster.cold_start_s >= 0.0 && self.cluster.cold_start_s.is_finite()) {
            return Err(Error::config("cluster.cold_start_s", "must be a non-negative number of seconds"));
        }
        let p = &self.policy;
        if p.n_tar.is_none() && p.q_tar.is_none() && p.name != PolicyKind::StaticMixture {
            return Err(Error::config("policy.n_tar", "set a fixed `n_tar` or a `q_tar` for the autoscaler"));
        }
        if let Some(q) = p.q_tar {
            if !(q > 0.0 && q.is_finite()) {
                return Err(Error::config("policy.q_tar", "must be positive"));
            }
            if p.n_tar.is_none() && self.workload.is_none() {
                return Err(Error::config("policy.q_tar", "autoscaling needs a [workload] section"));
            }
        }
        for (key, v) in [
            ("policy.autoscale_window_s", p.autoscale_window_s),
            ("policy.upscale_persistence_s", p.upscale_persistence_s),
            ("policy.downscale_persistence_s", p.downscale_persistence_s),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(key, "must be a positive number of seconds"));
            }
        }
        if p.name == PolicyKind::StaticMixture && p.spot_pool.is_none() && p.od_pool.is_none() && p.n_tar.is_none() {
            return Err(Error::config("policy.spot_pool", "static_mixture needs pool sizes or a fixed `n_tar`"));
        }
        if let Some(w) = &self.workload {
            w.spec().validate()?;
            if w.max_concurrency == 0 {
                return Err(Error::config("workload.max_concurrency", "must be at least 1"));
            }
            if !(w.network_latency_s >= 0.0 && w.network_latency_s.is_finite()) {
                return Err(Error::config("workload.network_latency_s", "must be non-negative"));
            }
        }
        let o = &self.optimize;
        if !(0.0..=1.0).contains(&o.avail_tar) {
            return Err(Error::config("optimize.avail_tar", "must lie in [0, 1]"));
        }
        if !(o.k > 1.0 && o.k.is_finite()) {
            return Err(Error::config("optimize.k", "must exceed 1"));
        }
        Ok(())
    }

    /// Loads or generates the capacity trace for `seed`. Relative paths
    /// resolve against `base`.
    pub fn trace(&self, seed: u64, base: Option<&Path>) -> Result<CapacityTrace> {
        match (&self.trace.path, &self.trace.generator) {
            (Some(p), _) => CapacityTrace::load(resolve(base, p)),
            (None, Some(g)) => g.generate(seed),
            (None, None) => Err(Error::config("trace", "set `path` or `generator`")),
        }
    }

    pub fn trace_label(&self) -> String {
        if let Some(l) = &self.trace.label {
            return l.clone();
        }
        match &self.trace.path {
            Some(p) => Path::new(p)
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| p.clone()),
            None => "generated".into(),
        }
    }

    /// `(spot_pool, od_pool)` for `static_mixture`. Unset pools follow the
    /// fixed target: `n_tar` spot plus `ceil(n_tar / 10)` on demand.
    pub fn pools(&self) -> (u32, u32) {
        let p = &self.policy;
        let n = p.n_tar.unwrap_or(0);
        (p.spot_pool.unwrap_or(n), p.od_pool.unwrap_or(n.div_ceil(10)))
    }

    pub fn autoscale(&self, tick_seconds: u32) -> Option<AutoscaleConfig> {
        let p = &self.policy;
        if p.n_tar.is_some() {
            return None;
        }
        Some(AutoscaleConfig {
            q_tar: p.q_tar?,
            window: seconds_to_ticks(p.autoscale_window_s, tick_seconds).max(1),
            upscale_persistence: seconds_to_ticks(p.upscale_persistence_s, tick_seconds).max(1),
            downscale_persistence: seconds_to_ticks(p.downscale_persistence_s, tick_seconds).max(1),
            min_replicas: p.min_replicas,
        })
    }
}

pub fn resolve(base: Option<&Path>, p: &str) -> PathBuf {
    match base {
        Some(b) if Path::new(p).is_relative() => b.join(p),
        _ => PathBuf::from(p),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
seed = 3

[trace.generator]
horizon = 100

[[trace.generator.zones]]
id = "aws:us-east-1a"
region = "us-east-1"
cloud = "aws"
spot_unit_cost = 1.0
od_unit_cost = 3.0
lambda = 0.01
mean_capacity = 4
unavailability_episodes = [[10, 20]]

[policy]
name = "spothedge"
n_tar = 2

[workload]
arrivals = { kind = "poisson", rate = 0.15 }
"#;

    #[test]
    fn parses_and_round_trips() {
        let cfg = Config::from_toml(SAMPLE).unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.policy.n_extra, 1);
        assert_eq!(cfg.cluster.cold_start_s, 180.0);
        let g = cfg.trace.generator.as_ref().unwrap();
        assert_eq!(g.zones[0].unavailability_episodes, vec![(10, 20)]);
        let echoed = cfg.to_toml();
        assert_eq!(Config::from_toml(&echoed).unwrap(), cfg);
    }

    #[test]
    fn errors_name_the_key() {
        let bad = SAMPLE.replace("n_tar = 2", "n_tar = 2\nq_tar = -1.0");
        let err = Config::from_toml(&bad).unwrap_err();
        assert!(err.to_string().contains("policy.q_tar"), "{err}");

        let bad = SAMPLE.replace("name = \"spothedge\"", "name = \"nope\"");
        assert!(matches!(Config::from_toml(&bad), Err(Error::Config { .. })));

        let bad = SAMPLE.replace("seed = 3", "seed = 3\nbogus = 1");
        let err = Config::from_toml(&bad).unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
    }

    #[test]
    fn durations_to_ticks() {
        assert_eq!(seconds_to_ticks(180.0, 10), 18);
        assert_eq!(seconds_to_ticks(185.0, 10), 19);
        assert_eq!(seconds_to_ticks(0.0, 10), 0);
        let cfg = Config::from_toml(&SAMPLE.replace("n_tar = 2", "q_tar = 0.05")).unwrap();
        let a = cfg.autoscale(10).unwrap();
        assert_eq!((a.window, a.upscale_persistence), (6, 60));
    }
}
