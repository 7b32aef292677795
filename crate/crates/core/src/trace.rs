//! Spot-capacity traces: the per-zone launchable capacity `C(z, t)` that the
//! simulator replays, plus a Poisson generator for synthetic traces.
//!
//! Traces are stored as step functions: a file lists `(t, zone, capacity)`
//! change points and every tick in between inherits the last value seen for
//! that zone. A zone has capacity 0 until its first event.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{indexed_substream, streams};

/// Default simulation tick, in seconds.
pub const DEFAULT_TICK_SECONDS: u32 = 10;
/// Default number of ticks for capacity to recover one unit after a dip.
pub const DEFAULT_REFILL_TICKS: u32 = 30;

/// Index of a zone inside a [`CapacityTrace`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ZoneIdx(pub usize);

/// A spot-capable zone with its static per-tick replica costs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Zone {
    pub id: String,
    pub region: String,
    pub cloud: String,
    pub spot_unit_cost: f64,
    pub od_unit_cost: f64,
}

impl Zone {
    /// Convenience constructor used by tests and fixtures.
    pub fn new(id: &str, region: &str, spot_unit_cost: f64, od_unit_cost: f64) -> Self {
        let cloud = id.split(':').next().unwrap_or("sim").to_string();
        Zone {
            id: id.to_string(),
            region: region.to_string(),
            cloud,
            spot_unit_cost,
            od_unit_cost,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::Validation("zone id must not be empty".into()));
        }
        let ok = self.spot_unit_cost.is_finite()
            && self.od_unit_cost.is_finite()
            && self.spot_unit_cost > 0.0
            && self.spot_unit_cost < self.od_unit_cost;
        if !ok {
            return Err(Error::Validation(format!(
                "zone {}: costs must satisfy 0 < spot_unit_cost ({}) < od_unit_cost ({})",
                self.id, self.spot_unit_cost, self.od_unit_cost
            )));
        }
        Ok(())
    }
}

/// Per-zone spot capacity over a fixed horizon of ticks.
#[derive(Debug, Clone, PartialEq)]
pub struct CapacityTrace {
    zones: Vec<Zone>,
    horizon: usize,
    tick_seconds: u32,
    /// `capacity[zone][tick]`
    capacity: Vec<Vec<u32>>,
}

impl CapacityTrace {
    /// Builds a trace from dense per-zone series; every series must cover the
    /// full horizon.
    pub fn new(zones: Vec<Zone>, tick_seconds: u32, capacity: Vec<Vec<u32>>) -> Result<Self> {
        if zones.is_empty() {
            return Err(Error::Validation("trace must contain at least one zone".into()));
        }
        if tick_seconds == 0 {
            return Err(Error::Validation("tick_seconds must be positive".into()));
        }
        let mut seen = HashSet::new();
        for z in &zones {
            z.validate()?;
            if !seen.insert(z.id.as_str()) {
                return Err(Error::Validation(format!("duplicate zone id {}", z.id)));
            }
        }
        if capacity.len() != zones.len() {
            return Err(Error::Validation(format!(
                "expected {} capacity series, got {}",
                zones.len(),
                capacity.len()
            )));
        }
        let horizon = capacity[0].len();
        if horizon == 0 {
            return Err(Error::Validation("horizon must be at least one tick".into()));
        }
        if let Some((i, s)) = capacity.iter().enumerate().find(|(_, s)| s.len() != horizon) {
            return Err(Error::Validation(format!(
                "zone {} has {} ticks, expected {}",
                zones[i].id,
                s.len(),
                horizon
            )));
        }
        Ok(CapacityTrace {
            zones,
            horizon,
            tick_seconds,
            capacity,
        })
    }

    pub fn zones(&self) -> &[Zone] {
        &self.zones
    }

    pub fn zone(&self, z: ZoneIdx) -> &Zone {
        &self.zones[z.0]
    }

    pub fn num_zones(&self) -> usize {
        self.zones.len()
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn tick_seconds(&self) -> u32 {
        self.tick_seconds
    }

    pub fn zone_index(&self, id: &str) -> Result<ZoneIdx> {
        self.zones
            .iter()
            .position(|z| z.id == id)
            .map(ZoneIdx)
            .ok_or_else(|| Error::Lookup(format!("unknown zone {id}")))
    }

    /// `C(z, t)` by zone id, with bounds checking.
    pub fn capacity_at(&self, zone: &str, t: usize) -> Result<u32> {
        let z = self.zone_index(zone)?;
        if t >= self.horizon {
            return Err(Error::Lookup(format!(
                "tick {t} out of range (horizon {})",
                self.horizon
            )));
        }
        Ok(self.capacity[z.0][t])
    }

    /// `C(z, t)` by index. Panics when out of range.
    pub fn capacity(&self, z: ZoneIdx, t: usize) -> u32 {
        self.capacity[z.0][t]
    }

    pub fn series(&self, z: ZoneIdx) -> &[u32] {
        &self.capacity[z.0]
    }

    /// Zone with the cheapest on-demand price; ties go to the smaller id.
    pub fn cheapest_on_demand_zone(&self) -> ZoneIdx {
        let (i, _) = self
            .zones
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| {
                a.od_unit_cost
                    .total_cmp(&b.od_unit_cost)
                    .then_with(|| a.id.cmp(&b.id))
            })
            .expect("trace has zones");
        ZoneIdx(i)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let root: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::Parse(format!("trace: {e}")))?;
        let header: Header = serde_json::from_value(root.clone())
            .map_err(|e| Error::Parse(format!("trace header: {e}")))?;
        let raw_events = root
            .get("events")
            .and_then(|v| v.as_array())
            .ok_or_else(|| Error::Parse("trace: missing `events` array".into()))?;

        if header.zones.is_empty() {
            return Err(Error::Validation("trace must contain at least one zone".into()));
        }
        if header.horizon == 0 {
            return Err(Error::Validation("horizon must be at least one tick".into()));
        }
        let ids: Vec<&str> = header.zones.iter().map(|z| z.id.as_str()).collect();
        let mut points: Vec<Vec<(usize, u32)>> = vec![Vec::new(); ids.len()];
        let mut last_t = 0usize;
        for (i, value) in raw_events.iter().enumerate() {
            let ev: RawEvent = serde_json::from_value(value.clone())
                .map_err(|e| Error::Parse(format!("trace event #{i} ({value}): {e}")))?;
            if ev.capacity < 0 {
                return Err(Error::Validation(format!(
                    "trace event #{i}: negative capacity {} for zone {}",
                    ev.capacity, ev.zone
                )));
            }
            if ev.t < last_t {
                return Err(Error::Parse(format!(
                    "trace event #{i}: events must be sorted by t ({} after {last_t})",
                    ev.t
                )));
            }
            last_t = ev.t;
            if ev.t >= header.horizon {
                return Err(Error::Validation(format!(
                    "trace event #{i}: t={} beyond horizon {}",
                    ev.t, header.horizon
                )));
            }
            let z = ids.iter().position(|id| *id == ev.zone).ok_or_else(|| {
                Error::Validation(format!("trace event #{i}: unknown zone {}", ev.zone))
            })?;
            let cap = u32::try_from(ev.capacity).map_err(|_| {
                Error::Validation(format!("trace event #{i}: capacity {} too large", ev.capacity))
            })?;
            points[z].push((ev.t, cap));
        }

        let capacity = points
            .iter()
            .map(|pts| {
                let mut series = vec![0u32; header.horizon];
                let mut it = pts.iter().peekable();
                let mut current = 0;
                for (t, slot) in series.iter_mut().enumerate() {
                    while let Some(&&(et, c)) = it.peek() {
                        if et > t {
                            break;
                        }
                        current = c;
                        it.next();
                    }
                    *slot = current;
                }
                series
            })
            .collect();
        CapacityTrace::new(header.zones, header.tick_seconds, capacity)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Serializes as change points only; the output is deterministic.
    pub fn to_json(&self) -> String {
        let mut events = Vec::new();
        for t in 0..self.horizon {
            for (z, zone) in self.zones.iter().enumerate() {
                let c = self.capacity[z][t];
                if t == 0 || c != self.capacity[z][t - 1] {
                    events.push(RawEvent {
                        t,
                        zone: zone.id.clone(),
                        capacity: i64::from(c),
                    });
                }
            }
        }
        let file = TraceFile {
            tick_seconds: self.tick_seconds,
            horizon: self.horizon,
            zones: self.zones.clone(),
            events,
        };
        let mut s = serde_json::to_string_pretty(&file).expect("trace serializes");
        s.push('\n');
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Deserialize)]
struct Header {
    #[serde(default = "default_tick_seconds")]
    tick_seconds: u32,
    horizon: usize,
    zones: Vec<Zone>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEvent {
    t: usize,
    zone: String,
    capacity: i64,
}

#[derive(Serialize)]
struct TraceFile {
    tick_seconds: u32,
    horizon: usize,
    zones: Vec<Zone>,
    events: Vec<RawEvent>,
}

fn default_tick_seconds() -> u32 {
    DEFAULT_TICK_SECONDS
}

fn default_refill_ticks() -> u32 {
    DEFAULT_REFILL_TICKS
}

/// Fraction of ticks where the summed capacity of `zones` reaches `need`.
pub fn availability_fraction(trace: &CapacityTrace, zones: &[ZoneIdx], need: u32) -> Result<f64> {
    if need == 0 {
        return Err(Error::Validation("need must be positive".into()));
    }
    if zones.is_empty() {
        return Err(Error::Validation("zone subset must not be empty".into()));
    }
    if let Some(z) = zones.iter().find(|z| z.0 >= trace.num_zones()) {
        return Err(Error::Lookup(format!("zone index {} out of range", z.0)));
    }
    let hits = (0..trace.horizon())
        .filter(|&t| {
            let total: u64 = zones.iter().map(|&z| u64::from(trace.capacity(z, t))).sum();
            total >= u64::from(need)
        })
        .count();
    Ok(hits as f64 / trace.horizon() as f64)
}

/// Poisson preemption model for one zone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoissonZoneModel {
    #[serde(flatten)]
    pub zone: Zone,
    /// Preemption events per tick.
    pub lambda: f64,
    pub mean_capacity: u32,
    /// Half-open `[start, end)` tick ranges where capacity is forced to 0.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub unavailability_episodes: Vec<(usize, usize)>,
}

/// Full generator input; also the `gen-trace` config schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    #[serde(default = "default_tick_seconds")]
    pub tick_seconds: u32,
    pub horizon: usize,
    #[serde(default = "default_refill_ticks")]
    pub refill_ticks: u32,
    pub zones: Vec<PoissonZoneModel>,
}

impl GeneratorConfig {
    pub fn new(zones: Vec<PoissonZoneModel>, horizon: usize) -> Self {
        GeneratorConfig {
            tick_seconds: DEFAULT_TICK_SECONDS,
            horizon,
            refill_ticks: DEFAULT_REFILL_TICKS,
            zones,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Validation("horizon must be at least one tick".into()));
        }
        if self.refill_ticks == 0 {
            return Err(Error::Validation("refill_ticks must be positive".into()));
        }
        if self.zones.is_empty() {
            return Err(Error::Validation("generator needs at least one zone".into()));
        }
        for m in &self.zones {
            m.zone.validate()?;
            if !(m.lambda >= 0.0 && m.lambda.is_finite()) {
                return Err(Error::Validation(format!(
                    "zone {}: lambda must be a finite non-negative rate",
                    m.zone.id
                )));
            }
            let mut eps = m.unavailability_episodes.clone();
            eps.sort_unstable();
            for (i, &(s, e)) in eps.iter().enumerate() {
                if s >= e || e > self.horizon {
                    return Err(Error::Validation(format!(
                        "zone {}: episode ({s}, {e}) must satisfy start < end <= horizon",
                        m.zone.id
                    )));
                }
                if i > 0 && eps[i - 1].1 > s {
                    return Err(Error::Validation(format!(
                        "zone {}: overlapping unavailability episodes",
                        m.zone.id
                    )));
                }
            }
        }
        Ok(())
    }

    /// Generates the trace; a pure function of `(self, seed)`.
    pub fn generate(&self, seed: u64) -> Result<CapacityTrace> {
        self.validate()?;
        let capacity = self
            .zones
            .iter()
            .enumerate()
            .map(|(i, m)| {
                let mut rng = indexed_substream(seed, streams::TRACE, i as u64);
                let mut process = CapacityProcess::new(m.lambda, m.mean_capacity, self.refill_ticks);
                (0..self.horizon)
                    .map(|t| {
                        let c = if t == 0 {
                            process.current()
                        } else {
                            process.step(&mut rng).capacity
                        };
                        let down = m
                            .unavailability_episodes
                            .iter()
                            .any(|&(s, e)| (s..e).contains(&t));
                        if down {
                            0
                        } else {
                            c
                        }
                    })
                    .collect()
            })
            .collect();
        let zones = self.zones.iter().map(|m| m.zone.clone()).collect();
        CapacityTrace::new(zones, self.tick_seconds, capacity)
    }
}

/// Generates a trace with default tick length and refill rate.
pub fn gen_trace(models: &[PoissonZoneModel], horizon: usize, seed: u64) -> Result<CapacityTrace> {
    GeneratorConfig::new(models.to_vec(), horizon).generate(seed)
}

/// One tick of a [`CapacityProcess`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CapacitySample {
    pub capacity: u32,
    pub preemption_event: bool,
}

/// Single-zone capacity process: a Bernoulli(1 - e^-λ) preemption event per
/// tick removes one unit, and capacity climbs back toward the mean one unit
/// per `refill_ticks` quiet ticks.
#[derive(Debug, Clone)]
pub struct CapacityProcess {
    p_event: f64,
    mean: u32,
    refill_ticks: u32,
    current: u32,
    quiet: u32,
}

impl CapacityProcess {
    pub fn new(lambda: f64, mean: u32, refill_ticks: u32) -> Self {
        CapacityProcess {
            p_event: 1.0 - (-lambda).exp(),
            mean,
            refill_ticks: refill_ticks.max(1),
            current: mean,
            quiet: 0,
        }
    }

    pub fn current(&self) -> u32 {
        self.current
    }

    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> CapacitySample {
        // Exactly one draw per tick keeps streams aligned across parameters.
        let event = rng.random::<f64>() < self.p_event;
        if event {
            self.current = self.current.saturating_sub(1);
            self.quiet = 0;
        } else if self.current < self.mean {
            self.quiet += 1;
            if self.quiet >= self.refill_ticks {
                self.current += 1;
                self.quiet = 0;
            }
        }
        CapacitySample {
            capacity: self.current,
            preemption_event: event,
        }
    }
}
