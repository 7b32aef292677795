//! Offline cost-optimal schedule with full knowledge of spot capacity.
//!
//! Decision variables per tick `t`: launched spot per zone `S(z,t)`,
//! launched on-demand `O(t)`, ready counts `S_r(t)`, `O_r(t)`, and an
//! indicator `M(t)` for "ready replicas meet the target". The problem:
//!
//! ```text
//! min  Σ_t [ Σ_z S(z,t) + k·O(t) ]
//! s.t. Σ_t M(t) ≥ T · avail_tar
//!      S(z,t) ≤ C(z,t)
//!      S(t') ≥ S_r(t),  O(t') ≥ O_r(t)       for t - d < t' ≤ t
//!      S_r(t) = O_r(t) = 0                    for t < d - 1
//!      S_r(t) ≤ S(t),   O_r(t) ≤ O(t)
//!      M(t)·N_max ≥ S_r(t) + O_r(t) - N(t)
//!      (1 - M(t))·N_max ≥ N(t) - S_r(t) - O_r(t)
//! ```
//!
//! Ticks run over `0..T`. Nothing exists before tick 0, so a replica is
//! ready at `t` only if it was launched for the whole window `(t-d, t]`.

mod brute;
mod solver;

pub use brute::{brute_force, brute_force_with};
pub use solver::{solve_exact, solve_exact_with, SolverLimits};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::trace::CapacityTrace;

#[derive(Debug, Clone, PartialEq)]
pub struct OmniscientInstance {
    capacity: Vec<Vec<u32>>,
    n_tar: Vec<u32>,
    avail_tar: f64,
    d: usize,
    k: f64,
    n_max: u32,
}

/// Row counts of the materialized constraint system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ConstraintSummary {
    pub availability: usize,
    pub capacity: usize,
    pub cold_start: usize,
    pub warm_start: usize,
    pub indicator: usize,
    pub ready_le_launched: usize,
}

impl ConstraintSummary {
    pub fn total(&self) -> usize {
        self.availability
            + self.capacity
            + self.cold_start
            + self.warm_start
            + self.indicator
            + self.ready_le_launched
    }
}

/// Builds an instance over the trace's full horizon. `n_tar` must have one
/// entry per tick; `n_max` defaults to its maximum.
pub fn build_instance(
    trace: &CapacityTrace,
    n_tar: Vec<u32>,
    avail_tar: f64,
    d: usize,
    k: f64,
) -> Result<OmniscientInstance> {
    let capacity = (0..trace.num_zones())
        .map(|z| trace.series(crate::trace::ZoneIdx(z)).to_vec())
        .collect();
    OmniscientInstance::new(capacity, n_tar, avail_tar, d, k)
}

impl OmniscientInstance {
    /// `capacity[z][t]`; see [`build_instance`].
    pub fn new(
        capacity: Vec<Vec<u32>>,
        n_tar: Vec<u32>,
        avail_tar: f64,
        d: usize,
        k: f64,
    ) -> Result<Self> {
        let horizon = n_tar.len();
        if horizon == 0 {
            return Err(Error::Validation("horizon must be at least one tick".into()));
        }
        if capacity.is_empty() {
            return Err(Error::Validation("instance needs at least one zone".into()));
        }
        if let Some(z) = capacity.iter().position(|c| c.len() != horizon) {
            return Err(Error::Validation(format!(
                "zone {z} capacity covers {} ticks, targets cover {horizon}",
                capacity[z].len()
            )));
        }
        if !(0.0..=1.0).contains(&avail_tar) {
            return Err(Error::Validation(format!("avail_tar {avail_tar} outside [0, 1]")));
        }
        if !(k > 1.0) || !k.is_finite() {
            return Err(Error::Validation(format!("k must exceed 1, got {k}")));
        }
        let n_max = n_tar.iter().copied().max().unwrap_or(0);
        Ok(OmniscientInstance {
            capacity,
            n_tar,
            avail_tar,
            d,
            k,
            n_max,
        })
    }

    pub fn with_n_max(mut self, n_max: u32) -> Result<Self> {
        let need = self.n_tar.iter().copied().max().unwrap_or(0);
        if n_max < need {
            return Err(Error::Validation(format!(
                "n_max {n_max} is below the largest target {need}"
            )));
        }
        self.n_max = n_max;
        Ok(self)
    }

    pub fn horizon(&self) -> usize {
        self.n_tar.len()
    }

    pub fn num_zones(&self) -> usize {
        self.capacity.len()
    }

    pub fn capacity(&self) -> &[Vec<u32>] {
        &self.capacity
    }

    pub fn n_tar(&self) -> &[u32] {
        &self.n_tar
    }

    pub fn avail_tar(&self) -> f64 {
        self.avail_tar
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn n_max(&self) -> u32 {
        self.n_max
    }

    /// Ticks that must meet the target.
    pub fn required_ticks(&self) -> usize {
        let r = (self.horizon() as f64 * self.avail_tar - 1e-9).ceil();
        r.max(0.0) as usize
    }

    /// Objective for launched counts.
    pub fn objective(&self, spot: &[Vec<u32>], od: &[u32]) -> f64 {
        let s: u64 = spot.iter().flatten().map(|&v| u64::from(v)).sum();
        let o: u64 = od.iter().map(|&v| u64::from(v)).sum();
        s as f64 + self.k * o as f64
    }

    pub fn constraint_summary(&self) -> ConstraintSummary {
        let t_len = self.horizon();
        let cold_start = (0..t_len)
            .map(|t| (t + 1).min(self.d))
            .sum::<usize>()
            * 2;
        ConstraintSummary {
            availability: 1,
            capacity: self.num_zones() * t_len,
            cold_start,
            warm_start: 2 * self.d.saturating_sub(1).min(t_len),
            indicator: 2 * t_len,
            ready_le_launched: 2 * t_len,
        }
    }

    /// Largest ready count the launch history allows at each tick: the
    /// minimum of `series` over the readiness window, or zero if that window
    /// reaches before tick 0.
    pub fn window_min(&self, series: &[u32]) -> Vec<u32> {
        window_min(series, self.d)
    }
}

pub(crate) fn window_min(series: &[u32], d: usize) -> Vec<u32> {
    let c = d.max(1);
    (0..series.len())
        .map(|t| {
            if t + 1 < c {
                0
            } else {
                series[t + 1 - c..=t].iter().copied().min().unwrap_or(0)
            }
        })
        .collect()
}

/// Launched and ready counts for every tick.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Schedule {
    /// `spot[z][t]`
    pub spot: Vec<Vec<u32>>,
    pub od: Vec<u32>,
    pub spot_ready: Vec<u32>,
    pub od_ready: Vec<u32>,
}

impl Schedule {
    pub fn zeros(zones: usize, horizon: usize) -> Self {
        Schedule {
            spot: vec![vec![0; horizon]; zones],
            od: vec![0; horizon],
            spot_ready: vec![0; horizon],
            od_ready: vec![0; horizon],
        }
    }

    pub fn spot_total(&self, t: usize) -> u32 {
        self.spot.iter().map(|s| s[t]).sum()
    }

    /// Sets ready counts to the most the launch history allows, then trims
    /// any excess above `N(t) + N_max` that the indicator rows forbid.
    pub fn fill_ready(&mut self, inst: &OmniscientInstance) {
        let horizon = self.od.len();
        let spot: Vec<u32> = (0..horizon).map(|t| self.spot_total(t)).collect();
        self.spot_ready = inst.window_min(&spot);
        self.od_ready = inst.window_min(&self.od);
        self.clip_ready(inst);
    }

    /// Lowers ready counts (on-demand first) so that no tick exceeds
    /// `N(t) + N_max`. Lower ready counts are always admissible.
    pub fn clip_ready(&mut self, inst: &OmniscientInstance) {
        for t in 0..self.od.len() {
            let cap = inst.n_tar.get(t).copied().unwrap_or(0) + inst.n_max;
            let over = (self.spot_ready[t] + self.od_ready[t]).saturating_sub(cap);
            let from_od = over.min(self.od_ready[t]);
            self.od_ready[t] -= from_od;
            self.spot_ready[t] -= over - from_od;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OmniscientSolution {
    pub schedule: Schedule,
    /// `M(t)`
    pub met: Vec<bool>,
    pub objective: f64,
    pub availability: f64,
}

impl OmniscientSolution {
    pub(crate) fn from_schedule(inst: &OmniscientInstance, mut schedule: Schedule) -> Self {
        schedule.fill_ready(inst);
        let met: Vec<bool> = (0..inst.horizon())
            .map(|t| schedule.spot_ready[t] + schedule.od_ready[t] >= inst.n_tar[t])
            .collect();
        let objective = inst.objective(&schedule.spot, &schedule.od);
        let availability = met.iter().filter(|&&m| m).count() as f64 / inst.horizon() as f64;
        OmniscientSolution {
            schedule,
            met,
            objective,
            availability,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintKind {
    Shape,
    Availability,
    Capacity,
    ColdStart,
    WarmStart,
    ReadyLeLaunched,
    Indicator,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub constraint: ConstraintKind,
    pub t: Option<usize>,
    pub zone: Option<usize>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub feasible: bool,
    pub objective: f64,
    pub availability: f64,
    pub violations: Vec<Violation>,
}

/// Checks every constraint against `schedule`, with `M(t)` taken as
/// "ready ≥ target". Reports the objective and achieved availability even
/// when infeasible.
pub fn evaluate_solution(inst: &OmniscientInstance, schedule: &Schedule) -> Evaluation {
    let horizon = inst.horizon();
    let mut v = Vec::new();
    let viol = |c, t, zone, detail: String| Violation {
        constraint: c,
        t,
        zone,
        detail,
    };
    let shape_ok = schedule.spot.len() == inst.num_zones()
        && schedule.spot.iter().all(|s| s.len() == horizon)
        && schedule.od.len() == horizon
        && schedule.spot_ready.len() == horizon
        && schedule.od_ready.len() == horizon;
    if !shape_ok {
        v.push(viol(
            ConstraintKind::Shape,
            None,
            None,
            format!("schedule must cover {} zones × {horizon} ticks", inst.num_zones()),
        ));
        return Evaluation {
            feasible: false,
            objective: f64::NAN,
            availability: 0.0,
            violations: v,
        };
    }

    for (z, (s, c)) in schedule.spot.iter().zip(&inst.capacity).enumerate() {
        for t in 0..horizon {
            if s[t] > c[t] {
                v.push(viol(
                    ConstraintKind::Capacity,
                    Some(t),
                    Some(z),
                    format!("S = {} exceeds C = {}", s[t], c[t]),
                ));
            }
        }
    }

    let spot: Vec<u32> = (0..horizon).map(|t| schedule.spot_total(t)).collect();
    let mut met = 0;
    for t in 0..horizon {
        let (sr, or) = (schedule.spot_ready[t], schedule.od_ready[t]);
        if sr > spot[t] || or > schedule.od[t] {
            v.push(viol(
                ConstraintKind::ReadyLeLaunched,
                Some(t),
                None,
                format!("ready ({sr}, {or}) exceeds launched ({}, {})", spot[t], schedule.od[t]),
            ));
        }
        if t + 1 < inst.d && (sr > 0 || or > 0) {
            v.push(viol(
                ConstraintKind::WarmStart,
                Some(t),
                None,
                format!("ready ({sr}, {or}) before any replica could finish its cold start"),
            ));
        }
        for tp in (t + 1).saturating_sub(inst.d)..=t {
            if spot[tp] < sr || schedule.od[tp] < or {
                v.push(viol(
                    ConstraintKind::ColdStart,
                    Some(t),
                    None,
                    format!(
                        "ready ({sr}, {or}) at {t} exceeds launched ({}, {}) at {tp}",
                        spot[tp], schedule.od[tp]
                    ),
                ));
            }
        }
        let ready = sr + or;
        if ready >= inst.n_tar[t] {
            met += 1;
            if ready - inst.n_tar[t] > inst.n_max {
                v.push(viol(
                    ConstraintKind::Indicator,
                    Some(t),
                    None,
                    format!("ready {ready} exceeds target plus N_max"),
                ));
            }
        }
    }
    if met < inst.required_ticks() {
        v.push(viol(
            ConstraintKind::Availability,
            None,
            None,
            format!("{met} ticks meet the target, {} required", inst.required_ticks()),
        ));
    }
    Evaluation {
        feasible: v.is_empty(),
        objective: inst.objective(&schedule.spot, &schedule.od),
        availability: met as f64 / horizon as f64,
        violations: v,
    }
}
