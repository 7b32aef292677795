//! Exhaustive search over every launch schedule. Only for tiny instances;
//! it exists to check the exact solver.

use crate::error::{Error, Result};
use crate::omniscient::{OmniscientInstance, OmniscientSolution, Schedule};

/// Default cap on the size of the search space.
pub const DEFAULT_BRUTE_BUDGET: f64 = 5e8;

pub fn brute_force(inst: &OmniscientInstance) -> Result<OmniscientSolution> {
    brute_force_with(inst, DEFAULT_BRUTE_BUDGET)
}

/// Enumerates every `S(z,t) ∈ [0, min(C, N_max)]` and `O(t) ∈ [0, N_max]`
/// (skipping branches that already cost more than the best schedule or can
/// no longer meet enough ticks). Fails if the full space exceeds `budget`.
pub fn brute_force_with(inst: &OmniscientInstance, budget: f64) -> Result<OmniscientSolution> {
    let horizon = inst.horizon();
    let zones = inst.num_zones();
    let space: f64 = (0..horizon)
        .map(|t| {
            let spot: f64 = inst
                .capacity()
                .iter()
                .map(|c| f64::from(c[t].min(inst.n_max()) + 1))
                .product();
            spot * f64::from(inst.n_max() + 1)
        })
        .product();
    if space > budget {
        return Err(Error::Resource(format!(
            "brute force would enumerate {space:.3e} schedules (budget {budget:.3e})"
        )));
    }
    let mut search = Search {
        inst,
        required: inst.required_ticks(),
        spot: vec![vec![0; horizon]; zones],
        od: vec![0; horizon],
        totals: vec![0; horizon],
        best_cost: f64::INFINITY,
        best: None,
    };
    search.tick(0, 0.0, 0);
    let (spot, od) = search.best.ok_or_else(|| {
        Error::Infeasible(format!(
            "no schedule meets the target on {} of {horizon} ticks",
            search.required
        ))
    })?;
    let schedule = Schedule {
        spot,
        od,
        spot_ready: vec![0; horizon],
        od_ready: vec![0; horizon],
    };
    Ok(OmniscientSolution::from_schedule(inst, schedule))
}

struct Search<'a> {
    inst: &'a OmniscientInstance,
    required: usize,
    spot: Vec<Vec<u32>>,
    od: Vec<u32>,
    totals: Vec<u32>,
    best_cost: f64,
    best: Option<(Vec<Vec<u32>>, Vec<u32>)>,
}

impl Search<'_> {
    /// Ready replicas at `t`: launched throughout `(t-d, t]`, nothing before
    /// tick 0, and with `d = 0` whatever is launched at `t`.
    fn ready(&self, series: &[u32], t: usize) -> u32 {
        let d = self.inst.d();
        if d == 0 {
            return series[t];
        }
        if t + 1 < d {
            return 0;
        }
        let mut m = u32::MAX;
        for tp in (t + 1 - d)..=t {
            m = m.min(series[tp]);
        }
        m
    }

    fn tick(&mut self, t: usize, cost: f64, met: usize) {
        let horizon = self.inst.horizon();
        if t == horizon {
            if met >= self.required && cost < self.best_cost {
                self.best_cost = cost;
                self.best = Some((self.spot.clone(), self.od.clone()));
            }
            return;
        }
        self.zone(t, 0, cost, met);
    }

    fn zone(&mut self, t: usize, z: usize, cost: f64, met: usize) {
        let inst = self.inst;
        if z == inst.num_zones() {
            self.totals[t] = self.spot.iter().map(|s| s[t]).sum();
            for o in 0..=inst.n_max() {
                let c = cost + inst.k() * f64::from(o);
                if c >= self.best_cost {
                    break;
                }
                self.od[t] = o;
                let ready = self.ready(&self.totals, t) + self.ready(&self.od, t);
                let met = met + usize::from(ready >= inst.n_tar()[t]);
                if met + (inst.horizon() - t - 1) < self.required {
                    continue;
                }
                self.tick(t + 1, c, met);
            }
            self.od[t] = 0;
            return;
        }
        for s in 0..=inst.capacity()[z][t].min(inst.n_max()) {
            let c = cost + f64::from(s);
            if c >= self.best_cost {
                break;
            }
            self.spot[z][t] = s;
            self.zone(t, z + 1, c, met);
        }
        self.spot[z][t] = 0;
    }
}
