//! Exact solver.
//!
//! Only the aggregate spot count matters to every constraint except the
//! per-zone capacity rows, so the search runs over aggregate `S(t) ≤ Cap(t)`
//! and `O(t)` and spreads `S(t)` over zones at the end. Neither count ever
//! needs to exceed the largest target `N*`: any schedule can be lowered to
//! that bound without losing a met tick.
//!
//! The ready count after tick `t` depends on the history only through the
//! "lanes" currently launched and how long each has been up (capped at the
//! window length). The solver runs a forward dynamic program over
//! `(spot ages, on-demand ages, met ticks)` and prunes any state whose cost
//! plus the cheapest way to meet the remaining ticks (each tick relaxed on
//! its own) cannot beat the best schedule found so far.

use std::collections::HashMap;
use std::hash::{BuildHasherDefault, Hasher};

use crate::error::{Error, Result};
use crate::omniscient::{OmniscientInstance, OmniscientSolution, Schedule};

const BITS: usize = 4;
const MAX_LANES: u32 = (1 << BITS) - 1;
const MAX_BUCKETS: usize = 128 / BITS;
const EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SolverLimits {
    /// Candidate transitions examined before giving up.
    pub max_expansions: u64,
    /// States held across all ticks.
    pub max_states: usize,
}

impl Default for SolverLimits {
    fn default() -> Self {
        SolverLimits {
            max_expansions: 2_000_000_000,
            max_states: 40_000_000,
        }
    }
}

/// Multiply-rotate hasher for the small integer keys used here.
#[derive(Default)]
struct FastHasher(u64);

impl Hasher for FastHasher {
    fn finish(&self) -> u64 {
        self.0
    }

    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.write_u64(u64::from(b));
        }
    }

    fn write_u32(&mut self, n: u32) {
        self.write_u64(u64::from(n));
    }

    fn write_u64(&mut self, n: u64) {
        self.0 = (self.0.rotate_left(5) ^ n).wrapping_mul(0x51_7c_c1_b7_27_22_0a_95);
    }

    fn write_u128(&mut self, n: u128) {
        self.write_u64(n as u64);
        self.write_u64((n >> 64) as u64);
    }
}

type FastMap<K, V> = HashMap<K, V, BuildHasherDefault<FastHasher>>;

/// Lane ages packed `BITS` per bucket. Bucket `i < c-1` counts lanes up for
/// exactly `i + 1` ticks; bucket `c-1` counts ready lanes.
type Profile = u128;

struct Ages {
    c: usize,
    cache: FastMap<(Profile, u32), (Profile, u32)>,
}

impl Ages {
    fn new(c: usize) -> Self {
        Ages {
            c,
            cache: FastMap::default(),
        }
    }

    fn decode(&self, p: Profile) -> [u32; MAX_BUCKETS] {
        let mut b = [0; MAX_BUCKETS];
        for (i, slot) in b.iter_mut().enumerate().take(self.c) {
            *slot = ((p >> (BITS * i)) & MAX_LANES as u128) as u32;
        }
        b
    }

    fn encode(&self, b: &[u32; MAX_BUCKETS]) -> Profile {
        b.iter()
            .take(self.c)
            .enumerate()
            .fold(0, |p, (i, &n)| p | ((n as u128) << (BITS * i)))
    }

    /// Moves to a tick with `next` lanes up: the youngest lanes are dropped
    /// first, survivors age by one, new lanes start at age one.
    fn advance(&mut self, p: Profile, next: u32) -> (Profile, u32) {
        if let Some(&hit) = self.cache.get(&(p, next)) {
            return hit;
        }
        let c = self.c;
        let mut b = self.decode(p);
        let total: u32 = b[..c].iter().sum();
        let mut drop = total.saturating_sub(next);
        for n in b[..c].iter_mut() {
            let take = drop.min(*n);
            *n -= take;
            drop -= take;
        }
        if c >= 2 {
            let top = b[c - 1] + b[c - 2];
            for i in (1..c - 1).rev() {
                b[i] = b[i - 1];
            }
            b[c - 1] = top;
            b[0] = 0;
        }
        b[0] += next - total.min(next);
        let out = (self.encode(&b), b[c - 1]);
        self.cache.insert((p, next), out);
        out
    }
}

#[derive(Debug, Clone, Copy)]
struct Node {
    spot: Profile,
    od: Profile,
    met: u32,
    spot_sum: u64,
    od_sum: u64,
    prev: u32,
    s: u8,
    o: u8,
}

enum Best {
    Seed(Schedule),
    /// Final transition out of `layers[t-1][prev]` (or the root at `t = 0`).
    Found { t: usize, prev: u32, s: u8, o: u8 },
}

pub fn solve_exact(inst: &OmniscientInstance) -> Result<OmniscientSolution> {
    solve_exact_with(inst, &SolverLimits::default())
}

pub fn solve_exact_with(inst: &OmniscientInstance, limits: &SolverLimits) -> Result<OmniscientSolution> {
    let horizon = inst.horizon();
    let zones = inst.num_zones();
    let n_tar = inst.n_tar();
    let k = inst.k();
    let c = inst.d().max(1);
    let required = inst.required_ticks();
    let n_star = n_tar.iter().copied().max().unwrap_or(0);

    if required == 0 || n_star == 0 {
        return Ok(OmniscientSolution::from_schedule(inst, Schedule::zeros(zones, horizon)));
    }

    let meetable: Vec<bool> = (0..horizon).map(|t| n_tar[t] == 0 || t + 1 >= c).collect();
    let meetable_count = meetable.iter().filter(|&&m| m).count();
    if meetable_count < required {
        return Err(Error::Infeasible(format!(
            "only {meetable_count} of {horizon} ticks can have ready replicas after a {}-tick cold start, {required} required",
            inst.d()
        )));
    }
    if n_star > MAX_LANES || c > MAX_BUCKETS {
        return Err(Error::Resource(format!(
            "exact solve supports targets up to {MAX_LANES} and cold starts up to {MAX_BUCKETS} ticks (got {n_star} and {})",
            inst.d()
        )));
    }

    let spot_room: Vec<u32> = (0..horizon)
        .map(|t| {
            inst.capacity()
                .iter()
                .map(|cz| cz[t].min(inst.n_max()))
                .sum::<u32>()
        })
        .collect();
    let spot_cap: Vec<u32> = spot_room.iter().map(|&r| r.min(n_star)).collect();

    // Cheapest way to meet tick t in isolation.
    let relaxed: Vec<f64> = (0..horizon)
        .map(|t| {
            let spot = n_tar[t].min(spot_room[t]);
            f64::from(spot) + k * f64::from(n_tar[t] - spot)
        })
        .collect();
    // bound[t][j]: cheapest j meetable ticks at or after t.
    let bound: Vec<Vec<f64>> = (0..=horizon)
        .map(|from| {
            let mut costs: Vec<f64> = (from..horizon).filter(|&t| meetable[t]).map(|t| relaxed[t]).collect();
            costs.sort_by(f64::total_cmp);
            let mut prefix = Vec::with_capacity(costs.len() + 1);
            prefix.push(0.0);
            let mut acc = 0.0;
            for x in costs {
                acc += x;
                prefix.push(acc);
            }
            prefix
        })
        .collect();

    // Two schedules that meet every meetable tick seed the bound.
    let seeds = [
        (0..horizon).map(|t| (spot_cap[t], n_star)).collect::<Vec<_>>(),
        (0..horizon)
            .map(|t| {
                let hi = (t + c).min(horizon);
                (0, n_tar[t..hi].iter().copied().max().unwrap_or(0))
            })
            .collect(),
    ];
    let mut best_cost = f64::INFINITY;
    let mut best = None;
    for seed in seeds {
        let sched = spread(inst, &seed);
        let cost = inst.objective(&sched.spot, &sched.od);
        if cost < best_cost - EPS {
            best_cost = cost;
            best = Some(Best::Seed(sched));
        }
    }

    let mut spot_ages = Ages::new(c);
    let mut od_ages = Ages::new(c);
    let root = Node {
        spot: 0,
        od: 0,
        met: 0,
        spot_sum: 0,
        od_sum: 0,
        prev: 0,
        s: 0,
        o: 0,
    };
    let mut layers: Vec<Vec<Node>> = Vec::with_capacity(horizon);
    let mut expansions = 0u64;
    let mut stored = 0usize;
    let required = required as u32;
    let mut od_moves: Vec<(Profile, u32)> = Vec::with_capacity(n_star as usize + 1);

    for t in 0..horizon {
        let current: &[Node] = if t == 0 {
            std::slice::from_ref(&root)
        } else {
            &layers[t - 1]
        };
        let mut next: Vec<Node> = Vec::new();
        let mut index: FastMap<(Profile, Profile, u32), usize> = FastMap::default();
        let meetable_after = bound[t + 1].len() - 1;

        for (pi, node) in current.iter().enumerate() {
            od_moves.clear();
            od_moves.extend((0..=n_star).map(|o| od_ages.advance(node.od, o)));
            for s in 0..=spot_cap[t] {
                let (spot, spot_ready) = spot_ages.advance(node.spot, s);
                for (o, &(od, od_ready)) in od_moves.iter().enumerate() {
                    expansions += 1;
                    if expansions > limits.max_expansions {
                        return Err(Error::Resource(format!(
                            "exact solve exceeded {} transitions at tick {t} of {horizon}; shrink the horizon, targets or cold start",
                            limits.max_expansions
                        )));
                    }
                    let o = o as u32;
                    let met = node.met + u32::from(spot_ready + od_ready >= n_tar[t]);
                    let spot_sum = node.spot_sum + u64::from(s);
                    let od_sum = node.od_sum + u64::from(o);
                    let cost = spot_sum as f64 + k * od_sum as f64;
                    if met >= required {
                        if cost < best_cost - EPS {
                            best_cost = cost;
                            best = Some(Best::Found {
                                t,
                                prev: pi as u32,
                                s: s as u8,
                                o: o as u8,
                            });
                        }
                        continue;
                    }
                    let need = (required - met) as usize;
                    if need > meetable_after || cost + bound[t + 1][need] >= best_cost - EPS {
                        continue;
                    }
                    let cand = Node {
                        spot,
                        od,
                        met,
                        spot_sum,
                        od_sum,
                        prev: pi as u32,
                        s: s as u8,
                        o: o as u8,
                    };
                    match index.entry((spot, od, met)) {
                        std::collections::hash_map::Entry::Occupied(e) => {
                            let slot = &mut next[*e.get()];
                            let old = slot.spot_sum as f64 + k * slot.od_sum as f64;
                            if cost < old - EPS {
                                *slot = cand;
                            }
                        }
                        std::collections::hash_map::Entry::Vacant(e) => {
                            e.insert(next.len());
                            next.push(cand);
                        }
                    }
                }
            }
        }

        let next = drop_dominated(next, k);
        stored += next.len();
        if stored > limits.max_states {
            return Err(Error::Resource(format!(
                "exact solve exceeded {} stored states at tick {t} of {horizon}",
                limits.max_states
            )));
        }
        layers.push(next);
    }

    let schedule = match best {
        None => {
            return Err(Error::Infeasible(format!(
                "no schedule meets the target on {required} of {horizon} ticks"
            )))
        }
        Some(Best::Seed(s)) => s,
        Some(Best::Found { t, prev, s, o }) => {
            let mut counts = vec![(0, 0); horizon];
            counts[t] = (u32::from(s), u32::from(o));
            let mut idx = prev as usize;
            for tt in (0..t).rev() {
                let n = layers[tt][idx];
                counts[tt] = (u32::from(n.s), u32::from(n.o));
                idx = n.prev as usize;
            }
            spread(inst, &counts)
        }
    };
    Ok(OmniscientSolution::from_schedule(inst, schedule))
}

/// Within each pair of age profiles keep only states not beaten by another
/// with at least as many met ticks at no greater cost.
fn drop_dominated(mut nodes: Vec<Node>, k: f64) -> Vec<Node> {
    let cost = |n: &Node| n.spot_sum as f64 + k * n.od_sum as f64;
    let mut order: Vec<usize> = (0..nodes.len()).collect();
    order.sort_by(|&a, &b| {
        let (x, y) = (&nodes[a], &nodes[b]);
        (x.spot, x.od)
            .cmp(&(y.spot, y.od))
            .then(y.met.cmp(&x.met))
            .then(a.cmp(&b))
    });
    let mut keep = vec![false; nodes.len()];
    let mut group = None;
    let mut floor = f64::INFINITY;
    for &i in &order {
        let key = (nodes[i].spot, nodes[i].od);
        if group != Some(key) {
            group = Some(key);
            floor = f64::INFINITY;
        }
        let c = cost(&nodes[i]);
        if c < floor - EPS {
            keep[i] = true;
            floor = c;
        }
    }
    let mut i = 0;
    nodes.retain(|_| {
        i += 1;
        keep[i - 1]
    });
    nodes
}

/// Turns aggregate `(S(t), O(t))` into a schedule, filling zones in index
/// order up to their capacity.
fn spread(inst: &OmniscientInstance, counts: &[(u32, u32)]) -> Schedule {
    let mut sched = Schedule::zeros(inst.num_zones(), counts.len());
    for (t, &(s, o)) in counts.iter().enumerate() {
        let mut left = s;
        for (z, cap) in inst.capacity().iter().enumerate() {
            let put = left.min(cap[t].min(inst.n_max()));
            sched.spot[z][t] = put;
            left -= put;
        }
        debug_assert_eq!(left, 0);
        sched.od[t] = o;
    }
    sched
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::omniscient::evaluate_solution;

    fn inst(cap: Vec<Vec<u32>>, n: u32, avail: f64, d: usize) -> OmniscientInstance {
        let t = cap[0].len();
        OmniscientInstance::new(cap, vec![n; t], avail, d, 3.0).unwrap()
    }

    #[test]
    fn ages_roll_forward() {
        let mut a = Ages::new(3);
        let (p, r) = a.advance(0, 2);
        assert_eq!(r, 0);
        let (p, r) = a.advance(p, 3);
        assert_eq!(r, 0);
        let (p, r) = a.advance(p, 3);
        assert_eq!(r, 2);
        let (p, r) = a.advance(p, 1);
        assert_eq!(r, 1);
        let (_, r) = a.advance(p, 0);
        assert_eq!(r, 0);
    }

    #[test]
    fn minimal_instance() {
        let s = solve_exact(&inst(vec![vec![1]], 1, 1.0, 0)).unwrap();
        assert_eq!(s.objective, 1.0);
        assert_eq!(s.schedule.spot, vec![vec![1]]);
    }

    #[test]
    fn zero_availability_costs_nothing() {
        let s = solve_exact(&inst(vec![vec![3; 5]; 2], 2, 0.0, 1)).unwrap();
        assert_eq!(s.objective, 0.0);
    }

    #[test]
    fn spot_everywhere_means_spot_only() {
        let s = solve_exact(&inst(vec![vec![4; 12]], 3, 1.0, 0)).unwrap();
        assert_eq!(s.objective, 36.0);
        assert!(s.schedule.od.iter().all(|&o| o == 0));
    }

    #[test]
    fn gap_in_capacity_is_covered_on_demand() {
        let i = inst(vec![vec![1, 0, 1]], 1, 1.0, 1);
        let s = solve_exact(&i).unwrap();
        assert_eq!(s.objective, 5.0);
        assert_eq!(s.schedule.od, vec![0, 1, 0]);
        assert!(evaluate_solution(&i, &s.schedule).feasible);
    }

    #[test]
    fn cold_start_makes_early_ticks_unmeetable() {
        let i = inst(vec![vec![2; 4]], 1, 1.0, 3);
        assert!(matches!(solve_exact(&i), Err(Error::Infeasible(_))));
        let i = inst(vec![vec![2; 4]], 1, 0.5, 3);
        let s = solve_exact(&i).unwrap();
        // Launch at 0, ready at 2 and 3.
        assert_eq!(s.objective, 4.0);
    }

    #[test]
    fn oversize_is_a_resource_error() {
        let i = inst(vec![vec![20; 4]], 16, 1.0, 0);
        assert!(matches!(solve_exact(&i), Err(Error::Resource(_))));
        let i = inst(vec![vec![6; 60]; 3], 6, 0.9, 6);
        let tight = SolverLimits {
            max_expansions: 1000,
            ..SolverLimits::default()
        };
        assert!(matches!(solve_exact_with(&i, &tight), Err(Error::Resource(_))));
    }

    #[test]
    fn solution_satisfies_constraints() {
        let i = inst(
            vec![vec![2, 2, 0, 0, 1, 2, 2, 0, 1, 1], vec![0, 1, 1, 1, 0, 0, 1, 1, 0, 2]],
            2,
            0.7,
            2,
        );
        let s = solve_exact(&i).unwrap();
        let e = evaluate_solution(&i, &s.schedule);
        assert!(e.feasible, "{:?}", e.violations);
        assert_eq!(e.objective, s.objective);
    }
}
