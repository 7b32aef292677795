//! Baseline policies: static even spread, round robin, fixed spot/on-demand
//! node pools, and on-demand only.

use std::collections::VecDeque;

use crate::cluster::{Event, EventKind, InstanceKind};
use crate::policy::{newest_first, Policy, PolicyView, ScalingDecision};
use crate::trace::ZoneIdx;

/// Per-zone replica targets for spreading `n` replicas over `zones` zones:
/// the first `n mod zones` zones get one extra.
pub fn even_spread_targets(n: u32, zones: usize) -> Vec<u32> {
    let zones_u = zones as u32;
    (0..zones_u)
        .map(|i| n / zones_u + u32::from(i < n % zones_u))
        .collect()
}

/// Keeps `targets[z]` spot replicas launched in every zone `z`, relaunching
/// in place and trimming the newest first.
fn hold_per_zone(view: &PolicyView<'_>, targets: &[u32], d: &mut ScalingDecision) {
    let counts = view.cluster.counts();
    for (z, (&have, &want)) in counts.spot_per_zone.iter().zip(targets).enumerate() {
        let zone = ZoneIdx(z);
        if have < want {
            d.spot_launches.extend(std::iter::repeat_n(zone, (want - have) as usize));
        } else if have > want {
            d.terminate.extend(
                newest_first(view.cluster, InstanceKind::Spot, Some(zone))
                    .into_iter()
                    .take((have - want) as usize)
                    .map(|r| r.id),
            );
        }
    }
}

/// Keeps exactly `want` on-demand replicas launched.
fn hold_on_demand(view: &PolicyView<'_>, want: u32, d: &mut ScalingDecision) {
    let have = view.cluster.counts().od;
    if have < want {
        d.od_launches = want - have;
    } else if have > want {
        d.terminate.extend(
            newest_first(view.cluster, InstanceKind::OnDemand, None)
                .into_iter()
                .take((have - want) as usize)
                .map(|r| r.id),
        );
    }
}

/// Static spread of `N_Tar + N_Extra` spot replicas; a preempted replica is
/// relaunched in its own zone.
#[derive(Debug, Clone)]
pub struct EvenSpread {
    n_extra: u32,
}

impl EvenSpread {
    pub fn new(n_extra: u32) -> Self {
        EvenSpread { n_extra }
    }
}

impl Policy for EvenSpread {
    fn name(&self) -> &'static str {
        "even_spread"
    }

    fn decide(&mut self, view: &PolicyView<'_>) -> ScalingDecision {
        let mut d = ScalingDecision::default();
        let targets = even_spread_targets(view.n_tar + self.n_extra, view.zones.len());
        hold_per_zone(view, &targets, &mut d);
        d
    }
}

/// `N_Tar + N_Extra` spot replicas; a replica lost in zone `i` (preempted or
/// failed to launch) is relaunched in zone `i + 1`. Launches not tied to a
/// loss walk a global cursor over the zone list.
#[derive(Debug, Clone)]
pub struct RoundRobin {
    n_extra: u32,
    num_zones: usize,
    cursor: usize,
    relaunch: VecDeque<ZoneIdx>,
}

impl RoundRobin {
    pub fn new(num_zones: usize, n_extra: u32) -> Self {
        RoundRobin {
            n_extra,
            num_zones,
            cursor: 0,
            relaunch: VecDeque::new(),
        }
    }
}

impl Policy for RoundRobin {
    fn name(&self) -> &'static str {
        "round_robin"
    }

    fn decide(&mut self, view: &PolicyView<'_>) -> ScalingDecision {
        let mut d = ScalingDecision::default();
        let counts = view.cluster.counts();
        let target = view.n_tar + self.n_extra;
        if counts.spot < target {
            for _ in counts.spot..target {
                let z = self.relaunch.pop_front().unwrap_or_else(|| {
                    let z = ZoneIdx(self.cursor);
                    self.cursor = (self.cursor + 1) % self.num_zones;
                    z
                });
                d.spot_launches.push(z);
            }
        } else if counts.spot > target {
            d.terminate.extend(
                newest_first(view.cluster, InstanceKind::Spot, None)
                    .into_iter()
                    .take((counts.spot - target) as usize)
                    .map(|r| r.id),
            );
        }
        // Losses beyond what this tick needed no longer have a replica to move.
        self.relaunch.clear();
        d
    }

    fn observe(&mut self, events: &[Event]) {
        for e in events {
            if e.replica_kind == InstanceKind::Spot
                && matches!(e.kind, EventKind::Preempted | EventKind::LaunchFailed)
            {
                self.relaunch
                    .push_back(ZoneIdx((e.zone.0 + 1) % self.num_zones));
            }
        }
    }
}

/// Fixed node pools: `od_pool` on-demand replicas plus `spot_pool` spot
/// replicas spread evenly, regardless of spot obtainability or load.
#[derive(Debug, Clone)]
pub struct StaticMixture {
    spot_pool: u32,
    od_pool: u32,
}

impl StaticMixture {
    pub fn new(spot_pool: u32, od_pool: u32) -> Self {
        StaticMixture { spot_pool, od_pool }
    }
}

impl Policy for StaticMixture {
    fn name(&self) -> &'static str {
        "static_mixture"
    }

    fn decide(&mut self, view: &PolicyView<'_>) -> ScalingDecision {
        let mut d = ScalingDecision::default();
        let targets = even_spread_targets(self.spot_pool, view.zones.len());
        hold_per_zone(view, &targets, &mut d);
        hold_on_demand(view, self.od_pool, &mut d);
        d
    }
}

/// `N_Tar` on-demand replicas and nothing else.
#[derive(Debug, Clone, Copy)]
pub struct OdOnly;

impl Policy for OdOnly {
    fn name(&self) -> &'static str {
        "od_only"
    }

    fn decide(&mut self, view: &PolicyView<'_>) -> ScalingDecision {
        let mut d = ScalingDecision::default();
        hold_on_demand(view, view.n_tar, &mut d);
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::{ClusterConfig, ClusterState};
    use crate::trace::{CapacityTrace, Zone};

    fn trace(caps: Vec<Vec<u32>>) -> CapacityTrace {
        let zones = (0..caps.len())
            .map(|i| Zone::new(&format!("z{}", i + 1), "r1", 1.0, 3.0))
            .collect();
        CapacityTrace::new(zones, 10, caps).unwrap()
    }

    /// Runs `policy` over the trace with zero cold start; returns the cluster.
    fn drive(policy: &mut dyn Policy, tr: &CapacityTrace, n_tar: u32) -> ClusterState {
        let mut cluster = ClusterState::new(
            tr,
            &ClusterConfig {
                cold_start_ticks: 0,
                ..ClusterConfig::default()
            },
        );
        for t in 0..tr.horizon() {
            if t > 0 {
                let ev = cluster.step(tr).unwrap();
                policy.observe(&ev);
            }
            let view = PolicyView {
                t,
                n_tar,
                zones: tr.zones(),
                cluster: &cluster,
            };
            let d = policy.decide(&view);
            let ev = cluster.apply(tr, &d).unwrap();
            policy.observe(&ev);
        }
        cluster
    }

    #[test]
    fn spread_targets() {
        assert_eq!(even_spread_targets(6, 3), vec![2, 2, 2]);
        assert_eq!(even_spread_targets(5, 3), vec![2, 2, 1]);
        assert_eq!(even_spread_targets(1, 3), vec![1, 0, 0]);
    }

    #[test]
    fn even_spread_relaunches_in_same_zone() {
        let tr = trace(vec![vec![3; 5], vec![3, 3, 1, 3, 3], vec![3; 5]]);
        let c = drive(&mut EvenSpread::new(0), &tr, 6);
        let relaunch = c
            .events()
            .iter()
            .filter(|e| {
                e.t >= 2 && matches!(e.kind, EventKind::Launched | EventKind::LaunchFailed)
            })
            .map(|e| e.zone)
            .collect::<Vec<_>>();
        assert!(!relaunch.is_empty());
        assert!(relaunch.iter().all(|&z| z == ZoneIdx(1)));
        assert_eq!(c.counts().spot_per_zone, vec![2, 2, 2]);
    }

    #[test]
    fn even_spread_hammers_dead_zone() {
        let tr = trace(vec![vec![3; 50], vec![0; 50]]);
        let c = drive(&mut EvenSpread::new(0), &tr, 2);
        let failed = c
            .events()
            .iter()
            .filter(|e| e.kind == EventKind::LaunchFailed && e.zone == ZoneIdx(1))
            .count();
        assert_eq!(failed, 50);
    }

    #[test]
    fn round_robin_moves_to_next_zone() {
        // One replica preempted in z1, then z2, then z3.
        let tr = trace(vec![
            vec![1, 0, 0, 1, 1],
            vec![0, 1, 0, 0, 0],
            vec![0, 0, 1, 0, 0],
        ]);
        let mut p = RoundRobin::new(3, 0);
        let c = drive(&mut p, &tr, 1);
        let launches: Vec<usize> = c
            .replicas()
            .iter()
            .map(|r| r.zone.0)
            .collect();
        assert_eq!(launches, vec![0, 1, 2, 0]);
    }

    #[test]
    fn round_robin_single_zone_matches_even_spread() {
        let tr = trace(vec![vec![2, 2, 1, 0, 2, 2, 2, 1, 2, 2]]);
        let a = drive(&mut RoundRobin::new(1, 0), &tr, 2);
        let b = drive(&mut EvenSpread::new(0), &tr, 2);
        assert_eq!(a.events(), b.events());
    }

    #[test]
    fn static_mixture_with_spot() {
        let tr = trace(vec![vec![5; 4]; 2]);
        let c = drive(&mut StaticMixture::new(4, 1), &tr, 9);
        let k = c.counts();
        assert_eq!((k.od, k.spot), (1, 4));
    }

    #[test]
    fn static_mixture_without_spot_never_scales_od() {
        let tr = trace(vec![vec![0; 20]; 2]);
        let c = drive(&mut StaticMixture::new(4, 1), &tr, 9);
        assert_eq!(c.counts().od, 1);
        let failed = c
            .events()
            .iter()
            .filter(|e| e.kind == EventKind::LaunchFailed)
            .count();
        assert_eq!(failed, 4 * 20);
    }

    #[test]
    fn pure_spot_pool() {
        let tr = trace(vec![vec![5; 4]]);
        let c = drive(&mut StaticMixture::new(3, 0), &tr, 9);
        assert_eq!(c.counts().od, 0);
        assert_eq!(c.counts().spot, 3);
    }

    #[test]
    fn od_only_tracks_target() {
        let tr = trace(vec![vec![5; 4]]);
        let c = drive(&mut OdOnly, &tr, 3);
        let k = c.counts();
        assert_eq!((k.od, k.spot), (3, 0));
    }
}
