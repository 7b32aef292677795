//! Dynamic placement plus dynamic on-demand fallback.
//!
//! The policy keeps `N_Tar + N_Extra` spot replicas launched at all times,
//! drawing zones from the zone book, and keeps
//! `min(N_Tar, N_Tar + N_Extra - S_r)` on-demand replicas to cover whatever
//! spot capacity is not yet ready.

use crate::cluster::{Event, EventKind, InstanceKind};
use crate::policy::{
    newest_first, target_on_demand, Policy, PolicyView, ScalingDecision, ZoneBook,
};
use crate::trace::ZoneIdx;

#[derive(Debug, Clone)]
pub struct SpotHedge {
    n_extra: u32,
    book: ZoneBook,
}

impl SpotHedge {
    pub fn new(num_zones: usize, n_extra: u32) -> Self {
        SpotHedge {
            n_extra,
            book: ZoneBook::new(num_zones),
        }
    }

    pub fn book(&self) -> &ZoneBook {
        &self.book
    }
}

impl Policy for SpotHedge {
    fn name(&self) -> &'static str {
        "spothedge"
    }

    fn decide(&mut self, view: &PolicyView<'_>) -> ScalingDecision {
        spothedge_step(&self.book, view, self.n_extra)
    }

    fn retry(&mut self, view: &PolicyView<'_>, refused: &[ZoneIdx]) -> ScalingDecision {
        let counts = view.cluster.counts();
        let mut occupancy = counts.spot_per_zone;
        let mut decision = ScalingDecision::default();
        for _ in counts.spot..view.n_tar + self.n_extra {
            let Some(z) = self.book.select_excluding(&occupancy, view.zones, refused) else {
                break;
            };
            occupancy[z.0] += 1;
            decision.spot_launches.push(z);
        }
        decision
    }

    fn observe(&mut self, events: &[Event]) {
        for e in events.iter().filter(|e| e.replica_kind == InstanceKind::Spot) {
            // Zone indices come from the cluster, so they are always known.
            let _ = match e.kind {
                EventKind::Preempted | EventKind::LaunchFailed => self.book.handle_preemption(e.zone),
                EventKind::BecameReady => self.book.handle_launch(e.zone),
                _ => Ok(()),
            };
        }
    }
}

/// One SpotHedge decision for the current cluster state.
pub fn spothedge_step(book: &ZoneBook, view: &PolicyView<'_>, n_extra: u32) -> ScalingDecision {
    let counts = view.cluster.counts();
    let spot_target = view.n_tar + n_extra;
    let mut decision = ScalingDecision::default();

    let mut spot_ready = counts.spot_ready;
    if counts.spot > spot_target {
        let surplus = (counts.spot - spot_target) as usize;
        for r in newest_first(view.cluster, InstanceKind::Spot, None).into_iter().take(surplus) {
            if r.is_ready() {
                spot_ready -= 1;
            }
            decision.terminate.push(r.id);
        }
    } else {
        let mut occupancy = counts.spot_per_zone.clone();
        for _ in counts.spot..spot_target {
            let z = book.select_next_zone(&occupancy, view.zones);
            occupancy[z.0] += 1;
            decision.spot_launches.push(z);
        }
    }

    let od_target = target_on_demand(view.n_tar, n_extra, spot_ready);
    if counts.od < od_target {
        decision.od_launches = od_target - counts.od;
    } else if counts.od > od_target {
        let surplus = (counts.od - od_target) as usize;
        decision.terminate.extend(
            newest_first(view.cluster, InstanceKind::OnDemand, None)
                .into_iter()
                .take(surplus)
                .map(|r| r.id),
        );
    }
    decision
}
