//! Online scaling policies and the closed-form preemption analysis.
//!
//! A policy sees the cluster once per tick through a [`PolicyView`], returns a
//! [`ScalingDecision`], and is then shown the events the decision produced
//! (failed launches in particular) together with the next tick's readiness
//! and preemption events.

pub mod analysis;
pub mod autoscale;
pub mod baselines;
pub mod spothedge;
pub mod zonebook;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cluster::{ClusterState, Event, InstanceKind, Replica, ReplicaId};
use crate::error::Error;
use crate::trace::{Zone, ZoneIdx};

pub use analysis::{expected_preemptions_round_robin, expected_preemptions_static};
pub use autoscale::{autoscale_target, AutoscaleConfig, Autoscaler};
pub use baselines::{even_spread_targets, EvenSpread, OdOnly, RoundRobin, StaticMixture};
pub use spothedge::{spothedge_step, SpotHedge};
pub use zonebook::ZoneBook;

/// Default spot overprovisioning.
pub const DEFAULT_N_EXTRA: u32 = 1;

/// What a policy asks the cluster to do this tick.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ScalingDecision {
    /// One entry per spot launch, naming the target zone.
    pub spot_launches: Vec<ZoneIdx>,
    pub od_launches: u32,
    pub terminate: Vec<ReplicaId>,
}

impl ScalingDecision {
    pub fn is_empty(&self) -> bool {
        self.spot_launches.is_empty() && self.od_launches == 0 && self.terminate.is_empty()
    }
}

/// Read-only context handed to a policy each tick.
pub struct PolicyView<'a> {
    pub t: usize,
    pub n_tar: u32,
    pub zones: &'a [Zone],
    pub cluster: &'a ClusterState,
}

pub trait Policy: Send {
    fn name(&self) -> &'static str;

    fn decide(&mut self, view: &PolicyView<'_>) -> ScalingDecision;

    fn observe(&mut self, _events: &[Event]) {}

    /// Replacement launches after spot launches failed within the tick.
    /// `refused` holds every zone that refused a spot launch this tick.
    fn retry(&mut self, _view: &PolicyView<'_>, _refused: &[ZoneIdx]) -> ScalingDecision {
        ScalingDecision::default()
    }
}

/// Dynamic fallback target: `max(0, min(n_tar, n_tar + n_extra - s_r))`.
pub fn target_on_demand(n_tar: u32, n_extra: u32, spot_ready: u32) -> u32 {
    let shortfall = (n_tar + n_extra).saturating_sub(spot_ready);
    n_tar.min(shortfall)
}

/// Live replicas of `kind`, newest launch first (ties: higher id first).
pub(crate) fn newest_first<'a>(
    cluster: &'a ClusterState,
    kind: InstanceKind,
    zone: Option<ZoneIdx>,
) -> Vec<&'a Replica> {
    let mut v: Vec<&Replica> = cluster
        .live()
        .filter(|r| r.kind == kind && zone.is_none_or(|z| r.zone == z))
        .collect();
    v.sort_by(|a, b| b.launched_at.cmp(&a.launched_at).then(b.id.cmp(&a.id)));
    v
}

/// Policies selectable from configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PolicyKind {
    #[serde(rename = "spothedge")]
    SpotHedge,
    #[serde(rename = "even_spread")]
    EvenSpread,
    #[serde(rename = "round_robin")]
    RoundRobin,
    #[serde(rename = "static_mixture")]
    StaticMixture,
    #[serde(rename = "od_only")]
    OdOnly,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 5] = [
        PolicyKind::SpotHedge,
        PolicyKind::EvenSpread,
        PolicyKind::RoundRobin,
        PolicyKind::StaticMixture,
        PolicyKind::OdOnly,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::SpotHedge => "spothedge",
            PolicyKind::EvenSpread => "even_spread",
            PolicyKind::RoundRobin => "round_robin",
            PolicyKind::StaticMixture => "static_mixture",
            PolicyKind::OdOnly => "od_only",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| {
                Error::config(
                    "policy.name",
                    format!("unknown policy `{s}`; expected one of spothedge, even_spread, round_robin, static_mixture, od_only"),
                )
            })
    }
}

/// Knobs shared by the policy constructors.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub n_extra: u32,
    pub spot_pool: u32,
    pub od_pool: u32,
}

pub fn build_policy(kind: PolicyKind, params: &PolicyParams, num_zones: usize) -> Box<dyn Policy> {
    match kind {
        PolicyKind::SpotHedge => Box::new(SpotHedge::new(num_zones, params.n_extra)),
        PolicyKind::EvenSpread => Box::new(EvenSpread::new(params.n_extra)),
        PolicyKind::RoundRobin => Box::new(RoundRobin::new(num_zones, params.n_extra)),
        PolicyKind::StaticMixture => Box::new(StaticMixture::new(params.spot_pool, params.od_pool)),
        PolicyKind::OdOnly => Box::new(OdOnly),
    }
}
