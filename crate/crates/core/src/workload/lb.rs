use serde::{Deserialize, Serialize};

use crate::cluster::ReplicaId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LbMode {
    RoundRobin,
    #[default]
    LeastLoad,
}

/// Picks a replica for each request among the ready ones.
#[derive(Debug, Clone)]
pub struct Balancer {
    mode: LbMode,
    last: Option<ReplicaId>,
}

impl Balancer {
    pub fn new(mode: LbMode) -> Self {
        Balancer { mode, last: None }
    }

    /// `ready` lists `(replica, in-flight + queued)` sorted by replica id.
    /// Round robin takes the first id after the previous pick, wrapping;
    /// least load takes the smallest load, lowest id on ties.
    pub fn route(&mut self, ready: &[(ReplicaId, usize)]) -> Option<ReplicaId> {
        let pick = match self.mode {
            LbMode::RoundRobin => ready
                .iter()
                .find(|(id, _)| self.last.is_none_or(|l| *id > l))
                .or(ready.first())
                .map(|&(id, _)| id),
            LbMode::LeastLoad => ready
                .iter()
                .min_by_key(|&&(id, load)| (load, id))
                .map(|&(id, _)| id),
        }?;
        self.last = Some(pick);
        Some(pick)
    }
}
