//! Available / highly-preempting zone partition used by dynamic placement.

use crate::error::{Error, Result};
use crate::trace::{Zone, ZoneIdx};

/// Partition of the enabled zones into `available` and `preempting`.
///
/// Both lists keep insertion order. A preemption (or failed launch) in a zone
/// demotes it; a replica becoming ready there promotes it back. Whenever fewer
/// than two zones remain available, every preempting zone is returned to the
/// available list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ZoneBook {
    available: Vec<ZoneIdx>,
    preempting: Vec<ZoneIdx>,
    universe: usize,
}

impl ZoneBook {
    /// All `n` zones start available.
    pub fn new(n: usize) -> Self {
        ZoneBook {
            available: (0..n).map(ZoneIdx).collect(),
            preempting: Vec::new(),
            universe: n,
        }
    }

    /// Builds a book from explicit lists; used to set up scenarios.
    pub fn from_parts(available: Vec<ZoneIdx>, preempting: Vec<ZoneIdx>) -> Result<Self> {
        let universe = available.len() + preempting.len();
        let mut all: Vec<usize> = available.iter().chain(&preempting).map(|z| z.0).collect();
        all.sort_unstable();
        if all != (0..universe).collect::<Vec<_>>() {
            return Err(Error::Validation(
                "zone book lists must partition 0..n without repeats".into(),
            ));
        }
        Ok(ZoneBook {
            available,
            preempting,
            universe,
        })
    }

    pub fn available(&self) -> &[ZoneIdx] {
        &self.available
    }

    pub fn preempting(&self) -> &[ZoneIdx] {
        &self.preempting
    }

    pub fn len(&self) -> usize {
        self.universe
    }

    pub fn is_empty(&self) -> bool {
        self.universe == 0
    }

    fn check(&self, z: ZoneIdx) -> Result<()> {
        if z.0 >= self.universe {
            return Err(Error::Lookup(format!("unknown zone index {}", z.0)));
        }
        Ok(())
    }

    pub fn handle_preemption(&mut self, z: ZoneIdx) -> Result<()> {
        self.check(z)?;
        if let Some(pos) = self.available.iter().position(|&a| a == z) {
            self.available.remove(pos);
            self.preempting.push(z);
        }
        if self.available.len() < 2 {
            self.available.append(&mut self.preempting);
        }
        Ok(())
    }

    pub fn handle_launch(&mut self, z: ZoneIdx) -> Result<()> {
        self.check(z)?;
        if let Some(pos) = self.preempting.iter().position(|&p| p == z) {
            self.preempting.remove(pos);
            self.available.push(z);
        }
        Ok(())
    }

    /// Picks the zone for the next spot launch.
    ///
    /// Candidates are the available zones ordered by current spot occupancy,
    /// then spot cost, then zone id. With at most one replica per zone this is
    /// "cheapest unoccupied available zone, else cheapest available zone".
    pub fn select_next_zone(&self, occupancy: &[u32], zones: &[Zone]) -> ZoneIdx {
        self.select_excluding(occupancy, zones, &[])
            .expect("available zone list is never empty")
    }

    /// Like [`select_next_zone`](Self::select_next_zone), skipping `exclude`.
    pub fn select_excluding(&self, occupancy: &[u32], zones: &[Zone], exclude: &[ZoneIdx]) -> Option<ZoneIdx> {
        self.available
            .iter()
            .filter(|z| !exclude.contains(z))
            .min_by(|&&a, &&b| {
                let (za, zb) = (&zones[a.0], &zones[b.0]);
                occupancy[a.0]
                    .cmp(&occupancy[b.0])
                    .then(za.spot_unit_cost.total_cmp(&zb.spot_unit_cost))
                    .then_with(|| za.id.cmp(&zb.id))
            })
            .copied()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const Z1: ZoneIdx = ZoneIdx(0);
    const Z2: ZoneIdx = ZoneIdx(1);
    const Z3: ZoneIdx = ZoneIdx(2);

    fn zones(costs: &[f64]) -> Vec<Zone> {
        costs
            .iter()
            .enumerate()
            .map(|(i, &c)| Zone::new(&format!("z{}", i + 1), "r", c, 10.0))
            .collect()
    }

    fn sorted(v: &[ZoneIdx]) -> Vec<ZoneIdx> {
        let mut v = v.to_vec();
        v.sort();
        v
    }

    #[test]
    fn preemption_moves_zone() {
        let mut b = ZoneBook::new(3);
        b.handle_preemption(Z3).unwrap();
        assert_eq!(b.available(), &[Z1, Z2]);
        assert_eq!(b.preempting(), &[Z3]);
    }

    #[test]
    fn rebalance_when_one_left() {
        let mut b = ZoneBook::from_parts(vec![Z1, Z2], vec![Z3]).unwrap();
        b.handle_preemption(Z1).unwrap();
        assert_eq!(sorted(b.available()), vec![Z1, Z2, Z3]);
        assert!(b.preempting().is_empty());
    }

    #[test]
    fn preempting_zone_again_is_noop() {
        let mut b = ZoneBook::new(4);
        b.handle_preemption(Z3).unwrap();
        let before = b.clone();
        b.handle_preemption(Z3).unwrap();
        assert_eq!(b, before);
    }

    #[test]
    fn launch_promotes_zone() {
        let mut b = ZoneBook::from_parts(vec![Z1, Z2], vec![Z3]).unwrap();
        b.handle_launch(Z3).unwrap();
        assert!(b.available().contains(&Z3));
        let before = b.clone();
        b.handle_launch(Z1).unwrap();
        assert_eq!(b, before);
    }

    #[test]
    fn alternating_returns_to_start() {
        let mut b = ZoneBook::new(3);
        let initial = b.clone();
        for _ in 0..100 {
            b.handle_preemption(Z2).unwrap();
            b.handle_launch(Z2).unwrap();
        }
        assert_eq!(sorted(b.available()), sorted(initial.available()));
        assert_eq!(b.preempting(), initial.preempting());
    }

    #[test]
    fn unknown_zone_errors() {
        let mut b = ZoneBook::new(2);
        assert!(b.handle_preemption(ZoneIdx(5)).is_err());
        assert!(b.handle_launch(ZoneIdx(2)).is_err());
    }

    #[test]
    fn select_prefers_unoccupied_then_cheap() {
        let zs = zones(&[1.0, 0.8, 1.2]);
        let b = ZoneBook::new(3);
        assert_eq!(b.select_next_zone(&[0, 1, 0], &zs), Z1);
    }

    #[test]
    fn select_falls_back_to_full_available_list() {
        let zs = zones(&[1.0, 0.8, 1.2]);
        let b = ZoneBook::from_parts(vec![Z2], vec![Z1, Z3]).unwrap();
        assert_eq!(b.select_next_zone(&[0, 1, 0], &zs), Z2);
    }

    #[test]
    fn select_breaks_ties_by_id() {
        let zs = zones(&[1.0, 1.0]);
        let b = ZoneBook::from_parts(vec![Z2, Z1], vec![]).unwrap();
        assert_eq!(b.select_next_zone(&[0, 0], &zs), Z1);
    }
}
