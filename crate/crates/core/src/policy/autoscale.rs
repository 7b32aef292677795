//! Load-based autoscaler with persistence hysteresis.

use serde::{Deserialize, Serialize};

/// Autoscaler settings, in ticks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoscaleConfig {
    /// Target request rate per replica (req/s).
    pub q_tar: f64,
    pub window: usize,
    pub upscale_persistence: usize,
    pub downscale_persistence: usize,
    pub min_replicas: u32,
}

impl Default for AutoscaleConfig {
    fn default() -> Self {
        AutoscaleConfig {
            q_tar: 1.0,
            window: 6,
            upscale_persistence: 60,
            downscale_persistence: 60,
            min_replicas: 1,
        }
    }
}

/// `ceil(rate / q_tar)`, tolerant of float noise at exact multiples.
pub fn candidate_target(rate: f64, q_tar: f64) -> u32 {
    let x = rate / q_tar;
    (x - 1e-9).ceil().max(0.0) as u32
}

/// Hysteresis automaton around [`candidate_target`].
///
/// Each tick the mean rate over the last `window` ticks (or all ticks seen so
/// far, early on) yields a candidate `N_Can`. The target moves to `N_Can` on
/// the tick that completes a run of `upscale_persistence` consecutive ticks
/// with `N_Can > N_Tar` (resp. `downscale_persistence` ticks with
/// `N_Can < N_Tar`).
#[derive(Debug, Clone)]
pub struct Autoscaler {
    cfg: AutoscaleConfig,
    n_tar: u32,
    up_streak: usize,
    down_streak: usize,
    history: Vec<f64>,
}

impl Autoscaler {
    pub fn new(cfg: AutoscaleConfig, initial: u32) -> Self {
        let n_tar = initial.max(cfg.min_replicas);
        Autoscaler {
            cfg,
            n_tar,
            up_streak: 0,
            down_streak: 0,
            history: Vec::new(),
        }
    }

    pub fn target(&self) -> u32 {
        self.n_tar
    }

    /// Records the request rate of the current tick and returns the target.
    pub fn observe(&mut self, rate: f64) -> u32 {
        self.history.push(rate);
        let n_can = self.candidate();
        let (streak, other, persistence) = if n_can > self.n_tar {
            (&mut self.up_streak, &mut self.down_streak, self.cfg.upscale_persistence)
        } else if n_can < self.n_tar {
            (&mut self.down_streak, &mut self.up_streak, self.cfg.downscale_persistence)
        } else {
            self.up_streak = 0;
            self.down_streak = 0;
            return self.n_tar;
        };
        *other = 0;
        *streak += 1;
        if *streak >= persistence.max(1) {
            self.n_tar = n_can;
            self.up_streak = 0;
            self.down_streak = 0;
        }
        self.n_tar
    }

    fn candidate(&self) -> u32 {
        let w = self.cfg.window.max(1).min(self.history.len());
        let recent = &self.history[self.history.len() - w..];
        let mean = recent.iter().sum::<f64>() / w as f64;
        candidate_target(mean, self.cfg.q_tar).max(self.cfg.min_replicas)
    }
}

/// One-shot form: target after feeding `history` to a fresh autoscaler.
pub fn autoscale_target(history: &[f64], cfg: &AutoscaleConfig, current_n_tar: u32) -> u32 {
    let mut a = Autoscaler::new(cfg.clone(), current_n_tar);
    let mut n = current_n_tar;
    for &r in history {
        n = a.observe(r);
    }
    n
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(q: f64, window: usize, persist: usize) -> AutoscaleConfig {
        AutoscaleConfig {
            q_tar: q,
            window,
            upscale_persistence: persist,
            downscale_persistence: persist,
            min_replicas: 1,
        }
    }

    #[test]
    fn ceiling_of_rate_over_target() {
        assert_eq!(candidate_target(5.0, 2.0), 3);
        assert_eq!(candidate_target(4.0, 2.0), 2);
        assert_eq!(candidate_target(0.0, 2.0), 0);
    }

    #[test]
    fn short_excursion_does_not_scale() {
        let c = cfg(1.0, 1, 10);
        let mut hist = vec![5.0; 5];
        hist.extend(vec![3.0; 5]);
        assert_eq!(autoscale_target(&hist, &c, 3), 3);
    }

    #[test]
    fn step_load_upscales_after_persistence() {
        // 2 req/s -> 10 req/s at tick 100, window 6, persistence 60.
        let c = cfg(2.0, 6, 60);
        let mut a = Autoscaler::new(c, 1);
        let mut first_change = None;
        for t in 0..300 {
            let rate = if t < 100 { 2.0 } else { 10.0 };
            let n = a.observe(rate);
            if n != 1 && first_change.is_none() {
                first_change = Some((t, n));
            }
        }
        // Tick 100 is the first with the new load inside the window, so it is
        // the first tick with N_Can > 1; the 60th such tick is 159.
        assert_eq!(first_change, Some((159, 5)));
    }

    #[test]
    fn downscale_symmetric() {
        let c = cfg(1.0, 1, 3);
        assert_eq!(autoscale_target(&[1.0, 1.0, 1.0], &c, 4), 1);
        assert_eq!(autoscale_target(&[1.0, 1.0], &c, 4), 4);
    }

    proptest! {
        #[test]
        fn scale_invariance(rates in prop::collection::vec(0.0f64..50.0, 1..20),
                            q in 0.1f64..10.0,
                            factor in 0.01f64..100.0) {
            let mean = rates.iter().sum::<f64>() / rates.len() as f64;
            let scaled: f64 = rates.iter().map(|r| r * factor).sum::<f64>() / rates.len() as f64;
            prop_assert_eq!(candidate_target(mean, q), candidate_target(scaled, q * factor));
        }
    }
}
