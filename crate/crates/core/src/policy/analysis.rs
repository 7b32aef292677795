//! Expected spot preemption counts for static and round-robin placement.
//!
//! `n` replicas run for `T` ticks over `N` zones; zone `i` preempts each of
//! its replicas as a Poisson process with rate `λ_i`, and a preempted replica
//! is relaunched immediately. Static placement keeps every replica in its
//! zone. Round robin relaunches it in the next zone.

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{indexed_substream, streams};

fn check_rates(lambdas: &[f64], strict: bool) -> Result<()> {
    if lambdas.is_empty() {
        return Err(Error::Domain("at least one zone rate is required".into()));
    }
    for (i, &l) in lambdas.iter().enumerate() {
        let bad = if strict { !(l > 0.0) } else { !(l >= 0.0) };
        if bad || !l.is_finite() {
            return Err(Error::Domain(format!(
                "rate {i} is {l}; rates must be {} and finite",
                if strict { "positive" } else { "non-negative" }
            )));
        }
    }
    Ok(())
}

/// `n · T · mean(λ)`.
pub fn expected_preemptions_static(n: u32, lambdas: &[f64], horizon: f64) -> Result<f64> {
    check_rates(lambdas, false)?;
    let mean = lambdas.iter().sum::<f64>() / lambdas.len() as f64;
    Ok(f64::from(n) * horizon * mean)
}

/// `n · T · N / Σ(1/λ_i)`. Undefined when any rate is zero: a replica
/// relaunched into that zone would never move again.
pub fn expected_preemptions_round_robin(n: u32, lambdas: &[f64], horizon: f64) -> Result<f64> {
    check_rates(lambdas, true)?;
    let inv: f64 = lambdas.iter().map(|l| 1.0 / l).sum();
    Ok(f64::from(n) * horizon * lambdas.len() as f64 / inv)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Placement {
    Static,
    RoundRobin,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    /// Standard error of the mean.
    pub stderr: f64,
    pub runs: usize,
}

fn exp_sample<R: Rng + ?Sized>(rng: &mut R, rate: f64) -> f64 {
    if rate == 0.0 {
        return f64::INFINITY;
    }
    -(1.0 - rng.random::<f64>()).ln() / rate
}

/// One run: total preemptions of `n` replicas over `[0, horizon)`.
///
/// Static replica `j` lives in zone `j mod N`. A round-robin replica starts
/// in a zone drawn with probability proportional to `1/λ_i`, which is where a
/// long-running replica is found at a random instant.
pub fn simulate_preemptions<R: Rng + ?Sized>(
    placement: Placement,
    n: u32,
    lambdas: &[f64],
    horizon: f64,
    rng: &mut R,
) -> Result<u64> {
    check_rates(lambdas, placement == Placement::RoundRobin)?;
    let zones = lambdas.len();
    let inv_total: f64 = lambdas.iter().map(|l| 1.0 / l).sum();
    let mut total = 0;
    for j in 0..n as usize {
        let mut zone = match placement {
            Placement::Static => j % zones,
            Placement::RoundRobin => {
                let mut u = rng.random::<f64>() * inv_total;
                let mut z = zones - 1;
                for (i, l) in lambdas.iter().enumerate() {
                    u -= 1.0 / l;
                    if u < 0.0 {
                        z = i;
                        break;
                    }
                }
                z
            }
        };
        let mut clock = 0.0;
        loop {
            clock += exp_sample(rng, lambdas[zone]);
            if clock >= horizon {
                break;
            }
            total += 1;
            if placement == Placement::RoundRobin {
                zone = (zone + 1) % zones;
            }
        }
    }
    Ok(total)
}

/// Mean preemption count over `runs` independent runs derived from `seed`.
pub fn monte_carlo_preemptions(
    placement: Placement,
    n: u32,
    lambdas: &[f64],
    horizon: f64,
    runs: usize,
    seed: u64,
) -> Result<Estimate> {
    if runs == 0 {
        return Err(Error::Domain("need at least one run".into()));
    }
    let mut samples = Vec::with_capacity(runs);
    for i in 0..runs {
        let mut rng = indexed_substream(seed, streams::ANALYSIS, i as u64);
        samples.push(simulate_preemptions(placement, n, lambdas, horizon, &mut rng)? as f64);
    }
    let mean = samples.iter().sum::<f64>() / runs as f64;
    let var = if runs > 1 {
        samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (runs - 1) as f64
    } else {
        0.0
    };
    Ok(Estimate {
        mean,
        stderr: (var / runs as f64).sqrt(),
        runs,
    })
}
