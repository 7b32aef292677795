use proptest::prelude::*;

use spothedge::cluster::ReplicaId;
use spothedge::workload::{
    gen_workload, simulate_requests, Balancer, LbMode, ReplicaWindow, RequestStatus, ServeConfig,
    ServiceTime, WorkloadSpec,
};

#[test]
fn poisson_counts_average_to_rate_times_horizon() {
    let spec = WorkloadSpec::poisson(0.15);
    let total: usize = (0..100)
        .map(|seed| gen_workload(&spec, 1e5, seed, None).unwrap().len())
        .sum();
    let mean = total as f64 / 100.0;
    assert!((mean - 15_000.0).abs() / 15_000.0 < 0.02, "{mean}");
}

#[test]
fn arrivals_sorted_and_inside_horizon() {
    let reqs = gen_workload(&WorkloadSpec::poisson(2.0), 500.0, 4, None).unwrap();
    assert!(reqs.windows(2).all(|w| w[0].arrival_s <= w[1].arrival_s));
    assert!(reqs.iter().all(|r| (0.0..500.0).contains(&r.arrival_s) && r.service_s > 0.0));
}

/// Replays least-load routing with explicit in-flight bookkeeping: request k
/// arrives at `k * gap` and holds its replica for `service` seconds.
fn replay(replicas: u64, gap: f64, service: f64, n: usize) -> (usize, Vec<ReplicaId>) {
    let mut picks = Vec::new();
    let mut b = Balancer::new(LbMode::LeastLoad);
    let mut busy_until: Vec<Vec<f64>> = vec![Vec::new(); replicas as usize];
    let mut worst = 0;
    for k in 0..n {
        let now = k as f64 * gap;
        for q in &mut busy_until {
            q.retain(|&end| end > now);
        }
        let ready: Vec<(ReplicaId, usize)> = busy_until
            .iter()
            .enumerate()
            .map(|(i, q)| (ReplicaId(i as u64 + 1), q.len()))
            .collect();
        let pick = b.route(&ready).unwrap();
        picks.push(pick);
        busy_until[(pick.0 - 1) as usize].push(now + service);
        let loads: Vec<usize> = busy_until.iter().map(Vec::len).collect();
        worst = worst.max(loads.iter().max().unwrap() - loads.iter().min().unwrap());
    }
    (worst, picks)
}

proptest! {
    #[test]
    fn least_load_stays_balanced(replicas in 1u64..8, gap in 0.1f64..5.0, service in 0.1f64..40.0) {
        prop_assert!(replay(replicas, gap, service, 300).0 <= 1);
    }
}

#[test]
fn simulator_routes_like_the_replay() {
    let windows: Vec<ReplicaWindow> = (1..=4)
        .map(|i| ReplicaWindow {
            replica: ReplicaId(i),
            ready_s: 0.0,
            end: None,
        })
        .collect();
    let spec = WorkloadSpec {
        service: ServiceTime::Deterministic { seconds: 7.0 },
        ..WorkloadSpec::poisson(0.5)
    };
    let mut reqs = gen_workload(&spec, 1000.0, 1, None).unwrap();
    for (k, r) in reqs.iter_mut().enumerate() {
        r.arrival_s = k as f64 * 1.5;
    }
    let out = simulate_requests(&windows, &reqs, &ServeConfig::default());
    let (_, picks) = replay(4, 1.5, 7.0, reqs.len());
    for (o, pick) in out.iter().zip(&picks) {
        assert_eq!(o.status, RequestStatus::Completed);
        assert!((o.latency_s - 7.0).abs() < 1e-9);
        assert_eq!(o.servers_visited, vec![*pick]);
    }
}
