//! Trace-driven simulation of model-serving replicas on a mix of spot and
//! on-demand instances spread across zones.
//!
//! The pieces:
//!
//! * [`trace`] replays or generates per-zone spot capacity.
//! * [`cluster`] runs the replica lifecycle and bills it.
//! * [`policy`] holds SpotHedge and the baseline placement policies.
//! * [`omniscient`] solves the offline cost-optimal schedule exactly.
//! * [`workload`] pushes requests through whatever replicas were ready.
//! * [`metrics`] turns a run into availability, cost and latency figures.
//! * [`experiment`] wires everything together from a [`config::Config`].
//!
//! ```
//! use spothedge::trace::{CapacityTrace, Zone};
//! use spothedge::experiment::{run_policy, RunParams};
//! use spothedge::policy::PolicyKind;
//!
//! let zones = vec![
//!     Zone::new("aws:us-east-1a", "us-east-1", 1.0, 3.0),
//!     Zone::new("aws:us-west-2a", "us-west-2", 1.0, 3.0),
//! ];
//! let trace = CapacityTrace::new(zones, 10, vec![vec![4; 60], vec![4; 60]]).unwrap();
//! let run = run_policy(&trace, PolicyKind::SpotHedge, &RunParams::fixed(2)).unwrap();
//! assert!(run.availability() > 0.5);
//! ```

pub mod cluster;
pub mod config;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod omniscient;
pub mod policy;
pub mod rng;
pub mod trace;
pub mod workload;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/intro.md")]
    mod intro {}
    #[doc = include_str!("../../../book/src/traces.md")]
    mod traces {}
    #[doc = include_str!("../../../book/src/policies.md")]
    mod policies {}
    #[doc = include_str!("../../../book/src/optimum.md")]
    mod optimum {}
    #[doc = include_str!("../../../book/src/workload.md")]
    mod workload {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
