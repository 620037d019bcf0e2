//! Dynamic bounded-loss gradient transport for data-parallel training.
//!
//! Gradients tolerate bounded loss: instead of retransmitting until every
//! packet arrives, the receiver accepts a round once at least a `1 - p`
//! fraction of its chunks landed, zero-filling the rest. The tolerance `p`
//! is phase-aware — a change-rate automaton watches the reduced gradient's
//! norm and clamps `p` down to `p_low` during critical learning regimes,
//! relaxing to `p_high` when training plateaus. Under transient microbursts
//! of heavy loss this bounds transfer latency instead of letting reliable
//! delivery stall the step.
//!
//! The crate provides:
//! - [`wire`]: datagram/control/handshake encodings;
//! - [`transport`]: sans-io sender/receiver state machines plus blocking
//!   drivers over pluggable channels;
//! - [`lossnet`] and [`sim`]: a deterministic lossy-network simulator with a
//!   virtual clock, scripted loss bursts, and stragglers;
//! - [`clr`]: the critical-regime tolerance schedule;
//! - [`allreduce`]: the centralized gather/mean/broadcast harness, both
//!   in-process ([`allreduce::SimCluster`]) and over real sockets ([`node`]);
//! - [`workload`]: synthetic norm-profiled gradients and a small softmax
//!   classifier for end-to-end convergence checks;
//! - [`metrics`] and [`runner`]: per-round records, latency/pass summaries,
//!   CSV artifacts, and canned experiment presets ([`config`]).
//!
//! Runnable walkthroughs of each capability live in `examples/`.

pub mod allreduce;
pub mod clr;
pub mod config;
pub mod lossnet;
pub mod metrics;
pub mod node;
pub mod rng;
pub mod runner;
pub mod sim;
pub mod socket;
pub mod transport;
pub mod wire;
pub mod workload;

pub use allreduce::SimCluster;
pub use clr::{ClrConfig, ToleranceSchedule};
pub use config::{preset, ExperimentConfig};
pub use runner::run;
