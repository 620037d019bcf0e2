//! Pluggable unreliable-channel model with a deterministic in-process
//! backend.
//!
//! The simulated backend drops datagrams according to a [`LossSchedule`]:
//! a base rate every round, overridden by burst entries for single rounds.
//! Two loss models are available:
//!
//! - [`LossModel::Iid`]: each datagram is dropped independently with the
//!   effective rate, decided by the counter-based generator in [`crate::rng`]
//!   keyed by (seed ^ stream, round, datagram index). Identical inputs yield
//!   identical drop decisions on every platform.
//! - [`LossModel::PerPassRate`]: of the first k datagrams in a transmission
//!   pass, exactly ceil(k * rate) are dropped (drop the i-th datagram iff
//!   ceil((i+1) * rate) > ceil(i * rate)). This realizes an exact per-pass
//!   loss rate, which makes retransmission pass counts match the analytic
//!   model min{t : rate^t <= tolerance} instead of fluctuating around it.
//!
//! Control traffic never passes through this module; the reliable channel is
//! lossless. The real-socket backend (see [`crate::socket`]) performs no
//! artificial loss — schedules are simulator-only.

use std::collections::HashMap;

use crate::rng::{mix3, unit_f64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossModel {
    /// Independent Bernoulli drop per datagram.
    Iid,
    /// Exact loss rate per transmission pass.
    PerPassRate,
}

/// Scripted per-round loss rates.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct LossSchedule {
    /// Rate applied every round.
    pub base_loss: f64,
    /// (round, rate) overrides lasting exactly one round each.
    pub bursts: Vec<(u64, f64)>,
    pub seed: u64,
    pub model: LossModel,
}

impl LossSchedule {
    pub fn lossless(seed: u64) -> Self {
        Self {
            base_loss: 0.0,
            bursts: Vec::new(),
            seed,
            model: LossModel::PerPassRate,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..1.0).contains(&self.base_loss) {
            return Err(format!("base_loss {} outside [0, 1)", self.base_loss));
        }
        let mut seen = std::collections::HashSet::new();
        for &(round, rate) in &self.bursts {
            if !(0.0..1.0).contains(&rate) {
                return Err(format!("burst rate {rate} outside [0, 1)"));
            }
            if !seen.insert(round) {
                return Err(format!("duplicate burst round {round}"));
            }
        }
        Ok(())
    }
}

/// Loss rate in effect for a round: a matching burst entry wins, otherwise
/// the base rate.
pub fn effective_loss(schedule: &LossSchedule, round: u64) -> f64 {
    schedule
        .bursts
        .iter()
        .find(|(r, _)| *r == round)
        .map(|(_, rate)| *rate)
        .unwrap_or(schedule.base_loss)
}

/// Per-datagram virtual-time costs and artificial delay.
#[derive(Debug, Clone, Default, serde::Serialize, serde::Deserialize)]
pub struct DelayModel {
    /// Fixed extra delay per datagram, nanoseconds.
    pub fixed_delay_ns: u64,
    /// Max additional uniform delay per datagram, nanoseconds.
    pub jitter_ns: u64,
    /// (round, seq) datagrams held back until the receiver has moved on to a
    /// later round, forcing a stale arrival.
    pub stragglers: Vec<(u64, u32)>,
}

/// Virtual-time costs of the simulated network.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SimTiming {
    /// Serialization + propagation cost per data datagram.
    pub datagram_ns: u64,
    /// One-way latency of a control message.
    pub control_ns: u64,
}

impl Default for SimTiming {
    fn default() -> Self {
        Self {
            datagram_ns: 20_000,
            control_ns: 500_000,
        }
    }
}

/// Shared state of the simulated network: schedule, timing, and the virtual
/// clock all links advance.
#[derive(Debug, Clone)]
pub struct SimNet {
    pub schedule: LossSchedule,
    pub delay: DelayModel,
    pub timing: SimTiming,
    clock_ns: u64,
    burst_index: HashMap<u64, f64>,
}

/// What happened to a datagram handed to the simulated channel.
#[derive(Debug, PartialEq, Eq)]
pub enum Delivery {
    Delivered,
    Dropped,
    /// Held back; surfaces as a stale arrival in a later round.
    Deferred,
}

impl SimNet {
    pub fn new(schedule: LossSchedule, delay: DelayModel, timing: SimTiming) -> Self {
        let burst_index = schedule.bursts.iter().copied().collect();
        Self {
            schedule,
            delay,
            timing,
            clock_ns: 0,
            burst_index,
        }
    }

    pub fn now_ns(&self) -> u64 {
        self.clock_ns
    }

    pub fn advance(&mut self, ns: u64) {
        self.clock_ns += ns;
    }

    fn rate_for(&self, round: u64) -> f64 {
        self.burst_index
            .get(&round)
            .copied()
            .unwrap_or(self.schedule.base_loss)
    }
}

/// One direction of one simulated link: per-round datagram counters plus the
/// deferred-straggler queue.
#[derive(Debug, Default)]
pub struct SimLink {
    /// Distinguishes the drop stream of this link from every other link.
    pub stream_id: u64,
    round: u64,
    round_counter: u64,
    pass_counter: u64,
    deferred: Vec<(u64, Vec<u8>)>, // (origin round, datagram)
}

impl SimLink {
    pub fn new(stream_id: u64) -> Self {
        Self {
            stream_id,
            ..Self::default()
        }
    }

    fn roll_round(&mut self, round: u64) {
        if round != self.round {
            self.round = round;
            self.round_counter = 0;
            self.pass_counter = 0;
        }
    }

    /// Marks a transmission-pass boundary (the sender just probed).
    pub fn mark_pass_boundary(&mut self) {
        self.pass_counter = 0;
    }

    /// Decides the fate of a datagram sent in `round` (seq used only for
    /// straggler matching) and advances the virtual clock.
    pub fn send(&mut self, net: &mut SimNet, round: u64, seq: u32, datagram: &[u8]) -> Delivery {
        self.roll_round(round);
        let mut cost = net.timing.datagram_ns + net.delay.fixed_delay_ns;
        if net.delay.jitter_ns > 0 {
            let key = net.schedule.seed ^ self.stream_id.wrapping_mul(0x5851_f42d_4c95_7f2d);
            let u = unit_f64(mix3(key, round.wrapping_add(1 << 32), self.round_counter));
            cost += (u * net.delay.jitter_ns as f64) as u64;
        }
        net.advance(cost);

        let idx = self.round_counter;
        self.round_counter += 1;
        let pass_idx = self.pass_counter;
        self.pass_counter += 1;

        if net
            .delay
            .stragglers
            .iter()
            .any(|&(r, s)| r == round && s == seq)
        {
            self.deferred.push((round, datagram.to_vec()));
            return Delivery::Deferred;
        }

        let rate = net.rate_for(round);
        if rate <= 0.0 {
            return Delivery::Delivered;
        }
        let dropped = match net.schedule.model {
            LossModel::Iid => {
                let key = net.schedule.seed ^ self.stream_id.wrapping_mul(0x5851_f42d_4c95_7f2d);
                unit_f64(mix3(key, round, idx)) < rate
            }
            LossModel::PerPassRate => {
                let drops_before = ((pass_idx as f64) * rate - 1e-9).ceil().max(0.0);
                let drops_after = ((pass_idx as f64 + 1.0) * rate - 1e-9).ceil();
                drops_after > drops_before
            }
        };
        if dropped {
            Delivery::Dropped
        } else {
            Delivery::Delivered
        }
    }

    /// Datagrams from rounds before `current_round` whose delay has elapsed;
    /// they arrive now, stale.
    pub fn take_stragglers(&mut self, current_round: u64) -> Vec<Vec<u8>> {
        let mut out = Vec::new();
        self.deferred.retain(|(origin, datagram)| {
            if *origin < current_round {
                out.push(datagram.clone());
                false
            } else {
                true
            }
        });
        out
    }
}
