//! Lockstep execution of one sender/receiver round over the simulated
//! channel.
//!
//! Both state machines run in a single thread against the shared virtual
//! clock, so the interleaving — including how many datagrams a sender gets
//! out before an in-flight stop reaches it — is a pure function of the
//! configuration and seed. Control messages from the receiver are delayed by
//! the simulated one-way control latency before the sender observes them.

use std::collections::VecDeque;
use std::time::Duration;

use crate::lossnet::{Delivery, SimLink, SimNet};
use crate::transport::{
    RecvMachine, RecvOutcome, SendAction, SendMachine, SendOutcome, TransportConfig, TransportError,
};
use crate::wire::ControlMessage;

#[derive(Debug)]
pub struct SimTransferOutcome {
    pub send: SendOutcome,
    pub recv: RecvOutcome,
}

/// Runs one full communication round: `data` travels from sender to receiver
/// under tolerance `tolerance`, with loss and delay injected by `link`/`net`.
pub fn run_transfer(
    data: &[u8],
    round: u64,
    tolerance: f64,
    cfg: &TransportConfig,
    net: &mut SimNet,
    link: &mut SimLink,
) -> Result<SimTransferOutcome, TransportError> {
    let mut sender = SendMachine::new(data, round, cfg);
    let mut receiver = RecvMachine::new(round, data.len(), tolerance, cfg);

    // Stragglers from earlier rounds arrive first and are rejected as stale.
    for datagram in link.take_stragglers(round) {
        receiver.on_datagram(&datagram);
    }

    // Control messages in flight toward the sender: (release time, message).
    let mut to_sender: VecDeque<(u64, ControlMessage)> = VecDeque::new();
    let start_ns = net.now_ns();
    const MAX_SIM_PASSES: u32 = 10_000;
    let mut passes = 0u32;

    loop {
        while let Some(&(release, _)) = to_sender.front() {
            if release > net.now_ns() {
                break;
            }
            let (_, msg) = to_sender.pop_front().unwrap();
            sender.on_control(&msg)?;
        }
        match sender.poll() {
            SendAction::Transmit(datagram) => {
                let seq = u32::from_be_bytes(datagram[0..4].try_into().unwrap());
                match link.send(net, round, seq, &datagram) {
                    Delivery::Delivered => {
                        if let Some(stop) = receiver.on_datagram(&datagram) {
                            to_sender.push_back((net.now_ns() + net.timing.control_ns, stop));
                        }
                    }
                    Delivery::Dropped | Delivery::Deferred => {}
                }
            }
            SendAction::Probe(probe) => {
                // A probe delimits a pass; a schedule that can never satisfy
                // the threshold (e.g. zero tolerance under deterministic
                // per-pass loss) must fail rather than spin forever.
                passes += 1;
                if passes > MAX_SIM_PASSES {
                    return Err(TransportError::ControlTimeout);
                }
                net.advance(net.timing.control_ns);
                link.mark_pass_boundary();
                if let Some(reply) = receiver.on_probe(probe.round) {
                    net.advance(net.timing.control_ns);
                    sender.on_control(&reply)?;
                } else {
                    // The probe crossed an in-flight stop; wait for it.
                    let (release, msg) = to_sender
                        .pop_front()
                        .ok_or(TransportError::ControlTimeout)?;
                    if release > net.now_ns() {
                        let gap = release - net.now_ns();
                        net.advance(gap);
                    }
                    sender.on_control(&msg)?;
                }
            }
            SendAction::WaitControl => {
                let (release, msg) = to_sender
                    .pop_front()
                    .ok_or(TransportError::ControlTimeout)?;
                if release > net.now_ns() {
                    let gap = release - net.now_ns();
                    net.advance(gap);
                }
                sender.on_control(&msg)?;
            }
            SendAction::Finished => break,
        }
    }

    let elapsed = Duration::from_nanos(net.now_ns() - start_ns);
    Ok(SimTransferOutcome {
        send: sender.outcome(elapsed),
        recv: receiver.finish(elapsed),
    })
}
