//! Sender and receiver state machines for bounded-loss transmission.
//!
//! A round moves a gradient buffer over the unreliable data channel in
//! passes. After each pass the sender probes over the reliable channel; the
//! receiver answers with a bitmap of delivered chunks (driving selective
//! retransmission) or a stop once the loss-tolerance threshold is met. The
//! receiver also stops proactively the moment the threshold is satisfied, and
//! the sender reacts to a stop within at most one chunk transmission.
//!
//! The machines are transport-agnostic: blocking drivers ([`dblp_send`],
//! [`dblp_recv`]) run them over real sockets, and the deterministic simulator
//! ([`crate::sim`]) drives both ends in lockstep.

use std::collections::VecDeque;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::rng::{mix3, CounterRng};
use crate::wire::{
    chunk_count, decode_chunk, encode_chunk, ControlKind, ControlMessage, GradientChunk,
    MetadataAnnouncement, WireError, DEFAULT_MAX_PAYLOAD,
};

#[derive(Debug, Error)]
pub enum TransportError {
    /// No bitmap/stop (sender) or no chunk/probe (receiver) arrived in time.
    #[error("control timeout: peer unresponsive")]
    ControlTimeout,
    #[error("channel closed: {0}")]
    ChannelClosed(String),
    /// Buffer size disagrees with the handshaken layout.
    #[error("length mismatch: expected {expected} bytes, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Per-round received/missing state, 1 bit per chunk.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChunkBitmap {
    total: u32,
    bytes: Vec<u8>,
    popcount: u32,
}

impl ChunkBitmap {
    pub fn new(total: u32) -> Self {
        Self {
            total,
            bytes: vec![0u8; (total as usize).div_ceil(8)],
            popcount: 0,
        }
    }

    /// Rebuilds from wire bytes (LSB-first within each byte).
    pub fn from_bytes(total: u32, bytes: &[u8]) -> Result<Self, WireError> {
        let expect = (total as usize).div_ceil(8);
        if bytes.len() != expect {
            return Err(WireError::BadMetadata(format!(
                "bitmap length {} for {} chunks, expected {}",
                bytes.len(),
                total,
                expect
            )));
        }
        let mut bm = Self::new(total);
        for seq in 0..total {
            if bytes[seq as usize / 8] & (1 << (seq % 8)) != 0 {
                bm.set(seq);
            }
        }
        Ok(bm)
    }

    /// Marks a chunk received. Returns false if the bit was already set;
    /// duplicates are idempotent.
    pub fn set(&mut self, seq: u32) -> bool {
        assert!(seq < self.total);
        let mask = 1u8 << (seq % 8);
        let byte = &mut self.bytes[seq as usize / 8];
        if *byte & mask != 0 {
            return false;
        }
        *byte |= mask;
        self.popcount += 1;
        true
    }

    pub fn get(&self, seq: u32) -> bool {
        self.bytes[seq as usize / 8] & (1 << (seq % 8)) != 0
    }

    pub fn total(&self) -> u32 {
        self.total
    }

    pub fn popcount(&self) -> u32 {
        self.popcount
    }

    pub fn missing(&self) -> u32 {
        self.total - self.popcount
    }

    /// Missing seqs in ascending order.
    pub fn missing_seqs(&self) -> Vec<u32> {
        (0..self.total).filter(|&s| !self.get(s)).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.bytes.clone()
    }
}

/// Fraction of chunks still missing, in [0, 1].
pub fn bitmap_missing_ratio(bitmap: &ChunkBitmap) -> f64 {
    assert!(bitmap.total() > 0);
    bitmap.missing() as f64 / bitmap.total() as f64
}

/// Chunks the receiver may leave missing under tolerance `p`: floor(p * total),
/// i.e. the largest missing count whose ratio is still <= p. The small epsilon
/// absorbs binary-fraction rounding in `p * total`.
pub fn missing_allowed(total: u32, tolerance: f64) -> u32 {
    debug_assert!((0.0..1.0).contains(&tolerance));
    (tolerance * total as f64 + 1e-9).floor() as u32
}

/// Received chunks needed to satisfy tolerance `p`: ceil((1 - p) * total).
pub fn required_chunks(total: u32, tolerance: f64) -> u32 {
    total - missing_allowed(total, tolerance)
}

#[derive(Debug, Clone)]
pub struct TransportConfig {
    /// Chunk payload size; header + payload must fit the datagram budget.
    pub max_payload: usize,
    /// Send chunks in a per-(round, pass) pseudorandom order so bounded loss
    /// spreads uniformly over the buffer instead of truncating its tail.
    pub shuffle_sends: bool,
    pub shuffle_seed: u64,
    pub probe_timeout: Duration,
    pub max_probe_retries: u32,
    /// Receiver inactivity limit before the round aborts.
    pub recv_timeout: Duration,
}

impl Default for TransportConfig {
    fn default() -> Self {
        Self {
            max_payload: DEFAULT_MAX_PAYLOAD,
            shuffle_sends: true,
            shuffle_seed: 0,
            probe_timeout: Duration::from_millis(200),
            max_probe_retries: 25,
            recv_timeout: Duration::from_secs(5),
        }
    }
}

/// What the sender wants to do next.
#[derive(Debug, PartialEq, Eq)]
pub enum SendAction {
    /// Transmit this datagram on the data channel.
    Transmit(Vec<u8>),
    /// Pass complete: send a probe, then wait for bitmap or stop.
    Probe(ControlMessage),
    /// Probe in flight; block on the control channel.
    WaitControl,
    Finished,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SendOutcome {
    /// Full or partial transmission sweeps performed.
    pub passes: u32,
    /// Stop arrived while chunks were still planned for the current pass.
    pub early_stop: bool,
    pub datagrams_sent: u64,
    pub elapsed: Duration,
}

/// Sender side of one communication round.
#[derive(Debug)]
pub struct SendMachine {
    round: u64,
    chunks: Vec<GradientChunk>,
    received: ChunkBitmap,
    plan: VecDeque<u32>,
    passes: u32,
    probing: bool,
    done: Option<bool>,
    datagrams_sent: u64,
    shuffle: Option<u64>,
}

impl SendMachine {
    pub fn new(data: &[u8], round: u64, cfg: &TransportConfig) -> Self {
        let chunks = crate::wire::chunk_buffer(data, round, cfg.max_payload);
        let total = chunks.len() as u32;
        let shuffle = cfg.shuffle_sends.then_some(cfg.shuffle_seed);
        let mut m = Self {
            round,
            chunks,
            received: ChunkBitmap::new(total),
            plan: VecDeque::new(),
            passes: 1,
            probing: false,
            done: None,
            datagrams_sent: 0,
            shuffle,
        };
        m.plan = m.plan_pass((0..total).collect());
        m
    }

    fn plan_pass(&self, mut seqs: Vec<u32>) -> VecDeque<u32> {
        if let Some(seed) = self.shuffle {
            let key = mix3(seed, self.round, self.passes as u64);
            CounterRng::new(key, 0).shuffle(&mut seqs);
        }
        seqs.into()
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn total_chunks(&self) -> u32 {
        self.chunks.len() as u32
    }

    pub fn passes(&self) -> u32 {
        self.passes
    }

    pub fn datagrams_sent(&self) -> u64 {
        self.datagrams_sent
    }

    pub fn is_done(&self) -> bool {
        self.done.is_some()
    }

    /// Seqs still planned for the current pass (visible for testing).
    pub fn planned(&self) -> impl Iterator<Item = u32> + '_ {
        self.plan.iter().copied()
    }

    pub fn poll(&mut self) -> SendAction {
        if let Some(early) = self.done {
            let _ = early;
            return SendAction::Finished;
        }
        if let Some(seq) = self.plan.pop_front() {
            self.datagrams_sent += 1;
            return SendAction::Transmit(encode_chunk(&self.chunks[seq as usize]));
        }
        if !self.probing {
            self.probing = true;
            return SendAction::Probe(ControlMessage::probe(self.round));
        }
        SendAction::WaitControl
    }

    /// Feeds a control message. Messages for other rounds are discarded.
    pub fn on_control(&mut self, msg: &ControlMessage) -> Result<(), TransportError> {
        if msg.round != self.round || self.done.is_some() {
            return Ok(());
        }
        match msg.kind {
            ControlKind::Stop => {
                // Mid-pass stop (or stop before the probe round-trip finished)
                // is the early-stop case.
                self.done = Some(!self.plan.is_empty());
            }
            ControlKind::Bitmap => {
                let bits = msg.bitmap.as_deref().unwrap_or(&[]);
                let peer = ChunkBitmap::from_bytes(self.total_chunks(), bits)?;
                for seq in 0..self.total_chunks() {
                    if peer.get(seq) && !self.received.get(seq) {
                        self.received.set(seq);
                    }
                }
                self.passes += 1;
                self.plan = self.plan_pass(self.received.missing_seqs());
                self.probing = false;
            }
            ControlKind::Probe => {}
        }
        Ok(())
    }

    pub fn outcome(&self, elapsed: Duration) -> SendOutcome {
        SendOutcome {
            passes: self.passes,
            early_stop: self.done.unwrap_or(false),
            datagrams_sent: self.datagrams_sent,
            elapsed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecvOutcome {
    /// Zero-fill-reconstructed gradient buffer.
    pub buffer: Vec<u8>,
    pub received_ratio: f64,
    pub chunks_total: u32,
    pub chunks_received: u32,
    pub stale_dropped: u64,
    pub elapsed: Duration,
}

/// Receiver side of one communication round.
#[derive(Debug)]
pub struct RecvMachine {
    round: u64,
    tolerance: f64,
    required: u32,
    bitmap: ChunkBitmap,
    buffer: Vec<u8>,
    max_payload: usize,
    stop_sent: bool,
    stale_dropped: u64,
}

impl RecvMachine {
    pub fn new(round: u64, buffer_len: usize, tolerance: f64, cfg: &TransportConfig) -> Self {
        assert!(
            (0.0..1.0).contains(&tolerance),
            "tolerance must be in [0, 1)"
        );
        let total = chunk_count(buffer_len, cfg.max_payload) as u32;
        assert!(total > 0, "empty gradient buffer");
        Self {
            round,
            tolerance,
            required: required_chunks(total, tolerance),
            bitmap: ChunkBitmap::new(total),
            buffer: vec![0u8; buffer_len],
            max_payload: cfg.max_payload,
            stop_sent: false,
            stale_dropped: 0,
        }
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn bitmap(&self) -> &ChunkBitmap {
        &self.bitmap
    }

    pub fn satisfied(&self) -> bool {
        self.bitmap.popcount() >= self.required
    }

    /// Round is over once the stop has gone out.
    pub fn is_done(&self) -> bool {
        self.stop_sent
    }

    pub fn stale_dropped(&self) -> u64 {
        self.stale_dropped
    }

    /// Handles one datagram. Malformed packets and packets from other rounds
    /// are dropped. Returns a proactive stop the moment the threshold is met.
    pub fn on_datagram(&mut self, datagram: &[u8]) -> Option<ControlMessage> {
        let chunk = match decode_chunk(datagram) {
            Ok(c) => c,
            Err(_) => return None, // corrupt datagram, drop
        };
        if chunk.header.round != self.round {
            self.stale_dropped += 1;
            return None;
        }
        let seq = chunk.header.seq;
        if seq >= self.bitmap.total() {
            return None;
        }
        let offset = seq as usize * self.max_payload;
        if offset + chunk.payload.len() > self.buffer.len() {
            return None;
        }
        if self.bitmap.set(seq) {
            self.buffer[offset..offset + chunk.payload.len()].copy_from_slice(&chunk.payload);
        }
        if !self.stop_sent && self.satisfied() {
            self.stop_sent = true;
            return Some(ControlMessage::stop(self.round));
        }
        None
    }

    /// Answers a probe: stop if the threshold is satisfied, else the current
    /// bitmap. A probe that crosses an already-sent stop gets no reply — the
    /// stop is in flight on the reliable channel.
    pub fn on_probe(&mut self, round: u64) -> Option<ControlMessage> {
        if round != self.round || self.stop_sent {
            return None;
        }
        if self.satisfied() {
            self.stop_sent = true;
            Some(ControlMessage::stop(self.round))
        } else {
            Some(ControlMessage::bitmap(self.round, self.bitmap.to_bytes()))
        }
    }

    pub fn received_ratio(&self) -> f64 {
        self.bitmap.popcount() as f64 / self.bitmap.total() as f64
    }

    pub fn finish(self, elapsed: Duration) -> RecvOutcome {
        RecvOutcome {
            received_ratio: self.received_ratio(),
            chunks_total: self.bitmap.total(),
            chunks_received: self.bitmap.popcount(),
            stale_dropped: self.stale_dropped,
            buffer: self.buffer,
            elapsed,
        }
    }

    #[allow(dead_code)]
    pub(crate) fn tolerance(&self) -> f64 {
        self.tolerance
    }
}

/// Splits a reconstructed buffer into named float tensors. Unreceived regions
/// read as 0.0.
pub fn reconstruct(
    buffer: &[u8],
    layout: &MetadataAnnouncement,
) -> Result<Vec<(String, Vec<f32>)>, TransportError> {
    if buffer.len() != layout.buffer_len() {
        return Err(TransportError::LengthMismatch {
            expected: layout.buffer_len(),
            got: buffer.len(),
        });
    }
    let mut out = Vec::with_capacity(layout.tensor_layout.len());
    let mut offset = 0usize;
    for (name, count) in &layout.tensor_layout {
        let bytes = *count as usize * 4;
        let values = buffer[offset..offset + bytes]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        out.push((name.clone(), values));
        offset += bytes;
    }
    Ok(out)
}

/// Flattens f32 values into the little-endian wire buffer.
pub fn floats_to_bytes(values: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 4);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn bytes_to_floats(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect()
}

/// Unreliable datagram channel used by the blocking drivers.
pub trait DataChannel {
    fn send(&mut self, datagram: &[u8]) -> Result<(), TransportError>;
    fn recv_timeout(&mut self, timeout: Duration) -> Result<Option<Vec<u8>>, TransportError>;
}

/// Reliable, ordered control channel.
pub trait ControlChannel {
    fn send(&mut self, msg: &ControlMessage) -> Result<(), TransportError>;
    fn try_recv(&mut self) -> Result<Option<ControlMessage>, TransportError>;
    fn recv_timeout(&mut self, timeout: Duration)
        -> Result<Option<ControlMessage>, TransportError>;
}

/// Blocking sender driver: transmits `data` as round `round`, retransmitting
/// from bitmaps until a stop arrives. The control channel is checked before
/// every chunk transmission so a stop aborts within one datagram send.
pub fn dblp_send<D: DataChannel, C: ControlChannel>(
    data: &[u8],
    round: u64,
    cfg: &TransportConfig,
    data_ch: &mut D,
    ctrl_ch: &mut C,
) -> Result<SendOutcome, TransportError> {
    let mut machine = SendMachine::new(data, round, cfg);
    let start = Instant::now();
    loop {
        // Once done, stop draining the control channel: later frames belong
        // to the next protocol phase.
        while !machine.is_done() {
            match ctrl_ch.try_recv()? {
                Some(msg) => machine.on_control(&msg)?,
                None => break,
            }
        }
        match machine.poll() {
            SendAction::Transmit(datagram) => data_ch.send(&datagram)?,
            SendAction::Probe(probe) => {
                ctrl_ch.send(&probe)?;
                let mut retries = 0u32;
                while !machine.is_done() {
                    match ctrl_ch.recv_timeout(cfg.probe_timeout)? {
                        Some(msg) => {
                            machine.on_control(&msg)?;
                            if matches!(msg.kind, ControlKind::Bitmap) && msg.round == round {
                                break;
                            }
                        }
                        None => {
                            retries += 1;
                            if retries > cfg.max_probe_retries {
                                return Err(TransportError::ControlTimeout);
                            }
                            ctrl_ch.send(&probe)?;
                        }
                    }
                }
            }
            SendAction::WaitControl => unreachable!("driver waits inline after probing"),
            SendAction::Finished => break,
        }
    }
    Ok(machine.outcome(start.elapsed()))
}

/// Blocking receiver driver: accepts round-`round` chunks into a zero-filled
/// buffer of `buffer_len` bytes until the tolerance threshold is satisfied.
pub fn dblp_recv<D: DataChannel, C: ControlChannel>(
    round: u64,
    buffer_len: usize,
    tolerance: f64,
    cfg: &TransportConfig,
    data_ch: &mut D,
    ctrl_ch: &mut C,
) -> Result<RecvOutcome, TransportError> {
    let mut machine = RecvMachine::new(round, buffer_len, tolerance, cfg);
    let start = Instant::now();
    let poll = Duration::from_millis(2);
    let mut last_activity = Instant::now();
    while !machine.is_done() {
        while let Some(msg) = ctrl_ch.try_recv()? {
            last_activity = Instant::now();
            if msg.kind == ControlKind::Probe {
                if let Some(reply) = machine.on_probe(msg.round) {
                    ctrl_ch.send(&reply)?;
                }
            }
        }
        if machine.is_done() {
            break;
        }
        match data_ch.recv_timeout(poll)? {
            Some(datagram) => {
                last_activity = Instant::now();
                if let Some(stop) = machine.on_datagram(&datagram) {
                    ctrl_ch.send(&stop)?;
                }
            }
            None => {
                if last_activity.elapsed() > cfg.recv_timeout {
                    return Err(TransportError::ControlTimeout);
                }
            }
        }
    }
    Ok(machine.finish(start.elapsed()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wire::encode_chunk;

    fn cfg(max_payload: usize) -> TransportConfig {
        TransportConfig {
            max_payload,
            shuffle_sends: false,
            ..TransportConfig::default()
        }
    }

    #[test]
    fn missing_ratio_basics() {
        let mut bm = ChunkBitmap::new(1000);
        for seq in 0..600 {
            bm.set(seq);
        }
        assert_eq!(bitmap_missing_ratio(&bm), 0.4);
        let mut full = ChunkBitmap::new(8);
        for seq in 0..8 {
            full.set(seq);
        }
        assert_eq!(bitmap_missing_ratio(&full), 0.0);
    }

    #[test]
    fn missing_ratio_matches_per_bit_loop() {
        // Oracle: count bits one by one.
        let mut rng = CounterRng::new(11, 0);
        for _ in 0..50 {
            let total = 1 + rng.below(300) as u32;
            let mut bm = ChunkBitmap::new(total);
            for seq in 0..total {
                if rng.next_f64() < 0.5 {
                    bm.set(seq);
                }
            }
            let naive = (0..total).filter(|&s| !bm.get(s)).count() as f64 / total as f64;
            assert_eq!(bitmap_missing_ratio(&bm), naive);
        }
    }

    #[test]
    fn threshold_rounding_is_exact_for_paper_tolerances() {
        assert_eq!(required_chunks(1000, 0.008), 992);
        assert_eq!(required_chunks(1000, 0.024), 976);
        assert_eq!(required_chunks(1000, 0.408), 592);
        assert_eq!(required_chunks(1000, 0.424), 576);
        assert_eq!(required_chunks(10, 0.3), 7);
        assert_eq!(required_chunks(7, 0.0), 7);
    }

    #[test]
    fn receiver_stops_proactively_at_threshold() {
        // 1000 chunks, p = 0.4: 600 received satisfies ceil(0.6 * 1000).
        let c = cfg(4);
        let mut recv = RecvMachine::new(0, 4000, 0.4, &c);
        let mut stop = None;
        for seq in 0..600u32 {
            let chunk = GradientChunk::new(seq, 0, vec![1, 2, 3, 4]);
            if let Some(msg) = recv.on_datagram(&encode_chunk(&chunk)) {
                assert_eq!(seq, 599, "stop only at the 600th delivery");
                stop = Some(msg);
            }
        }
        assert_eq!(stop, Some(ControlMessage::stop(0)));
        assert!(recv.is_done());
        assert!(recv.received_ratio() >= 0.6);
    }

    #[test]
    fn stale_round_chunks_are_dropped() {
        let c = cfg(4);
        let mut recv = RecvMachine::new(5, 40, 0.0, &c);
        let stale = GradientChunk::new(0, 4, vec![9, 9, 9, 9]);
        assert_eq!(recv.on_datagram(&encode_chunk(&stale)), None);
        assert_eq!(recv.bitmap().popcount(), 0);
        assert_eq!(recv.stale_dropped(), 1);
    }

    #[test]
    fn duplicate_chunks_are_idempotent() {
        let c = cfg(4);
        let mut recv = RecvMachine::new(0, 40, 0.0, &c);
        let chunk = encode_chunk(&GradientChunk::new(3, 0, vec![7, 7, 7, 7]));
        recv.on_datagram(&chunk);
        recv.on_datagram(&chunk);
        assert_eq!(recv.bitmap().popcount(), 1);
    }

    #[test]
    fn probe_reply_is_bitmap_until_satisfied() {
        let c = cfg(4);
        let mut recv = RecvMachine::new(0, 12, 0.0, &c);
        let reply = recv.on_probe(0).unwrap();
        assert_eq!(reply.kind, ControlKind::Bitmap);
        for seq in 0..3 {
            recv.on_datagram(&encode_chunk(&GradientChunk::new(seq, 0, vec![0; 4])));
        }
        // Threshold hit via delivery; probes after the stop get no reply.
        assert!(recv.is_done());
        assert_eq!(recv.on_probe(0), None);
    }

    #[test]
    fn sender_retransmits_only_missing() {
        let c = cfg(4);
        let mut send = SendMachine::new(&[0u8; 40], 0, &c);
        // Drain the first pass.
        let mut first = Vec::new();
        loop {
            match send.poll() {
                SendAction::Transmit(d) => first.push(decode_chunk(&d).unwrap().header.seq),
                SendAction::Probe(_) => break,
                other => panic!("unexpected {other:?}"),
            }
        }
        assert_eq!(first, (0..10).collect::<Vec<u32>>());
        // Bitmap: chunks 0..8 received, 8 and 9 missing.
        let mut bm = ChunkBitmap::new(10);
        for seq in 0..8 {
            bm.set(seq);
        }
        send.on_control(&ControlMessage::bitmap(0, bm.to_bytes()))
            .unwrap();
        assert_eq!(send.passes(), 2);
        assert_eq!(send.planned().collect::<Vec<_>>(), vec![8, 9]);
    }

    #[test]
    fn stop_mid_pass_is_early_stop() {
        let c = cfg(4);
        let mut send = SendMachine::new(&[0u8; 40], 0, &c);
        assert!(matches!(send.poll(), SendAction::Transmit(_)));
        send.on_control(&ControlMessage::stop(0)).unwrap();
        assert_eq!(send.poll(), SendAction::Finished);
        let out = send.outcome(Duration::ZERO);
        assert!(out.early_stop);
        assert_eq!(out.passes, 1);
    }

    #[test]
    fn stale_stop_is_discarded() {
        let c = cfg(4);
        let mut send = SendMachine::new(&[0u8; 40], 7, &c);
        send.on_control(&ControlMessage::stop(6)).unwrap();
        assert!(!send.is_done());
    }

    #[test]
    fn reconstruct_splits_by_layout() {
        let layout = MetadataAnnouncement::from_layout(&[("w".into(), 3)], 1386);
        let buffer = floats_to_bytes(&[1.0, 2.0, 3.0]);
        let tensors = reconstruct(&buffer, &layout).unwrap();
        assert_eq!(tensors, vec![("w".to_string(), vec![1.0, 2.0, 3.0])]);
    }

    #[test]
    fn reconstruct_all_missing_is_zero() {
        let layout = MetadataAnnouncement::from_layout(&[("w".into(), 4), ("b".into(), 2)], 8);
        let tensors = reconstruct(&[0u8; 24], &layout).unwrap();
        assert!(tensors.iter().all(|(_, t)| t.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn reconstruct_rejects_wrong_length() {
        let layout = MetadataAnnouncement::from_layout(&[("w".into(), 3)], 1386);
        assert!(matches!(
            reconstruct(&[0u8; 8], &layout),
            Err(TransportError::LengthMismatch {
                expected: 12,
                got: 8
            })
        ));
    }

    #[test]
    fn reconstruct_drop_pattern_matches_slicing_oracle() {
        // Chunk-level drops: received float positions bit-exact, dropped 0.0.
        let c = cfg(8);
        let values: Vec<f32> = (0..64).map(|i| i as f32 + 0.5).collect();
        let bytes = floats_to_bytes(&values);
        let mut recv = RecvMachine::new(0, bytes.len(), 0.9, &c);
        let chunks = crate::wire::chunk_buffer(&bytes, 0, 8);
        let dropped = [1usize, 4, 7, 30];
        for (i, chunk) in chunks.iter().enumerate() {
            if !dropped.contains(&i) {
                recv.on_datagram(&encode_chunk(chunk));
            }
        }
        let out = recv.finish(Duration::ZERO);
        let layout = MetadataAnnouncement::from_layout(&[("g".into(), 64)], 8);
        let got = &reconstruct(&out.buffer, &layout).unwrap()[0].1;
        for (i, &v) in got.iter().enumerate() {
            let chunk_idx = i * 4 / 8; // 2 floats per chunk
            if dropped.contains(&chunk_idx) {
                assert_eq!(v, 0.0, "float {i} should be zero-filled");
            } else {
                assert_eq!(
                    v.to_bits(),
                    values[i].to_bits(),
                    "float {i} must be bit-exact"
                );
            }
        }
    }
}
