//! Wire formats for the data channel, the control channel, and the one-time
//! metadata handshake.
//!
//! All formats are bit-exact contracts; golden hex fixtures live in
//! `tests/fixtures/`. Multi-byte integers are big-endian.
//!
//! ## Chunk packets (data channel)
//!
//! ```text
//! [seq:4][round:8][length:2][payload:length]
//! ```
//!
//! ## Control messages (control channel)
//!
//! ```text
//! [kind:1][round:8][bitmap_len:4][bitmap:bitmap_len]
//! kind: Probe=0x01, Bitmap=0x02, Stop=0x03; bitmap_len is 0 except for Bitmap.
//! ```
//!
//! On stream transports every message (control or metadata) is preceded by a
//! 4-byte big-endian length prefix so messages never interleave.

use thiserror::Error;

/// Size of the per-chunk header: seq (4) + round (8) + length (2).
pub const CHUNK_HEADER_LEN: usize = 14;

/// Default datagram budget; fits comfortably inside a 1500-byte MTU.
pub const DEFAULT_DATAGRAM_BUDGET: usize = 1400;

/// Default chunk payload size: datagram budget minus the chunk header.
pub const DEFAULT_MAX_PAYLOAD: usize = DEFAULT_DATAGRAM_BUDGET - CHUNK_HEADER_LEN;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WireError {
    /// Datagram shorter than its header claims; the packet is dropped.
    #[error("truncated packet: need {need} bytes, have {have}")]
    TruncatedPacket { need: usize, have: usize },
    /// Control byte outside {1, 2, 3}; connection-fatal protocol violation.
    #[error("unknown control kind byte 0x{0:02x}")]
    UnknownKind(u8),
    #[error("malformed metadata: {0}")]
    BadMetadata(String),
}

/// Per-packet header carried in every data-channel datagram.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChunkHeader {
    /// Chunk index within a round, 0-based.
    pub seq: u32,
    /// Communication-round counter; stale rounds are rejected by the receiver.
    pub round: u64,
    /// Payload byte count.
    pub length: u16,
}

/// One MTU-sized fragment of a flattened gradient buffer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GradientChunk {
    pub header: ChunkHeader,
    pub payload: Vec<u8>,
}

impl GradientChunk {
    pub fn new(seq: u32, round: u64, payload: Vec<u8>) -> Self {
        assert!(
            payload.len() <= u16::MAX as usize,
            "payload exceeds u16 length field"
        );
        Self {
            header: ChunkHeader {
                seq,
                round,
                length: payload.len() as u16,
            },
            payload,
        }
    }

    pub fn encoded_len(&self) -> usize {
        CHUNK_HEADER_LEN + self.payload.len()
    }
}

/// Serializes a chunk into header + payload bytes.
pub fn encode_chunk(chunk: &GradientChunk) -> Vec<u8> {
    let mut out = Vec::with_capacity(chunk.encoded_len());
    out.extend_from_slice(&chunk.header.seq.to_be_bytes());
    out.extend_from_slice(&chunk.header.round.to_be_bytes());
    out.extend_from_slice(&chunk.header.length.to_be_bytes());
    out.extend_from_slice(&chunk.payload);
    out
}

/// Parses a chunk from a datagram. The length field is authoritative: bytes
/// past `14 + length` belong to the substrate and are ignored, which keeps
/// the encoding prefix-free.
pub fn decode_chunk(bytes: &[u8]) -> Result<GradientChunk, WireError> {
    if bytes.len() < CHUNK_HEADER_LEN {
        return Err(WireError::TruncatedPacket {
            need: CHUNK_HEADER_LEN,
            have: bytes.len(),
        });
    }
    let seq = u32::from_be_bytes(bytes[0..4].try_into().unwrap());
    let round = u64::from_be_bytes(bytes[4..12].try_into().unwrap());
    let length = u16::from_be_bytes(bytes[12..14].try_into().unwrap()) as usize;
    if bytes.len() < CHUNK_HEADER_LEN + length {
        return Err(WireError::TruncatedPacket {
            need: CHUNK_HEADER_LEN + length,
            have: bytes.len(),
        });
    }
    let payload = bytes[CHUNK_HEADER_LEN..CHUNK_HEADER_LEN + length].to_vec();
    Ok(GradientChunk::new(seq, round, payload))
}

/// Splits a buffer into chunks of at most `max_payload` bytes. Every chunk
/// except the last carries exactly `max_payload` bytes.
pub fn chunk_buffer(data: &[u8], round: u64, max_payload: usize) -> Vec<GradientChunk> {
    assert!(max_payload > 0 && max_payload <= u16::MAX as usize);
    data.chunks(max_payload)
        .enumerate()
        .map(|(i, part)| GradientChunk::new(i as u32, round, part.to_vec()))
        .collect()
}

/// Number of chunks a buffer of `bytes` bytes splits into.
pub fn chunk_count(bytes: usize, max_payload: usize) -> usize {
    bytes.div_ceil(max_payload)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum ControlKind {
    Probe = 0x01,
    Bitmap = 0x02,
    Stop = 0x03,
}

/// Probe / bitmap / stop signal carried over the reliable channel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ControlMessage {
    pub kind: ControlKind,
    pub round: u64,
    /// Present iff kind = Bitmap; length is ceil(total_chunks / 8) bytes.
    pub bitmap: Option<Vec<u8>>,
}

impl ControlMessage {
    pub fn probe(round: u64) -> Self {
        Self {
            kind: ControlKind::Probe,
            round,
            bitmap: None,
        }
    }

    pub fn stop(round: u64) -> Self {
        Self {
            kind: ControlKind::Stop,
            round,
            bitmap: None,
        }
    }

    pub fn bitmap(round: u64, bits: Vec<u8>) -> Self {
        Self {
            kind: ControlKind::Bitmap,
            round,
            bitmap: Some(bits),
        }
    }
}

pub fn encode_control(msg: &ControlMessage) -> Vec<u8> {
    let bitmap = msg.bitmap.as_deref().unwrap_or(&[]);
    let mut out = Vec::with_capacity(13 + bitmap.len());
    out.push(msg.kind as u8);
    out.extend_from_slice(&msg.round.to_be_bytes());
    out.extend_from_slice(&(bitmap.len() as u32).to_be_bytes());
    out.extend_from_slice(bitmap);
    out
}

pub fn decode_control(bytes: &[u8]) -> Result<ControlMessage, WireError> {
    if bytes.len() < 13 {
        return Err(WireError::TruncatedPacket {
            need: 13,
            have: bytes.len(),
        });
    }
    let kind = match bytes[0] {
        0x01 => ControlKind::Probe,
        0x02 => ControlKind::Bitmap,
        0x03 => ControlKind::Stop,
        other => return Err(WireError::UnknownKind(other)),
    };
    let round = u64::from_be_bytes(bytes[1..9].try_into().unwrap());
    let bitmap_len = u32::from_be_bytes(bytes[9..13].try_into().unwrap()) as usize;
    if bytes.len() < 13 + bitmap_len {
        return Err(WireError::TruncatedPacket {
            need: 13 + bitmap_len,
            have: bytes.len(),
        });
    }
    let bitmap = if kind == ControlKind::Bitmap {
        Some(bytes[13..13 + bitmap_len].to_vec())
    } else {
        None
    };
    Ok(ControlMessage {
        kind,
        round,
        bitmap,
    })
}

/// One-time handshake payload: total chunk count per round plus the ordered
/// tensor layout both endpoints must agree on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetadataAnnouncement {
    pub total_chunks: u32,
    /// Ordered (tensor name, element count) pairs.
    pub tensor_layout: Vec<(String, u64)>,
}

impl MetadataAnnouncement {
    /// Builds an announcement for a layout of 32-bit float tensors.
    pub fn from_layout(layout: &[(String, u64)], max_payload: usize) -> Self {
        let bytes: u64 = layout.iter().map(|(_, n)| n * 4).sum();
        Self {
            total_chunks: chunk_count(bytes as usize, max_payload) as u32,
            tensor_layout: layout.to_vec(),
        }
    }

    /// Total gradient buffer size in bytes.
    pub fn buffer_len(&self) -> usize {
        self.tensor_layout
            .iter()
            .map(|(_, n)| *n as usize * 4)
            .sum()
    }

    pub fn element_count(&self) -> usize {
        self.tensor_layout.iter().map(|(_, n)| *n as usize).sum()
    }
}

/// Line-based handshake text: `total_chunks=N` then one `tensor <name> <count>`
/// line per layer, in layout order.
pub fn encode_metadata(meta: &MetadataAnnouncement) -> Vec<u8> {
    let mut text = format!("total_chunks={}\n", meta.total_chunks);
    for (name, count) in &meta.tensor_layout {
        text.push_str(&format!("tensor {name} {count}\n"));
    }
    text.into_bytes()
}

pub fn decode_metadata(bytes: &[u8]) -> Result<MetadataAnnouncement, WireError> {
    let text =
        std::str::from_utf8(bytes).map_err(|_| WireError::BadMetadata("not utf-8".into()))?;
    let mut lines = text.lines();
    let first = lines
        .next()
        .ok_or_else(|| WireError::BadMetadata("empty".into()))?;
    let total_chunks = first
        .strip_prefix("total_chunks=")
        .and_then(|v| v.parse::<u32>().ok())
        .ok_or_else(|| WireError::BadMetadata(format!("bad first line: {first}")))?;
    let mut tensor_layout = Vec::new();
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        match (parts.next(), parts.next(), parts.next()) {
            (Some("tensor"), Some(name), Some(count)) => {
                let count = count
                    .parse::<u64>()
                    .map_err(|_| WireError::BadMetadata(format!("bad count: {line}")))?;
                tensor_layout.push((name.to_string(), count));
            }
            _ => return Err(WireError::BadMetadata(format!("bad line: {line}"))),
        }
    }
    Ok(MetadataAnnouncement {
        total_chunks,
        tensor_layout,
    })
}

/// Length-prefixes a message for stream transport.
pub fn frame(msg: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + msg.len());
    out.extend_from_slice(&(msg.len() as u32).to_be_bytes());
    out.extend_from_slice(msg);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_payload_chunk_is_14_zero_bytes() {
        let encoded = encode_chunk(&GradientChunk::new(0, 0, vec![]));
        assert_eq!(encoded, vec![0u8; 14]);
    }

    #[test]
    fn chunk_layout_matches_declared_fields() {
        let encoded = encode_chunk(&GradientChunk::new(1, 7, vec![0xAB, 0xCD]));
        assert_eq!(
            encoded,
            vec![
                0x00, 0x00, 0x00, 0x01, // seq
                0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x07, // round
                0x00, 0x02, // length
                0xAB, 0xCD,
            ]
        );
    }

    #[test]
    fn short_datagram_is_truncated() {
        assert!(matches!(
            decode_chunk(&[0u8; 13]),
            Err(WireError::TruncatedPacket { need: 14, have: 13 })
        ));
    }

    #[test]
    fn length_field_exceeding_payload_is_truncated() {
        let mut bytes = vec![0u8; 14 + 50];
        bytes[12..14].copy_from_slice(&100u16.to_be_bytes());
        assert!(matches!(
            decode_chunk(&bytes),
            Err(WireError::TruncatedPacket { .. })
        ));
    }

    #[test]
    fn stop_control_layout() {
        let encoded = encode_control(&ControlMessage::stop(3));
        let mut expect = vec![0x03];
        expect.extend_from_slice(&3u64.to_be_bytes());
        expect.extend_from_slice(&0u32.to_be_bytes());
        assert_eq!(encoded, expect);
    }

    #[test]
    fn bitmap_control_layout() {
        let encoded = encode_control(&ControlMessage::bitmap(1, vec![0xFF]));
        let mut expect = vec![0x02];
        expect.extend_from_slice(&1u64.to_be_bytes());
        expect.extend_from_slice(&1u32.to_be_bytes());
        expect.push(0xFF);
        assert_eq!(encoded, expect);
    }

    #[test]
    fn unknown_kind_rejected() {
        let mut bytes = encode_control(&ControlMessage::stop(0));
        bytes[0] = 0x09;
        assert_eq!(decode_control(&bytes), Err(WireError::UnknownKind(0x09)));
    }

    #[test]
    fn chunking_covers_buffer_exactly() {
        let data: Vec<u8> = (0..1000u16).map(|i| i as u8).collect();
        let chunks = chunk_buffer(&data, 5, 96);
        assert_eq!(chunks.len(), chunk_count(data.len(), 96));
        for c in &chunks[..chunks.len() - 1] {
            assert_eq!(c.payload.len(), 96);
        }
        let rebuilt: Vec<u8> = chunks.iter().flat_map(|c| c.payload.clone()).collect();
        assert_eq!(rebuilt, data);
    }

    #[test]
    fn metadata_round_trip() {
        let meta = MetadataAnnouncement::from_layout(&[("w".into(), 10), ("b".into(), 6)], 32);
        assert_eq!(meta.total_chunks, 2); // ceil(64 / 32)
        let decoded = decode_metadata(&encode_metadata(&meta)).unwrap();
        assert_eq!(decoded, meta);
    }

    #[test]
    fn metadata_rejects_garbage() {
        assert!(decode_metadata(b"hello").is_err());
        assert!(decode_metadata(b"total_chunks=1\nbogus line\n").is_err());
    }
}
