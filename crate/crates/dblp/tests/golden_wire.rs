//! Golden byte-layout tests: encodings are frozen against hex fixtures so an
//! accidental wire change cannot slip through as "both sides still agree".

use dblp::wire::{
    decode_chunk, decode_control, decode_metadata, encode_chunk, encode_control, encode_metadata,
    frame, ControlKind, ControlMessage, GradientChunk, MetadataAnnouncement,
};

/// Parses a fixture: `#` comment lines, whitespace-separated hex bytes.
/// Returns one byte vector per contiguous non-comment block.
fn load_blocks(name: &str) -> Vec<Vec<u8>> {
    let path = format!("{}/tests/fixtures/{name}", env!("CARGO_MANIFEST_DIR"));
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("read {path}: {e}"));
    let mut blocks: Vec<Vec<u8>> = Vec::new();
    let mut current: Vec<u8> = Vec::new();
    let mut continuing = false;
    for line in text.lines() {
        if line.starts_with('#') || line.trim().is_empty() {
            if continuing && !current.is_empty() {
                blocks.push(std::mem::take(&mut current));
            }
            continuing = false;
            continue;
        }
        continuing = true;
        for tok in line.split_whitespace() {
            current.push(u8::from_str_radix(tok, 16).unwrap());
        }
    }
    if !current.is_empty() {
        blocks.push(current);
    }
    blocks
}

#[test]
fn chunk_datagram_layout_is_frozen() {
    let golden = load_blocks("chunk_datagram.hex");
    assert_eq!(golden.len(), 1);
    let chunk = GradientChunk::new(1, 7, vec![0xde, 0xad, 0xbe, 0xef]);
    assert_eq!(encode_chunk(&chunk), golden[0]);
    assert_eq!(decode_chunk(&golden[0]).unwrap(), chunk);
}

#[test]
fn control_message_layouts_are_frozen() {
    let golden = load_blocks("control_messages.hex");
    assert_eq!(golden.len(), 3);
    let messages = [
        ControlMessage::probe(7),
        ControlMessage::bitmap(258, vec![0xa5, 0x01]),
        ControlMessage::stop(7),
    ];
    for (bytes, msg) in golden.iter().zip(&messages) {
        assert_eq!(&encode_control(msg), bytes);
        assert_eq!(&decode_control(bytes).unwrap(), msg);
    }
    assert_eq!(decode_control(&golden[0]).unwrap().kind, ControlKind::Probe);
    assert_eq!(
        decode_control(&golden[1]).unwrap().kind,
        ControlKind::Bitmap
    );
    assert_eq!(decode_control(&golden[2]).unwrap().kind, ControlKind::Stop);
}

#[test]
fn handshake_transcript_is_frozen() {
    let golden = load_blocks("handshake_transcript.hex");
    assert_eq!(golden.len(), 1);
    let meta = MetadataAnnouncement::from_layout(
        &[("weights".to_string(), 30), ("bias".to_string(), 3)],
        1386,
    );
    assert_eq!(
        meta.total_chunks, 1,
        "33 floats = 132 bytes fit one 1386-byte chunk"
    );
    let framed = frame(&encode_metadata(&meta));
    assert_eq!(framed, golden[0]);

    let body = &golden[0][4..];
    assert_eq!(decode_metadata(body).unwrap(), meta);
}
