//! Shows the exact byte layout of the three wire encodings: gradient chunk
//! datagrams, control messages, and the metadata handshake.
//!
//!     cargo run --example wire_format

use dblp::wire::{
    chunk_buffer, encode_chunk, encode_control, encode_metadata, frame, ControlMessage,
    MetadataAnnouncement,
};

fn hex(bytes: &[u8]) -> String {
    bytes
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn main() {
    // A 10-byte gradient split into 4-byte chunks: seqs 0..2, round 7.
    let data: Vec<u8> = (0u8..10).collect();
    println!("chunk datagrams ([seq:4][round:8][length:2][payload]):");
    for chunk in chunk_buffer(&data, 7, 4) {
        println!("  seq {}: {}", chunk.header.seq, hex(&encode_chunk(&chunk)));
    }

    println!("\ncontrol messages ([kind:1][round:8][bitmap_len:4][bitmap]):");
    println!(
        "  probe:  {}",
        hex(&encode_control(&ControlMessage::probe(7)))
    );
    println!(
        "  bitmap: {}",
        hex(&encode_control(&ControlMessage::bitmap(
            7,
            vec![0b0000_0101]
        )))
    );
    println!(
        "  stop:   {}",
        hex(&encode_control(&ControlMessage::stop(7)))
    );

    let meta =
        MetadataAnnouncement::from_layout(&[("weights".into(), 30), ("bias".into(), 3)], 1386);
    let encoded = encode_metadata(&meta);
    println!("\nhandshake text ({} chunks per round):", meta.total_chunks);
    print!("{}", String::from_utf8_lossy(&encoded));
    println!(
        "stream frame (4-byte length prefix): {}",
        hex(&frame(&encoded)[..8])
    );
}
