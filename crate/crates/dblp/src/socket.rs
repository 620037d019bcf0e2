//! OS-socket channel implementations: UDP for gradient chunks, a framed TCP
//! stream for control messages and the text handshake.

use std::io::{ErrorKind, Read, Write};
use std::net::{TcpStream, ToSocketAddrs, UdpSocket};
use std::time::{Duration, Instant};

use crate::transport::{ControlChannel, DataChannel, TransportError};
use crate::wire::{decode_control, encode_control, frame, ControlMessage};

const MAX_DATAGRAM: usize = 65_536;
const MAX_FRAME: usize = 1 << 20;

/// Connected UDP socket carrying gradient chunks.
pub struct UdpDataChannel {
    socket: UdpSocket,
    buf: Vec<u8>,
}

impl UdpDataChannel {
    /// Binds locally; the peer is set later once its port is handshaken.
    pub fn bind<A: ToSocketAddrs>(local: A) -> Result<Self, TransportError> {
        let socket = UdpSocket::bind(local)?;
        Ok(Self {
            socket,
            buf: vec![0u8; MAX_DATAGRAM],
        })
    }

    pub fn connect<A: ToSocketAddrs>(&mut self, peer: A) -> Result<(), TransportError> {
        self.socket.connect(peer)?;
        Ok(())
    }

    pub fn local_port(&self) -> Result<u16, TransportError> {
        Ok(self.socket.local_addr()?.port())
    }
}

impl DataChannel for UdpDataChannel {
    fn send(&mut self, datagram: &[u8]) -> Result<(), TransportError> {
        self.socket.send(datagram)?;
        Ok(())
    }

    fn recv_timeout(&mut self, timeout: Duration) -> Result<Option<Vec<u8>>, TransportError> {
        self.socket
            .set_read_timeout(Some(timeout.max(Duration::from_millis(1))))?;
        match self.socket.recv(&mut self.buf) {
            Ok(n) => Ok(Some(self.buf[..n].to_vec())),
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => Ok(None),
            Err(e) => Err(e.into()),
        }
    }
}

/// Length-prefixed frames over a TCP stream. Handles partial reads by
/// accumulating until a whole frame is available.
pub struct FramedStream {
    stream: TcpStream,
    pending: Vec<u8>,
}

impl FramedStream {
    pub fn new(stream: TcpStream) -> Result<Self, TransportError> {
        stream.set_nodelay(true)?;
        Ok(Self {
            stream,
            pending: Vec::new(),
        })
    }

    pub fn send_frame(&mut self, msg: &[u8]) -> Result<(), TransportError> {
        self.stream.write_all(&frame(msg))?;
        Ok(())
    }

    fn take_frame(&mut self) -> Result<Option<Vec<u8>>, TransportError> {
        if self.pending.len() < 4 {
            return Ok(None);
        }
        let len = u32::from_be_bytes(self.pending[..4].try_into().unwrap()) as usize;
        if len > MAX_FRAME {
            return Err(TransportError::ChannelClosed(format!(
                "oversized frame: {len} bytes"
            )));
        }
        if self.pending.len() < 4 + len {
            return Ok(None);
        }
        let msg = self.pending[4..4 + len].to_vec();
        self.pending.drain(..4 + len);
        Ok(Some(msg))
    }

    /// Reads one frame, waiting at most `timeout`; `None` on timeout.
    pub fn recv_frame(&mut self, timeout: Duration) -> Result<Option<Vec<u8>>, TransportError> {
        let deadline = Instant::now() + timeout;
        loop {
            if let Some(msg) = self.take_frame()? {
                return Ok(Some(msg));
            }
            let remaining = deadline.saturating_duration_since(Instant::now());
            if remaining.is_zero() {
                return Ok(None);
            }
            self.stream
                .set_read_timeout(Some(remaining.max(Duration::from_millis(1))))?;
            let mut chunk = [0u8; 4096];
            match self.stream.read(&mut chunk) {
                Ok(0) => return Err(TransportError::ChannelClosed("peer closed stream".into())),
                Ok(n) => self.pending.extend_from_slice(&chunk[..n]),
                Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
                    return Ok(None)
                }
                Err(e) => return Err(e.into()),
            }
        }
    }

    /// Like [`recv_frame`](Self::recv_frame) but errors instead of timing out;
    /// for handshake phases where silence means a lost peer.
    pub fn expect_frame(&mut self, timeout: Duration) -> Result<Vec<u8>, TransportError> {
        self.recv_frame(timeout)?
            .ok_or(TransportError::ControlTimeout)
    }
}

impl ControlChannel for FramedStream {
    fn send(&mut self, msg: &ControlMessage) -> Result<(), TransportError> {
        self.send_frame(&encode_control(msg))
    }

    fn try_recv(&mut self) -> Result<Option<ControlMessage>, TransportError> {
        match self.recv_frame(Duration::from_millis(1))? {
            Some(bytes) => Ok(Some(decode_control(&bytes)?)),
            None => Ok(None),
        }
    }

    fn recv_timeout(
        &mut self,
        timeout: Duration,
    ) -> Result<Option<ControlMessage>, TransportError> {
        match self.recv_frame(timeout)? {
            Some(bytes) => Ok(Some(decode_control(&bytes)?)),
            None => Ok(None),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wire::ControlKind;
    use std::net::TcpListener;

    #[test]
    fn framed_stream_roundtrips_control_messages() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let client = TcpStream::connect(addr).unwrap();
        let (server, _) = listener.accept().unwrap();
        let mut a = FramedStream::new(client).unwrap();
        let mut b = FramedStream::new(server).unwrap();

        let msg = ControlMessage {
            kind: ControlKind::Bitmap,
            round: 42,
            bitmap: Some(vec![0xA5, 0x01]),
        };
        ControlChannel::send(&mut a, &msg).unwrap();
        let got = b.recv_timeout(Duration::from_secs(1)).unwrap().unwrap();
        assert_eq!(got, msg);

        // Partial write: frame split across two TCP writes still decodes.
        let framed = frame(b"data_port=9999");
        a_stream(&mut a).write_all(&framed[..3]).unwrap();
        a_stream(&mut a).flush().unwrap();
        assert!(b.recv_frame(Duration::from_millis(20)).unwrap().is_none());
        a_stream(&mut a).write_all(&framed[3..]).unwrap();
        let text = b.expect_frame(Duration::from_secs(1)).unwrap();
        assert_eq!(text, b"data_port=9999");
    }

    fn a_stream(f: &mut FramedStream) -> &mut TcpStream {
        &mut f.stream
    }

    #[test]
    fn udp_channel_times_out_quietly() {
        let mut ch = UdpDataChannel::bind("127.0.0.1:0").unwrap();
        let got = ch.recv_timeout(Duration::from_millis(10)).unwrap();
        assert!(got.is_none());
    }
}
