//! Classical-channel message layer: typed messages in a fixed binary
//! frame, an in-process loopback, and a TCP implementation so Alice and
//! Bob can run as separate processes.
//!
//! Frame layout, all integers big-endian:
//!
//! ```text
//! magic "PQKD" | version 0x01 | kind u8 | length u32 | payload | crc32
//! ```
//!
//! The CRC (IEEE polynomial) covers kind, length and payload. Frames are
//! self-delimiting; a decoder fed any prefix of a valid stream yields
//! complete messages plus at most one `Truncated` tail.

use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::mpsc;

use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"PQKD";
pub const VERSION: u8 = 1;
pub const MAX_PAYLOAD: usize = 1 << 24;
/// Default port for two-process sessions.
pub const DEFAULT_PORT: u16 = 7117;

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("payload exceeds {MAX_PAYLOAD} bytes")]
    PayloadTooLarge,
    #[error("bad frame magic")]
    BadMagic,
    #[error("unsupported frame version {0}")]
    UnsupportedVersion(u8),
    #[error("unknown message kind {0}")]
    UnknownKind(u8),
    #[error("frame checksum mismatch")]
    CrcMismatch,
    /// Not enough bytes for a complete frame yet; await more input.
    #[error("incomplete frame")]
    Truncated,
    #[error("malformed payload for kind {0}")]
    MalformedPayload(u8),
    #[error("connection lost")]
    ConnectionLost,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Messages exchanged over the classical channel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ClassicalMessage {
    /// Bob asks Alice to switch to reference pulses for feedback control.
    ControlAsk,
    /// Alice confirms the H-polarized reference stream is on.
    RefStart,
    /// Bob is satisfied with the SOP; QKD cycles resume.
    ControlDone,
    /// Alice reveals basis information for a pulse range: in this
    /// simulator a seed-derived commitment of her random pulse train,
    /// packed as bits.
    BasisReveal { start_pulse: u64, bit_count: u32, bits: Vec<u8> },
    /// Bob reports the sifting outcome for one interval.
    SiftResult { interval_index: u32, sifted_bits: u64, errors: u64 },
    SessionEnd,
}

impl ClassicalMessage {
    pub fn kind(&self) -> u8 {
        match self {
            ClassicalMessage::ControlAsk => 1,
            ClassicalMessage::RefStart => 2,
            ClassicalMessage::ControlDone => 3,
            ClassicalMessage::BasisReveal { .. } => 4,
            ClassicalMessage::SiftResult { .. } => 5,
            ClassicalMessage::SessionEnd => 6,
        }
    }

    fn payload(&self) -> Result<Vec<u8>, TransportError> {
        let mut p = Vec::new();
        match self {
            ClassicalMessage::ControlAsk
            | ClassicalMessage::RefStart
            | ClassicalMessage::ControlDone
            | ClassicalMessage::SessionEnd => {}
            ClassicalMessage::BasisReveal { start_pulse, bit_count, bits } => {
                if bits.len() != (*bit_count as usize).div_ceil(8) {
                    return Err(TransportError::MalformedPayload(self.kind()));
                }
                p.extend_from_slice(&start_pulse.to_be_bytes());
                p.extend_from_slice(&bit_count.to_be_bytes());
                p.extend_from_slice(bits);
            }
            ClassicalMessage::SiftResult { interval_index, sifted_bits, errors } => {
                p.extend_from_slice(&interval_index.to_be_bytes());
                p.extend_from_slice(&sifted_bits.to_be_bytes());
                p.extend_from_slice(&errors.to_be_bytes());
            }
        }
        if p.len() > MAX_PAYLOAD {
            return Err(TransportError::PayloadTooLarge);
        }
        Ok(p)
    }

    fn from_payload(kind: u8, payload: &[u8]) -> Result<Self, TransportError> {
        let exact_empty = |m: ClassicalMessage| {
            if payload.is_empty() {
                Ok(m)
            } else {
                Err(TransportError::MalformedPayload(kind))
            }
        };
        match kind {
            1 => exact_empty(ClassicalMessage::ControlAsk),
            2 => exact_empty(ClassicalMessage::RefStart),
            3 => exact_empty(ClassicalMessage::ControlDone),
            4 => {
                if payload.len() < 12 {
                    return Err(TransportError::MalformedPayload(kind));
                }
                let start_pulse = u64::from_be_bytes(payload[0..8].try_into().unwrap());
                let bit_count = u32::from_be_bytes(payload[8..12].try_into().unwrap());
                let bits = payload[12..].to_vec();
                if bits.len() != (bit_count as usize).div_ceil(8) {
                    return Err(TransportError::MalformedPayload(kind));
                }
                Ok(ClassicalMessage::BasisReveal { start_pulse, bit_count, bits })
            }
            5 => {
                if payload.len() != 20 {
                    return Err(TransportError::MalformedPayload(kind));
                }
                Ok(ClassicalMessage::SiftResult {
                    interval_index: u32::from_be_bytes(payload[0..4].try_into().unwrap()),
                    sifted_bits: u64::from_be_bytes(payload[4..12].try_into().unwrap()),
                    errors: u64::from_be_bytes(payload[12..20].try_into().unwrap()),
                })
            }
            6 => exact_empty(ClassicalMessage::SessionEnd),
            other => Err(TransportError::UnknownKind(other)),
        }
    }
}

/// Serializes one message into its frame.
pub fn encode(m: &ClassicalMessage) -> Result<Vec<u8>, TransportError> {
    let payload = m.payload()?;
    let mut out = Vec::with_capacity(14 + payload.len());
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(m.kind());
    out.extend_from_slice(&(payload.len() as u32).to_be_bytes());
    out.extend_from_slice(&payload);
    let crc = crc32fast::hash(&out[5..]);
    out.extend_from_slice(&crc.to_be_bytes());
    Ok(out)
}

/// Decodes one message from the front of `buf`, returning it together
/// with the number of bytes consumed. `Truncated` means the buffer holds
/// only a prefix of a frame; every other error is fatal for the stream.
pub fn decode(buf: &[u8]) -> Result<(ClassicalMessage, usize), TransportError> {
    if buf.len() < 4 {
        if MAGIC.starts_with(&buf[..buf.len().min(4)]) {
            return Err(TransportError::Truncated);
        }
        return Err(TransportError::BadMagic);
    }
    if buf[0..4] != MAGIC {
        return Err(TransportError::BadMagic);
    }
    if buf.len() < 10 {
        return Err(TransportError::Truncated);
    }
    if buf[4] != VERSION {
        return Err(TransportError::UnsupportedVersion(buf[4]));
    }
    let kind = buf[5];
    let length = u32::from_be_bytes(buf[6..10].try_into().unwrap()) as usize;
    if length > MAX_PAYLOAD {
        return Err(TransportError::PayloadTooLarge);
    }
    let frame_len = 10 + length + 4;
    if buf.len() < frame_len {
        return Err(TransportError::Truncated);
    }
    let crc_stored = u32::from_be_bytes(buf[10 + length..frame_len].try_into().unwrap());
    let crc = crc32fast::hash(&buf[5..10 + length]);
    if crc != crc_stored {
        return Err(TransportError::CrcMismatch);
    }
    let msg = ClassicalMessage::from_payload(kind, &buf[10..10 + length])?;
    Ok((msg, frame_len))
}

/// One side of a connected classical channel: ordered, reliable,
/// exactly-once delivery.
pub trait Endpoint: Send {
    fn send(&mut self, m: &ClassicalMessage) -> Result<(), TransportError>;
    /// Blocks until the next message arrives.
    fn recv(&mut self) -> Result<ClassicalMessage, TransportError>;
}

/// In-process endpoint backed by channels; frames are still encoded and
/// decoded so the loopback exercises the same codec as TCP.
pub struct LoopbackEndpoint {
    tx: mpsc::Sender<Vec<u8>>,
    rx: mpsc::Receiver<Vec<u8>>,
}

/// Two connected in-process endpoints.
pub fn loopback_pair() -> (LoopbackEndpoint, LoopbackEndpoint) {
    let (tx_a, rx_b) = mpsc::channel();
    let (tx_b, rx_a) = mpsc::channel();
    (LoopbackEndpoint { tx: tx_a, rx: rx_a }, LoopbackEndpoint { tx: tx_b, rx: rx_b })
}

impl Endpoint for LoopbackEndpoint {
    fn send(&mut self, m: &ClassicalMessage) -> Result<(), TransportError> {
        let frame = encode(m)?;
        self.tx.send(frame).map_err(|_| TransportError::ConnectionLost)
    }

    fn recv(&mut self) -> Result<ClassicalMessage, TransportError> {
        let frame = self.rx.recv().map_err(|_| TransportError::ConnectionLost)?;
        let (msg, used) = decode(&frame)?;
        debug_assert_eq!(used, frame.len());
        Ok(msg)
    }
}

/// TCP endpoint with an internal reassembly buffer.
pub struct TcpEndpoint {
    stream: TcpStream,
    buf: Vec<u8>,
}

impl TcpEndpoint {
    pub fn connect<A: ToSocketAddrs>(addr: A) -> Result<Self, TransportError> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(TcpEndpoint { stream, buf: Vec::new() })
    }

    /// Binds `addr` and accepts exactly one peer.
    pub fn accept_one<A: ToSocketAddrs>(addr: A) -> Result<Self, TransportError> {
        let listener = TcpListener::bind(addr)?;
        let (stream, _) = listener.accept()?;
        stream.set_nodelay(true)?;
        Ok(TcpEndpoint { stream, buf: Vec::new() })
    }

    /// Binds a listener first so the caller can learn the port before
    /// blocking in accept.
    pub fn listener<A: ToSocketAddrs>(addr: A) -> Result<TcpListener, TransportError> {
        Ok(TcpListener::bind(addr)?)
    }

    pub fn from_listener(listener: &TcpListener) -> Result<Self, TransportError> {
        let (stream, _) = listener.accept()?;
        stream.set_nodelay(true)?;
        Ok(TcpEndpoint { stream, buf: Vec::new() })
    }
}

impl Endpoint for TcpEndpoint {
    fn send(&mut self, m: &ClassicalMessage) -> Result<(), TransportError> {
        // One write_all per frame keeps frames atomic on the wire.
        let frame = encode(m)?;
        self.stream.write_all(&frame)?;
        Ok(())
    }

    fn recv(&mut self) -> Result<ClassicalMessage, TransportError> {
        loop {
            match decode(&self.buf) {
                Ok((msg, used)) => {
                    self.buf.drain(..used);
                    return Ok(msg);
                }
                Err(TransportError::Truncated) => {
                    let mut chunk = [0u8; 4096];
                    let n = self.stream.read(&mut chunk)?;
                    if n == 0 {
                        return Err(TransportError::ConnectionLost);
                    }
                    self.buf.extend_from_slice(&chunk[..n]);
                }
                Err(e) => return Err(e),
            }
        }
    }
}
