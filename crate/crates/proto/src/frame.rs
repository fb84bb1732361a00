//! Frame layout and body codecs. The byte layout here is the normative
//! external contract; see PROTOCOL.md at the repo root for the documented
//! form and golden vectors.

use std::fmt;

use splitstream_core::{FeatureRecord, Tensor32};

use crate::crc32::crc32;

pub const MAGIC: [u8; 4] = *b"STSL";
pub const VERSION: u8 = 1;
/// Frame header length: magic + version + msg_type + client_id + body_len.
pub const HEADER_LEN: usize = 14;
/// Maximum feature dims on the wire.
pub const MAX_DIMS: usize = 4;
/// Hard cap on body length (2^31 bytes per the contract).
pub const MAX_BODY: u32 = 1 << 31;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum MsgType {
    Hello = 1,
    Feature = 2,
    Ack = 3,
    Done = 4,
}

impl MsgType {
    fn from_byte(b: u8) -> Option<MsgType> {
        match b {
            1 => Some(MsgType::Hello),
            2 => Some(MsgType::Feature),
            3 => Some(MsgType::Ack),
            4 => Some(MsgType::Done),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProtocolError {
    /// The stream cannot continue: framing or validation failed.
    BadMagic,
    BadVersion(u8),
    BadMsgType(u8),
    BadCrc,
    BadLength(String),
    BodyLayout(String),
    /// Handshake rejected with the given reason code.
    Rejected(u8),
    /// A FEATURE frame arrived after the client's DONE.
    RecordAfterDone,
    /// A frame arrived that the state machine cannot accept.
    Unexpected(String),
    Io(String),
    Config(String),
}

impl fmt::Display for ProtocolError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProtocolError::BadMagic => write!(f, "bad magic"),
            ProtocolError::BadVersion(v) => write!(f, "unsupported version {v}"),
            ProtocolError::BadMsgType(t) => write!(f, "unknown message type {t}"),
            ProtocolError::BadCrc => write!(f, "crc mismatch"),
            ProtocolError::BadLength(m) => write!(f, "bad length: {m}"),
            ProtocolError::BodyLayout(m) => write!(f, "bad body: {m}"),
            ProtocolError::Rejected(code) => write!(f, "handshake rejected with code {code}"),
            ProtocolError::RecordAfterDone => write!(f, "record received after DONE"),
            ProtocolError::Unexpected(m) => write!(f, "unexpected frame: {m}"),
            ProtocolError::Io(m) => write!(f, "io: {m}"),
            ProtocolError::Config(m) => write!(f, "configuration error: {m}"),
        }
    }
}

impl std::error::Error for ProtocolError {}

impl From<std::io::Error> for ProtocolError {
    fn from(e: std::io::Error) -> Self {
        ProtocolError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, ProtocolError>;

/// One decoded frame. The CRC has already been verified.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub msg_type: MsgType,
    pub client_id: u32,
    pub body: Vec<u8>,
}

impl Frame {
    pub fn new(msg_type: MsgType, client_id: u32, body: Vec<u8>) -> Frame {
        Frame { msg_type, client_id, body }
    }
}

/// Serializes a frame: header, body, then CRC-32 over everything before it.
pub fn encode_frame(frame: &Frame) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + frame.body.len() + 4);
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(frame.msg_type as u8);
    out.extend_from_slice(&frame.client_id.to_le_bytes());
    out.extend_from_slice(&(frame.body.len() as u32).to_le_bytes());
    out.extend_from_slice(&frame.body);
    let crc = crc32(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

/// Attempts to decode one frame from the front of `buf`. Returns
/// `Ok(None)` when more bytes are needed (nothing consumed), otherwise the
/// frame and the number of bytes it occupied.
pub fn decode_frame(buf: &[u8]) -> Result<Option<(Frame, usize)>> {
    if buf.len() < HEADER_LEN {
        return Ok(None);
    }
    if buf[0..4] != MAGIC {
        return Err(ProtocolError::BadMagic);
    }
    if buf[4] != VERSION {
        return Err(ProtocolError::BadVersion(buf[4]));
    }
    let body_len = u32::from_le_bytes([buf[10], buf[11], buf[12], buf[13]]);
    if body_len >= MAX_BODY {
        return Err(ProtocolError::BadLength(format!("body length {body_len} exceeds cap")));
    }
    let total = HEADER_LEN + body_len as usize + 4;
    if buf.len() < total {
        return Ok(None);
    }
    let crc_expect = u32::from_le_bytes([
        buf[total - 4],
        buf[total - 3],
        buf[total - 2],
        buf[total - 1],
    ]);
    if crc32(&buf[..total - 4]) != crc_expect {
        return Err(ProtocolError::BadCrc);
    }
    let msg_type =
        MsgType::from_byte(buf[5]).ok_or(ProtocolError::BadMsgType(buf[5]))?;
    let client_id = u32::from_le_bytes([buf[6], buf[7], buf[8], buf[9]]);
    let body = buf[HEADER_LEN..total - 4].to_vec();
    Ok(Some((Frame { msg_type, client_id, body }, total)))
}

struct BodyReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> BodyReader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        BodyReader { buf, pos: 0 }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(ProtocolError::BodyLayout(format!("truncated {what}")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes([b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7]]))
    }

    fn f32(&mut self, what: &str) -> Result<f32> {
        let b = self.take(4, what)?;
        Ok(f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn finish(&self, what: &str) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(ProtocolError::BodyLayout(format!(
                "{what} has {} trailing bytes",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HelloBody {
    pub config_hash: u64,
    pub declared_samples: u64,
}

pub fn encode_hello(client_id: u32, hello: &HelloBody) -> Vec<u8> {
    let mut body = Vec::with_capacity(18);
    body.extend_from_slice(&hello.config_hash.to_le_bytes());
    body.extend_from_slice(&hello.declared_samples.to_le_bytes());
    body.extend_from_slice(&[0, 0]); // reserved
    encode_frame(&Frame::new(MsgType::Hello, client_id, body))
}

pub fn decode_hello(frame: &Frame) -> Result<HelloBody> {
    if frame.msg_type != MsgType::Hello {
        return Err(ProtocolError::Unexpected(format!("{:?} where HELLO expected", frame.msg_type)));
    }
    let mut r = BodyReader::new(&frame.body);
    let config_hash = r.u64("config hash")?;
    let declared_samples = r.u64("sample count")?;
    let reserved = r.u16("reserved")?;
    r.finish("hello body")?;
    if reserved != 0 {
        return Err(ProtocolError::BodyLayout(format!("reserved bytes are {reserved}, not zero")));
    }
    Ok(HelloBody { config_hash, declared_samples })
}

/// Handshake/stream acknowledgements. `ack_count` is the highest contiguous
/// sample id admitted so far plus one, i.e. the index the client should
/// resume from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AckBody {
    pub status: u8,
    pub ack_count: u64,
}

pub mod ack_status {
    pub const OK: u8 = 0;
    pub const HASH_MISMATCH: u8 = 1;
    pub const RECORD_AFTER_DONE: u8 = 2;
    pub const PROTOCOL: u8 = 3;
}

pub fn encode_ack(client_id: u32, ack: &AckBody) -> Vec<u8> {
    let mut body = Vec::with_capacity(9);
    body.push(ack.status);
    body.extend_from_slice(&ack.ack_count.to_le_bytes());
    encode_frame(&Frame::new(MsgType::Ack, client_id, body))
}

pub fn decode_ack(frame: &Frame) -> Result<AckBody> {
    if frame.msg_type != MsgType::Ack {
        return Err(ProtocolError::Unexpected(format!("{:?} where ACK expected", frame.msg_type)));
    }
    let mut r = BodyReader::new(&frame.body);
    let status = r.u8("status")?;
    let ack_count = r.u64("ack count")?;
    r.finish("ack body")?;
    Ok(AckBody { status, ack_count })
}

pub fn encode_done(client_id: u32) -> Vec<u8> {
    encode_frame(&Frame::new(MsgType::Done, client_id, Vec::new()))
}

/// Serializes a feature record as exactly one FEATURE frame.
pub fn encode_record(record: &FeatureRecord) -> Result<Vec<u8>> {
    let dims = record.feature.dims();
    if dims.len() > MAX_DIMS {
        return Err(ProtocolError::Config(format!(
            "feature has {} dims, the wire allows at most {MAX_DIMS}",
            dims.len()
        )));
    }
    let payload_bytes = record.feature.len() * 4;
    if payload_bytes as u64 >= MAX_BODY as u64 {
        return Err(ProtocolError::Config(format!("payload of {payload_bytes} bytes exceeds cap")));
    }
    let mut body = Vec::with_capacity(14 + dims.len() * 4 + payload_bytes);
    body.extend_from_slice(&record.sample_id.to_le_bytes());
    body.extend_from_slice(&record.label.to_le_bytes());
    body.push(dims.len() as u8);
    for d in dims {
        body.extend_from_slice(&(*d as u32).to_le_bytes());
    }
    for v in record.feature.data() {
        body.extend_from_slice(&v.to_le_bytes());
    }
    body.push(u8::from(record.noise_applied));
    Ok(encode_frame(&Frame::new(MsgType::Feature, record.client_id, body)))
}

/// Inverse of `encode_record` over an already CRC-verified frame.
pub fn decode_record(frame: &Frame) -> Result<FeatureRecord> {
    if frame.msg_type != MsgType::Feature {
        return Err(ProtocolError::Unexpected(format!(
            "{:?} where FEATURE expected",
            frame.msg_type
        )));
    }
    let mut r = BodyReader::new(&frame.body);
    let sample_id = r.u64("sample id")?;
    let label = r.f32("label")?;
    let ndims = r.u8("ndims")? as usize;
    if ndims == 0 || ndims > MAX_DIMS {
        return Err(ProtocolError::BodyLayout(format!("ndims {ndims} out of range 1..={MAX_DIMS}")));
    }
    let mut dims = Vec::with_capacity(ndims);
    for _ in 0..ndims {
        dims.push(r.u32("dim")? as usize);
    }
    let count = dims.iter().try_fold(1usize, |acc, d| {
        acc.checked_mul(*d).filter(|n| *n < MAX_BODY as usize / 4)
    });
    let count =
        count.ok_or_else(|| ProtocolError::BodyLayout(format!("dims {dims:?} overflow")))?;
    let mut data = Vec::with_capacity(count);
    for _ in 0..count {
        data.push(r.f32("payload")?);
    }
    let flags = r.u8("flags")?;
    r.finish("feature body")?;
    let feature = Tensor32::new(dims, data)
        .map_err(|e| ProtocolError::BodyLayout(format!("inconsistent dims: {e}")))?;
    Ok(FeatureRecord {
        client_id: frame.client_id,
        sample_id,
        feature,
        label,
        noise_applied: flags & 1 != 0,
    })
}
