//! Session state machines on both sides of the feature stream.
//!
//! One session per connection. The client sends HELLO, waits for the ACK
//! that tells it where to resume, streams FEATURE frames in sample order and
//! finishes with DONE. The server acknowledges every `ack_every` frames with
//! the highest contiguous sample id admitted so far, which is what makes the
//! retry path idempotent.

use std::io::Read;
use std::time::Duration;

use splitstream_core::FeatureRecord;

use crate::frame::{
    ack_status, decode_ack, decode_frame, decode_hello, decode_record, encode_ack, encode_done,
    encode_hello, encode_record, AckBody, Frame, HelloBody, MsgType, ProtocolError, Result,
};
use crate::transport::{Conn, Dial};

pub const DEFAULT_ACK_EVERY: u64 = 64;
pub const DEFAULT_IDLE_TIMEOUT: Duration = Duration::from_secs(30);

/// Incremental frame reader over any byte stream.
pub struct FrameReader {
    buf: Vec<u8>,
}

impl FrameReader {
    pub fn new() -> Self {
        FrameReader { buf: Vec::with_capacity(4096) }
    }

    /// Blocks until one full frame is available. EOF mid-frame or before any
    /// frame is an error here; callers stop reading at protocol-level ends.
    pub fn read_frame(&mut self, conn: &mut dyn Read) -> Result<Frame> {
        loop {
            if let Some((frame, used)) = decode_frame(&self.buf)? {
                self.buf.drain(..used);
                return Ok(frame);
            }
            let mut chunk = [0u8; 4096];
            let n = conn.read(&mut chunk)?;
            if n == 0 {
                return Err(ProtocolError::Io("connection closed".to_string()));
            }
            self.buf.extend_from_slice(&chunk[..n]);
        }
    }
}

impl Default for FrameReader {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IngestOutcome {
    Admitted,
    Duplicate,
}

/// Where the server-side session hands records off to (the feature queue).
pub trait SessionSink: Send + Sync {
    /// A client introduced itself; returns the resume point (highest
    /// contiguous sample id + 1) for that client.
    fn on_hello(&self, client_id: u32, hello: &HelloBody) -> Result<u64>;
    /// One decoded record; blocks under backpressure.
    fn on_record(&self, record: FeatureRecord) -> Result<IngestOutcome>;
    /// Client finished; returns its final admitted count.
    fn on_done(&self, client_id: u32, declared: u64) -> Result<u64>;
    /// Highest contiguous sample id + 1 admitted for this client.
    fn ack_floor(&self, client_id: u32) -> u64;
}

#[derive(Debug, Clone)]
pub struct SessionCfg {
    pub expected_hash: u64,
    pub ack_every: u64,
    pub idle_timeout: Duration,
}

impl SessionCfg {
    pub fn new(expected_hash: u64) -> Self {
        SessionCfg {
            expected_hash,
            ack_every: DEFAULT_ACK_EVERY,
            idle_timeout: DEFAULT_IDLE_TIMEOUT,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SessionSummary {
    pub client_id: u32,
    pub frames_received: u64,
    /// Set when the session ended with the client's DONE.
    pub completed: bool,
}

fn write_all(conn: &mut dyn Conn, bytes: &[u8]) -> Result<()> {
    conn.write_all(bytes)?;
    Ok(())
}

/// Runs one server-side session to completion (client DONE) or failure.
/// A connection drop mid-stream returns an error; the sink keeps its state
/// so a reconnecting client resumes where it left off.
pub fn serve_session(
    mut conn: Box<dyn Conn>,
    cfg: &SessionCfg,
    sink: &dyn SessionSink,
) -> Result<SessionSummary> {
    conn.set_read_timeout(Some(cfg.idle_timeout))?;
    let mut reader = FrameReader::new();
    let first = reader.read_frame(conn.as_mut())?;
    let client_id = first.client_id;
    let hello = decode_hello(&first)?;
    if hello.config_hash != cfg.expected_hash {
        let ack = AckBody { status: ack_status::HASH_MISMATCH, ack_count: 0 };
        write_all(conn.as_mut(), &encode_ack(client_id, &ack))?;
        return Err(ProtocolError::Rejected(ack_status::HASH_MISMATCH));
    }
    let resume = sink.on_hello(client_id, &hello)?;
    write_all(conn.as_mut(), &encode_ack(client_id, &AckBody { status: ack_status::OK, ack_count: resume }))?;

    let mut frames_received = 0u64;
    loop {
        let frame = reader.read_frame(conn.as_mut())?;
        if frame.client_id != client_id {
            return Err(ProtocolError::Unexpected(format!(
                "client id changed mid-session: {} then {}",
                client_id, frame.client_id
            )));
        }
        match frame.msg_type {
            MsgType::Feature => {
                let record = decode_record(&frame)?;
                match sink.on_record(record) {
                    Ok(_) => {}
                    Err(ProtocolError::RecordAfterDone) => {
                        let ack =
                            AckBody { status: ack_status::RECORD_AFTER_DONE, ack_count: sink.ack_floor(client_id) };
                        let _ = write_all(conn.as_mut(), &encode_ack(client_id, &ack));
                        return Err(ProtocolError::RecordAfterDone);
                    }
                    Err(e) => return Err(e),
                }
                frames_received += 1;
                if frames_received % cfg.ack_every == 0 {
                    let ack =
                        AckBody { status: ack_status::OK, ack_count: sink.ack_floor(client_id) };
                    write_all(conn.as_mut(), &encode_ack(client_id, &ack))?;
                }
            }
            MsgType::Done => {
                let final_count = sink.on_done(client_id, hello.declared_samples)?;
                let ack = AckBody { status: ack_status::OK, ack_count: final_count };
                write_all(conn.as_mut(), &encode_ack(client_id, &ack))?;
                return Ok(SessionSummary { client_id, frames_received, completed: true });
            }
            other => {
                return Err(ProtocolError::Unexpected(format!(
                    "{other:?} inside an open stream"
                )))
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClientSessionCfg {
    pub config_hash: u64,
    pub ack_every: u64,
    pub idle_timeout: Duration,
    pub max_retries: u32,
}

impl ClientSessionCfg {
    pub fn new(config_hash: u64) -> Self {
        ClientSessionCfg {
            config_hash,
            ack_every: DEFAULT_ACK_EVERY,
            idle_timeout: DEFAULT_IDLE_TIMEOUT,
            max_retries: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StreamOutcome {
    /// Unique records delivered (equals the record count on success).
    pub records_sent: u64,
    /// Raw bytes written, including handshakes and retry resends.
    pub bytes_sent: u64,
    pub retries: u32,
}

/// Streams `records` (which must be ordered with `sample_id == index`) to the
/// server, reconnecting and resuming from the last cumulative ACK on
/// transport failures. Handshake rejections are fatal.
pub fn stream_records(
    dial: &mut dyn Dial,
    client_id: u32,
    records: &[FeatureRecord],
    cfg: &ClientSessionCfg,
) -> Result<StreamOutcome> {
    for (i, r) in records.iter().enumerate() {
        if r.sample_id != i as u64 {
            return Err(ProtocolError::Config(format!(
                "record at position {i} has sample id {}, expected {i}",
                r.sample_id
            )));
        }
    }
    let mut outcome = StreamOutcome::default();
    loop {
        match attempt_stream(dial, client_id, records, cfg, &mut outcome) {
            Ok(()) => {
                outcome.records_sent = records.len() as u64;
                return Ok(outcome);
            }
            Err(ProtocolError::Io(_)) if outcome.retries < cfg.max_retries => {
                outcome.retries += 1;
            }
            Err(e) => return Err(e),
        }
    }
}

fn attempt_stream(
    dial: &mut dyn Dial,
    client_id: u32,
    records: &[FeatureRecord],
    cfg: &ClientSessionCfg,
    outcome: &mut StreamOutcome,
) -> Result<()> {
    let mut conn = dial.dial()?;
    conn.set_read_timeout(Some(cfg.idle_timeout))?;
    let mut reader = FrameReader::new();

    let hello =
        HelloBody { config_hash: cfg.config_hash, declared_samples: records.len() as u64 };
    let bytes = encode_hello(client_id, &hello);
    outcome.bytes_sent += bytes.len() as u64;
    write_all(conn.as_mut(), &bytes)?;
    let ack = decode_ack(&reader.read_frame(conn.as_mut())?)?;
    if ack.status != ack_status::OK {
        return Err(ProtocolError::Rejected(ack.status));
    }
    let resume = (ack.ack_count as usize).min(records.len());

    let mut sent_this_session = 0u64;
    for record in &records[resume..] {
        let bytes = encode_record(record)?;
        outcome.bytes_sent += bytes.len() as u64;
        write_all(conn.as_mut(), &bytes)?;
        sent_this_session += 1;
        if sent_this_session % cfg.ack_every == 0 {
            let ack = decode_ack(&reader.read_frame(conn.as_mut())?)?;
            if ack.status != ack_status::OK {
                return Err(ProtocolError::Rejected(ack.status));
            }
        }
    }
    let bytes = encode_done(client_id);
    outcome.bytes_sent += bytes.len() as u64;
    write_all(conn.as_mut(), &bytes)?;
    let final_ack = decode_ack(&reader.read_frame(conn.as_mut())?)?;
    if final_ack.status != ack_status::OK {
        return Err(ProtocolError::Rejected(final_ack.status));
    }
    if final_ack.ack_count != records.len() as u64 {
        return Err(ProtocolError::Unexpected(format!(
            "server admitted {} of {} records",
            final_ack.ack_count,
            records.len()
        )));
    }
    Ok(())
}
