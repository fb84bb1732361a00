//! Bit-exact framing and transport for the client -> server feature stream.
//!
//! The frame layout is the normative external contract of the system; it is
//! documented with golden vectors in PROTOCOL.md at the repository root.

pub mod crc32;
pub mod frame;
pub mod session;
pub mod transport;

pub use frame::{
    ack_status, decode_ack, decode_frame, decode_hello, decode_record, encode_ack, encode_done,
    encode_frame, encode_hello, encode_record, AckBody, Frame, HelloBody, MsgType, ProtocolError,
    Result, MAGIC, VERSION,
};
pub use session::{
    serve_session, stream_records, ClientSessionCfg, FrameReader, IngestOutcome, SessionCfg,
    SessionSink, SessionSummary, StreamOutcome, DEFAULT_ACK_EVERY, DEFAULT_IDLE_TIMEOUT,
};
pub use transport::{
    duplex, in_proc_net, Conn, Dial, FaultConn, InProcConn, InProcDialer, InProcListener, Listen,
    TcpListen,
};
