//! Protocol soundness: randomized round trips, corruption rejection, and
//! handshake/resume behaviour against an in-memory sink.

use std::collections::BTreeSet;
use std::io;
use std::sync::Mutex;
use std::time::Duration;

use splitstream_core::{FeatureRecord, Tensor32, XorShift64};
use splitstream_proto::{
    ack_status, decode_frame, decode_record, encode_record, in_proc_net, serve_session,
    stream_records, ClientSessionCfg, Conn, Dial, FaultConn, HelloBody, IngestOutcome, Listen,
    ProtocolError, SessionCfg, SessionSink,
};

fn random_record(rng: &mut XorShift64, client_id: u32, sample_id: u64) -> FeatureRecord {
    let ndims = 1 + rng.next_below(4) as usize;
    let dims: Vec<usize> = (0..ndims).map(|_| 1 + rng.next_below(5) as usize).collect();
    let n: usize = dims.iter().product();
    let data: Vec<f32> = (0..n).map(|_| rng.uniform(-1e6, 1e6) as f32).collect();
    FeatureRecord {
        client_id,
        sample_id,
        feature: Tensor32::new(dims, data).unwrap(),
        label: rng.uniform(-100.0, 100.0) as f32,
        noise_applied: rng.next_f64() < 0.5,
    }
}

#[test]
fn thousand_random_records_round_trip_bit_exact() {
    let mut rng = XorShift64::new(4242);
    for i in 0..1000 {
        let client_id = rng.next_u64() as u32;
        let record = random_record(&mut rng, client_id, i);
        let bytes = encode_record(&record).unwrap();
        let (frame, used) = decode_frame(&bytes).unwrap().expect("complete frame");
        assert_eq!(used, bytes.len());
        let back = decode_record(&frame).unwrap();
        assert_eq!(back, record, "record {i} did not survive the wire");
        // Bit-exact: re-encoding reproduces identical bytes.
        assert_eq!(encode_record(&back).unwrap(), bytes);
    }
}

#[test]
fn thousand_single_byte_corruptions_all_rejected() {
    let mut rng = XorShift64::new(99);
    let mut rejected = 0;
    for i in 0..1000 {
        let record = random_record(&mut rng, 7, i);
        let bytes = encode_record(&record).unwrap();
        let pos = rng.next_below(bytes.len() as u64) as usize;
        let mut flip = 1u8 << rng.next_below(8);
        if flip == 0 {
            flip = 1;
        }
        let mut corrupt = bytes.clone();
        corrupt[pos] ^= flip;
        match decode_frame(&corrupt) {
            Err(_) => rejected += 1,
            // A corrupted length field can leave the decoder starving for
            // bytes that will never come; with the stream closed that is a
            // rejection too.
            Ok(None) => rejected += 1,
            Ok(Some((frame, _))) => {
                let back = decode_record(&frame);
                panic!("corruption at byte {pos} accepted: {back:?}");
            }
        }
    }
    assert_eq!(rejected, 1000);
}

/// Sink that records everything and implements contiguous-ack bookkeeping.
#[derive(Default)]
struct MockSink {
    state: Mutex<MockState>,
}

#[derive(Default)]
struct MockState {
    records: Vec<FeatureRecord>,
    seen: BTreeSet<(u32, u64)>,
    done: BTreeSet<u32>,
    duplicates: u64,
}

impl MockSink {
    fn floor_locked(state: &MockState, client_id: u32) -> u64 {
        let mut floor = 0u64;
        while state.seen.contains(&(client_id, floor)) {
            floor += 1;
        }
        floor
    }
}

impl SessionSink for MockSink {
    fn on_hello(&self, client_id: u32, _hello: &HelloBody) -> splitstream_proto::Result<u64> {
        let state = self.state.lock().unwrap();
        Ok(Self::floor_locked(&state, client_id))
    }

    fn on_record(&self, record: FeatureRecord) -> splitstream_proto::Result<IngestOutcome> {
        let mut state = self.state.lock().unwrap();
        if state.done.contains(&record.client_id) {
            return Err(ProtocolError::RecordAfterDone);
        }
        if !state.seen.insert((record.client_id, record.sample_id)) {
            state.duplicates += 1;
            return Ok(IngestOutcome::Duplicate);
        }
        state.records.push(record);
        Ok(IngestOutcome::Admitted)
    }

    fn on_done(&self, client_id: u32, declared: u64) -> splitstream_proto::Result<u64> {
        let mut state = self.state.lock().unwrap();
        state.done.insert(client_id);
        let floor = Self::floor_locked(&state, client_id);
        if floor != declared {
            return Err(ProtocolError::Unexpected(format!(
                "client {client_id} declared {declared} samples but {floor} admitted"
            )));
        }
        Ok(floor)
    }

    fn ack_floor(&self, client_id: u32) -> u64 {
        let state = self.state.lock().unwrap();
        Self::floor_locked(&state, client_id)
    }
}

fn make_records(client_id: u32, n: u64) -> Vec<FeatureRecord> {
    let mut rng = XorShift64::new(1000 + client_id as u64);
    (0..n)
        .map(|i| FeatureRecord {
            client_id,
            sample_id: i,
            feature: Tensor32::new(vec![2, 2, 1], (0..4).map(|_| rng.next_f64() as f32).collect())
                .unwrap(),
            label: (i % 2) as f32,
            noise_applied: false,
        })
        .collect()
}

fn run_server_session(
    listener: &splitstream_proto::InProcListener,
    cfg: SessionCfg,
    sink: &MockSink,
) -> splitstream_proto::Result<splitstream_proto::SessionSummary> {
    let conn = listener
        .accept_timeout(Duration::from_secs(5))
        .unwrap()
        .expect("client should connect");
    serve_session(conn, &cfg, sink)
}

#[test]
fn matching_hashes_open_a_session_and_stream_completes() {
    let (listener, dialer) = in_proc_net();
    let sink = MockSink::default();
    let records = make_records(3, 150);
    let hash = 0xfeed_beef_u64;

    std::thread::scope(|scope| {
        let server = scope.spawn(|| run_server_session(&listener, SessionCfg::new(hash), &sink));
        let mut dial = move || -> io::Result<Box<dyn Conn>> { Ok(Box::new(dialer.connect()?)) };
        let outcome = stream_records(&mut dial, 3, &records, &ClientSessionCfg::new(hash)).unwrap();
        assert_eq!(outcome.records_sent, 150);
        assert_eq!(outcome.retries, 0);
        assert!(outcome.bytes_sent > 0);
        let summary = server.join().unwrap().unwrap();
        assert!(summary.completed);
        assert_eq!(summary.frames_received, 150);
    });

    let state = sink.state.lock().unwrap();
    assert_eq!(state.records.len(), 150);
    assert_eq!(state.duplicates, 0);
    // Per-client order preserved.
    for (i, r) in state.records.iter().enumerate() {
        assert_eq!(r.sample_id, i as u64);
    }
}

#[test]
fn mismatched_hashes_are_rejected_with_zero_records() {
    let (listener, dialer) = in_proc_net();
    let sink = MockSink::default();
    let records = make_records(9, 10);

    std::thread::scope(|scope| {
        let server =
            scope.spawn(|| run_server_session(&listener, SessionCfg::new(111), &sink));
        let mut dial = move || -> io::Result<Box<dyn Conn>> { Ok(Box::new(dialer.connect()?)) };
        let err =
            stream_records(&mut dial, 9, &records, &ClientSessionCfg::new(222)).unwrap_err();
        assert_eq!(err, ProtocolError::Rejected(ack_status::HASH_MISMATCH));
        let server_err = server.join().unwrap().unwrap_err();
        assert_eq!(server_err, ProtocolError::Rejected(ack_status::HASH_MISMATCH));
    });
    assert!(sink.state.lock().unwrap().records.is_empty());
}

#[test]
fn empty_stream_still_sends_done() {
    let (listener, dialer) = in_proc_net();
    let sink = MockSink::default();
    let hash = 5u64;
    std::thread::scope(|scope| {
        let server = scope.spawn(|| run_server_session(&listener, SessionCfg::new(hash), &sink));
        let mut dial = move || -> io::Result<Box<dyn Conn>> { Ok(Box::new(dialer.connect()?)) };
        let outcome = stream_records(&mut dial, 1, &[], &ClientSessionCfg::new(hash)).unwrap();
        assert_eq!(outcome.records_sent, 0);
        let summary = server.join().unwrap().unwrap();
        assert!(summary.completed);
        assert_eq!(summary.frames_received, 0);
    });
    assert!(sink.state.lock().unwrap().done.contains(&1));
}

/// Dialer whose first connection dies after a fixed number of writes.
struct FlakyDialer {
    dialer: splitstream_proto::InProcDialer,
    cut_after_writes: Option<usize>,
}

impl Dial for FlakyDialer {
    fn dial(&mut self) -> io::Result<Box<dyn Conn>> {
        let conn = self.dialer.connect()?;
        match self.cut_after_writes.take() {
            Some(n) => Ok(Box::new(FaultConn::new(conn, n))),
            None => Ok(Box::new(conn)),
        }
    }
}

#[test]
fn dropped_connection_resumes_with_zero_loss_and_zero_duplication() {
    let (listener, dialer) = in_proc_net();
    let sink = MockSink::default();
    let records = make_records(4, 300);
    let hash = 77u64;

    std::thread::scope(|scope| {
        let sink_ref = &sink;
        let listener_ref = &listener;
        let server = scope.spawn(move || {
            // First session dies mid-stream, second completes.
            let first = run_server_session(listener_ref, SessionCfg::new(hash), sink_ref);
            assert!(first.is_err(), "first session should fail, got {first:?}");
            run_server_session(listener_ref, SessionCfg::new(hash), sink_ref)
        });
        // 1 HELLO write + 100 FEATURE writes, then the link dies.
        let mut dial = FlakyDialer { dialer: dialer.clone(), cut_after_writes: Some(101) };
        let outcome =
            stream_records(&mut dial, 4, &records, &ClientSessionCfg::new(hash)).unwrap();
        assert_eq!(outcome.retries, 1);
        assert_eq!(outcome.records_sent, 300);
        let summary = server.join().unwrap().unwrap();
        assert!(summary.completed);
        // The resumed session only carried what was missing.
        assert_eq!(summary.frames_received, 200);
    });

    let state = sink.state.lock().unwrap();
    assert_eq!(state.records.len(), 300, "no loss");
    assert_eq!(state.duplicates, 0, "no duplicates");
    let ids: BTreeSet<u64> = state.records.iter().map(|r| r.sample_id).collect();
    assert_eq!(ids.len(), 300);
}

#[test]
fn record_after_done_is_a_protocol_error() {
    let sink = MockSink::default();
    sink.on_done(5, 0).unwrap();
    let record = make_records(5, 1).pop().unwrap();
    assert_eq!(sink.on_record(record), Err(ProtocolError::RecordAfterDone));
}
